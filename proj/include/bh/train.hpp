#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bh/flow_train.hpp"
#include "bh/image.hpp"
#include "bh/rng.hpp"

namespace bh {

struct TrainConfig {
    double learning_rate = 0.0005;
    int total_steps = 2000;
    int batch_size = 32;
    double dequant_noise_scale = 1.0 / 256.0;
    std::uint64_t seed = 0;
    int checkpoint_every = 2000;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
        if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
        if (!(dequant_noise_scale >= 0.0)) throw ConfigError("dequant_noise_scale must be >= 0");
        if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
    }
};

// Target-domain training set: min-max normalized images of uniform size
// plus their pixelwise mean (the harmonizer's default initial image).
struct TargetDataset {
    std::vector<ImageGrid> images;
    ImageGrid mean_image;
};

inline TargetDataset make_dataset(std::vector<ImageGrid> images) {
    if (images.empty()) throw InvalidInputError("dataset: no images");
    for (auto& img : images) {
        require_same_shape(img, images.front(), "dataset");
        img = minmax_normalize(img);
    }
    ImageGrid mean(images.front().height, images.front().width);
    double inv = 1.0 / static_cast<double>(images.size());
    for (const auto& img : images) {
        for (std::size_t k = 0; k < mean.size(); ++k) mean.data[k] += img.data[k] * inv;
    }
    return TargetDataset{std::move(images), std::move(mean)};
}

// Bias-corrected adaptive moment estimation, decay 0.9 / 0.999, eps 1e-8.
struct AdamState {
    std::vector<double> m, v;
    int t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}

    void step(std::vector<double>& params, const std::vector<double>& g, double lr) {
        ++t;
        double c1 = 1.0 - std::pow(beta1, t);
        double c2 = 1.0 - std::pow(beta2, t);
        for (std::size_t k = 0; k < params.size(); ++k) {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            params[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
        }
    }
};

inline double cosine_lr(int step, int total_steps, double lr0) {
    constexpr double kPi = 3.14159265358979323846;
    return lr0 * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(step) /
                                       static_cast<double>(total_steps)));
}

// Mean negative log-likelihood in bits per dimension.
inline double nll_bits_per_dim(const FlowModel& model, const std::vector<ImageGrid>& images) {
    if (images.empty()) throw InvalidInputError("nll_bits_per_dim: empty list");
    double d = static_cast<double>(model.arch.input_height) * model.arch.input_width;
    constexpr double kLn2 = 0.69314718055994530942;
    double acc = 0.0;
    for (const auto& img : images) acc += -log_prob(model, img) / (d * kLn2);
    return acc / static_cast<double>(images.size());
}

struct TrainState {
    int step = 0;
    FlowModel model;
    std::vector<double> first_moment, second_moment;
    double running_nll_bpd = 0.0;
    Rng rng{0};
};

struct TrainHooks {
    std::function<void(int step, double nll_bpd, double lr)> on_log;
    std::function<void(int step, const FlowModel&)> on_checkpoint;
};

// Maximum-likelihood training: actnorm initialization on the first batch,
// then adaptive-moment descent on the mean NLL with a cosine-annealed
// learning rate and additive uniform dequantization noise. Deterministic
// given the seed, independent of the worker count.
inline FlowModel train(const TargetDataset& dataset, const FlowArchitecture& arch,
                       const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    cfg.validate();
    arch.validate();
    if (dataset.images.empty()) throw InvalidInputError("train: empty dataset");
    for (const auto& img : dataset.images) {
        if (img.height != arch.input_height || img.width != arch.input_width) {
            throw InvalidInputError("train: dataset images do not match architecture dims");
        }
    }
    constexpr double kLn2 = 0.69314718055994530942;
    double dim = static_cast<double>(arch.input_height) * arch.input_width;

    TrainState ts;
    ts.model = training_init(arch, cfg.seed);
    ts.rng = Rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);
    ts.first_moment.assign(ts.model.layout.total, 0.0);
    ts.second_moment.assign(ts.model.layout.total, 0.0);
    AdamState adam(ts.model.layout.total);

    std::size_t n = dataset.images.size();
    std::vector<ImageGrid> batch(static_cast<std::size_t>(cfg.batch_size));
    for (ts.step = 1; ts.step <= cfg.total_steps; ++ts.step) {
        double lr = cosine_lr(ts.step - 1, cfg.total_steps, cfg.learning_rate);
        for (int b = 0; b < cfg.batch_size; ++b) {
            batch[static_cast<std::size_t>(b)] =
                dataset.images[static_cast<std::size_t>(ts.rng.below(n))];
        }
        if (cfg.dequant_noise_scale > 0.0) {
            for (auto& img : batch) {
                for (double& v : img.data) v += cfg.dequant_noise_scale * ts.rng.uniform();
            }
        }
        if (ts.step == 1 && !ts.model.actnorm_initialized) {
            ts.model = actnorm_initialize(std::move(ts.model), batch);
        }

        std::vector<double> nlls;
        std::vector<double> grad = parameter_gradient(ts.model, batch, &nlls);
        double mean_nll = 0.0;
        for (double v : nlls) mean_nll += v;
        mean_nll /= static_cast<double>(nlls.size());
        double bpd = mean_nll / (dim * kLn2);

        if (!std::isfinite(mean_nll)) {
            std::string where;
            for (const auto& img : batch) {
                where = first_nonfinite_layer(ts.model, img);
                if (!where.empty()) break;
            }
            if (where.empty()) where = "loss reduction";
            throw NumericError("train: NaN loss at step " + std::to_string(ts.step) +
                               " (first non-finite: " + where + ")");
        }

        // global L2 clip at 50; inert when training is healthy
        double g2 = 0.0;
        for (double v : grad) g2 += v * v;
        double gnorm = std::sqrt(g2);
        if (gnorm > 50.0) {
            double scale = 50.0 / gnorm;
            for (double& v : grad) v *= scale;
        }

        adam.step(ts.model.params, grad, lr);
        ts.first_moment = adam.m;
        ts.second_moment = adam.v;
        for (double p : ts.model.params) {
            if (!std::isfinite(p)) {
                throw NumericError("train: non-finite parameters after step " +
                                   std::to_string(ts.step));
            }
        }

        ts.running_nll_bpd = (ts.step == 1) ? bpd : 0.9 * ts.running_nll_bpd + 0.1 * bpd;
        if (hooks.on_log) hooks.on_log(ts.step, bpd, lr);
        if (hooks.on_checkpoint && ts.step % cfg.checkpoint_every == 0) {
            hooks.on_checkpoint(ts.step, ts.model);
        }
    }
    return std::move(ts.model);
}

} // namespace bh
