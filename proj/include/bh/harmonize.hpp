#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "bh/flow.hpp"
#include "bh/image.hpp"
#include "bh/threads.hpp"

namespace bh {

enum class InitMode { MeanImage, SourceImage, Custom };

struct HarmonizeConfig {
    double alpha = 0.001;
    double beta1 = 1000.0;
    double beta2 = 0.001;
    int iterations = 10;
    double mask_quantile = 0.80;
    InitMode init_mode = InitMode::MeanImage;
    ImageGrid custom_init; // used only with InitMode::Custom

    void validate() const {
        if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in [0,1)");
        if (iterations < 1) throw ConfigError("iterations must be >= 1");
        if (!(beta1 >= 0.0) || !(beta2 >= 0.0)) throw ConfigError("beta1/beta2 must be >= 0");
        if (!(mask_quantile > 0.0 && mask_quantile < 1.0)) {
            throw ConfigError("mask_quantile must lie in (0,1)");
        }
    }
};

// Per-iteration convergence record.
struct HarmonizeTrace {
    struct Record {
        int iteration = 0;
        double ncc_to_source = 0.0;
        double masked_tv = 0.0;
        double latent_norm = 0.0;
        double distance = 0.0;
    };
    std::vector<Record> records;
};

struct HarmonizeResult {
    ImageGrid image;
    HarmonizeTrace trace;
};

// Distance between a candidate and the source image:
// beta1 * (1 - NCC(x, x_s)) + beta2 * masked TV of x.
inline double distance(const ImageGrid& x, const ImageGrid& x_s, const EdgeMask& mask,
                       double beta1, double beta2) {
    require_same_shape(x, x_s, "distance");
    if (beta1 == 0.0 && beta2 == 0.0) return 0.0;
    double d = 0.0;
    if (beta1 != 0.0) d += beta1 * (1.0 - ncc(x, x_s));
    if (beta2 != 0.0) d += beta2 * masked_tv(x, mask);
    return d;
}

// Alternating optimization against the trained flow: decode the latent,
// take one image-domain gradient step on the distance measure, re-encode,
// and shrink the latent toward the Gaussian center. No gradient flows
// through the flow itself. Deterministic; the mask is computed once from
// the source image. Intermediate iterates are unconstrained; the returned
// image is clamped to [0,1].
inline HarmonizeResult harmonize(const FlowModel& model, const ImageGrid& x_s,
                                 const ImageGrid& dataset_mean, const HarmonizeConfig& cfg) {
    cfg.validate();
    require_finite(x_s, "harmonize: source");
    if (x_s.height != model.arch.input_height || x_s.width != model.arch.input_width) {
        throw InvalidInputError("harmonize: source dims do not match model");
    }

    EdgeMask mask = edge_mask(x_s, cfg.mask_quantile);

    ImageGrid x0;
    switch (cfg.init_mode) {
    case InitMode::MeanImage:
        require_same_shape(dataset_mean, x_s, "harmonize: mean image");
        x0 = dataset_mean;
        break;
    case InitMode::SourceImage:
        x0 = x_s;
        break;
    case InitMode::Custom:
        require_same_shape(cfg.custom_init, x_s, "harmonize: custom init");
        x0 = cfg.custom_init;
        break;
    }

    HarmonizeResult res;
    res.trace.records.reserve(static_cast<std::size_t>(cfg.iterations));

    LatentState z = forward(model, x0).latent;
    ImageGrid x;
    for (int n = 0; n < cfg.iterations; ++n) {
        ImageGrid decoded = inverse(model, z).image;
        x = decoded;
        if (cfg.beta1 != 0.0) {
            ImageGrid g1 = ncc_gradient(decoded, x_s);
            for (std::size_t k = 0; k < x.size(); ++k) x.data[k] += cfg.beta1 * g1.data[k];
        }
        if (cfg.beta2 != 0.0) {
            ImageGrid g2 = masked_tv_subgradient(decoded, mask);
            for (std::size_t k = 0; k < x.size(); ++k) x.data[k] -= cfg.beta2 * g2.data[k];
        }
        for (double v : x.data) {
            if (!std::isfinite(v)) {
                throw NumericError("harmonize: non-finite iterate at iteration " +
                                   std::to_string(n + 1));
            }
        }
        z = forward(model, x).latent;
        double znorm2 = 0.0;
        for (double& v : z.z) {
            v *= (1.0 - cfg.alpha);
            znorm2 += v * v;
        }

        HarmonizeTrace::Record rec;
        rec.iteration = n + 1;
        rec.ncc_to_source = ncc(x, x_s);
        rec.masked_tv = masked_tv(x, mask);
        rec.latent_norm = std::sqrt(znorm2);
        rec.distance = cfg.beta1 * (1.0 - rec.ncc_to_source) + cfg.beta2 * rec.masked_tv;
        if (!std::isfinite(rec.latent_norm) || !std::isfinite(rec.ncc_to_source) ||
            !std::isfinite(rec.masked_tv)) {
            throw NumericError("harmonize: non-finite state at iteration " +
                               std::to_string(n + 1));
        }
        res.trace.records.push_back(rec);
    }
    res.image = clamp01(x);
    return res;
}

// Element of a batch run: either a result or an error message, never both.
struct HarmonizeBatchItem {
    std::optional<HarmonizeResult> result;
    std::string error;
    bool ok() const { return result.has_value(); }
};

// Order-preserving elementwise harmonization; per-item failures are
// captured as error records instead of aborting the batch.
inline std::vector<HarmonizeBatchItem> harmonize_batch(const FlowModel& model,
                                                       const std::vector<ImageGrid>& images,
                                                       const ImageGrid& dataset_mean,
                                                       const HarmonizeConfig& cfg) {
    std::vector<HarmonizeBatchItem> out(images.size());
    parallel_for(images.size(), [&](std::size_t i) {
        try {
            out[i].result = harmonize(model, images[i], dataset_mean, cfg);
        } catch (const std::exception& e) {
            out[i].error = e.what();
        }
    });
    return out;
}

} // namespace bh
