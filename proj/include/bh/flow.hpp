#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bh/error.hpp"
#include "bh/image.hpp"
#include "bh/rng.hpp"

namespace bh {

// Multiscale coupling flow: per level a squeeze, then steps_per_level x
// (actnorm -> LU-parameterized 1x1 channel mixing -> affine coupling),
// then a channel split that sends half the channels to the latent vector
// (all of them at the last level).
struct FlowArchitecture {
    int levels = 3;
    int steps_per_level = 7;
    int coupling_hidden_width = 64;
    int coupling_hidden_layers = 2;
    int input_height = 32;
    int input_width = 32;

    void validate() const {
        if (levels < 1 || steps_per_level < 1 || coupling_hidden_width < 1 ||
            coupling_hidden_layers < 1) {
            throw ConfigError("FlowArchitecture: counts must be positive");
        }
        if (input_height < 2 || input_width < 2 || input_height % 2 || input_width % 2) {
            throw ConfigError("FlowArchitecture: input dims must be positive and even");
        }
        int div = 1 << levels;
        if (input_height % div || input_width % div) {
            throw ConfigError("FlowArchitecture: input dims must be divisible by 2^levels");
        }
    }

    bool operator==(const FlowArchitecture&) const = default;
};

namespace flowdet {

// Channels-first value cube used inside the flow stack.
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_)
        : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}

    double& at(int ch, int i, int j) {
        return v[(static_cast<std::size_t>(ch) * h + i) * w + j];
    }
    double at(int ch, int i, int j) const {
        return v[(static_cast<std::size_t>(ch) * h + i) * w + j];
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
};

// 2x2 space-to-depth; output channel c*4 + 2*di + dj holds in(c, 2i+di, 2j+dj).
inline Tensor squeeze(const Tensor& in) {
    Tensor out(in.c * 4, in.h / 2, in.w / 2);
    for (int c = 0; c < in.c; ++c) {
        for (int di = 0; di < 2; ++di) {
            for (int dj = 0; dj < 2; ++dj) {
                int oc = c * 4 + 2 * di + dj;
                for (int i = 0; i < out.h; ++i) {
                    for (int j = 0; j < out.w; ++j) {
                        out.at(oc, i, j) = in.at(c, 2 * i + di, 2 * j + dj);
                    }
                }
            }
        }
    }
    return out;
}

inline Tensor unsqueeze(const Tensor& in) {
    Tensor out(in.c / 4, in.h * 2, in.w * 2);
    for (int c = 0; c < out.c; ++c) {
        for (int di = 0; di < 2; ++di) {
            for (int dj = 0; dj < 2; ++dj) {
                int ic = c * 4 + 2 * di + dj;
                for (int i = 0; i < in.h; ++i) {
                    for (int j = 0; j < in.w; ++j) {
                        out.at(c, 2 * i + di, 2 * j + dj) = in.at(ic, i, j);
                    }
                }
            }
        }
    }
    return out;
}

struct ConvShape {
    int in_c = 0, out_c = 0;
    std::size_t w_off = 0, b_off = 0;
    std::size_t weight_count() const {
        return static_cast<std::size_t>(out_c) * in_c * 9;
    }
};

struct StepLayout {
    std::size_t act_ls = 0, act_b = 0;           // actnorm log-scale / bias, C each
    std::size_t mix_l = 0, mix_u = 0, mix_d = 0; // strict lower, strict upper, log-diag
    std::vector<ConvShape> convs;                // coupling subnet stack
};

struct LevelLayout {
    int channels = 0, height = 0, width = 0;
    std::vector<StepLayout> steps;
};

struct ParamLayout {
    std::vector<LevelLayout> levels;
    std::size_t total = 0;
};

inline ParamLayout build_layout(const FlowArchitecture& arch) {
    arch.validate();
    ParamLayout lay;
    std::size_t off = 0;
    int c = 1, h = arch.input_height, w = arch.input_width;
    for (int l = 0; l < arch.levels; ++l) {
        LevelLayout lev;
        c *= 4;
        h /= 2;
        w /= 2;
        lev.channels = c;
        lev.height = h;
        lev.width = w;
        int half = c / 2;
        for (int k = 0; k < arch.steps_per_level; ++k) {
            StepLayout st;
            st.act_ls = off;
            off += static_cast<std::size_t>(c);
            st.act_b = off;
            off += static_cast<std::size_t>(c);
            std::size_t strict = static_cast<std::size_t>(c) * (c - 1) / 2;
            st.mix_l = off;
            off += strict;
            st.mix_u = off;
            off += strict;
            st.mix_d = off;
            off += static_cast<std::size_t>(c);
            int in_c = half;
            int width_hidden = arch.coupling_hidden_width;
            for (int m = 0; m < arch.coupling_hidden_layers + 1; ++m) {
                ConvShape cs;
                cs.in_c = (m == 0) ? in_c : width_hidden;
                cs.out_c = (m == arch.coupling_hidden_layers) ? 2 * half : width_hidden;
                cs.w_off = off;
                off += cs.weight_count();
                cs.b_off = off;
                off += static_cast<std::size_t>(cs.out_c);
                st.convs.push_back(cs);
            }
            lev.steps.push_back(std::move(st));
        }
        lay.levels.push_back(std::move(lev));
        c /= 2; // split keeps half the channels (ignored at the last level)
    }
    lay.total = off;
    return lay;
}

inline std::size_t parameter_count(const FlowArchitecture& arch) {
    return build_layout(arch).total;
}

} // namespace flowdet

// Flattened latent vector of dimension D = input pixels, with the per-level
// split layout.
struct LatentState {
    struct Slice {
        int level = 0;
        std::size_t offset = 0;
        int channels = 0, height = 0, width = 0;
        std::size_t count() const {
            return static_cast<std::size_t>(channels) * height * width;
        }
    };
    std::vector<double> z;
    std::vector<Slice> layout;
};

inline std::vector<LatentState::Slice> latent_layout(const FlowArchitecture& arch) {
    arch.validate();
    std::vector<LatentState::Slice> lay;
    std::size_t off = 0;
    int c = 1, h = arch.input_height, w = arch.input_width;
    for (int l = 0; l < arch.levels; ++l) {
        c *= 4;
        h /= 2;
        w /= 2;
        int out_c = (l == arch.levels - 1) ? c : c / 2;
        LatentState::Slice s;
        s.level = l;
        s.offset = off;
        s.channels = out_c;
        s.height = h;
        s.width = w;
        lay.push_back(s);
        off += s.count();
        c /= 2;
    }
    return lay;
}

inline LatentState make_latent(const FlowArchitecture& arch, std::vector<double> z) {
    LatentState ls;
    ls.layout = latent_layout(arch);
    std::size_t d = 0;
    for (const auto& s : ls.layout) d += s.count();
    if (z.size() != d) {
        throw InvalidInputError("latent vector has dimension " + std::to_string(z.size()) +
                                ", expected " + std::to_string(d));
    }
    ls.z = std::move(z);
    return ls;
}

// Invertible density model: architecture + flat parameter vector theta.
// The 1x1 mixing permutation is the half-channel swap for every step,
// a pure function of the architecture, so checkpoints carry params only.
// The identity-permutation variant exists for in-memory identity-flow
// constructions and is not meant to be persisted.
struct FlowModel {
    FlowArchitecture arch;
    std::vector<double> params;
    bool actnorm_initialized = false;
    bool identity_mixing_permutation = false;

    flowdet::ParamLayout layout; // derived from arch

    int permuted_channel(int level_channels, int out_channel) const {
        if (identity_mixing_permutation) return out_channel;
        return (out_channel + level_channels / 2) % level_channels;
    }
};

// Fresh model for training: couplings start as the identity (zero final
// conv), hidden conv weights are seeded He-style, actnorm awaits its
// data-dependent initialization.
inline FlowModel training_init(const FlowArchitecture& arch, std::uint64_t seed) {
    FlowModel m;
    m.arch = arch;
    m.layout = flowdet::build_layout(arch);
    m.params.assign(m.layout.total, 0.0);
    Rng rng(seed);
    for (const auto& lev : m.layout.levels) {
        for (const auto& st : lev.steps) {
            for (std::size_t mi = 0; mi + 1 < st.convs.size(); ++mi) {
                const auto& cs = st.convs[mi];
                double scale = std::sqrt(2.0 / (cs.in_c * 9.0));
                for (std::size_t k = 0; k < cs.weight_count(); ++k) {
                    m.params[cs.w_off + k] = scale * rng.gaussian();
                }
            }
        }
    }
    return m;
}

// Identity flow: all parameters zero and identity mixing permutations, so
// forward is exactly the squeeze/split pixel permutation with log-det 0.
inline FlowModel identity_model(const FlowArchitecture& arch) {
    FlowModel m;
    m.arch = arch;
    m.layout = flowdet::build_layout(arch);
    m.params.assign(m.layout.total, 0.0);
    m.actnorm_initialized = true;
    m.identity_mixing_permutation = true;
    return m;
}

// Fully randomized model (couplings included); used by the oracle tests.
// The coupling output layers are kept small so the stack stays
// well-conditioned (trained models are tame in the same way).
inline FlowModel random_model(const FlowArchitecture& arch, std::uint64_t seed,
                              double scale = 0.12) {
    FlowModel m;
    m.arch = arch;
    m.layout = flowdet::build_layout(arch);
    m.params.resize(m.layout.total);
    Rng rng(seed);
    for (double& p : m.params) p = scale * rng.gaussian();
    for (const auto& lev : m.layout.levels) {
        for (const auto& st : lev.steps) {
            const auto& last = st.convs.back();
            for (std::size_t k = 0; k < last.weight_count(); ++k) m.params[last.w_off + k] *= 0.3;
            for (int c = 0; c < last.out_c; ++c) m.params[last.b_off + c] *= 0.3;
        }
    }
    m.actnorm_initialized = true;
    return m;
}

// Direction-tagged results: forward produces a latent, inverse an image;
// log_det is the analytic log|det Jacobian| of the direction taken.
struct ForwardResult {
    LatentState latent;
    double log_det = 0.0;
};
struct InverseResult {
    ImageGrid image;
    double log_det = 0.0;
};

namespace flowdet {

inline void actnorm_fwd(const FlowModel& m, const StepLayout& st, Tensor& t,
                        double& log_det) {
    std::size_t plane = t.plane();
    for (int c = 0; c < t.c; ++c) {
        double s = std::exp(m.params[st.act_ls + c]);
        double b = m.params[st.act_b + c];
        double* p = t.v.data() + static_cast<std::size_t>(c) * plane;
        for (std::size_t k = 0; k < plane; ++k) p[k] = s * p[k] + b;
        log_det += static_cast<double>(plane) * m.params[st.act_ls + c];
    }
}

inline void actnorm_inv(const FlowModel& m, const StepLayout& st, Tensor& t,
                        double& log_det) {
    std::size_t plane = t.plane();
    for (int c = 0; c < t.c; ++c) {
        double s = std::exp(-m.params[st.act_ls + c]);
        double b = m.params[st.act_b + c];
        double* p = t.v.data() + static_cast<std::size_t>(c) * plane;
        for (std::size_t k = 0; k < plane; ++k) p[k] = (p[k] - b) * s;
        log_det -= static_cast<double>(plane) * m.params[st.act_ls + c];
    }
}

// y = P L U x per pixel; P is the fixed permutation, L unit lower
// triangular, U strictly upper plus exp(log-diag). log|det| = plane * sum(logd).
inline void mixing_fwd(const FlowModel& m, const StepLayout& st, Tensor& t,
                       double& log_det) {
    int C = t.c;
    std::size_t plane = t.plane();
    const double* lw = m.params.data() + st.mix_l;
    const double* uw = m.params.data() + st.mix_u;
    const double* dw = m.params.data() + st.mix_d;
    std::vector<double> x(C), tmp(C);
    for (std::size_t k = 0; k < plane; ++k) {
        for (int c = 0; c < C; ++c) x[c] = t.v[static_cast<std::size_t>(c) * plane + k];
        // t1 = U x  (strict upper stored row-major: row i has entries j=i+1..C-1)
        std::size_t ui = 0;
        for (int i = 0; i < C; ++i) {
            double acc = std::exp(dw[i]) * x[i];
            for (int j = i + 1; j < C; ++j) acc += uw[ui++] * x[j];
            tmp[i] = acc;
        }
        // x = L t1 (strict lower stored row-major: row i has entries j=0..i-1)
        std::size_t li = static_cast<std::size_t>(C) * (C - 1) / 2;
        for (int i = C - 1; i >= 0; --i) {
            li -= static_cast<std::size_t>(i);
            double acc = tmp[i];
            for (int j = 0; j < i; ++j) acc += lw[li + j] * tmp[j];
            x[i] = acc;
        }
        for (int c = 0; c < C; ++c) {
            t.v[static_cast<std::size_t>(c) * plane + k] = x[m.permuted_channel(C, c)];
        }
    }
    double dsum = 0.0;
    for (int c = 0; c < C; ++c) dsum += dw[c];
    log_det += static_cast<double>(plane) * dsum;
}

inline void mixing_inv(const FlowModel& m, const StepLayout& st, Tensor& t,
                       double& log_det) {
    int C = t.c;
    std::size_t plane = t.plane();
    const double* lw = m.params.data() + st.mix_l;
    const double* uw = m.params.data() + st.mix_u;
    const double* dw = m.params.data() + st.mix_d;
    std::vector<double> y(C), tmp(C);
    for (std::size_t k = 0; k < plane; ++k) {
        for (int c = 0; c < C; ++c) {
            y[m.permuted_channel(C, c)] = t.v[static_cast<std::size_t>(c) * plane + k];
        }
        // forward substitution L tmp = y
        std::size_t li = 0;
        for (int i = 0; i < C; ++i) {
            double acc = y[i];
            for (int j = 0; j < i; ++j) acc -= lw[li + j] * tmp[j];
            li += static_cast<std::size_t>(i);
            tmp[i] = acc;
        }
        // back substitution U x = tmp
        std::size_t ubase = static_cast<std::size_t>(C) * (C - 1) / 2;
        for (int i = C - 1; i >= 0; --i) {
            ubase -= static_cast<std::size_t>(C - 1 - i);
            double acc = tmp[i];
            for (int j = i + 1; j < C; ++j) acc -= uw[ubase + (j - i - 1)] * y[j];
            y[i] = acc * std::exp(-dw[i]);
        }
        for (int c = 0; c < C; ++c) t.v[static_cast<std::size_t>(c) * plane + k] = y[c];
    }
    double dsum = 0.0;
    for (int c = 0; c < C; ++c) dsum += dw[c];
    log_det -= static_cast<double>(plane) * dsum;
}

// 3x3 same-padding convolution.
inline Tensor conv3x3(const FlowModel& m, const ConvShape& cs, const Tensor& in) {
    Tensor out(cs.out_c, in.h, in.w);
    const double* wt = m.params.data() + cs.w_off;
    const double* bs = m.params.data() + cs.b_off;
    for (int o = 0; o < cs.out_c; ++o) {
        for (std::size_t k = 0; k < out.plane(); ++k) {
            out.v[static_cast<std::size_t>(o) * out.plane() + k] = bs[o];
        }
        for (int c = 0; c < cs.in_c; ++c) {
            const double* base = wt + (static_cast<std::size_t>(o) * cs.in_c + c) * 9;
            for (int i = 0; i < in.h; ++i) {
                int p_lo = (i == 0) ? 1 : 0;
                int p_hi = (i == in.h - 1) ? 1 : 2;
                for (int p = p_lo; p <= p_hi; ++p) {
                    const double* row =
                        &in.v[(static_cast<std::size_t>(c) * in.h + (i + p - 1)) * in.w];
                    double* orow = &out.v[(static_cast<std::size_t>(o) * in.h + i) * in.w];
                    const double* w3 = base + 3 * p;
                    for (int j = 0; j < in.w; ++j) {
                        double acc = 0.0;
                        if (j > 0) acc += w3[0] * row[j - 1];
                        acc += w3[1] * row[j];
                        if (j < in.w - 1) acc += w3[2] * row[j + 1];
                        orow[j] += acc;
                    }
                }
            }
        }
    }
    return out;
}

// Coupling subnetwork: hidden 3x3 convs with ReLU, linear output conv.
// Returns the (2*half)-channel raw output; optionally records the
// per-conv inputs and pre-activations for the backward pass.
inline Tensor subnet_fwd(const FlowModel& m, const StepLayout& st, const Tensor& xa,
                         std::vector<Tensor>* conv_in = nullptr,
                         std::vector<Tensor>* preact = nullptr) {
    Tensor a = xa;
    for (std::size_t mi = 0; mi < st.convs.size(); ++mi) {
        if (conv_in) conv_in->push_back(a);
        Tensor pre = conv3x3(m, st.convs[mi], a);
        if (preact) preact->push_back(pre);
        if (mi + 1 < st.convs.size()) {
            for (double& v : pre.v) v = v > 0.0 ? v : 0.0;
        }
        a = std::move(pre);
    }
    return a;
}

// Smoothly squashed log-scale in (-2, 2); identity slope at zero.
inline double squash_scale(double raw) { return 2.0 * std::tanh(0.5 * raw); }

inline void coupling_fwd(const FlowModel& m, const StepLayout& st, Tensor& t,
                         double& log_det) {
    int half = t.c / 2;
    std::size_t plane = t.plane();
    Tensor xa(half, t.h, t.w);
    std::copy(t.v.begin(), t.v.begin() + static_cast<std::ptrdiff_t>(half * plane),
              xa.v.begin());
    Tensor raw = subnet_fwd(m, st, xa);
    for (int c = 0; c < half; ++c) {
        const double* rs = raw.v.data() + static_cast<std::size_t>(c) * plane;
        const double* sh = raw.v.data() + static_cast<std::size_t>(half + c) * plane;
        double* xb = t.v.data() + static_cast<std::size_t>(half + c) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
            double s = squash_scale(rs[k]);
            xb[k] = xb[k] * std::exp(s) + sh[k];
            log_det += s;
        }
    }
}

inline void coupling_inv(const FlowModel& m, const StepLayout& st, Tensor& t,
                         double& log_det) {
    int half = t.c / 2;
    std::size_t plane = t.plane();
    Tensor ya(half, t.h, t.w);
    std::copy(t.v.begin(), t.v.begin() + static_cast<std::ptrdiff_t>(half * plane),
              ya.v.begin());
    Tensor raw = subnet_fwd(m, st, ya);
    for (int c = 0; c < half; ++c) {
        const double* rs = raw.v.data() + static_cast<std::size_t>(c) * plane;
        const double* sh = raw.v.data() + static_cast<std::size_t>(half + c) * plane;
        double* yb = t.v.data() + static_cast<std::size_t>(half + c) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
            double s = squash_scale(rs[k]);
            yb[k] = (yb[k] - sh[k]) * std::exp(-s);
            log_det -= s;
        }
    }
}

inline void check_input(const FlowModel& m, const ImageGrid& x) {
    if (x.height != m.arch.input_height || x.width != m.arch.input_width) {
        throw InvalidInputError("flow: input is " + std::to_string(x.height) + "x" +
                                std::to_string(x.width) + ", architecture expects " +
                                std::to_string(m.arch.input_height) + "x" +
                                std::to_string(m.arch.input_width));
    }
    if (!m.actnorm_initialized) {
        throw InvalidInputError("flow: actnorm has not been initialized");
    }
    require_finite(x, "flow input");
}

} // namespace flowdet

inline ForwardResult forward(const FlowModel& model, const ImageGrid& x) {
    flowdet::check_input(model, x);
    ForwardResult res;
    res.latent.layout = latent_layout(model.arch);
    res.latent.z.resize(x.size());

    flowdet::Tensor t(1, x.height, x.width);
    t.v = x.data;
    for (int l = 0; l < model.arch.levels; ++l) {
        const auto& lev = model.layout.levels[l];
        t = flowdet::squeeze(t);
        for (const auto& st : lev.steps) {
            flowdet::actnorm_fwd(model, st, t, res.log_det);
            flowdet::mixing_fwd(model, st, t, res.log_det);
            flowdet::coupling_fwd(model, st, t, res.log_det);
        }
        const auto& slice = res.latent.layout[l];
        if (l < model.arch.levels - 1) {
            int keep = t.c / 2;
            std::size_t half_sz = static_cast<std::size_t>(keep) * t.plane();
            std::copy(t.v.begin() + static_cast<std::ptrdiff_t>(half_sz), t.v.end(),
                      res.latent.z.begin() + static_cast<std::ptrdiff_t>(slice.offset));
            t.v.resize(half_sz);
            t.c = keep;
        } else {
            std::copy(t.v.begin(), t.v.end(),
                      res.latent.z.begin() + static_cast<std::ptrdiff_t>(slice.offset));
        }
    }
    return res;
}

inline InverseResult inverse(const FlowModel& model, const LatentState& z) {
    if (!model.actnorm_initialized) {
        throw InvalidInputError("flow: actnorm has not been initialized");
    }
    std::size_t d = static_cast<std::size_t>(model.arch.input_height) * model.arch.input_width;
    if (z.z.size() != d) {
        throw InvalidInputError("flow: latent dimension " + std::to_string(z.z.size()) +
                                ", expected " + std::to_string(d));
    }
    for (double v : z.z) {
        if (!std::isfinite(v)) throw InvalidInputError("flow: non-finite latent value");
    }
    auto layout = latent_layout(model.arch);
    InverseResult res;
    flowdet::Tensor t;
    for (int l = model.arch.levels - 1; l >= 0; --l) {
        const auto& lev = model.layout.levels[l];
        const auto& slice = layout[l];
        flowdet::Tensor full(lev.channels, lev.height, lev.width);
        if (l == model.arch.levels - 1) {
            std::copy(z.z.begin() + static_cast<std::ptrdiff_t>(slice.offset),
                      z.z.begin() + static_cast<std::ptrdiff_t>(slice.offset + slice.count()),
                      full.v.begin());
        } else {
            std::size_t keep_sz = t.v.size();
            std::copy(t.v.begin(), t.v.end(), full.v.begin());
            std::copy(z.z.begin() + static_cast<std::ptrdiff_t>(slice.offset),
                      z.z.begin() + static_cast<std::ptrdiff_t>(slice.offset + slice.count()),
                      full.v.begin() + static_cast<std::ptrdiff_t>(keep_sz));
        }
        for (auto it = lev.steps.rbegin(); it != lev.steps.rend(); ++it) {
            flowdet::coupling_inv(model, *it, full, res.log_det);
            flowdet::mixing_inv(model, *it, full, res.log_det);
            flowdet::actnorm_inv(model, *it, full, res.log_det);
        }
        t = flowdet::unsqueeze(full);
    }
    res.image.height = t.h;
    res.image.width = t.w;
    res.image.data = std::move(t.v);
    return res;
}

// Exact log-density under the standard-Gaussian latent.
inline double log_prob(const FlowModel& model, const ImageGrid& x) {
    ForwardResult f = forward(model, x);
    double d = static_cast<double>(f.latent.z.size());
    double z2 = 0.0;
    for (double v : f.latent.z) z2 += v * v;
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    return -0.5 * d * kLog2Pi - 0.5 * z2 + f.log_det;
}

// Draw z ~ N(0, temperature^2 I) with the seeded generator and decode.
// temperature 0 is the exact degenerate limit (z = 0).
inline ImageGrid sample(const FlowModel& model, std::uint64_t seed, double temperature) {
    if (!(temperature >= 0.0)) {
        throw InvalidInputError("sample: temperature must be >= 0");
    }
    std::size_t d = static_cast<std::size_t>(model.arch.input_height) * model.arch.input_width;
    Rng rng(seed);
    std::vector<double> z(d);
    for (double& v : z) v = temperature * rng.gaussian();
    return inverse(model, make_latent(model.arch, std::move(z))).image;
}

} // namespace bh
