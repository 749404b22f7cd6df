#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "bh/flow.hpp"
#include "bh/threads.hpp"

namespace bh {
namespace flowdet {

struct StepCache {
    Tensor act_in;  // input to actnorm
    Tensor mix_in;  // actnorm output
    Tensor cpl_in;  // mixing output; first half is xa, second half xb
    std::vector<Tensor> conv_in;
    std::vector<Tensor> preact;
    Tensor s; // squashed log-scale (half, h, w)
};

struct ForwardCache {
    std::vector<std::vector<StepCache>> levels;
    LatentState latent;
    double log_det = 0.0;
};

inline ForwardCache forward_cached(const FlowModel& m, const ImageGrid& x) {
    check_input(m, x);
    ForwardCache fc;
    fc.latent.layout = latent_layout(m.arch);
    fc.latent.z.resize(x.size());
    fc.levels.resize(static_cast<std::size_t>(m.arch.levels));

    Tensor t(1, x.height, x.width);
    t.v = x.data;
    for (int l = 0; l < m.arch.levels; ++l) {
        const auto& lev = m.layout.levels[l];
        t = squeeze(t);
        for (const auto& st : lev.steps) {
            StepCache sc;
            sc.act_in = t;
            actnorm_fwd(m, st, t, fc.log_det);
            sc.mix_in = t;
            mixing_fwd(m, st, t, fc.log_det);
            sc.cpl_in = t;
            // coupling with caches
            int half = t.c / 2;
            std::size_t plane = t.plane();
            Tensor xa(half, t.h, t.w);
            std::copy(t.v.begin(), t.v.begin() + static_cast<std::ptrdiff_t>(half * plane),
                      xa.v.begin());
            Tensor raw = subnet_fwd(m, st, xa, &sc.conv_in, &sc.preact);
            sc.s = Tensor(half, t.h, t.w);
            for (int c = 0; c < half; ++c) {
                const double* rs = raw.v.data() + static_cast<std::size_t>(c) * plane;
                const double* sh = raw.v.data() + static_cast<std::size_t>(half + c) * plane;
                double* xb = t.v.data() + static_cast<std::size_t>(half + c) * plane;
                double* sv = sc.s.v.data() + static_cast<std::size_t>(c) * plane;
                for (std::size_t k = 0; k < plane; ++k) {
                    double s = squash_scale(rs[k]);
                    sv[k] = s;
                    xb[k] = xb[k] * std::exp(s) + sh[k];
                    fc.log_det += s;
                }
            }
            fc.levels[static_cast<std::size_t>(l)].push_back(std::move(sc));
        }
        const auto& slice = fc.latent.layout[l];
        if (l < m.arch.levels - 1) {
            int keep = t.c / 2;
            std::size_t half_sz = static_cast<std::size_t>(keep) * t.plane();
            std::copy(t.v.begin() + static_cast<std::ptrdiff_t>(half_sz), t.v.end(),
                      fc.latent.z.begin() + static_cast<std::ptrdiff_t>(slice.offset));
            t.v.resize(half_sz);
            t.c = keep;
        } else {
            std::copy(t.v.begin(), t.v.end(),
                      fc.latent.z.begin() + static_cast<std::ptrdiff_t>(slice.offset));
        }
    }
    return fc;
}

inline void conv3x3_bwd(const FlowModel& m, const ConvShape& cs, const Tensor& in,
                        const Tensor& g_out, Tensor& g_in, double* g_params) {
    const double* wt = m.params.data() + cs.w_off;
    g_in = Tensor(cs.in_c, in.h, in.w);
    std::size_t plane = in.plane();
    for (int o = 0; o < cs.out_c; ++o) {
        const double* go = g_out.v.data() + static_cast<std::size_t>(o) * plane;
        if (g_params) {
            double gb = 0.0;
            for (std::size_t k = 0; k < plane; ++k) gb += go[k];
            g_params[cs.b_off + o] += gb;
        }
        for (int c = 0; c < cs.in_c; ++c) {
            const double* base = wt + (static_cast<std::size_t>(o) * cs.in_c + c) * 9;
            double* gbase = g_params
                ? g_params + cs.w_off + (static_cast<std::size_t>(o) * cs.in_c + c) * 9
                : nullptr;
            for (int p = 0; p < 3; ++p) {
                for (int q = 0; q < 3; ++q) {
                    double w = base[3 * p + q];
                    double gw = 0.0;
                    int i_lo = std::max(0, 1 - p);
                    int i_hi = std::min(in.h - 1, in.h - p);
                    for (int i = i_lo; i <= i_hi; ++i) {
                        int ii = i + p - 1;
                        if (ii < 0 || ii >= in.h) continue;
                        const double* irow =
                            &in.v[(static_cast<std::size_t>(c) * in.h + ii) * in.w];
                        double* girow =
                            &g_in.v[(static_cast<std::size_t>(c) * in.h + ii) * in.w];
                        const double* grow = &go[static_cast<std::size_t>(i) * in.w];
                        int j_lo = std::max(0, 1 - q);
                        int j_hi = std::min(in.w - 1, in.w - q);
                        for (int j = j_lo; j <= j_hi; ++j) {
                            int jj = j + q - 1;
                            gw += grow[j] * irow[jj];
                            girow[jj] += w * grow[j];
                        }
                    }
                    if (gbase) gbase[3 * p + q] += gw;
                }
            }
        }
    }
}

inline void coupling_bwd(const FlowModel& m, const StepLayout& st, const StepCache& sc,
                         const Tensor& g_y, Tensor& g_x, double* g_params) {
    int C = sc.cpl_in.c;
    int half = C / 2;
    std::size_t plane = sc.cpl_in.plane();
    g_x = Tensor(C, sc.cpl_in.h, sc.cpl_in.w);

    Tensor g_raw(2 * half, sc.cpl_in.h, sc.cpl_in.w);
    for (int c = 0; c < half; ++c) {
        const double* gyb = g_y.v.data() + static_cast<std::size_t>(half + c) * plane;
        const double* xb = sc.cpl_in.v.data() + static_cast<std::size_t>(half + c) * plane;
        const double* sv = sc.s.v.data() + static_cast<std::size_t>(c) * plane;
        double* gxb = g_x.v.data() + static_cast<std::size_t>(half + c) * plane;
        double* graw_s = g_raw.v.data() + static_cast<std::size_t>(c) * plane;
        double* graw_t = g_raw.v.data() + static_cast<std::size_t>(half + c) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
            double es = std::exp(sv[k]);
            gxb[k] = gyb[k] * es;
            double g_s = gyb[k] * xb[k] * es - 1.0; // -1: d(-log_det)/ds
            double half_s = 0.5 * sv[k];
            graw_s[k] = g_s * (1.0 - half_s * half_s);
            graw_t[k] = gyb[k];
        }
    }
    // subnet backward
    Tensor g_cur = std::move(g_raw);
    for (int mi = static_cast<int>(st.convs.size()) - 1; mi >= 0; --mi) {
        if (mi < static_cast<int>(st.convs.size()) - 1) {
            const Tensor& pre = sc.preact[static_cast<std::size_t>(mi)];
            for (std::size_t k = 0; k < g_cur.v.size(); ++k) {
                if (pre.v[k] <= 0.0) g_cur.v[k] = 0.0;
            }
        }
        Tensor g_in;
        conv3x3_bwd(m, st.convs[static_cast<std::size_t>(mi)],
                    sc.conv_in[static_cast<std::size_t>(mi)], g_cur, g_in, g_params);
        g_cur = std::move(g_in);
    }
    for (int c = 0; c < half; ++c) {
        const double* gya = g_y.v.data() + static_cast<std::size_t>(c) * plane;
        const double* gnn = g_cur.v.data() + static_cast<std::size_t>(c) * plane;
        double* gxa = g_x.v.data() + static_cast<std::size_t>(c) * plane;
        for (std::size_t k = 0; k < plane; ++k) gxa[k] = gya[k] + gnn[k];
    }
}

inline void mixing_bwd(const FlowModel& m, const StepLayout& st, const StepCache& sc,
                       const Tensor& g_y, Tensor& g_x, double* g_params) {
    int C = sc.mix_in.c;
    std::size_t plane = sc.mix_in.plane();
    const double* lw = m.params.data() + st.mix_l;
    const double* uw = m.params.data() + st.mix_u;
    const double* dw = m.params.data() + st.mix_d;
    g_x = Tensor(C, sc.mix_in.h, sc.mix_in.w);

    std::vector<double> x(C), t1(C), g_t2(C), g_t1(C);
    std::vector<double> g_l(static_cast<std::size_t>(C) * (C - 1) / 2, 0.0);
    std::vector<double> g_u(static_cast<std::size_t>(C) * (C - 1) / 2, 0.0);
    std::vector<double> g_d(static_cast<std::size_t>(C), 0.0);

    for (std::size_t k = 0; k < plane; ++k) {
        for (int c = 0; c < C; ++c) {
            x[c] = sc.mix_in.v[static_cast<std::size_t>(c) * plane + k];
            g_t2[m.permuted_channel(C, c)] = g_y.v[static_cast<std::size_t>(c) * plane + k];
        }
        // recompute t1 = U x
        std::size_t ui = 0;
        for (int i = 0; i < C; ++i) {
            double acc = std::exp(dw[i]) * x[i];
            for (int j = i + 1; j < C; ++j) acc += uw[ui++] * x[j];
            t1[i] = acc;
        }
        // g_L[i][j] += g_t2[i] * t1[j]; g_t1 = L^T g_t2
        std::size_t li = 0;
        for (int i = 0; i < C; ++i) {
            for (int j = 0; j < i; ++j) g_l[li + j] += g_t2[i] * t1[j];
            li += static_cast<std::size_t>(i);
        }
        for (int j = 0; j < C; ++j) {
            double acc = g_t2[j];
            for (int i = j + 1; i < C; ++i) {
                acc += lw[static_cast<std::size_t>(i) * (i - 1) / 2 + j] * g_t2[i];
            }
            g_t1[j] = acc;
        }
        // g_U strict, g_d, and g_x = U^T g_t1
        ui = 0;
        for (int i = 0; i < C; ++i) {
            g_d[i] += g_t1[i] * x[i] * std::exp(dw[i]);
            for (int j = i + 1; j < C; ++j) g_u[ui++] += g_t1[i] * x[j];
        }
        for (int j = 0; j < C; ++j) {
            double acc = std::exp(dw[j]) * g_t1[j];
            for (int i = 0; i < j; ++i) {
                std::size_t row = static_cast<std::size_t>(i) * (C - 1) -
                                  static_cast<std::size_t>(i) * (i - 1) / 2;
                acc += uw[row + (j - i - 1)] * g_t1[i];
            }
            g_x.v[static_cast<std::size_t>(j) * plane + k] = acc;
        }
    }
    if (g_params) {
        for (std::size_t k = 0; k < g_l.size(); ++k) g_params[st.mix_l + k] += g_l[k];
        for (std::size_t k = 0; k < g_u.size(); ++k) g_params[st.mix_u + k] += g_u[k];
        for (int c = 0; c < C; ++c) {
            g_params[st.mix_d + c] += g_d[c] - static_cast<double>(plane);
        }
    }
}

inline void actnorm_bwd(const FlowModel& m, const StepLayout& st, const StepCache& sc,
                        const Tensor& g_y, Tensor& g_x, double* g_params) {
    int C = sc.act_in.c;
    std::size_t plane = sc.act_in.plane();
    g_x = Tensor(C, sc.act_in.h, sc.act_in.w);
    for (int c = 0; c < C; ++c) {
        double s = std::exp(m.params[st.act_ls + c]);
        const double* gy = g_y.v.data() + static_cast<std::size_t>(c) * plane;
        const double* xin = sc.act_in.v.data() + static_cast<std::size_t>(c) * plane;
        double* gx = g_x.v.data() + static_cast<std::size_t>(c) * plane;
        double g_ls = 0.0, g_b = 0.0;
        for (std::size_t k = 0; k < plane; ++k) {
            g_ls += gy[k] * s * xin[k];
            g_b += gy[k];
            gx[k] = s * gy[k];
        }
        if (g_params) {
            g_params[st.act_ls + c] += g_ls - static_cast<double>(plane);
            g_params[st.act_b + c] += g_b;
        }
    }
}

// Reverse-mode pass for the negative log-likelihood of one image.
// Accumulates d(nll)/d(theta) into g_params (if given) and writes
// d(nll)/d(input) into g_input (if given). Returns the nll.
inline double backprop_nll(const FlowModel& m, const ImageGrid& x, double* g_params,
                           ImageGrid* g_input) {
    ForwardCache fc = forward_cached(m, x);
    double d = static_cast<double>(fc.latent.z.size());
    double z2 = 0.0;
    for (double v : fc.latent.z) z2 += v * v;
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    double nll = 0.5 * d * kLog2Pi + 0.5 * z2 - fc.log_det;

    Tensor g_keep;
    for (int l = m.arch.levels - 1; l >= 0; --l) {
        const auto& lev = m.layout.levels[l];
        const auto& slice = fc.latent.layout[l];
        Tensor g_t(lev.channels, lev.height, lev.width);
        if (l == m.arch.levels - 1) {
            // d(0.5*||z||^2)/dz = z
            for (std::size_t k = 0; k < slice.count(); ++k) {
                g_t.v[k] = fc.latent.z[slice.offset + k];
            }
        } else {
            std::copy(g_keep.v.begin(), g_keep.v.end(), g_t.v.begin());
            std::size_t keep_sz = g_keep.v.size();
            for (std::size_t k = 0; k < slice.count(); ++k) {
                g_t.v[keep_sz + k] = fc.latent.z[slice.offset + k];
            }
        }
        const auto& caches = fc.levels[static_cast<std::size_t>(l)];
        for (int k = m.arch.steps_per_level - 1; k >= 0; --k) {
            const auto& st = lev.steps[static_cast<std::size_t>(k)];
            const auto& sc = caches[static_cast<std::size_t>(k)];
            Tensor g_next;
            coupling_bwd(m, st, sc, g_t, g_next, g_params);
            mixing_bwd(m, st, sc, g_next, g_t, g_params);
            actnorm_bwd(m, st, sc, g_t, g_next, g_params);
            g_t = std::move(g_next);
        }
        g_keep = unsqueeze(g_t);
    }
    if (g_input) {
        g_input->height = x.height;
        g_input->width = x.width;
        g_input->data = std::move(g_keep.v);
    }
    return nll;
}

} // namespace flowdet

// Gradient of the mean negative log-likelihood over a batch with respect to
// theta, by reverse-mode accumulation through the layer stack. Per-image
// contributions are computed in parallel and reduced in index order, so the
// result does not depend on the worker count.
inline std::vector<double> parameter_gradient(const FlowModel& model,
                                              const std::vector<ImageGrid>& batch,
                                              std::vector<double>* per_image_nll = nullptr) {
    if (batch.empty()) {
        throw InvalidInputError("parameter_gradient: empty batch");
    }
    // validate before the parallel section; a throw from a worker thread
    // could not be propagated
    for (const auto& img : batch) flowdet::check_input(model, img);
    std::size_t n = batch.size();
    std::vector<std::vector<double>> grads(n);
    std::vector<double> nlls(n, 0.0);
    parallel_for(n, [&](std::size_t i) {
        grads[i].assign(model.layout.total, 0.0);
        nlls[i] = flowdet::backprop_nll(model, batch[i], grads[i].data(), nullptr);
    });
    std::vector<double> g(model.layout.total, 0.0);
    double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += grads[i][k] * inv;
    }
    if (per_image_nll) *per_image_nll = std::move(nlls);
    return g;
}

// d(-log p)/d(input); exposed for the finite-difference oracles.
inline ImageGrid nll_input_gradient(const FlowModel& model, const ImageGrid& x) {
    ImageGrid g;
    flowdet::backprop_nll(model, x, nullptr, &g);
    return g;
}

// Data-dependent actnorm initialization (layer-sequential): each actnorm's
// scale/bias are set so that its output has zero mean, unit variance per
// channel over this batch, with the batch propagated through the already
// initialized prefix of the stack.
inline FlowModel actnorm_initialize(FlowModel model, const std::vector<ImageGrid>& batch) {
    if (batch.size() < 2) {
        throw InvalidInputError("actnorm_initialize: batch of at least 2 images required");
    }
    for (const auto& img : batch) {
        if (img.height != model.arch.input_height || img.width != model.arch.input_width) {
            throw InvalidInputError("actnorm_initialize: image dimensions do not match arch");
        }
    }
    std::vector<flowdet::Tensor> ts;
    ts.reserve(batch.size());
    for (const auto& img : batch) {
        flowdet::Tensor t(1, img.height, img.width);
        t.v = img.data;
        ts.push_back(std::move(t));
    }
    double dummy = 0.0;
    for (int l = 0; l < model.arch.levels; ++l) {
        const auto& lev = model.layout.levels[l];
        for (auto& t : ts) t = flowdet::squeeze(t);
        for (const auto& st : lev.steps) {
            int C = ts[0].c;
            std::size_t plane = ts[0].plane();
            double count = static_cast<double>(plane * ts.size());
            for (int c = 0; c < C; ++c) {
                double s1 = 0.0, s2 = 0.0;
                for (const auto& t : ts) {
                    const double* p = t.v.data() + static_cast<std::size_t>(c) * plane;
                    for (std::size_t k = 0; k < plane; ++k) {
                        s1 += p[k];
                        s2 += p[k] * p[k];
                    }
                }
                double mean = s1 / count;
                double var = s2 / count - mean * mean;
                if (!(var > 1e-20)) {
                    throw InvalidInputError(
                        "actnorm_initialize: zero-variance channel in init batch");
                }
                double stddev = std::sqrt(var);
                model.params[st.act_ls + c] = -std::log(stddev);
                model.params[st.act_b + c] = -mean / stddev;
            }
            for (auto& t : ts) {
                flowdet::actnorm_fwd(model, st, t, dummy);
                flowdet::mixing_fwd(model, st, t, dummy);
                flowdet::coupling_fwd(model, st, t, dummy);
            }
        }
        if (l < model.arch.levels - 1) {
            for (auto& t : ts) {
                t.c /= 2;
                t.v.resize(static_cast<std::size_t>(t.c) * t.plane());
            }
        }
    }
    model.actnorm_initialized = true;
    return model;
}

// Walks the stack and names the first layer producing a non-finite value;
// empty string when everything is finite. Used for NaN-abort diagnostics.
inline std::string first_nonfinite_layer(const FlowModel& model, const ImageGrid& x) {
    auto bad = [](const flowdet::Tensor& t) {
        for (double v : t.v) {
            if (!std::isfinite(v)) return true;
        }
        return false;
    };
    flowdet::Tensor t(1, x.height, x.width);
    t.v = x.data;
    if (bad(t)) return "input";
    double ld = 0.0;
    for (int l = 0; l < model.arch.levels; ++l) {
        const auto& lev = model.layout.levels[l];
        t = flowdet::squeeze(t);
        for (int k = 0; k < model.arch.steps_per_level; ++k) {
            const auto& st = lev.steps[static_cast<std::size_t>(k)];
            std::string where = "level " + std::to_string(l + 1) + " step " +
                                std::to_string(k + 1) + " ";
            flowdet::actnorm_fwd(model, st, t, ld);
            if (bad(t)) return where + "actnorm";
            flowdet::mixing_fwd(model, st, t, ld);
            if (bad(t)) return where + "mixing";
            flowdet::coupling_fwd(model, st, t, ld);
            if (bad(t)) return where + "coupling";
        }
        if (l < model.arch.levels - 1) {
            t.c /= 2;
            t.v.resize(static_cast<std::size_t>(t.c) * t.plane());
        }
    }
    return "";
}

} // namespace bh
