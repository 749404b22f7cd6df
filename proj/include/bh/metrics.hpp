#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "bh/image.hpp"

namespace bh {

// Peak signal-to-noise ratio at peak 1; identical images yield +infinity.
inline double psnr(const ImageGrid& x, const ImageGrid& ref) {
    require_same_shape(x, ref, "psnr");
    double mse = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        double d = x.data[k] - ref.data[k];
        mse += d * d;
    }
    mse /= static_cast<double>(x.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

// Mean local SSIM with the canonical 11x11 Gaussian window (sigma 1.5),
// C1 = 0.01^2, C2 = 0.03^2 at data range 1, averaged over valid positions.
inline double ssim(const ImageGrid& x, const ImageGrid& ref) {
    require_same_shape(x, ref, "ssim");
    constexpr int kWin = 11;
    if (x.height < kWin || x.width < kWin) {
        throw InvalidInputError("ssim: image smaller than the 11x11 window");
    }
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;

    double w1[kWin];
    double wsum = 0.0;
    for (int k = 0; k < kWin; ++k) {
        double d = k - 5.0;
        w1[k] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        wsum += w1[k];
    }
    for (double& v : w1) v /= wsum;

    double acc = 0.0;
    int count = 0;
    for (int i = 0; i + kWin <= x.height; ++i) {
        for (int j = 0; j + kWin <= x.width; ++j) {
            double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
            for (int p = 0; p < kWin; ++p) {
                for (int q = 0; q < kWin; ++q) {
                    double w = w1[p] * w1[q];
                    double a = x.at(i + p, j + q);
                    double b = ref.at(i + p, j + q);
                    mx += w * a;
                    my += w * b;
                    sxx += w * a * a;
                    syy += w * b * b;
                    sxy += w * a * b;
                }
            }
            sxx -= mx * mx;
            syy -= my * my;
            sxy -= mx * my;
            double num = (2.0 * mx * my + kC1) * (2.0 * sxy + kC2);
            double den = (mx * mx + my * my + kC1) * (sxx + syy + kC2);
            acc += num / den;
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

// One aggregated table row, Table-style: (method, domain) keyed.
struct EvalRow {
    std::string method;
    std::string domain;
    double psnr_mean = 0.0, psnr_std = 0.0;
    double ssim_mean = 0.0, ssim_std = 0.0;
    int n_images = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
};

// A named harmonizer: maps the i-th source image of a domain to its
// harmonized version. File-backed methods use the index, functional
// methods ignore it.
struct NamedMethod {
    std::string name;
    std::function<ImageGrid(const ImageGrid& source, std::size_t index)> apply;
};

// A named source set with matched target references.
struct DomainSet {
    std::string name;
    std::vector<ImageGrid> sources;
    std::vector<ImageGrid> targets;
};

namespace detail {

inline void mean_std(const std::vector<double>& vals, double& mean, double& stddev) {
    bool any_inf = false, all_inf = true;
    for (double v : vals) {
        if (std::isinf(v)) any_inf = true;
        else all_inf = false;
    }
    if (any_inf) {
        mean = std::numeric_limits<double>::infinity();
        stddev = all_inf ? 0.0 : std::numeric_limits<double>::infinity();
        return;
    }
    double s = 0.0;
    for (double v : vals) s += v;
    mean = s / static_cast<double>(vals.size());
    double q = 0.0;
    for (double v : vals) q += (v - mean) * (v - mean);
    stddev = std::sqrt(q / static_cast<double>(vals.size()));
}

} // namespace detail

// Applies every method to every domain and aggregates per-image PSNR/SSIM
// against the matched targets. Both images are min-max normalized before
// metric computation. The untouched "Source" row is always included first;
// row order is method-major over the declared order.
inline EvalReport evaluate(const std::vector<NamedMethod>& methods,
                           const std::vector<DomainSet>& domains) {
    for (const auto& d : domains) {
        if (d.sources.size() != d.targets.size()) {
            throw InvalidInputError("evaluate: domain '" + d.name +
                                    "' has mismatched source/target counts");
        }
        if (d.sources.empty()) {
            throw InvalidInputError("evaluate: domain '" + d.name + "' is empty");
        }
    }
    std::vector<NamedMethod> all;
    all.push_back({"Source", [](const ImageGrid& s, std::size_t) { return s; }});
    for (const auto& m : methods) all.push_back(m);

    EvalReport rep;
    for (const auto& m : all) {
        for (const auto& d : domains) {
            std::vector<double> ps, ss;
            ps.reserve(d.sources.size());
            ss.reserve(d.sources.size());
            for (std::size_t i = 0; i < d.sources.size(); ++i) {
                ImageGrid h = minmax_normalize(m.apply(d.sources[i], i));
                ImageGrid t = minmax_normalize(d.targets[i]);
                ps.push_back(psnr(h, t));
                ss.push_back(ssim(h, t));
            }
            EvalRow row;
            row.method = m.name;
            row.domain = d.name;
            row.n_images = static_cast<int>(d.sources.size());
            detail::mean_std(ps, row.psnr_mean, row.psnr_std);
            detail::mean_std(ss, row.ssim_mean, row.ssim_std);
            rep.rows.push_back(std::move(row));
        }
    }
    return rep;
}

inline std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

constexpr const char* kReportHeader =
    "method\tdomain\tpsnr_mean\tpsnr_std\tssim_mean\tssim_std\tn";

inline std::string to_tsv(const EvalReport& rep) {
    std::string out = kReportHeader;
    out += '\n';
    for (const auto& r : rep.rows) {
        out += r.method;
        out += '\t';
        out += r.domain;
        out += '\t';
        out += format_metric(r.psnr_mean);
        out += '\t';
        out += format_metric(r.psnr_std);
        out += '\t';
        out += format_metric(r.ssim_mean);
        out += '\t';
        out += format_metric(r.ssim_std);
        out += '\t';
        out += std::to_string(r.n_images);
        out += '\n';
    }
    return out;
}

} // namespace bh
