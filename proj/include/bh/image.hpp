#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "bh/error.hpp"

namespace bh {

// H x W single-channel image, row-major doubles. The universal pixel
// container for sources, targets, harmonized outputs and masks.
struct ImageGrid {
    int height = 0;
    int width = 0;
    std::vector<double> data; // size = height * width

    ImageGrid() = default;
    ImageGrid(int h, int w, double fill = 0.0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    double& at(int i, int j) { return data[static_cast<std::size_t>(i) * width + j]; }
    double at(int i, int j) const { return data[static_cast<std::size_t>(i) * width + j]; }
    std::size_t size() const { return data.size(); }

    bool same_shape(const ImageGrid& o) const {
        return height == o.height && width == o.width;
    }
};

// Forward differences of an image; dx's last column and dy's last row are
// zero by convention.
struct GradientField {
    ImageGrid dx;
    ImageGrid dy;
};

// Binary mask selecting non-edge pixels (1 = keep) plus the gradient
// magnitude cutoff that produced it.
struct EdgeMask {
    ImageGrid values;
    double threshold = 0.0;
};

inline void require_finite(const ImageGrid& img, const char* what) {
    for (double v : img.data) {
        if (!std::isfinite(v)) {
            throw InvalidInputError(std::string(what) + ": non-finite pixel value");
        }
    }
}

inline void require_same_shape(const ImageGrid& a, const ImageGrid& b, const char* what) {
    if (!a.same_shape(b)) {
        throw InvalidInputError(std::string(what) + ": dimension mismatch (" +
                                std::to_string(a.height) + "x" + std::to_string(a.width) +
                                " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width) + ")");
    }
}

inline double mean_value(const ImageGrid& img) {
    double s = 0.0;
    for (double v : img.data) s += v;
    return s / static_cast<double>(img.size());
}

// Rescale to [0,1]; a constant image maps to all zeros.
inline ImageGrid minmax_normalize(const ImageGrid& img) {
    require_finite(img, "minmax_normalize");
    auto [lo_it, hi_it] = std::minmax_element(img.data.begin(), img.data.end());
    double lo = *lo_it, hi = *hi_it;
    ImageGrid out(img.height, img.width);
    if (hi == lo) return out;
    double inv = 1.0 / (hi - lo);
    for (std::size_t k = 0; k < img.size(); ++k) out.data[k] = (img.data[k] - lo) * inv;
    return out;
}

inline ImageGrid clamp01(const ImageGrid& img) {
    ImageGrid out = img;
    for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
    return out;
}

inline GradientField spatial_gradient(const ImageGrid& img) {
    if (img.height < 2 || img.width < 2) {
        throw InvalidInputError("spatial_gradient: image must be at least 2x2");
    }
    GradientField g{ImageGrid(img.height, img.width), ImageGrid(img.height, img.width)};
    for (int i = 0; i < img.height; ++i) {
        for (int j = 0; j < img.width - 1; ++j) {
            g.dx.at(i, j) = img.at(i, j + 1) - img.at(i, j);
        }
    }
    for (int i = 0; i < img.height - 1; ++i) {
        for (int j = 0; j < img.width; ++j) {
            g.dy.at(i, j) = img.at(i + 1, j) - img.at(i, j);
        }
    }
    return g;
}

// Non-edge mask: threshold = empirical quantile (nearest rank) of the
// anisotropic gradient magnitude |dx|+|dy|; keep (=1) where magnitude <=
// threshold. A constant image therefore keeps every pixel.
inline EdgeMask edge_mask(const ImageGrid& img, double quantile) {
    if (!(quantile > 0.0 && quantile < 1.0)) {
        throw ConfigError("edge_mask: quantile must lie in (0,1)");
    }
    GradientField g = spatial_gradient(img);
    std::vector<double> mag(img.size());
    for (std::size_t k = 0; k < img.size(); ++k) {
        mag[k] = std::abs(g.dx.data[k]) + std::abs(g.dy.data[k]);
    }
    std::vector<double> sorted = mag;
    std::sort(sorted.begin(), sorted.end());
    std::size_t rank = static_cast<std::size_t>(
        std::ceil(quantile * static_cast<double>(sorted.size())));
    rank = std::min(std::max<std::size_t>(rank, 1), sorted.size());
    double threshold = sorted[rank - 1];

    EdgeMask m{ImageGrid(img.height, img.width), threshold};
    for (std::size_t k = 0; k < img.size(); ++k) {
        m.values.data[k] = (mag[k] <= threshold) ? 1.0 : 0.0;
    }
    return m;
}

namespace detail {
inline bool is_constant(const ImageGrid& x) {
    auto [mn, mx] = std::minmax_element(x.data.begin(), x.data.end());
    return *mn == *mx;
}

inline void centered(const ImageGrid& x, std::vector<double>& u, double& norm) {
    double m = mean_value(x);
    u.resize(x.size());
    double s2 = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        u[k] = x.data[k] - m;
        s2 += u[k] * u[k];
    }
    norm = std::sqrt(s2);
}
} // namespace detail

// Normalized cross-correlation over the whole grid, in [-1, 1].
inline double ncc(const ImageGrid& a, const ImageGrid& b) {
    require_same_shape(a, b, "ncc");
    if (detail::is_constant(a) || detail::is_constant(b)) {
        throw InvalidInputError("ncc: constant image has no correlation");
    }
    std::vector<double> u, v;
    double na = 0.0, nb = 0.0;
    detail::centered(a, u, na);
    detail::centered(b, v, nb);
    double c = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) c += u[k] * v[k];
    return c / (na * nb);
}

// Analytic gradient of ncc(x, ref) with respect to x. With u = x - mean(x),
// v = ref - mean(ref): grad = (v - (<u,v>/<u,u>) u) / (||u|| ||v||), then
// projected onto the zero-sum subspace (chain rule through the mean; the
// projection is an exact no-op in infinite precision since u and v are
// already centered).
inline ImageGrid ncc_gradient(const ImageGrid& x, const ImageGrid& ref) {
    require_same_shape(x, ref, "ncc_gradient");
    if (detail::is_constant(x)) {
        throw InvalidInputError("ncc_gradient: constant x has no defined gradient");
    }
    if (detail::is_constant(ref)) {
        throw InvalidInputError("ncc_gradient: constant reference");
    }
    std::vector<double> u, v;
    double na = 0.0, nb = 0.0;
    detail::centered(x, u, na);
    detail::centered(ref, v, nb);
    double c = 0.0, uu = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        c += u[k] * v[k];
        uu += u[k] * u[k];
    }
    // ratio computed as <u,v>/<u,u> directly so the gradient is exactly
    // zero at x == ref (identical accumulation order on both sums)
    double ratio = c / uu;
    double inv = 1.0 / (na * nb);
    ImageGrid g(x.height, x.width);
    for (std::size_t k = 0; k < u.size(); ++k) g.data[k] = (v[k] - ratio * u[k]) * inv;
    double gm = mean_value(g);
    for (double& val : g.data) val -= gm;
    return g;
}

// Masked anisotropic total variation: sum over pixels of mask*(|dx|+|dy|).
inline double masked_tv(const ImageGrid& x, const EdgeMask& mask) {
    require_same_shape(x, mask.values, "masked_tv");
    GradientField g = spatial_gradient(x);
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        s += mask.values.data[k] * (std::abs(g.dx.data[k]) + std::abs(g.dy.data[k]));
    }
    return s;
}

namespace detail {
inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }
} // namespace detail

// Subgradient of masked_tv with sign(0) = 0: the adjoint of the forward
// differences applied to mask*sign(Gx).
inline ImageGrid masked_tv_subgradient(const ImageGrid& x, const EdgeMask& mask) {
    require_same_shape(x, mask.values, "masked_tv_subgradient");
    GradientField g = spatial_gradient(x);
    ImageGrid out(x.height, x.width);
    for (int i = 0; i < x.height; ++i) {
        for (int j = 0; j < x.width - 1; ++j) {
            double s = mask.values.at(i, j) * detail::sign0(g.dx.at(i, j));
            out.at(i, j) -= s;
            out.at(i, j + 1) += s;
        }
    }
    for (int i = 0; i < x.height - 1; ++i) {
        for (int j = 0; j < x.width; ++j) {
            double s = mask.values.at(i, j) * detail::sign0(g.dy.at(i, j));
            out.at(i, j) -= s;
            out.at(i + 1, j) += s;
        }
    }
    return out;
}

} // namespace bh
