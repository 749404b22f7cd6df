#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "bh/fft.hpp"
#include "bh/image.hpp"

namespace bh {

enum class TransformKind { Exp, Log, Gamma };

// Intensity transform used to fabricate simulated source domains from
// target-domain images.
struct DomainTransform {
    TransformKind kind = TransformKind::Gamma;
    double gamma_power = 0.7; // Gamma only
    double log_epsilon = 0.01; // Log only

    void validate() const {
        if (kind == TransformKind::Gamma && !(gamma_power > 0.0)) {
            throw ConfigError("gamma power must be > 0");
        }
        if (kind == TransformKind::Log && !(log_epsilon > 0.0)) {
            throw ConfigError("log epsilon must be > 0");
        }
    }
};

// y = minmax(T(x)); T monotone increasing, so the output is monotone in the
// input and spans [0,1] exactly for non-constant inputs.
inline ImageGrid simulate_domain(const ImageGrid& x, const DomainTransform& t) {
    t.validate();
    for (double v : x.data) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw InvalidInputError("simulate_domain: input must lie in [0,1]");
        }
    }
    ImageGrid y(x.height, x.width);
    switch (t.kind) {
    case TransformKind::Exp:
        for (std::size_t k = 0; k < x.size(); ++k) y.data[k] = std::exp(x.data[k]);
        break;
    case TransformKind::Log:
        for (std::size_t k = 0; k < x.size(); ++k) {
            y.data[k] = std::log(x.data[k] + t.log_epsilon);
        }
        break;
    case TransformKind::Gamma:
        for (std::size_t k = 0; k < x.size(); ++k) {
            y.data[k] = std::pow(x.data[k], t.gamma_power);
        }
        break;
    }
    return minmax_normalize(y);
}

// Reference statistics of the target training set for the HM / SSIMH
// baselines: pooled 256-bin intensity histogram, mean image, and the mean
// image's spectrum.
struct ReferenceStats {
    std::vector<std::uint64_t> histogram; // 256 bins over [0,1]
    ImageGrid mean_image;
    Spectrum low_freq_reference;
};

inline int intensity_bin(double v) {
    int b = static_cast<int>(v * 256.0);
    return b < 0 ? 0 : (b > 255 ? 255 : b);
}

inline ReferenceStats build_reference_stats(const std::vector<ImageGrid>& images) {
    if (images.empty()) throw InvalidInputError("reference stats: no images");
    ReferenceStats rs;
    rs.histogram.assign(256, 0);
    ImageGrid mean(images.front().height, images.front().width);
    double inv = 1.0 / static_cast<double>(images.size());
    for (const auto& img : images) {
        require_same_shape(img, mean, "reference stats");
        for (std::size_t k = 0; k < img.size(); ++k) {
            ++rs.histogram[static_cast<std::size_t>(intensity_bin(img.data[k]))];
            mean.data[k] += img.data[k] * inv;
        }
    }
    rs.mean_image = std::move(mean);
    rs.low_freq_reference = dft2(rs.mean_image);
    return rs;
}

// Histogram matching: monotone map through the empirical CDF of x inverted
// against the pooled reference CDF; output values are bin centers.
inline ImageGrid histogram_match(const ImageGrid& x, const ReferenceStats& ref) {
    std::uint64_t ref_total = 0;
    for (std::uint64_t c : ref.histogram) ref_total += c;
    if (ref_total == 0) throw InvalidInputError("histogram_match: empty reference histogram");

    std::vector<std::uint64_t> hist(256, 0);
    for (double v : x.data) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw InvalidInputError("histogram_match: input must lie in [0,1]");
        }
        ++hist[static_cast<std::size_t>(intensity_bin(v))];
    }
    std::vector<double> cdf_x(256), cdf_ref(256);
    std::uint64_t acc = 0;
    for (int k = 0; k < 256; ++k) {
        acc += hist[static_cast<std::size_t>(k)];
        cdf_x[static_cast<std::size_t>(k)] = static_cast<double>(acc) /
                                             static_cast<double>(x.size());
    }
    acc = 0;
    for (int k = 0; k < 256; ++k) {
        acc += ref.histogram[static_cast<std::size_t>(k)];
        cdf_ref[static_cast<std::size_t>(k)] = static_cast<double>(acc) /
                                               static_cast<double>(ref_total);
    }
    // bin -> matched value, resolved once; monotone because both CDFs are
    std::vector<double> lut(256);
    int r = 0;
    for (int k = 0; k < 256; ++k) {
        while (r < 255 && cdf_ref[static_cast<std::size_t>(r)] <
                              cdf_x[static_cast<std::size_t>(k)]) {
            ++r;
        }
        lut[static_cast<std::size_t>(k)] = (static_cast<double>(r) + 0.5) / 256.0;
    }
    ImageGrid out(x.height, x.width);
    for (std::size_t k = 0; k < x.size(); ++k) {
        out.data[k] = lut[static_cast<std::size_t>(intensity_bin(x.data[k]))];
    }
    return out;
}

namespace detail {
// Folded-frequency L2 radius; DC has radius 0.
inline double radial_index(int k, int n) {
    int f = (2 * k <= n) ? k : k - n;
    return static_cast<double>(f);
}
} // namespace detail

// Replace the low radial frequencies of x with the reference spectrum and
// transform back. The DC coefficient joins the replacement only together
// with ring 1 (cutoff > 1), so a vanishing cutoff is an exact identity and
// a beyond-Nyquist cutoff reproduces the reference mean image.
inline ImageGrid low_freq_replace(const ImageGrid& x, const ReferenceStats& ref,
                                  double cutoff_radius) {
    require_same_shape(x, ref.mean_image, "low_freq_replace");
    if (!(cutoff_radius > 0.0)) throw ConfigError("cutoff_radius must be > 0");

    Spectrum spec = dft2(x);
    for (int k = 0; k < spec.height; ++k) {
        double fk = detail::radial_index(k, spec.height);
        for (int l = 0; l < spec.width; ++l) {
            double fl = detail::radial_index(l, spec.width);
            double r = std::sqrt(fk * fk + fl * fl);
            bool replaced = (r < cutoff_radius) && (r > 0.0 || cutoff_radius > 1.0);
            if (replaced) spec.at(k, l) = ref.low_freq_reference.at(k, l);
        }
    }
    std::vector<std::complex<double>> inv =
        detail::dft2_impl(spec.data, spec.height, spec.width, +1);
    double norm = 1.0 / (static_cast<double>(spec.height) * spec.width);
    ImageGrid out(x.height, x.width);
    for (std::size_t k = 0; k < out.size(); ++k) {
        double im = inv[k].imag() * norm;
        if (std::abs(im) > 1e-6) {
            throw NumericError("low_freq_replace: unexpected imaginary residue");
        }
        out.data[k] = inv[k].real() * norm;
    }
    return clamp01(out);
}

} // namespace bh
