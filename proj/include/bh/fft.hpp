#pragma once

#include <complex>
#include <vector>

#include "bh/image.hpp"

namespace bh {

// Complex H x W spectrum, row-major.
struct Spectrum {
    int height = 0;
    int width = 0;
    std::vector<std::complex<double>> data;

    Spectrum() = default;
    Spectrum(int h, int w)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w) {}

    std::complex<double>& at(int k, int l) {
        return data[static_cast<std::size_t>(k) * width + l];
    }
    std::complex<double> at(int k, int l) const {
        return data[static_cast<std::size_t>(k) * width + l];
    }
};

namespace detail {

// Direct 1D transform along rows of a complex matrix (rows x cols).
// sign = -1 forward, +1 inverse (unnormalized).
inline std::vector<std::complex<double>> dft_rows(
    const std::vector<std::complex<double>>& in, int rows, int cols, int sign) {
    constexpr double kTau = 6.283185307179586476925286766559;
    std::vector<std::complex<double>> tw(static_cast<std::size_t>(cols));
    std::vector<std::complex<double>> out(in.size());
    for (int n = 0; n < cols; ++n) {
        double a = sign * kTau * n / cols;
        tw[static_cast<std::size_t>(n)] = {std::cos(a), std::sin(a)};
    }
    for (int r = 0; r < rows; ++r) {
        const std::complex<double>* src = in.data() + static_cast<std::size_t>(r) * cols;
        std::complex<double>* dst = out.data() + static_cast<std::size_t>(r) * cols;
        for (int k = 0; k < cols; ++k) {
            std::complex<double> acc{0.0, 0.0};
            std::size_t idx = 0;
            for (int n = 0; n < cols; ++n) {
                acc += src[n] * tw[idx];
                idx += static_cast<std::size_t>(k);
                if (idx >= static_cast<std::size_t>(cols)) idx -= static_cast<std::size_t>(cols);
            }
            dst[k] = acc;
        }
    }
    return out;
}

inline std::vector<std::complex<double>> transpose(
    const std::vector<std::complex<double>>& in, int rows, int cols) {
    std::vector<std::complex<double>> out(in.size());
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            out[static_cast<std::size_t>(c) * rows + r] =
                in[static_cast<std::size_t>(r) * cols + c];
        }
    }
    return out;
}

inline std::vector<std::complex<double>> dft2_impl(
    std::vector<std::complex<double>> buf, int h, int w, int sign) {
    buf = dft_rows(buf, h, w, sign);
    buf = transpose(buf, h, w);
    buf = dft_rows(buf, w, h, sign);
    return transpose(buf, w, h);
}

} // namespace detail

// Unnormalized 2D DFT: X[k,l] = sum_mn x[m,n] exp(-2*pi*i*(km/H + ln/W)).
// Desk-scale images make the direct O(HW(H+W)) row-column evaluation plenty.
inline Spectrum dft2(const ImageGrid& img) {
    require_finite(img, "dft2");
    Spectrum s(img.height, img.width);
    for (std::size_t k = 0; k < img.size(); ++k) s.data[k] = {img.data[k], 0.0};
    s.data = detail::dft2_impl(std::move(s.data), img.height, img.width, -1);
    return s;
}

// Inverse with the 1/(HW) factor; the imaginary residue is discarded.
inline ImageGrid idft2(const Spectrum& spec) {
    std::vector<std::complex<double>> buf =
        detail::dft2_impl(spec.data, spec.height, spec.width, +1);
    ImageGrid out(spec.height, spec.width);
    double norm = 1.0 / (static_cast<double>(spec.height) * spec.width);
    for (std::size_t k = 0; k < buf.size(); ++k) out.data[k] = buf[k].real() * norm;
    return out;
}

} // namespace bh
