#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "bh/image.hpp"
#include "bh/rng.hpp"

namespace bh {

// Procedural test corpus: smoothed random-ellipse phantoms on a dark
// background — a bright jittered "head" ellipse carrying a few darker
// interior blobs, Gaussian-smoothed, lightly noised, min-max normalized.
// Fully deterministic for a fixed seed.
inline ImageGrid make_phantom(Rng& rng, int height = 32, int width = 32) {
    ImageGrid img(height, width);
    double cy = 0.485 * height + rng.uniform(-0.6, 0.6);
    double cx = 0.485 * width + rng.uniform(-0.6, 0.6);
    double ea = 0.36 * width + rng.uniform(-0.75, 0.75);
    double eb = 0.30 * height + rng.uniform(-0.75, 0.75);
    double th = rng.uniform(-0.15, 0.15);
    double ct = std::cos(th), st = std::sin(th);

    auto inside = [&](double y, double x, double by, double bx, double ra, double rb) {
        double u = (x - bx) * ct + (y - by) * st;
        double v = -(x - bx) * st + (y - by) * ct;
        return (u / ra) * (u / ra) + (v / rb) * (v / rb) <= 1.0;
    };

    for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
            if (inside(i, j, cy, cx, ea, eb)) img.at(i, j) = 1.0;
        }
    }
    int blobs = 2 + static_cast<int>(rng.below(4)); // 2..5 interior structures
    for (int b = 0; b < blobs; ++b) {
        double by = cy + rng.uniform(-4.5, 4.5);
        double bx = cx + rng.uniform(-4.5, 4.5);
        double ra = rng.uniform(1.5, 3.5);
        double rb = rng.uniform(1.5, 3.5);
        double intensity = rng.uniform(0.45, 0.85);
        for (int i = 0; i < height; ++i) {
            for (int j = 0; j < width; ++j) {
                if (img.at(i, j) > 0.0 &&
                    ((j - bx) * (j - bx) / (ra * ra) + (i - by) * (i - by) / (rb * rb)) <= 1.0) {
                    img.at(i, j) = intensity;
                }
            }
        }
    }

    // separable Gaussian smoothing, sigma 0.9, zero-padded borders
    constexpr int kR = 3;
    double kernel[2 * kR + 1];
    double ksum = 0.0;
    for (int k = -kR; k <= kR; ++k) {
        kernel[k + kR] = std::exp(-0.5 * k * k / (0.9 * 0.9));
        ksum += kernel[k + kR];
    }
    for (double& v : kernel) v /= ksum;

    ImageGrid tmp(height, width);
    for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
            double acc = 0.0;
            for (int k = -kR; k <= kR; ++k) {
                int jj = j + k;
                if (jj >= 0 && jj < width) acc += kernel[k + kR] * img.at(i, jj);
            }
            tmp.at(i, j) = acc;
        }
    }
    for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
            double acc = 0.0;
            for (int k = -kR; k <= kR; ++k) {
                int ii = i + k;
                if (ii >= 0 && ii < height) acc += kernel[k + kR] * tmp.at(ii, j);
            }
            img.at(i, j) = acc + 0.01 * rng.gaussian();
        }
    }
    return minmax_normalize(img);
}

inline std::vector<ImageGrid> make_phantom_corpus(int count, std::uint64_t seed,
                                                  int height = 32, int width = 32) {
    Rng rng(seed);
    std::vector<ImageGrid> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(make_phantom(rng, height, width));
    return out;
}

} // namespace bh
