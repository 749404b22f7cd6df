#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "bh/fft.hpp"
#include "bh/image.hpp"
#include "bh/rng.hpp"

using namespace bh;

namespace {

ImageGrid random_image(Rng& rng, int h, int w, double lo = 0.0, double hi = 1.0) {
    ImageGrid img(h, w);
    for (double& v : img.data) v = rng.uniform(lo, hi);
    return img;
}

// Central finite difference of f along direction d at x.
template <typename F>
double directional_fd(F&& f, const ImageGrid& x, const ImageGrid& d, double eps) {
    ImageGrid plus = x, minus = x;
    for (std::size_t k = 0; k < x.size(); ++k) {
        plus.data[k] += eps * d.data[k];
        minus.data[k] -= eps * d.data[k];
    }
    return (f(plus) - f(minus)) / (2.0 * eps);
}

double dot(const ImageGrid& a, const ImageGrid& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a.data[k] * b.data[k];
    return s;
}

} // namespace

TEST_CASE("minmax_normalize maps the stated example") {
    ImageGrid img(2, 2);
    img.data = {0.2, 0.4, 0.6, 1.0};
    ImageGrid out = minmax_normalize(img);
    CHECK(out.data[0] == Catch::Approx(0.0).margin(1e-15));
    CHECK(out.data[1] == Catch::Approx(0.25).margin(1e-15));
    CHECK(out.data[2] == Catch::Approx(0.5).margin(1e-15));
    CHECK(out.data[3] == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("minmax_normalize of a constant grid is all zeros") {
    ImageGrid img(2, 2, 3.0);
    ImageGrid out = minmax_normalize(img);
    for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("minmax_normalize hits exact extrema and is idempotent") {
    Rng rng(42);
    ImageGrid img = random_image(rng, 32, 32, -3.0, 7.0);
    ImageGrid out = minmax_normalize(img);
    CHECK(*std::min_element(out.data.begin(), out.data.end()) == 0.0);
    CHECK(*std::max_element(out.data.begin(), out.data.end()) == 1.0);
    ImageGrid twice = minmax_normalize(out);
    for (std::size_t k = 0; k < out.size(); ++k) {
        CHECK(std::abs(twice.data[k] - out.data[k]) <= 1e-12);
    }
}

TEST_CASE("minmax_normalize rejects non-finite input") {
    ImageGrid img(2, 2, 0.5);
    img.data[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(minmax_normalize(img), InvalidInputError);
}

TEST_CASE("spatial_gradient of a constant image is zero") {
    ImageGrid img(5, 4, 0.7);
    GradientField g = spatial_gradient(img);
    for (double v : g.dx.data) CHECK(v == 0.0);
    for (double v : g.dy.data) CHECK(v == 0.0);
}

TEST_CASE("spatial_gradient of a horizontal ramp") {
    ImageGrid img(4, 4);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) img.at(i, j) = j;
    }
    GradientField g = spatial_gradient(img);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            CHECK(g.dx.at(i, j) == (j < 3 ? 1.0 : 0.0));
            CHECK(g.dy.at(i, j) == 0.0);
        }
    }
}

TEST_CASE("spatial_gradient matches the brute-force difference oracle") {
    Rng rng(7);
    ImageGrid img = random_image(rng, 8, 8);
    GradientField g = spatial_gradient(img);
    for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) {
            double ex = (j + 1 < 8) ? img.at(i, j + 1) - img.at(i, j) : 0.0;
            double ey = (i + 1 < 8) ? img.at(i + 1, j) - img.at(i, j) : 0.0;
            CHECK(g.dx.at(i, j) == ex);
            CHECK(g.dy.at(i, j) == ey);
        }
    }
}

TEST_CASE("spatial_gradient boundary convention and dimension errors") {
    Rng rng(3);
    ImageGrid img = random_image(rng, 6, 9);
    GradientField g = spatial_gradient(img);
    for (int i = 0; i < 6; ++i) CHECK(g.dx.at(i, 8) == 0.0);
    for (int j = 0; j < 9; ++j) CHECK(g.dy.at(5, j) == 0.0);
    CHECK_THROWS_AS(spatial_gradient(ImageGrid(1, 5, 0.0)), InvalidInputError);
    CHECK_THROWS_AS(spatial_gradient(ImageGrid(5, 1, 0.0)), InvalidInputError);
}

TEST_CASE("edge_mask keeps everything on a constant image") {
    ImageGrid img(6, 6, 0.3);
    EdgeMask m = edge_mask(img, 0.8);
    CHECK(m.threshold == 0.0);
    for (double v : m.values.data) CHECK(v == 1.0);
}

TEST_CASE("edge_mask isolates a single bright pixel (hand enumeration)") {
    // 5x5 zeros with a unit spike at (2,2): forward differences put nonzero
    // magnitude exactly at (2,1), (1,2) and (2,2); quantile 0.8 of 25 values
    // (22 zeros) gives threshold 0.
    ImageGrid img(5, 5, 0.0);
    img.at(2, 2) = 1.0;
    EdgeMask m = edge_mask(img, 0.8);
    CHECK(m.threshold == 0.0);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            bool edge = (i == 2 && j == 1) || (i == 1 && j == 2) || (i == 2 && j == 2);
            CHECK(m.values.at(i, j) == (edge ? 0.0 : 1.0));
        }
    }
}

TEST_CASE("edge_mask at quantile 0.999 masks out at most 0.1% of pixels") {
    Rng rng(11);
    ImageGrid img = random_image(rng, 32, 32);
    EdgeMask m = edge_mask(img, 0.999);
    int masked = 0;
    for (double v : m.values.data) masked += (v == 0.0);
    CHECK(masked <= static_cast<int>(0.001 * 1024));
}

TEST_CASE("edge_mask validates the quantile") {
    ImageGrid img(4, 4, 0.0);
    CHECK_THROWS_AS(edge_mask(img, 0.0), ConfigError);
    CHECK_THROWS_AS(edge_mask(img, 1.0), ConfigError);
    CHECK_THROWS_AS(edge_mask(img, -0.2), ConfigError);
}

TEST_CASE("ncc self, anti and affine cases") {
    Rng rng(5);
    ImageGrid x = random_image(rng, 8, 8);
    CHECK(ncc(x, x) == Catch::Approx(1.0).margin(1e-12));

    ImageGrid neg = x;
    for (double& v : neg.data) v = -v;
    CHECK(ncc(x, neg) == Catch::Approx(-1.0).margin(1e-12));

    ImageGrid aff = x;
    for (double& v : aff.data) v = 2.0 * v + 0.3;
    CHECK(ncc(x, aff) == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("ncc symmetry and affine invariance properties") {
    Rng rng(17);
    for (int rep = 0; rep < 20; ++rep) {
        ImageGrid a = random_image(rng, 6, 7);
        ImageGrid b = random_image(rng, 6, 7);
        CHECK(std::abs(ncc(a, b) - ncc(b, a)) <= 1e-12);
        double s = rng.uniform(0.1, 3.0), t = rng.uniform(-1.0, 1.0);
        ImageGrid b2 = b;
        for (double& v : b2.data) v = s * v + t;
        CHECK(std::abs(ncc(a, b2) - ncc(a, b)) <= 1e-10);
        double v = ncc(a, b);
        CHECK(v >= -1.0 - 1e-12);
        CHECK(v <= 1.0 + 1e-12);
    }
}

TEST_CASE("ncc rejects constant input") {
    ImageGrid c(4, 4, 0.5);
    Rng rng(2);
    ImageGrid x = random_image(rng, 4, 4);
    CHECK_THROWS_AS(ncc(c, x), InvalidInputError);
    CHECK_THROWS_AS(ncc(x, c), InvalidInputError);
}

TEST_CASE("ncc_gradient matches central finite differences") {
    Rng rng(23);
    ImageGrid ref = random_image(rng, 8, 8);
    for (int rep = 0; rep < 10; ++rep) {
        ImageGrid x = random_image(rng, 8, 8);
        ImageGrid d = random_image(rng, 8, 8, -1.0, 1.0);
        ImageGrid g = ncc_gradient(x, ref);
        double analytic = dot(g, d);
        double fd = directional_fd([&](const ImageGrid& p) { return ncc(p, ref); }, x, d,
                                   1e-6);
        CHECK(analytic == Catch::Approx(fd).epsilon(1e-5).margin(1e-10));
    }
}

TEST_CASE("ncc_gradient stationarity and shift invariance") {
    Rng rng(31);
    ImageGrid ref = random_image(rng, 8, 8);
    ImageGrid g = ncc_gradient(ref, ref);
    // at x = ref the gradient vanishes along ref - mean(ref)
    std::vector<double> centered(ref.size());
    double m = mean_value(ref);
    double along = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) along += g.data[k] * (ref.data[k] - m);
    CHECK(std::abs(along) <= 1e-10);

    ImageGrid x = random_image(rng, 8, 8);
    ImageGrid gx = ncc_gradient(x, ref);
    double sum = 0.0;
    for (double v : gx.data) sum += v;
    CHECK(std::abs(sum) <= 1e-10);

    ImageGrid c(8, 8, 0.4);
    CHECK_THROWS_AS(ncc_gradient(c, ref), InvalidInputError);
}

TEST_CASE("masked_tv hand-enumerated values") {
    ImageGrid constant(4, 4, 0.9);
    EdgeMask ones{ImageGrid(4, 4, 1.0), 0.0};
    CHECK(masked_tv(constant, ones) == 0.0);

    // ramp img[i,j] = j/3 on 4x4: 12 nonzero dx entries of 1/3 each
    ImageGrid ramp(4, 4);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) ramp.at(i, j) = j / 3.0;
    }
    CHECK(masked_tv(ramp, ones) == Catch::Approx(4.0).margin(1e-12));

    EdgeMask zeros{ImageGrid(4, 4, 0.0), 0.0};
    Rng rng(6);
    ImageGrid x = random_image(rng, 4, 4);
    CHECK(masked_tv(x, zeros) == 0.0);

    EdgeMask bad{ImageGrid(5, 4, 1.0), 0.0};
    CHECK_THROWS_AS(masked_tv(x, bad), InvalidInputError);
}

TEST_CASE("masked_tv_subgradient matches finite differences at smooth points") {
    Rng rng(41);
    int checked = 0;
    while (checked < 10) {
        ImageGrid x = random_image(rng, 8, 8);
        GradientField g = spatial_gradient(x);
        // stay away from kinks of |.|: require all interior differences
        // to be comfortably nonzero
        double min_abs = 1e9;
        for (int i = 0; i < 8; ++i) {
            for (int j = 0; j < 7; ++j) min_abs = std::min(min_abs, std::abs(g.dx.at(i, j)));
        }
        for (int i = 0; i < 7; ++i) {
            for (int j = 0; j < 8; ++j) min_abs = std::min(min_abs, std::abs(g.dy.at(i, j)));
        }
        if (min_abs < 1e-3) continue;
        ++checked;

        EdgeMask mask = edge_mask(x, 0.8);
        ImageGrid sub = masked_tv_subgradient(x, mask);
        ImageGrid d = random_image(rng, 8, 8, -1.0, 1.0);
        double analytic = dot(sub, d);
        double fd = directional_fd(
            [&](const ImageGrid& p) { return masked_tv(p, mask); }, x, d, 1e-6);
        CHECK(analytic == Catch::Approx(fd).epsilon(1e-5).margin(1e-9));
    }
}

TEST_CASE("masked_tv_subgradient zero cases") {
    ImageGrid constant(6, 6, 0.2);
    EdgeMask ones{ImageGrid(6, 6, 1.0), 0.0};
    ImageGrid g = masked_tv_subgradient(constant, ones);
    for (double v : g.data) CHECK(v == 0.0); // sign(0) = 0

    Rng rng(9);
    ImageGrid x = random_image(rng, 6, 6);
    EdgeMask zeros{ImageGrid(6, 6, 0.0), 0.0};
    ImageGrid g2 = masked_tv_subgradient(x, zeros);
    for (double v : g2.data) CHECK(v == 0.0);
}

TEST_CASE("dft2 of a constant image concentrates in the DC term") {
    ImageGrid img(8, 8, 0.37);
    Spectrum s = dft2(img);
    CHECK(s.at(0, 0).real() == Catch::Approx(0.37 * 64).margin(1e-9));
    CHECK(s.at(0, 0).imag() == Catch::Approx(0.0).margin(1e-9));
    for (int k = 0; k < 8; ++k) {
        for (int l = 0; l < 8; ++l) {
            if (k == 0 && l == 0) continue;
            CHECK(std::abs(s.at(k, l)) <= 1e-9);
        }
    }
}

TEST_CASE("dft2/idft2 roundtrip and Parseval") {
    Rng rng(13);
    ImageGrid img = random_image(rng, 16, 16);
    Spectrum s = dft2(img);
    ImageGrid back = idft2(s);
    double max_err = 0.0;
    for (std::size_t k = 0; k < img.size(); ++k) {
        max_err = std::max(max_err, std::abs(back.data[k] - img.data[k]));
    }
    CHECK(max_err <= 1e-9);

    double lhs = 0.0;
    for (double v : img.data) lhs += v * v;
    double rhs = 0.0;
    for (const auto& c : s.data) rhs += std::norm(c);
    rhs /= 256.0;
    CHECK(lhs == Catch::Approx(rhs).margin(1e-9));
}
