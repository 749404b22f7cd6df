#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bh/harmonize.hpp"
#include "bh/phantom.hpp"
#include "bh/rng.hpp"

using namespace bh;

namespace {

FlowArchitecture small_arch() {
    FlowArchitecture arch;
    arch.levels = 2;
    arch.steps_per_level = 2;
    arch.coupling_hidden_width = 8;
    arch.coupling_hidden_layers = 1;
    arch.input_height = 8;
    arch.input_width = 8;
    return arch;
}

ImageGrid phantom8(std::uint64_t seed) {
    Rng rng(seed);
    return make_phantom(rng, 8, 8);
}

} // namespace

TEST_CASE("distance recomposes from the audited kernels") {
    Rng rng(3);
    ImageGrid x = make_phantom(rng, 8, 8);
    ImageGrid xs = make_phantom(rng, 8, 8);
    EdgeMask mask = edge_mask(xs, 0.8);

    double d = distance(x, xs, mask, 1000.0, 0.001);
    double expect = 1000.0 * (1.0 - ncc(x, xs)) + 0.001 * masked_tv(x, mask);
    CHECK(d == Catch::Approx(expect).margin(1e-10));

    // NCC term vanishes against itself
    CHECK(distance(xs, xs, mask, 1000.0, 0.001) ==
          Catch::Approx(0.001 * masked_tv(xs, mask)).margin(1e-9));

    CHECK(distance(x, xs, mask, 0.0, 0.0) == 0.0);

    ImageGrid constant(8, 8, 0.5);
    CHECK_THROWS_AS(distance(x, constant, mask, 1.0, 1.0), InvalidInputError);
}

TEST_CASE("inert configuration returns the initial image") {
    FlowModel m = random_model(small_arch(), 51);
    ImageGrid xs = phantom8(1);
    ImageGrid mean = phantom8(2);

    HarmonizeConfig cfg;
    cfg.alpha = 0.0;
    cfg.beta1 = 0.0;
    cfg.beta2 = 0.0;
    cfg.iterations = 7;
    auto res = harmonize(m, xs, mean, cfg);
    for (std::size_t k = 0; k < mean.size(); ++k) {
        CHECK(std::abs(res.image.data[k] - mean.data[k]) <= 1e-6);
    }

    cfg.init_mode = InitMode::SourceImage;
    auto res2 = harmonize(m, xs, mean, cfg);
    for (std::size_t k = 0; k < xs.size(); ++k) {
        CHECK(std::abs(res2.image.data[k] - xs.data[k]) <= 1e-6);
    }

    cfg.init_mode = InitMode::Custom;
    cfg.custom_init = phantom8(5);
    auto res3 = harmonize(m, xs, mean, cfg);
    for (std::size_t k = 0; k < xs.size(); ++k) {
        CHECK(std::abs(res3.image.data[k] - cfg.custom_init.data[k]) <= 1e-6);
    }
}

TEST_CASE("identity flow from the source image stays at the NCC maximum") {
    FlowModel m = identity_model(small_arch());
    ImageGrid xs = phantom8(9);
    HarmonizeConfig cfg;
    cfg.alpha = 0.0;
    cfg.beta2 = 0.0;
    cfg.init_mode = InitMode::SourceImage;
    auto res = harmonize(m, xs, xs, cfg);
    double prev = -1.0;
    for (const auto& r : res.trace.records) {
        CHECK(r.ncc_to_source >= prev - 1e-12);
        prev = r.ncc_to_source;
        CHECK(r.ncc_to_source == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("latent shrinkage law with inert image updates") {
    FlowModel m = random_model(small_arch(), 77);
    ImageGrid xs = phantom8(4);
    ImageGrid mean = phantom8(6);
    HarmonizeConfig cfg;
    cfg.alpha = 0.001;
    cfg.beta1 = 0.0;
    cfg.beta2 = 0.0;
    cfg.iterations = 10;
    auto res = harmonize(m, xs, mean, cfg);

    double z0 = 0.0;
    {
        auto z = forward(m, mean).latent.z;
        for (double v : z) z0 += v * v;
    }
    z0 = std::sqrt(z0);
    for (int n = 1; n <= 10; ++n) {
        double expect = std::pow(1.0 - cfg.alpha, n) * z0;
        double got = res.trace.records[static_cast<std::size_t>(n - 1)].latent_norm;
        CHECK(got / z0 == Catch::Approx(expect / z0).margin(1e-10));
    }
}

TEST_CASE("trace is complete, self-consistent and deterministic") {
    FlowModel m = random_model(small_arch(), 13);
    ImageGrid xs = phantom8(21);
    ImageGrid mean = phantom8(22);
    HarmonizeConfig cfg; // defaults: alpha 1e-3, beta1 1000, beta2 1e-3, N 10
    auto a = harmonize(m, xs, mean, cfg);
    REQUIRE(a.trace.records.size() == 10);
    for (std::size_t n = 0; n < 10; ++n) {
        const auto& r = a.trace.records[n];
        CHECK(r.iteration == static_cast<int>(n) + 1);
        double recomposed = cfg.beta1 * (1.0 - r.ncc_to_source) + cfg.beta2 * r.masked_tv;
        CHECK(std::abs(r.distance - recomposed) <= 1e-8);
        CHECK(std::isfinite(r.latent_norm));
    }
    for (double v : a.image.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    auto b = harmonize(m, xs, mean, cfg);
    for (std::size_t k = 0; k < a.image.size(); ++k) {
        CHECK(a.image.data[k] == b.image.data[k]);
    }
    for (std::size_t n = 0; n < 10; ++n) {
        CHECK(a.trace.records[n].distance == b.trace.records[n].distance);
    }
}

TEST_CASE("masked TV path replays against a by-hand update loop") {
    // identity flow, beta1 = 0, alpha = 0: harmonize must equal N plain
    // subgradient steps with the mask taken from the source image once.
    FlowModel m = identity_model(small_arch());
    ImageGrid xs = phantom8(31);
    ImageGrid x0 = phantom8(32);
    HarmonizeConfig cfg;
    cfg.alpha = 0.0;
    cfg.beta1 = 0.0;
    cfg.beta2 = 0.05;
    cfg.iterations = 4;
    cfg.init_mode = InitMode::Custom;
    cfg.custom_init = x0;
    auto res = harmonize(m, xs, x0, cfg);

    EdgeMask mask = edge_mask(xs, cfg.mask_quantile);
    ImageGrid x = x0;
    for (int n = 0; n < 4; ++n) {
        ImageGrid g = masked_tv_subgradient(x, mask);
        for (std::size_t k = 0; k < x.size(); ++k) x.data[k] -= cfg.beta2 * g.data[k];
    }
    ImageGrid expect = clamp01(x);
    for (std::size_t k = 0; k < x.size(); ++k) {
        CHECK(res.image.data[k] == Catch::Approx(expect.data[k]).margin(1e-9));
    }
}

TEST_CASE("harmonize rejects bad inputs and aborts on overflow") {
    FlowModel fresh = training_init(small_arch(), 1);
    ImageGrid xs = phantom8(41);
    ImageGrid mean = phantom8(42);
    HarmonizeConfig cfg;
    CHECK_THROWS_AS(harmonize(fresh, xs, mean, cfg), InvalidInputError); // uninitialized

    FlowModel m = random_model(small_arch(), 5);
    ImageGrid constant(8, 8, 0.25);
    CHECK_THROWS_AS(harmonize(m, constant, mean, cfg), InvalidInputError);
    CHECK_THROWS_AS(harmonize(m, ImageGrid(4, 4, 0.0), mean, cfg), InvalidInputError);

    HarmonizeConfig bad = cfg;
    bad.alpha = 1.0;
    CHECK_THROWS_AS(harmonize(m, xs, mean, bad), ConfigError);
    bad = cfg;
    bad.iterations = 0;
    CHECK_THROWS_AS(harmonize(m, xs, mean, bad), ConfigError);

    HarmonizeConfig huge = cfg;
    huge.beta1 = 1e160; // overflow by design
    try {
        harmonize(m, xs, mean, huge);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("iteration") != std::string::npos);
    }
}

TEST_CASE("harmonize_batch preserves order and isolates failures") {
    FlowModel m = random_model(small_arch(), 17);
    ImageGrid mean = phantom8(50);
    HarmonizeConfig cfg;

    CHECK(harmonize_batch(m, {}, mean, cfg).empty());

    std::vector<ImageGrid> batch = {phantom8(51), ImageGrid(8, 8, 0.6), phantom8(52)};
    auto items = harmonize_batch(m, batch, mean, cfg);
    REQUIRE(items.size() == 3);
    CHECK(items[0].ok());
    CHECK_FALSE(items[1].ok());
    CHECK_FALSE(items[1].error.empty());
    CHECK(items[2].ok());

    // singleton equals the direct call bit for bit
    auto single = harmonize(m, batch[0], mean, cfg);
    for (std::size_t k = 0; k < single.image.size(); ++k) {
        CHECK(items[0].result->image.data[k] == single.image.data[k]);
    }
}
