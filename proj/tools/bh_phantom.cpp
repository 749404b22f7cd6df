// Generates the procedural phantom corpus (smoothed random ellipse/blob
// images) used for desk-scale experiments.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bh/io.hpp"
#include "bh/phantom.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"phantom corpus generator"};
    std::string train_out, test_out;
    int train_n = 500, test_n = 50, height = 32, width = 32;
    std::uint64_t seed = 0;
    app.add_option("--train-out", train_out, "training image directory")->required();
    app.add_option("--test-out", test_out, "test image directory")->required();
    app.add_option("--train-n", train_n, "number of training images (default 500)");
    app.add_option("--test-n", test_n, "number of test images (default 50)");
    app.add_option("--height", height, "image height (default 32)");
    app.add_option("--width", width, "image width (default 32)");
    app.add_option("--seed", seed, "corpus seed (default 0)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) ? 2 : 0;
    }

    try {
        bh::Rng rng(seed);
        fs::create_directories(train_out);
        fs::create_directories(test_out);
        char name[32];
        for (int i = 0; i < train_n; ++i) {
            std::snprintf(name, sizeof(name), "train_%04d.bhimg", i);
            bh::write_image(fs::path(train_out) / name, bh::make_phantom(rng, height, width));
        }
        for (int i = 0; i < test_n; ++i) {
            std::snprintf(name, sizeof(name), "test_%04d.bhimg", i);
            bh::write_image(fs::path(test_out) / name, bh::make_phantom(rng, height, width));
        }
        std::cout << "wrote " << train_n << " train / " << test_n << " test phantoms\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
