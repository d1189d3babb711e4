// Generates a synthetic labeled image dataset in the on-disk ingestion format.
// Handy for demos and for exercising the pipeline without real data.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "moss/synth.hpp"

int main(int argc, char** argv) {
    CLI::App app{"moss-synth-data: write a synthetic classification dataset"};
    std::string out;
    int classes = 10, samples = 2000, channels = 1, height = 10, width = 10;
    double noise = 1.0;
    uint64_t seed = 1;
    app.add_option("--out", out, "output dataset directory")->required();
    app.add_option("--classes", classes, "number of classes");
    app.add_option("--samples", samples, "number of samples");
    app.add_option("--channels", channels, "input channels");
    app.add_option("--height", height, "input height");
    app.add_option("--width", width, "input width");
    app.add_option("--noise", noise, "noise standard deviation");
    app.add_option("--seed", seed, "generator seed");
    CLI11_PARSE(app, argc, argv);

    try {
        const moss::LabeledDataset ds = moss::make_synthetic_dataset(
            classes, static_cast<size_t>(samples), {channels, height, width}, noise, seed);
        moss::save_dataset(ds, out);
        std::cout << "wrote " << samples << " samples (" << classes << " classes, " << channels
                  << "x" << height << "x" << width << ") to " << out << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
