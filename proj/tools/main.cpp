// Command-line front end: one subcommand per experiment kind.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cosgate/harness.hpp"

namespace h = cosgate::harness;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

struct GridFlags {
    std::optional<std::size_t> pairs;
    std::optional<std::size_t> steps;
    std::vector<double> temperatures;
    std::vector<std::string> methods;
};

struct MnistFlags {
    std::optional<int> rotation;
    std::optional<std::string> mode;
    std::optional<int> epochs;
    std::optional<int> batch;
    std::optional<double> train_frac;
    std::optional<std::string> data_dir;
};

CLI::App* add_kind(CLI::App& app, const std::string& name, const std::string& help, Common& common) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", common.config, "experiment config (YAML key: value file)")->required();
    sub->add_option("--seed", common.seed, "master seed, overrides the config");
    sub->add_option("--out", common.out, "output directory, overrides the config");
    return sub;
}

std::string one_line(std::string s) {
    for (auto& ch : s)
        if (ch == '\n' || ch == '\r') ch = ' ';
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cosine-gated auxiliary-gradient experiments"};
    app.require_subcommand(1);

    Common common;
    GridFlags grid;
    MnistFlags mnist;
    add_kind(app, "toy", "2-D descent sweeps over random inits", common);
    add_kind(app, "prop3", "line integrals of the gated field on two paths", common);
    auto* g = add_kind(app, "gridworld", "teacher distillation in random gridworlds", common);
    g->add_option("--pairs", grid.pairs, "environment pairs");
    g->add_option("--steps", grid.steps, "student budget in visited states");
    g->add_option("--temperatures", grid.temperatures, "teacher temperatures")->delimiter(',');
    g->add_option("--methods", grid.methods, "training methods")->delimiter(',');
    auto* m = add_kind(app, "mnist", "rotated-MNIST auxiliary task", common);
    m->add_option("--rotation", mnist.rotation, "aux rotation in degrees");
    m->add_option("--mode", mnist.mode, "single_task, multi_task or gated");
    m->add_option("--epochs", mnist.epochs, "training epochs");
    m->add_option("--batch", mnist.batch, "batch size");
    m->add_option("--train-frac", mnist.train_frac, "fraction of the training set to use");
    m->add_option("--data-dir", mnist.data_dir, "directory with the uncompressed IDX files");
    add_kind(app, "highdim", "cosine of random and shared-mean vectors vs dimension", common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return 2;
    }

    try {
        const std::string kind = app.get_subcommands().front()->get_name();
        h::ExperimentConfig config = h::parse_config(common.config);
        if (h::to_string(config.kind) != kind) {
            throw std::invalid_argument("config kind is '" + std::string(h::to_string(config.kind)) +
                                        "' but the subcommand is '" + kind + "'");
        }
        if (common.seed) config.seed = *common.seed;
        if (common.out) config.out = *common.out;

        auto& gp = config.gridworld;
        if (grid.pairs) gp.pairs = *grid.pairs;
        if (grid.steps) gp.steps = *grid.steps;
        if (!grid.temperatures.empty()) gp.temperatures = grid.temperatures;
        if (!grid.methods.empty()) {
            gp.methods.clear();
            for (const auto& name : grid.methods) gp.methods.push_back(cosgate::grid::parse_train_method(name));
        }

        auto& mp = config.mnist;
        if (mnist.rotation) mp.rotation = *mnist.rotation;
        if (mnist.mode) mp.mode = cosgate::dense::parse_train_mode(*mnist.mode);
        if (mnist.epochs) mp.epochs = *mnist.epochs;
        if (mnist.batch) mp.batch = *mnist.batch;
        if (mnist.train_frac) mp.train_frac = *mnist.train_frac;
        if (mnist.data_dir) mp.data_dir = *mnist.data_dir;

        const h::RunRecord record = h::run(config);
        std::cout << (std::filesystem::path(config.out) / record.run_id).string() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}
