#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cosgate/harness.hpp"

namespace py = pybind11;
using namespace cosgate;

namespace {

py::dict summary_dict(const harness::CosineSummary& s) {
    py::dict d;
    d["n"] = s.n;
    d["mean"] = s.mean;
    d["median"] = s.median;
    d["mean_abs"] = s.mean_abs;
    d["median_abs"] = s.median_abs;
    return d;
}

py::dict trajectory_dict(const landscape::TrajectoryRecord& t) {
    py::dict d;
    d["points"] = t.points;
    d["main_loss"] = t.main_loss;
    d["cos"] = t.cos;
    d["weight"] = t.weight;
    d["convergence_step"] = t.convergence_step;
    d["diverged"] = t.diverged;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Cosine-gated auxiliary-gradient experiments";

    py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ValueError);
    py::register_exception<harness::ConfigError>(m, "ConfigError", PyExc_ValueError);

    py::enum_<GateMode>(m, "GateMode")
        .value("Weighted", GateMode::Weighted)
        .value("Unweighted", GateMode::Unweighted)
        .value("AlwaysOn", GateMode::AlwaysOn)
        .value("Off", GateMode::Off);

    py::class_<GateConfig>(m, "GateConfig")
        .def(py::init([](GateMode mode, double lambda, double threshold, double ema_decay, bool per_layer) {
                 GateConfig c{mode, lambda, threshold, ema_decay, per_layer};
                 c.validate();
                 return c;
             }),
             py::arg("mode") = GateMode::Unweighted, py::arg("lambda_") = 1.0, py::arg("threshold") = 0.0,
             py::arg("ema_decay") = 0.0, py::arg("per_layer") = false)
        .def_readwrite("mode", &GateConfig::mode)
        .def_readwrite("lambda_", &GateConfig::lambda)
        .def_readwrite("threshold", &GateConfig::threshold)
        .def_readwrite("ema_decay", &GateConfig::ema_decay)
        .def_readwrite("per_layer", &GateConfig::per_layer);

    py::class_<GateDecision>(m, "GateDecision")
        .def_readonly("raw_cos", &GateDecision::raw_cos)
        .def_readonly("smoothed_cos", &GateDecision::smoothed_cos)
        .def_readonly("weight", &GateDecision::weight);

    py::class_<Gate>(m, "Gate")
        .def(py::init<GateConfig>())
        .def("decide", [](Gate& g, const std::vector<double>& main, const std::vector<double>& aux) {
            return g.decide(main, aux);
        });

    m.def("cosine", [](const std::vector<double>& g, const std::vector<double>& v) { return cosine(g, v); },
          py::arg("g"), py::arg("v"));
    m.def("gate_weight", &gate_weight, py::arg("config"), py::arg("cos"));
    m.def(
        "combine",
        [](const std::vector<double>& g, const std::vector<double>& v, double w) {
            std::vector<double> out(g.size());
            combine_into(g, v, w, out);
            return out;
        },
        py::arg("g"), py::arg("v"), py::arg("w"));

    auto land = m.def_submodule("landscape", "2-D toy landscapes");
    land.def(
        "eval",
        [](const std::string& name, const std::vector<double>& x, double a) {
            return landscape::builtin_scalar(name, a).eval(x);
        },
        py::arg("name"), py::arg("x"), py::arg("a") = 1.0);
    land.def(
        "grad",
        [](const std::string& name, const std::vector<double>& x, double a) {
            return landscape::builtin_scalar(name, a).grad(x);
        },
        py::arg("name"), py::arg("x"), py::arg("a") = 1.0);
    land.def(
        "update",
        [](const std::string& name, const std::vector<double>& x) {
            return landscape::update_field(landscape::builtin_field(name)).eval(x);
        },
        py::arg("name"), py::arg("x"));
    land.def(
        "descend",
        [](const std::string& main, const std::string& aux, GateConfig gate, const std::vector<double>& init,
           std::size_t steps, double alpha) {
            const auto field = landscape::merged_field(landscape::builtin_scalar(main), landscape::builtin_field(aux), gate);
            landscape::DescentOptions opt;
            opt.steps = steps;
            opt.alpha = alpha;
            return trajectory_dict(landscape::descend(field, init, opt));
        },
        py::arg("main"), py::arg("aux"), py::arg("gate"), py::arg("init"), py::arg("steps") = 600,
        py::arg("alpha") = 0.01);

    m.def(
        "toy",
        [](const std::string& yaml) {
            const auto c = harness::parse_config_text(yaml);
            const auto r = harness::run_toy(c.toy, c.seed);
            py::list rows;
            for (const auto& s : r.summary) {
                py::dict d;
                d["mode"] = std::string(to_string(s.mode));
                d["runs"] = s.runs;
                d["converged"] = s.converged;
                d["diverged"] = s.diverged;
                d["median_convergence"] = s.median_convergence;
                rows.append(d);
            }
            return rows;
        },
        py::arg("yaml"), "Summary rows of a toy sweep described by a YAML config string.");

    m.def(
        "prop3",
        [](double a, std::size_t n) {
            const auto r = harness::run_prop3({a, n});
            py::dict d;
            d["gated_a"] = r.gated_a;
            d["gated_b"] = r.gated_b;
            d["control_a"] = r.control_a;
            d["control_b"] = r.control_b;
            return d;
        },
        py::arg("a") = 1.0, py::arg("points_per_segment") = 100000);

    m.def(
        "gridworld",
        [](const std::string& yaml) {
            const auto c = harness::parse_config_text(yaml);
            const auto r = grid::run_experiment(harness::gridworld_spec(c.gridworld, c.seed));
            py::list rows;
            for (const auto& a : r.aggregate) {
                py::dict d;
                d["method"] = std::string(grid::to_string(a.method));
                d["temperature"] = a.temperature;
                d["step"] = a.step;
                d["mean_return"] = a.mean_return;
                d["stderr"] = a.stderr_return;
                rows.append(d);
            }
            return rows;
        },
        py::arg("yaml"), "Aggregate learning curves of a gridworld experiment.");

    m.def(
        "mnist",
        [](const std::string& yaml) {
            const auto c = harness::parse_config_text(yaml);
            const auto data = harness::load_mnist(c.mnist);
            const auto r = dense::train(data.train, data.aux, data.test, harness::mnist_train_config(c.mnist, c.seed));
            py::list rows;
            for (const auto& e : r.epochs) {
                py::dict d;
                d["epoch"] = e.epoch;
                d["train_loss_main"] = e.train_loss_main;
                d["train_loss_aux"] = e.train_loss_aux;
                d["test_error"] = e.test_error;
                d["mean_cos"] = e.mean_cos;
                d["mean_gate_weight"] = e.mean_gate_weight;
                rows.append(d);
            }
            return rows;
        },
        py::arg("yaml"));

    m.def(
        "rotate",
        [](const std::vector<double>& image, int degrees, int rows, int cols) {
            return dense::rotate(image, degrees, rows, cols);
        },
        py::arg("image"), py::arg("degrees"), py::arg("rows") = 28, py::arg("cols") = 28);

    m.def(
        "random_cosine_stats",
        [](std::size_t d, std::size_t n, double sigma, std::uint64_t seed) {
            Rng rng(seed);
            return summary_dict(harness::random_cosine_stats(d, n, sigma, rng));
        },
        py::arg("d"), py::arg("n"), py::arg("sigma") = 1.0, py::arg("seed") = 0);
    m.def(
        "corrupted_cosine_stats",
        [](std::size_t d, std::size_t n, double sigma, std::uint64_t seed) {
            Rng rng(seed);
            return summary_dict(harness::corrupted_cosine_stats(d, n, sigma, rng));
        },
        py::arg("d"), py::arg("n"), py::arg("sigma") = 1.0, py::arg("seed") = 0);

    m.def("format_real", &harness::format_real, py::arg("x"));
    m.def(
        "parse_config",
        [](const std::string& yaml) { return harness::to_yaml(harness::parse_config_text(yaml)); },
        py::arg("yaml"), "Validates a config string and returns it with every default filled in.");
    m.def(
        "load_config", [](const std::string& path) { return harness::to_yaml(harness::parse_config(path)); },
        py::arg("path"));
    m.def(
        "run",
        [](const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<std::string> out) {
            auto c = harness::parse_config(config_path);
            if (seed) c.seed = *seed;
            if (out) c.out = *out;
            return harness::run(c).to_json().dump();
        },
        py::arg("config_path"), py::arg("seed") = py::none(), py::arg("out") = py::none(),
        "Runs an experiment from a config file; returns the run record as a JSON string.");
}
