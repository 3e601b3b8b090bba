#include "cosgate/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <yaml-cpp/yaml.h>

#ifndef COSGATE_VERSION
#define COSGATE_VERSION "0.0.0"
#endif
#ifndef COSGATE_GIT_REVISION
#define COSGATE_GIT_REVISION "unknown"
#endif

namespace cosgate::harness {

namespace {

using KeyLines = std::map<std::string, int>;

[[noreturn]] void fail(const std::string& message, const KeyLines& lines, const std::string& key) {
    const auto it = lines.find(key);
    throw ConfigError(message, it == lines.end() ? 0 : it->second);
}

template <typename T>
T read_as(const YAML::Node& node, const std::string& key) {
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError("bad value for '" + key + "'", node.Mark().line + 1);
    }
}

template <typename T>
std::vector<T> read_list(const YAML::Node& node, const std::string& key) {
    if (!node.IsSequence()) throw ConfigError("'" + key + "' must be a list", node.Mark().line + 1);
    std::vector<T> out;
    for (const auto& item : node) out.push_back(read_as<T>(item, key));
    return out;
}

template <typename Enum, typename Parse>
Enum read_enum(const YAML::Node& node, const std::string& key, Parse parse) {
    const auto text = read_as<std::string>(node, key);
    try {
        return parse(text);
    } catch (const std::invalid_argument&) {
        throw ConfigError("bad value '" + text + "' for '" + key + "'", node.Mark().line + 1);
    }
}

template <typename Enum, typename Parse>
std::vector<Enum> read_enum_list(const YAML::Node& node, const std::string& key, Parse parse) {
    if (!node.IsSequence()) throw ConfigError("'" + key + "' must be a list", node.Mark().line + 1);
    std::vector<Enum> out;
    for (const auto& item : node) out.push_back(read_enum<Enum>(item, key, parse));
    return out;
}

using Setter = std::function<void(ExperimentConfig&, const YAML::Node&, const std::string&)>;

const std::map<std::string, Setter>& setters(ExperimentKind kind) {
    static const std::map<std::string, Setter> toy{
        {"main", [](auto& c, auto& n, auto& k) { c.toy.main = read_as<std::string>(n, k); }},
        {"aux", [](auto& c, auto& n, auto& k) { c.toy.aux = read_as<std::string>(n, k); }},
        {"modes", [](auto& c, auto& n, auto& k) { c.toy.modes = read_enum_list<GateMode>(n, k, parse_gate_mode); }},
        {"lambda", [](auto& c, auto& n, auto& k) { c.toy.lambda = read_as<double>(n, k); }},
        {"threshold", [](auto& c, auto& n, auto& k) { c.toy.threshold = read_as<double>(n, k); }},
        {"inits", [](auto& c, auto& n, auto& k) { c.toy.inits = read_as<std::size_t>(n, k); }},
        {"steps", [](auto& c, auto& n, auto& k) { c.toy.steps = read_as<std::size_t>(n, k); }},
        {"alpha", [](auto& c, auto& n, auto& k) { c.toy.alpha = read_as<double>(n, k); }},
        {"level", [](auto& c, auto& n, auto& k) { c.toy.level = read_as<double>(n, k); }},
        {"init_lo", [](auto& c, auto& n, auto& k) { c.toy.init_lo = read_as<double>(n, k); }},
        {"init_hi", [](auto& c, auto& n, auto& k) { c.toy.init_hi = read_as<double>(n, k); }},
        {"min_radius_sq", [](auto& c, auto& n, auto& k) { c.toy.min_radius_sq = read_as<double>(n, k); }},
    };
    static const std::map<std::string, Setter> prop3{
        {"a", [](auto& c, auto& n, auto& k) { c.prop3.a = read_as<double>(n, k); }},
        {"points_per_segment",
         [](auto& c, auto& n, auto& k) { c.prop3.points_per_segment = read_as<std::size_t>(n, k); }},
    };
    static const std::map<std::string, Setter> gridworld{
        {"pairs", [](auto& c, auto& n, auto& k) { c.gridworld.pairs = read_as<std::size_t>(n, k); }},
        {"steps", [](auto& c, auto& n, auto& k) { c.gridworld.steps = read_as<std::size_t>(n, k); }},
        {"temperatures", [](auto& c, auto& n, auto& k) { c.gridworld.temperatures = read_list<double>(n, k); }},
        {"methods",
         [](auto& c, auto& n, auto& k) {
             c.gridworld.methods = read_enum_list<grid::TrainMethod>(n, k, grid::parse_train_method);
         }},
        {"same_task", [](auto& c, auto& n, auto& k) { c.gridworld.same_task = read_as<bool>(n, k); }},
        {"transitions", [](auto& c, auto& n, auto& k) { c.gridworld.transitions = read_as<std::size_t>(n, k); }},
        {"wall_prob", [](auto& c, auto& n, auto& k) { c.gridworld.wall_prob = read_as<double>(n, k); }},
        {"discounted", [](auto& c, auto& n, auto& k) { c.gridworld.discounted = read_as<bool>(n, k); }},
        {"eval_every", [](auto& c, auto& n, auto& k) { c.gridworld.eval_every = read_as<std::size_t>(n, k); }},
        {"eval_episodes", [](auto& c, auto& n, auto& k) { c.gridworld.eval_episodes = read_as<std::size_t>(n, k); }},
        {"ema_decay", [](auto& c, auto& n, auto& k) { c.gridworld.ema_decay = read_as<double>(n, k); }},
    };
    static const std::map<std::string, Setter> mnist{
        {"rotation", [](auto& c, auto& n, auto& k) { c.mnist.rotation = read_as<int>(n, k); }},
        {"mode",
         [](auto& c, auto& n, auto& k) { c.mnist.mode = read_enum<dense::TrainMode>(n, k, dense::parse_train_mode); }},
        {"epochs", [](auto& c, auto& n, auto& k) { c.mnist.epochs = read_as<int>(n, k); }},
        {"batch", [](auto& c, auto& n, auto& k) { c.mnist.batch = read_as<int>(n, k); }},
        {"train_frac", [](auto& c, auto& n, auto& k) { c.mnist.train_frac = read_as<double>(n, k); }},
        {"data_dir", [](auto& c, auto& n, auto& k) { c.mnist.data_dir = read_as<std::string>(n, k); }},
        {"gate", [](auto& c, auto& n, auto& k) { c.mnist.gate = read_enum<GateMode>(n, k, parse_gate_mode); }},
        {"threshold", [](auto& c, auto& n, auto& k) { c.mnist.threshold = read_as<double>(n, k); }},
        {"ema_decay", [](auto& c, auto& n, auto& k) { c.mnist.ema_decay = read_as<double>(n, k); }},
        {"per_layer", [](auto& c, auto& n, auto& k) { c.mnist.per_layer = read_as<bool>(n, k); }},
        {"accumulate_main_only",
         [](auto& c, auto& n, auto& k) { c.mnist.accumulate_main_only = read_as<bool>(n, k); }},
    };
    static const std::map<std::string, Setter> highdim{
        {"dims", [](auto& c, auto& n, auto& k) { c.highdim.dims = read_list<std::size_t>(n, k); }},
        {"pairs", [](auto& c, auto& n, auto& k) { c.highdim.pairs = read_as<std::size_t>(n, k); }},
        {"sigma", [](auto& c, auto& n, auto& k) { c.highdim.sigma = read_as<double>(n, k); }},
        {"noise", [](auto& c, auto& n, auto& k) { c.highdim.noise = read_list<double>(n, k); }},
    };
    switch (kind) {
        case ExperimentKind::Toy: return toy;
        case ExperimentKind::Prop3: return prop3;
        case ExperimentKind::Gridworld: return gridworld;
        case ExperimentKind::Mnist: return mnist;
        case ExperimentKind::Highdim: return highdim;
    }
    return toy;
}

bool finite(double x) { return std::isfinite(x); }

void check(bool ok, const std::string& key, const std::string& what, const KeyLines& lines) {
    if (!ok) fail("'" + key + "' " + what, lines, key);
}

void validate_impl(const ExperimentConfig& c, const KeyLines& lines) {
    switch (c.kind) {
        case ExperimentKind::Toy: {
            const auto& p = c.toy;
            std::size_t main_arity = 0;
            try {
                main_arity = landscape::builtin_scalar(p.main).arity;
            } catch (const std::invalid_argument&) {
                fail("'main' must name a scalar landscape, got '" + p.main + "'", lines, "main");
            }
            check(main_arity == 2, "main", "must be a two-dimensional landscape", lines);
            try {
                check(landscape::update_field(landscape::builtin_field(p.aux)).arity == 2, "aux",
                      "must be a two-dimensional landscape or field", lines);
            } catch (const std::invalid_argument&) {
                fail("'aux' must name a landscape or field, got '" + p.aux + "'", lines, "aux");
            }
            check(!p.modes.empty(), "modes", "must not be empty", lines);
            check(finite(p.lambda) && p.lambda >= 0.0, "lambda", "must be >= 0", lines);
            check(p.threshold >= -1.0 && p.threshold <= 1.0, "threshold", "must be in [-1, 1]", lines);
            check(p.inits >= 1, "inits", "must be >= 1", lines);
            check(p.steps >= 1, "steps", "must be >= 1", lines);
            check(finite(p.alpha) && p.alpha > 0.0, "alpha", "must be > 0", lines);
            check(finite(p.level) && p.level > 0.0, "level", "must be > 0", lines);
            check(finite(p.init_lo) && finite(p.init_hi) && p.init_lo < p.init_hi, "init_hi",
                  "must exceed init_lo", lines);
            check(finite(p.min_radius_sq) && p.min_radius_sq >= 0.0, "min_radius_sq", "must be >= 0", lines);
            break;
        }
        case ExperimentKind::Prop3:
            check(finite(c.prop3.a), "a", "must be finite", lines);
            check(c.prop3.points_per_segment >= 1000, "points_per_segment", "must be >= 1000", lines);
            break;
        case ExperimentKind::Gridworld: {
            const auto& p = c.gridworld;
            check(p.pairs >= 1, "pairs", "must be >= 1", lines);
            check(p.steps >= 1, "steps", "must be >= 1", lines);
            check(!p.temperatures.empty(), "temperatures", "must not be empty", lines);
            for (double t : p.temperatures) check(finite(t) && t >= 0.0, "temperatures", "must be >= 0", lines);
            check(!p.methods.empty(), "methods", "must not be empty", lines);
            check(p.transitions >= 1, "transitions", "must be >= 1", lines);
            check(p.wall_prob >= 0.0 && p.wall_prob < 1.0, "wall_prob", "must be in [0, 1)", lines);
            check(p.eval_every >= 1, "eval_every", "must be >= 1", lines);
            check(p.eval_episodes >= 1, "eval_episodes", "must be >= 1", lines);
            check(p.ema_decay >= 0.0 && p.ema_decay < 1.0, "ema_decay", "must be in [0, 1)", lines);
            break;
        }
        case ExperimentKind::Mnist: {
            const auto& p = c.mnist;
            check(dense::is_supported_rotation(p.rotation), "rotation", "must be one of 0, 45, 90, 135, 180", lines);
            check(p.epochs >= 1, "epochs", "must be >= 1", lines);
            check(p.batch >= 1, "batch", "must be >= 1", lines);
            check(p.train_frac > 0.0 && p.train_frac <= 1.0, "train_frac", "must be in (0, 1]", lines);
            check(p.threshold >= -1.0 && p.threshold <= 1.0, "threshold", "must be in [-1, 1]", lines);
            check(p.ema_decay >= 0.0 && p.ema_decay < 1.0, "ema_decay", "must be in [0, 1)", lines);
            break;
        }
        case ExperimentKind::Highdim: {
            const auto& p = c.highdim;
            check(!p.dims.empty(), "dims", "must not be empty", lines);
            for (auto d : p.dims) check(d >= 1, "dims", "entries must be >= 1", lines);
            check(p.pairs >= 1, "pairs", "must be >= 1", lines);
            check(finite(p.sigma) && p.sigma >= 0.0, "sigma", "must be >= 0", lines);
            for (double s : p.noise) check(finite(s) && s >= 0.0, "noise", "entries must be >= 0", lines);
            break;
        }
    }
}

template <typename T>
void emit_list(YAML::Emitter& out, const char* key, const std::vector<T>& values) {
    out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& v : values) out << v;
    out << YAML::EndSeq;
}

template <typename Enum>
void emit_enum_list(YAML::Emitter& out, const char* key, const std::vector<Enum>& values) {
    out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& v : values) out << std::string(to_string(v));
    out << YAML::EndSeq;
}

bool needs_quotes(const std::string& s) {
    return s.find_first_of(",\"\r\n") != std::string::npos;
}

std::string iso_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Value opt(const std::vector<double>& v, std::size_t i) {
    if (i < v.size()) return v[i];
    return std::monostate{};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw OutputError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw OutputError("write failed: " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::Toy: return "toy";
        case ExperimentKind::Prop3: return "prop3";
        case ExperimentKind::Gridworld: return "gridworld";
        case ExperimentKind::Mnist: return "mnist";
        case ExperimentKind::Highdim: return "highdim";
    }
    return "?";
}

ExperimentKind parse_kind(std::string_view text) {
    for (auto k : {ExperimentKind::Toy, ExperimentKind::Prop3, ExperimentKind::Gridworld, ExperimentKind::Mnist,
                   ExperimentKind::Highdim}) {
        if (text == to_string(k)) return k;
    }
    throw std::invalid_argument("unknown experiment kind '" + std::string(text) + "'");
}

ConfigError::ConfigError(const std::string& message, int line)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}

ExperimentConfig parse_config_text(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError("parse error: " + e.msg, e.mark.line + 1);
    }
    if (!root.IsMap()) throw ConfigError("config must be a key: value mapping", root.Mark().line + 1);
    const YAML::Node kind_node = root["kind"];
    if (!kind_node) throw ConfigError("missing required key 'kind'");

    ExperimentConfig config;
    config.kind = read_enum<ExperimentKind>(kind_node, "kind", parse_kind);
    const auto& block = setters(config.kind);
    KeyLines lines;
    for (const auto& entry : root) {
        const auto key = read_as<std::string>(entry.first, "key");
        const int line = entry.first.Mark().line + 1;
        if (lines.count(key)) throw ConfigError("duplicate key '" + key + "'", line);
        lines[key] = line;
        if (key == "kind") continue;
        if (key == "seed") {
            config.seed = read_as<std::uint64_t>(entry.second, key);
        } else if (key == "out") {
            config.out = read_as<std::string>(entry.second, key);
        } else if (const auto it = block.find(key); it != block.end()) {
            it->second(config, entry.second, key);
        } else {
            throw ConfigError("unknown key '" + key + "' for kind " + std::string(to_string(config.kind)), line);
        }
    }
    validate_impl(config, lines);
    return config;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void validate(const ExperimentConfig& config) { validate_impl(config, {}); }

std::string to_yaml(const ExperimentConfig& c) {
    YAML::Emitter out;
    out.SetDoublePrecision(17);
    out << YAML::BeginMap;
    out << YAML::Key << "kind" << YAML::Value << std::string(to_string(c.kind));
    out << YAML::Key << "seed" << YAML::Value << c.seed;
    out << YAML::Key << "out" << YAML::Value << YAML::DoubleQuoted << c.out;
    auto kv = [&](const char* key, const auto& value) { out << YAML::Key << key << YAML::Value << value; };
    switch (c.kind) {
        case ExperimentKind::Toy:
            kv("main", c.toy.main);
            kv("aux", c.toy.aux);
            emit_enum_list(out, "modes", c.toy.modes);
            kv("lambda", c.toy.lambda);
            kv("threshold", c.toy.threshold);
            kv("inits", c.toy.inits);
            kv("steps", c.toy.steps);
            kv("alpha", c.toy.alpha);
            kv("level", c.toy.level);
            kv("init_lo", c.toy.init_lo);
            kv("init_hi", c.toy.init_hi);
            kv("min_radius_sq", c.toy.min_radius_sq);
            break;
        case ExperimentKind::Prop3:
            kv("a", c.prop3.a);
            kv("points_per_segment", c.prop3.points_per_segment);
            break;
        case ExperimentKind::Gridworld:
            kv("pairs", c.gridworld.pairs);
            kv("steps", c.gridworld.steps);
            emit_list(out, "temperatures", c.gridworld.temperatures);
            emit_enum_list(out, "methods", c.gridworld.methods);
            kv("same_task", c.gridworld.same_task);
            kv("transitions", c.gridworld.transitions);
            kv("wall_prob", c.gridworld.wall_prob);
            kv("discounted", c.gridworld.discounted);
            kv("eval_every", c.gridworld.eval_every);
            kv("eval_episodes", c.gridworld.eval_episodes);
            kv("ema_decay", c.gridworld.ema_decay);
            break;
        case ExperimentKind::Mnist:
            kv("rotation", c.mnist.rotation);
            kv("mode", std::string(to_string(c.mnist.mode)));
            kv("epochs", c.mnist.epochs);
            kv("batch", c.mnist.batch);
            kv("train_frac", c.mnist.train_frac);
            out << YAML::Key << "data_dir" << YAML::Value << YAML::DoubleQuoted << c.mnist.data_dir;
            kv("gate", std::string(to_string(c.mnist.gate)));
            kv("threshold", c.mnist.threshold);
            kv("ema_decay", c.mnist.ema_decay);
            kv("per_layer", c.mnist.per_layer);
            kv("accumulate_main_only", c.mnist.accumulate_main_only);
            break;
        case ExperimentKind::Highdim:
            emit_list(out, "dims", c.highdim.dims);
            kv("pairs", c.highdim.pairs);
            kv("sigma", c.highdim.sigma);
            emit_list(out, "noise", c.highdim.noise);
            break;
    }
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

// ---------------------------------------------------------------------------

std::string format_real(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

std::string to_csv(const std::vector<Record>& records, const Schema& schema) {
    if (schema.empty()) throw SchemaError("csv: empty schema");
    for (std::size_t i = 0; i < schema.size(); ++i) {
        if (schema[i].name.empty()) throw SchemaError("csv: column " + std::to_string(i) + " has no name");
        for (std::size_t j = 0; j < i; ++j) {
            if (schema[j].name == schema[i].name) throw SchemaError("csv: duplicate column '" + schema[i].name + "'");
        }
    }
    for (std::size_t r = 0; r < records.size(); ++r) {
        if (records[r].size() != schema.size()) {
            throw SchemaError("csv: record " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                              " fields, schema has " + std::to_string(schema.size()));
        }
        for (std::size_t i = 0; i < schema.size(); ++i) {
            const Value& v = records[r][i];
            bool ok = std::holds_alternative<std::monostate>(v);
            switch (schema[i].type) {
                case ColumnType::Integer: ok = ok || std::holds_alternative<std::int64_t>(v); break;
                case ColumnType::Real: ok = ok || std::holds_alternative<double>(v); break;
                case ColumnType::Text: ok = ok || std::holds_alternative<std::string>(v); break;
            }
            if (!ok) {
                throw SchemaError("csv: record " + std::to_string(r) + " column '" + schema[i].name +
                                  "' has the wrong type");
            }
        }
    }

    std::string out;
    auto field = [&](const std::string& s) {
        if (!needs_quotes(s)) {
            out += s;
            return;
        }
        out += '"';
        for (char ch : s) {
            if (ch == '"') out += '"';
            out += ch;
        }
        out += '"';
    };
    for (std::size_t i = 0; i < schema.size(); ++i) {
        if (i) out += ',';
        field(schema[i].name);
    }
    out += '\n';
    for (const auto& rec : records) {
        for (std::size_t i = 0; i < rec.size(); ++i) {
            if (i) out += ',';
            std::visit(
                [&](const auto& v) {
                    using T = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<T, std::int64_t>) out += std::to_string(v);
                    else if constexpr (std::is_same_v<T, double>) out += format_real(v);
                    else if constexpr (std::is_same_v<T, std::string>) field(v);
                },
                rec[i]);
        }
        out += '\n';
    }
    return out;
}

void emit_csv(const std::vector<Record>& records, const Schema& schema, const std::filesystem::path& path) {
    const std::string text = to_csv(records, schema);
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw OutputError("cannot create directory for " + path.string() + ": " + ec.message());
    write_text(path, text);
}

// ---------------------------------------------------------------------------

nlohmann::json RunRecord::to_json() const {
    return {{"run_id", run_id},       {"kind", kind},         {"seed", seed},
            {"config_hash", config_hash}, {"started", started}, {"finished", finished},
            {"artifacts", artifacts}, {"code_version", code_version}};
}

std::string config_hash(const ExperimentConfig& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_yaml(config)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string next_run_id(const std::filesystem::path& out_dir, const ExperimentConfig& config) {
    const std::string stem = std::string(to_string(config.kind)) + "-s" + std::to_string(config.seed) + "-";
    for (int n = 1;; ++n) {
        char suffix[16];
        std::snprintf(suffix, sizeof suffix, "%03d", n);
        const std::string id = stem + suffix;
        if (!std::filesystem::exists(out_dir / id)) return id;
    }
}

std::string code_version() { return std::string(COSGATE_VERSION) + "+" + COSGATE_GIT_REVISION; }

// ---------------------------------------------------------------------------

CosineSummary summarize(std::vector<double> cosines) {
    CosineSummary s;
    s.n = cosines.size();
    if (cosines.empty()) return s;
    std::vector<double> abs_values(cosines.size());
    std::transform(cosines.begin(), cosines.end(), abs_values.begin(), [](double c) { return std::abs(c); });
    for (std::size_t i = 0; i < cosines.size(); ++i) {
        s.mean += cosines[i];
        s.mean_abs += abs_values[i];
    }
    s.mean /= static_cast<double>(s.n);
    s.mean_abs /= static_cast<double>(s.n);
    s.median = median_of(std::move(cosines));
    s.median_abs = median_of(std::move(abs_values));
    return s;
}

CosineSummary random_cosine_stats(std::size_t d, std::size_t n, double sigma, Rng& rng) {
    if (d < 1 || n < 1) throw std::invalid_argument("random_cosine_stats: need d >= 1 and n >= 1");
    if (!(sigma >= 0.0)) throw std::invalid_argument("random_cosine_stats: sigma must be >= 0");
    std::vector<double> a(d), b(d), cosines;
    cosines.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        for (auto& x : a) x = sigma * rng.normal();
        for (auto& x : b) x = sigma * rng.normal();
        cosines.push_back(cosine(a, b));
    }
    return summarize(std::move(cosines));
}

CosineSummary corrupted_cosine_stats(std::size_t d, std::size_t n, double sigma, Rng& rng) {
    if (d < 1 || n < 1) throw std::invalid_argument("corrupted_cosine_stats: need d >= 1 and n >= 1");
    if (!(sigma >= 0.0)) throw std::invalid_argument("corrupted_cosine_stats: sigma must be >= 0");
    std::vector<double> mu(d), a(d), b(d), cosines;
    cosines.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        for (auto& x : mu) x = rng.normal();
        for (std::size_t i = 0; i < d; ++i) a[i] = mu[i] + sigma * rng.normal();
        for (std::size_t i = 0; i < d; ++i) b[i] = mu[i] + sigma * rng.normal();
        cosines.push_back(cosine(a, b));
    }
    return summarize(std::move(cosines));
}

// ---------------------------------------------------------------------------

ToyResult run_toy(const ToyParams& p, std::uint64_t seed) {
    ToyResult result;
    Rng rng = Rng::stream(seed, 0);
    result.inits = landscape::sample_inits(rng, p.inits, p.init_lo, p.init_hi, p.min_radius_sq);
    const auto main = landscape::builtin_scalar(p.main);
    const auto aux = landscape::builtin_field(p.aux);
    landscape::DescentOptions options;
    options.steps = p.steps;
    options.alpha = p.alpha;
    options.level = p.level;

    for (GateMode mode : p.modes) {
        GateConfig gate;
        gate.mode = mode;
        gate.lambda = p.lambda;
        gate.threshold = p.threshold;
        const auto field = landscape::merged_field(main, aux, gate);
        ToySummary summary;
        summary.mode = mode;
        std::vector<double> times;
        for (std::size_t i = 0; i < result.inits.size(); ++i) {
            ToyRun run{mode, i, landscape::descend(field, result.inits[i], options)};
            ++summary.runs;
            if (run.trajectory.diverged) ++summary.diverged;
            if (run.trajectory.convergence_step) {
                ++summary.converged;
                times.push_back(static_cast<double>(*run.trajectory.convergence_step));
            }
            result.runs.push_back(std::move(run));
        }
        if (!times.empty()) summary.median_convergence = median_of(std::move(times));
        result.summary.push_back(summary);
    }
    return result;
}

Prop3Result run_prop3(const Prop3Params& p) {
    GateConfig gate;
    gate.mode = GateMode::Weighted;
    const auto field = landscape::merged_field(landscape::builtin_scalar("prop3_main", p.a),
                                               landscape::builtin_field("prop3_aux", p.a), gate)
                           .as_vector_field();
    const auto control = landscape::gradient_field(landscape::builtin_scalar("L1"));
    const auto path_a = landscape::Path::polyline({{0.0, 0.0}, {0.0, 2.0}, {2.0, 2.0}});
    const auto path_b = landscape::Path::polyline({{0.0, 0.0}, {2.0, 0.0}, {2.0, 2.0}});
    Prop3Result r;
    r.gated_a = landscape::line_integral(field, path_a, p.points_per_segment);
    r.gated_b = landscape::line_integral(field, path_b, p.points_per_segment);
    r.control_a = landscape::line_integral(control, path_a, p.points_per_segment);
    r.control_b = landscape::line_integral(control, path_b, p.points_per_segment);
    return r;
}

grid::ExperimentSpec gridworld_spec(const GridworldParams& p, std::uint64_t seed) {
    grid::ExperimentSpec spec;
    spec.pairs = p.pairs;
    spec.temperatures = p.temperatures;
    spec.methods = p.methods;
    spec.seed = seed;
    spec.same_task = p.same_task;
    spec.generation.wall_prob = p.wall_prob;
    spec.qlearning.transitions = p.transitions;
    spec.train.steps = p.steps;
    spec.train.eval_every = p.eval_every;
    spec.train.eval_episodes = p.eval_episodes;
    spec.train.pg.discounted = p.discounted;
    spec.train.ema_decay = p.ema_decay;
    return spec;
}

MnistData load_mnist(const MnistParams& p) {
    const std::filesystem::path dir(p.data_dir);
    MnistData data;
    data.train = dense::load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    data.test = dense::load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    const auto keep = static_cast<std::size_t>(std::llround(p.train_frac * static_cast<double>(data.train.size())));
    if (keep < data.train.size()) data.train = data.train.head(keep);
    data.aux = dense::rotate_dataset(data.train, p.rotation);
    return data;
}

dense::MnistTrainConfig mnist_train_config(const MnistParams& p, std::uint64_t seed) {
    dense::MnistTrainConfig c;
    c.mode = p.mode;
    c.gate.mode = p.gate;
    c.gate.threshold = p.threshold;
    c.gate.ema_decay = p.ema_decay;
    c.gate.per_layer = p.per_layer;
    c.epochs = p.epochs;
    c.batch = p.batch;
    c.seed = seed;
    c.accumulate_main_only = p.accumulate_main_only;
    return c;
}

std::vector<HighdimRow> run_highdim(const HighdimParams& p, std::uint64_t seed) {
    std::vector<HighdimRow> rows;
    for (std::size_t i = 0; i < p.dims.size(); ++i) {
        Rng rng = Rng::stream(seed, i);
        rows.push_back({"random", p.dims[i], p.sigma, random_cosine_stats(p.dims[i], p.pairs, p.sigma, rng)});
    }
    for (std::size_t j = 0; j < p.noise.size(); ++j) {
        for (std::size_t i = 0; i < p.dims.size(); ++i) {
            Rng rng = Rng::stream(seed, 1000 + 64 * j + i);
            rows.push_back(
                {"corrupted", p.dims[i], p.noise[j], corrupted_cosine_stats(p.dims[i], p.pairs, p.noise[j], rng)});
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------

Schema gate_decision_schema() {
    return {{"step", ColumnType::Integer},
            {"raw_cos", ColumnType::Real},
            {"smoothed_cos", ColumnType::Real},
            {"weight", ColumnType::Real}};
}

std::vector<Record> gate_decision_records(const std::vector<GateDecision>& decisions) {
    std::vector<Record> out;
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        const auto& d = decisions[i];
        out.push_back({static_cast<std::int64_t>(i), d.raw_cos, d.smoothed_cos, d.weight});
    }
    return out;
}

Schema trajectory_schema() {
    return {{"run_id", ColumnType::Text}, {"step", ColumnType::Integer}, {"x1", ColumnType::Real},
            {"x2", ColumnType::Real},     {"main_loss", ColumnType::Real}, {"cos", ColumnType::Real},
            {"weight", ColumnType::Real}};
}

std::vector<Record> trajectory_records(const ToyResult& result) {
    std::vector<Record> out;
    for (const auto& run : result.runs) {
        const std::string id = std::string(to_string(run.mode)) + "/" + std::to_string(run.init);
        const auto& t = run.trajectory;
        for (std::size_t i = 0; i < t.points.size(); ++i) {
            const auto& x = t.points[i];
            out.push_back({id, static_cast<std::int64_t>(i), x[0], x.size() > 1 ? Value(x[1]) : Value(),
                           t.main_loss[i], opt(t.cos, i), opt(t.weight, i)});
        }
    }
    return out;
}

Schema toy_summary_schema() {
    return {{"mode", ColumnType::Text},
            {"runs", ColumnType::Integer},
            {"converged", ColumnType::Integer},
            {"diverged", ColumnType::Integer},
            {"median_convergence", ColumnType::Real}};
}

std::vector<Record> toy_summary_records(const ToyResult& result) {
    std::vector<Record> out;
    for (const auto& s : result.summary) {
        out.push_back({std::string(to_string(s.mode)), static_cast<std::int64_t>(s.runs),
                       static_cast<std::int64_t>(s.converged), static_cast<std::int64_t>(s.diverged),
                       s.median_convergence ? Value(*s.median_convergence) : Value()});
    }
    return out;
}

Schema prop3_schema() {
    return {{"field", ColumnType::Text}, {"path", ColumnType::Text}, {"integral", ColumnType::Real}};
}

std::vector<Record> prop3_records(const Prop3Result& r) {
    return {{std::string("gated"), std::string("A"), r.gated_a},
            {std::string("gated"), std::string("B"), r.gated_b},
            {std::string("grad_L1"), std::string("A"), r.control_a},
            {std::string("grad_L1"), std::string("B"), r.control_b}};
}

Schema gridworld_trial_schema() {
    return {{"pair", ColumnType::Integer},        {"method", ColumnType::Text}, {"temperature", ColumnType::Real},
            {"step", ColumnType::Integer},        {"eval_return", ColumnType::Real}, {"cos", ColumnType::Real},
            {"gate_weight", ColumnType::Real}};
}

std::vector<Record> gridworld_trial_records(const grid::ExperimentResult& result) {
    std::vector<Record> out;
    for (const auto& t : result.trials) {
        for (const auto& pt : t.curve.points) {
            out.push_back({static_cast<std::int64_t>(t.pair), std::string(grid::to_string(t.method)), t.temperature,
                           static_cast<std::int64_t>(pt.step), pt.mean_return, pt.mean_cos, pt.mean_weight});
        }
    }
    return out;
}

Schema gridworld_aggregate_schema() {
    return {{"method", ColumnType::Text},
            {"temperature", ColumnType::Real},
            {"step", ColumnType::Integer},
            {"mean_return", ColumnType::Real},
            {"stderr", ColumnType::Real}};
}

std::vector<Record> gridworld_aggregate_records(const grid::ExperimentResult& result) {
    std::vector<Record> out;
    for (const auto& a : result.aggregate) {
        out.push_back({std::string(grid::to_string(a.method)), a.temperature, static_cast<std::int64_t>(a.step),
                       a.mean_return, a.stderr_return});
    }
    return out;
}

Schema mnist_schema() {
    return {{"epoch", ColumnType::Integer},        {"train_loss_main", ColumnType::Real},
            {"train_loss_aux", ColumnType::Real},  {"test_error", ColumnType::Real},
            {"mean_cos", ColumnType::Real},        {"mean_gate_weight", ColumnType::Real}};
}

std::vector<Record> mnist_records(const dense::MnistTrainResult& result) {
    std::vector<Record> out;
    for (const auto& e : result.epochs) {
        out.push_back({static_cast<std::int64_t>(e.epoch), e.train_loss_main, e.train_loss_aux, e.test_error,
                       e.mean_cos, e.mean_gate_weight});
    }
    return out;
}

Schema highdim_schema() {
    return {{"study", ColumnType::Text},    {"d", ColumnType::Integer},         {"sigma", ColumnType::Real},
            {"n", ColumnType::Integer},     {"mean", ColumnType::Real},         {"median", ColumnType::Real},
            {"mean_abs", ColumnType::Real}, {"median_abs", ColumnType::Real}};
}

std::vector<Record> highdim_records(const std::vector<HighdimRow>& rows) {
    std::vector<Record> out;
    for (const auto& r : rows) {
        out.push_back({r.study, static_cast<std::int64_t>(r.d), r.sigma, static_cast<std::int64_t>(r.stats.n),
                       r.stats.mean, r.stats.median, r.stats.mean_abs, r.stats.median_abs});
    }
    return out;
}

// ---------------------------------------------------------------------------

RunRecord run(const ExperimentConfig& config) {
    validate(config);
    RunRecord record;
    record.kind = std::string(to_string(config.kind));
    record.seed = config.seed;
    record.config_hash = config_hash(config);
    record.code_version = code_version();
    record.started = iso_now();

    const std::filesystem::path out_dir(config.out);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw OutputError("cannot create " + out_dir.string() + ": " + ec.message());
    record.run_id = next_run_id(out_dir, config);
    const auto dir = out_dir / record.run_id;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw OutputError("cannot create " + dir.string() + ": " + ec.message());

    auto csv = [&](const std::string& name, const std::vector<Record>& records, const Schema& schema) {
        emit_csv(records, schema, dir / name);
        record.artifacts.push_back(name);
    };

    switch (config.kind) {
        case ExperimentKind::Toy: {
            const auto result = run_toy(config.toy, config.seed);
            csv("trajectories.csv", trajectory_records(result), trajectory_schema());
            csv("summary.csv", toy_summary_records(result), toy_summary_schema());
            break;
        }
        case ExperimentKind::Prop3:
            csv("integrals.csv", prop3_records(run_prop3(config.prop3)), prop3_schema());
            break;
        case ExperimentKind::Gridworld: {
            const auto result = grid::run_experiment(gridworld_spec(config.gridworld, config.seed));
            csv("trials.csv", gridworld_trial_records(result), gridworld_trial_schema());
            csv("aggregate.csv", gridworld_aggregate_records(result), gridworld_aggregate_schema());
            nlohmann::json layouts = nlohmann::json::array();
            for (const auto& l : result.layouts) layouts.push_back(grid::to_json(l));
            write_text(dir / "layouts.json", layouts.dump(1) + "\n");
            record.artifacts.push_back("layouts.json");
            break;
        }
        case ExperimentKind::Mnist: {
            const auto data = load_mnist(config.mnist);
            const auto result =
                dense::train(data.train, data.aux, data.test, mnist_train_config(config.mnist, config.seed));
            csv("epochs.csv", mnist_records(result), mnist_schema());
            break;
        }
        case ExperimentKind::Highdim:
            csv("cosine.csv", highdim_records(run_highdim(config.highdim, config.seed)), highdim_schema());
            break;
    }

    write_text(dir / "config.yaml", to_yaml(config));
    record.artifacts.push_back("config.yaml");
    record.finished = iso_now();
    write_text(dir / "run.json", record.to_json().dump(2) + "\n");
    return record;
}

}  // namespace cosgate::harness
