#include "cosgate/gate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cosgate {

std::string_view to_string(GateMode mode) {
    switch (mode) {
        case GateMode::Weighted: return "weighted";
        case GateMode::Unweighted: return "unweighted";
        case GateMode::AlwaysOn: return "always_on";
        case GateMode::Off: return "off";
    }
    return "unknown";
}

GateMode parse_gate_mode(std::string_view text) {
    if (text == "weighted") return GateMode::Weighted;
    if (text == "unweighted") return GateMode::Unweighted;
    if (text == "always_on") return GateMode::AlwaysOn;
    if (text == "off") return GateMode::Off;
    throw std::invalid_argument("unknown gate mode '" + std::string(text) + "'");
}

void GateConfig::validate() const {
    if (!std::isfinite(threshold)) throw std::invalid_argument("gate threshold must be finite");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw std::invalid_argument("gate ema_decay must lie in [0, 1)");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("gate lambda must be finite and >= 0");
}

namespace {

struct Moments {
    double gv;
    double gg;
    double vv;
};

Moments moments(std::span<const double> g, std::span<const double> v) {
    Moments m{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < g.size(); ++i) {
        m.gv += g[i] * v[i];
        m.gg += g[i] * g[i];
        m.vv += v[i] * v[i];
    }
    return m;
}

double max_abs(std::span<const double> x) {
    double m = 0.0;
    for (double e : x) m = std::max(m, std::abs(e));
    return m;
}

// Rescaled fallback for inputs whose squares overflow or underflow.
Moments scaled_moments(std::span<const double> g, std::span<const double> v) {
    const double sg = max_abs(g);
    const double sv = max_abs(v);
    Moments m{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double a = g[i] / sg;
        const double b = v[i] / sv;
        m.gv += a * b;
        m.gg += a * a;
        m.vv += b * b;
    }
    return m;
}

double cosine_unchecked(std::span<const double> g, std::span<const double> v) {
    if (g.size() == 1) {
        // collinear by construction; skip the rounding of the general formula
        if (g[0] == 0.0 || v[0] == 0.0) return 0.0;
        return (g[0] > 0.0) == (v[0] > 0.0) ? 1.0 : -1.0;
    }
    Moments m = moments(g, v);
    const auto out_of_range = [](double s) { return !std::isfinite(s) || s < std::numeric_limits<double>::min(); };
    if (out_of_range(m.gg) || out_of_range(m.vv) || !std::isfinite(m.gv)) {
        if (max_abs(g) == 0.0 || max_abs(v) == 0.0) return 0.0;
        m = scaled_moments(g, v);
    }
    // sqrt(gg * vv) gives exactly gg when g == v, so identical vectors score 1.
    const double p = m.gg * m.vv;
    const double denom = out_of_range(p) ? std::sqrt(m.gg) * std::sqrt(m.vv) : std::sqrt(p);
    const double c = m.gv / denom;
    return std::clamp(c, -1.0, 1.0);
}

}  // namespace

double cosine(std::span<const double> g, std::span<const double> v) {
    require_same_size(g.size(), v.size(), "cosine");
    require_finite(g, "cosine(g)");
    require_finite(v, "cosine(v)");
    return cosine_unchecked(g, v);
}

double cosine(const ParamVector& g, const ParamVector& v) { return cosine(g.span(), v.span()); }

double per_layer_cosine(std::span<const double> g, std::span<const double> v, const Partition& partition) {
    require_same_size(g.size(), v.size(), "per_layer_cosine");
    require_same_size(partition.total(), g.size(), "per_layer_cosine partition");
    if (partition.num_layers() == 0) throw DimensionError("per_layer_cosine: empty partition");
    require_finite(g, "per_layer_cosine(g)");
    require_finite(v, "per_layer_cosine(v)");
    double sum = 0.0;
    for (const auto& layer : partition.layers()) {
        sum += cosine_unchecked(g.subspan(layer.begin, layer.size()), v.subspan(layer.begin, layer.size()));
    }
    return sum / static_cast<double>(partition.num_layers());
}

double per_layer_cosine(const ParamVector& g, const ParamVector& v) {
    if (!g.partition() || !v.partition()) throw DimensionError("per_layer_cosine: both vectors need a partition");
    if (!(*g.partition() == *v.partition())) throw DimensionError("per_layer_cosine: partitions differ");
    return per_layer_cosine(g.span(), v.span(), *g.partition());
}

CosineTracker smooth(CosineTracker tracker, double c, double decay) {
    if (!(c >= -1.0 && c <= 1.0)) throw std::invalid_argument("smooth: cosine outside [-1, 1]");
    if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("smooth: decay outside [0, 1)");
    if (!tracker.initialized) return {c, true};
    // Convex combination; the clamp only absorbs rounding at the endpoints.
    tracker.smoothed = std::clamp(decay * tracker.smoothed + (1.0 - decay) * c, -1.0, 1.0);
    return tracker;
}

double gate_weight(const GateConfig& config, double smoothed_cos) {
    switch (config.mode) {
        case GateMode::Weighted:
            return smoothed_cos >= config.threshold ? std::max(0.0, smoothed_cos) : 0.0;
        case GateMode::Unweighted:
            return smoothed_cos >= config.threshold ? 1.0 : 0.0;
        case GateMode::AlwaysOn:
            return config.lambda;
        case GateMode::Off:
            return 0.0;
    }
    return 0.0;
}

void combine_into(std::span<const double> g, std::span<const double> v, double w, std::span<double> out) {
    require_same_size(g.size(), v.size(), "combine");
    require_same_size(g.size(), out.size(), "combine output");
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("combine: weight must be finite and >= 0");
    if (w == 0.0) {
        // g + 0*v would turn -0.0 into +0.0; keep g exactly.
        std::copy(g.begin(), g.end(), out.begin());
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] + w * v[i];
}

ParamVector combine(const ParamVector& g, const ParamVector& v, double w) {
    std::vector<double> out(g.size());
    combine_into(g.span(), v.span(), w, out);
    ParamVector result(std::move(out));
    if (g.partition()) result.set_partition(*g.partition());
    return result;
}

ParamVector step(const ParamVector& params, const ParamVector& update, double alpha) {
    require_same_size(params.size(), update.size(), "step");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("step: alpha must be finite and > 0");
    std::vector<double> out(params.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = params[i] - alpha * update[i];
        if (!std::isfinite(out[i])) {
            throw NonFiniteError("step: update diverged at index " + std::to_string(i));
        }
    }
    ParamVector result(std::move(out));
    if (params.partition()) result.set_partition(*params.partition());
    return result;
}

Gate::Gate(GateConfig config) : config_(config) { config_.validate(); }

GateDecision Gate::decide(std::span<const double> g, std::span<const double> v, const Partition* partition) {
    GateDecision d;
    if (config_.per_layer) {
        if (partition == nullptr) throw DimensionError("gate configured per-layer but no partition supplied");
        d.raw_cos = per_layer_cosine(g, v, *partition);
    } else {
        d.raw_cos = cosine(g, v);
    }
    tracker_ = smooth(tracker_, d.raw_cos, config_.ema_decay);
    d.smoothed_cos = tracker_.smoothed;
    d.weight = gate_weight(config_, d.smoothed_cos);
    return d;
}

PartitionedStepResult partitioned_step(const TaskParams& params, const TaskGrads& grads, Gate& gate, double alpha) {
    require_same_size(params.shared.size(), grads.shared_main.size(), "partitioned_step shared (main)");
    require_same_size(params.shared.size(), grads.shared_aux.size(), "partitioned_step shared (aux)");
    require_same_size(params.main_head.size(), grads.main_head.size(), "partitioned_step main head");
    require_same_size(params.aux_head.size(), grads.aux_head.size(), "partitioned_step aux head");

    const Partition* partition = grads.shared_main.partition() ? &*grads.shared_main.partition() : nullptr;
    PartitionedStepResult result;
    result.decision = gate.decide(grads.shared_main.span(), grads.shared_aux.span(), partition);
    const ParamVector update = combine(grads.shared_main, grads.shared_aux, result.decision.weight);
    result.params.shared = step(params.shared, update, alpha);
    result.params.main_head = step(params.main_head, grads.main_head, alpha);
    result.params.aux_head = step(params.aux_head, grads.aux_head, alpha);
    return result;
}

}  // namespace cosgate
