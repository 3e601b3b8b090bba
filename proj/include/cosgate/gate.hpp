#pragma once

#include <span>
#include <string>
#include <string_view>

#include "cosgate/param_vector.hpp"

namespace cosgate {

enum class GateMode {
    Weighted,    // w = max(0, cos)
    Unweighted,  // w = 1 if cos >= threshold else 0
    AlwaysOn,    // w = lambda, independent of cos
    Off,         // w = 0
};

std::string_view to_string(GateMode mode);
GateMode parse_gate_mode(std::string_view text);

struct GateConfig {
    GateMode mode = GateMode::Unweighted;
    double lambda = 1.0;     // only read by AlwaysOn
    double threshold = 0.0;
    double ema_decay = 0.0;  // 0 disables smoothing
    bool per_layer = false;

    /// Throws std::invalid_argument if any field is out of range.
    void validate() const;

    bool operator==(const GateConfig&) const = default;
};

/// Exponential moving average of observed cosines.
struct CosineTracker {
    double smoothed = 0.0;
    bool initialized = false;
};

struct GateDecision {
    double raw_cos = 0.0;
    double smoothed_cos = 0.0;
    double weight = 0.0;
};

/// <g, v> / (|g| |v|), clamped to [-1, 1]. Zero when either vector has zero norm.
double cosine(std::span<const double> g, std::span<const double> v);
double cosine(const ParamVector& g, const ParamVector& v);

/// Mean of per-layer cosines. Layers where either slice is zero contribute 0.
double per_layer_cosine(std::span<const double> g, std::span<const double> v, const Partition& partition);
double per_layer_cosine(const ParamVector& g, const ParamVector& v);

/// First observation seeds the average directly.
CosineTracker smooth(CosineTracker tracker, double c, double decay);

double gate_weight(const GateConfig& config, double smoothed_cos);

/// g + w * v. Returns g bit-for-bit when w == 0.
ParamVector combine(const ParamVector& g, const ParamVector& v, double w);
void combine_into(std::span<const double> g, std::span<const double> v, double w, std::span<double> out);

/// params - alpha * update. Throws NonFiniteError if the result overflows.
ParamVector step(const ParamVector& params, const ParamVector& update, double alpha);

/// Stateful wrapper used by training loops: config plus the running cosine average.
class Gate {
public:
    Gate() = default;
    explicit Gate(GateConfig config);

    /// Computes the raw cosine (global, or per-layer mean when configured), folds it
    /// into the tracker and returns the resulting weight. `partition` is required
    /// when the config asks for per-layer cosines.
    GateDecision decide(std::span<const double> g, std::span<const double> v, const Partition* partition = nullptr);

    const GateConfig& config() const { return config_; }
    const CosineTracker& tracker() const { return tracker_; }

private:
    GateConfig config_;
    CosineTracker tracker_;
};

/// Shared parameters plus the two task-specific heads.
struct TaskParams {
    ParamVector shared;
    ParamVector main_head;
    ParamVector aux_head;
};

struct TaskGrads {
    ParamVector shared_main;  // d L_main / d shared
    ParamVector shared_aux;   // d L_aux / d shared
    ParamVector main_head;    // d L_main / d main_head
    ParamVector aux_head;     // d L_aux / d aux_head
};

struct PartitionedStepResult {
    TaskParams params;
    GateDecision decision;
};

/// One steepest-descent step where only the shared block sees the gated
/// combination; each head follows its own loss. The decision is taken on the
/// shared gradients alone.
PartitionedStepResult partitioned_step(const TaskParams& params, const TaskGrads& grads, Gate& gate, double alpha);

}  // namespace cosgate
