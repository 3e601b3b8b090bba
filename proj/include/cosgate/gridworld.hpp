#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cosgate/gate.hpp"
#include "cosgate/rng.hpp"

namespace cosgate::grid {

inline constexpr int kNumActions = 4;

enum class Action : int { Up = 0, Down = 1, Left = 2, Right = 3 };

struct Cell {
    bool wall = false;
    double reward = 0.0;
    bool terminal = false;

    bool operator==(const Cell&) const = default;
};

/// Layout of one gridworld. States are indexed by absolute position: y * width + x.
struct GridSpec {
    int width = 15;
    int height = 15;
    std::vector<Cell> cells;
    int start = 0;
    std::uint64_t seed = 0;

    int num_states() const { return width * height; }
    int index(int x, int y) const { return y * width + x; }
    const Cell& at(int x, int y) const { return cells[static_cast<std::size_t>(index(x, y))]; }
    Cell& at(int x, int y) { return cells[static_cast<std::size_t>(index(x, y))]; }
    const Cell& cell(int state) const { return cells.at(static_cast<std::size_t>(state)); }

    bool operator==(const GridSpec&) const = default;
};

struct GenerationParams {
    int size = 15;
    double wall_prob = 0.15;
    int plus5 = 2;
    int plus10 = 2;
    int negative_terminal = 2;
    int negative_nonterminal = 2;
    double negative_terminal_reward = -5.0;
    double negative_nonterminal_reward = -1.0;
    int max_retries = 100;
    /// Also require a +10 cell reachable from the start, so the removed reward matters.
    bool require_plus10_reachable = false;
};

/// Transition noise and the per-step kill probability. Tests zero them to pin semantics.
struct Dynamics {
    double noise = 0.10;  // probability the action is redrawn uniformly from all four
    double kill = 0.01;   // probability of a zero-reward termination on any step
};

class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Random 15x15 layout with walls and terminating +5/+10/-5 cells plus
/// non-terminating -1 cells. Retries until a +5 cell is reachable from the
/// start; throws GenerationError after `max_retries` failures.
GridSpec sample_env(Rng& rng, const GenerationParams& params = {});

/// Main-task layout: every +10 cell becomes reward 0 and non-terminating.
GridSpec derive_main(const GridSpec& aux);

/// States reachable from the start without passing through terminal cells
/// (terminal cells themselves are included).
std::vector<bool> reachable_states(const GridSpec& spec);

struct EnvPair {
    GridSpec aux_env;
    GridSpec main_env;
};

EnvPair make_pair(const GridSpec& aux);

struct StepResult {
    int next_state = 0;
    double reward = 0.0;
    bool done = false;
    Action executed = Action::Up;
    bool killed = false;
};

/// One transition. Moving into a wall or off the grid leaves the agent in
/// place with zero reward. Throws std::logic_error from a terminal or wall state.
StepResult env_step(const GridSpec& env, int state, Action action, Rng& rng, const Dynamics& dynamics = {});

/// Per-state action values.
struct QTable {
    std::vector<std::array<double, kNumActions>> values;

    int num_states() const { return static_cast<int>(values.size()); }
};

struct QLearningConfig {
    double learning_rate = 0.1;
    double gamma = 0.95;
    std::size_t transitions = 50000;
};

/// Tabular Q-learning under a uniform-random behavior policy, episodes starting at the start cell.
QTable q_learning(const GridSpec& env, const QLearningConfig& config, Rng& rng, const Dynamics& dynamics = {});

using ActionDistribution = std::array<double, kNumActions>;

/// Teacher distribution per state. Temperature 0 is greedy with ties to the lowest action index.
struct TeacherPolicy {
    std::vector<ActionDistribution> probs;

    int num_states() const { return static_cast<int>(probs.size()); }
};

TeacherPolicy teacher_policy(const QTable& q, double temperature);

/// Tabular softmax student with a per-state value baseline.
class SoftmaxPolicy {
public:
    explicit SoftmaxPolicy(int num_states);

    int num_states() const { return num_states_; }
    ActionDistribution probs(int state) const;

    std::span<const double> logits() const { return logits_; }
    std::span<double> logits() { return logits_; }
    std::span<const double> baseline() const { return baseline_; }
    std::span<double> baseline() { return baseline_; }

    double logit(int state, int action) const {
        return logits_[static_cast<std::size_t>(state * kNumActions + action)];
    }

private:
    int num_states_;
    std::vector<double> logits_;
    std::vector<double> baseline_;
};

struct EpisodeStep {
    int state = 0;
    int action = 0;
    double reward = 0.0;
};

struct Episode {
    std::vector<EpisodeStep> steps;
    bool terminated = false;
};

/// Samples actions from `policy` until termination or `max_steps`.
Episode rollout(const GridSpec& env, const SoftmaxPolicy& policy, Rng& rng, std::size_t max_steps,
                const Dynamics& dynamics = {});

/// Same, with actions drawn uniformly at random.
Episode random_rollout(const GridSpec& env, Rng& rng, std::size_t max_steps, const Dynamics& dynamics = {});

/// Returns-to-go per step: sum_k gamma^k r_{t+k}, or the plain sum when discounted is false.
std::vector<double> returns_to_go(const Episode& episode, double gamma, bool discounted);

struct PolicyGradientConfig {
    double gamma = 0.95;
    double alpha = 0.01;
    bool discounted = true;
};

struct PolicyGradient {
    ParamVector g;                     // ascent direction over all logits
    std::vector<double> baseline_step; // additive baseline change per state
};

/// Episode-level REINFORCE with the per-state baseline:
///   g = sum_t grad log pi(a_t|s_t) * (R_t - B_{s_t}),
///   dB_{s_t} = -alpha * d/dB (B_{s_t} - R_t)^2.
PolicyGradient pg_update(const SoftmaxPolicy& policy, const Episode& episode, const PolicyGradientConfig& config = {});

/// sum_t sum_a pi_teacher(a|s_t) grad log pi(a|s_t): the negative gradient of the
/// summed per-state cross-entropy H(pi_teacher, pi).
ParamVector distill_gradient(const SoftmaxPolicy& policy, const TeacherPolicy& teacher, const Episode& episode);

enum class TrainMethod { Reward, Distill, Add, CosWeighted, CosUnweighted, SignedExperimental };

std::string_view to_string(TrainMethod method);
TrainMethod parse_train_method(std::string_view text);
bool uses_teacher(TrainMethod method);

struct TrainConfig {
    std::size_t steps = 10000;  // budget in visited states
    std::size_t eval_every = 500;
    std::size_t eval_episodes = 100;
    std::size_t eval_max_steps = 1000;
    PolicyGradientConfig pg;
    double ema_decay = 0.0;
    Dynamics dynamics;
};

struct EvalPoint {
    std::size_t step = 0;
    double mean_return = 0.0;
    double mean_cos = 0.0;     // over updates since the previous evaluation
    double mean_weight = 0.0;
};

struct LearningCurve {
    std::vector<EvalPoint> points;
    std::size_t updates = 0;
    /// Smallest <u, g> over all applied updates u and policy-gradient samples g.
    double min_inner = 0.0;
};

double evaluate(const GridSpec& env, const SoftmaxPolicy& policy, Rng& rng, std::size_t episodes,
                std::size_t max_steps, const Dynamics& dynamics = {});

/// Trains a fresh student on `main_env`. `teacher` may be null only for methods that ignore it.
LearningCurve train(const GridSpec& main_env, TrainMethod method, const TeacherPolicy* teacher,
                    const TrainConfig& config, Rng& rng, Rng& eval_rng);

struct ExperimentSpec {
    std::size_t pairs = 50;
    std::vector<double> temperatures{0.0, 0.1, 1.0};
    std::vector<TrainMethod> methods{TrainMethod::Reward, TrainMethod::Distill, TrainMethod::Add,
                                     TrainMethod::CosWeighted, TrainMethod::CosUnweighted};
    std::uint64_t seed = 0;
    bool same_task = false;  // teacher trained on the main task instead of the aux task
    GenerationParams generation;
    QLearningConfig qlearning;
    TrainConfig train;
};

struct TrialResult {
    std::size_t pair = 0;
    TrainMethod method = TrainMethod::Reward;
    double temperature = 0.0;
    LearningCurve curve;
};

struct AggregatePoint {
    TrainMethod method = TrainMethod::Reward;
    double temperature = 0.0;
    std::size_t step = 0;
    double mean_return = 0.0;
    double stderr_return = 0.0;
};

struct ExperimentResult {
    std::vector<TrialResult> trials;
    std::vector<AggregatePoint> aggregate;
    std::vector<GridSpec> layouts;  // aux-task layout of every pair, in pair order

    /// Aggregate curve for one (method, temperature) cell, ordered by step.
    std::vector<AggregatePoint> curve(TrainMethod method, double temperature) const;
};

/// Runs every (pair, method, temperature) trial. Each pair owns stream
/// derive_seed(seed, pair); within it the env, teacher and each trial draw from
/// their own child streams. Methods that ignore the teacher run once per pair
/// and are reported under every temperature.
ExperimentResult run_experiment(const ExperimentSpec& spec);

nlohmann::json to_json(const GridSpec& spec);

}  // namespace cosgate::grid
