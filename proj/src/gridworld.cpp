#include "cosgate/gridworld.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>

namespace cosgate::grid {

namespace {

constexpr std::array<int, kNumActions> kDx{0, 0, -1, 1};
constexpr std::array<int, kNumActions> kDy{-1, 1, 0, 0};

std::vector<int> free_cells(const GridSpec& spec) {
    std::vector<int> out;
    for (int s = 0; s < spec.num_states(); ++s) {
        const Cell& c = spec.cell(s);
        if (!c.wall && c.reward == 0.0 && !c.terminal) out.push_back(s);
    }
    return out;
}

int take_random(std::vector<int>& pool, Rng& rng) {
    const auto i = static_cast<std::size_t>(rng.below(pool.size()));
    const int s = pool[i];
    pool[i] = pool.back();
    pool.pop_back();
    return s;
}

int move(const GridSpec& env, int state, int action) {
    const int x = state % env.width;
    const int y = state / env.width;
    const int nx = x + kDx[static_cast<std::size_t>(action)];
    const int ny = y + kDy[static_cast<std::size_t>(action)];
    if (nx < 0 || ny < 0 || nx >= env.width || ny >= env.height) return state;
    if (env.at(nx, ny).wall) return state;
    return env.index(nx, ny);
}

GridSpec try_sample(Rng& rng, const GenerationParams& p) {
    GridSpec spec;
    spec.width = p.size;
    spec.height = p.size;
    spec.cells.assign(static_cast<std::size_t>(p.size * p.size), Cell{});
    for (auto& c : spec.cells) c.wall = rng.bernoulli(p.wall_prob);

    std::vector<int> pool = free_cells(spec);
    const int needed = p.plus5 + p.plus10 + p.negative_terminal + p.negative_nonterminal + 1;
    if (static_cast<int>(pool.size()) < needed) return spec;  // rejected by the reachability check

    auto place = [&](int count, double reward, bool terminal) {
        for (int i = 0; i < count; ++i) {
            Cell& c = spec.cells[static_cast<std::size_t>(take_random(pool, rng))];
            c.reward = reward;
            c.terminal = terminal;
        }
    };
    place(p.plus5, 5.0, true);
    place(p.plus10, 10.0, true);
    place(p.negative_terminal, p.negative_terminal_reward, true);
    place(p.negative_nonterminal, p.negative_nonterminal_reward, false);
    spec.start = take_random(pool, rng);
    return spec;
}

bool acceptable(const GridSpec& spec, const GenerationParams& params) {
    if (spec.cells.empty()) return false;
    const Cell& start = spec.cell(spec.start);
    if (start.wall || start.terminal) return false;
    const auto reach = reachable_states(spec);
    bool small = false;
    bool large = false;
    for (int s = 0; s < spec.num_states(); ++s) {
        const Cell& c = spec.cell(s);
        if (!reach[static_cast<std::size_t>(s)] || c.reward <= 0.0) continue;
        (c.reward >= 10.0 ? large : small) = true;
    }
    return small && (large || !params.require_plus10_reachable);
}

}  // namespace

GridSpec sample_env(Rng& rng, const GenerationParams& params) {
    if (params.size < 2) throw std::invalid_argument("sample_env: grid size must be at least 2");
    for (int attempt = 0; attempt < params.max_retries; ++attempt) {
        const std::uint64_t seed = rng.next_u64();
        Rng local(seed);
        GridSpec spec = try_sample(local, params);
        spec.seed = seed;
        if (acceptable(spec, params)) return spec;
    }
    throw GenerationError("sample_env: no layout with a reachable positive reward after " +
                          std::to_string(params.max_retries) + " attempts");
}

GridSpec derive_main(const GridSpec& aux) {
    GridSpec main = aux;
    for (auto& c : main.cells) {
        if (c.reward == 10.0 && c.terminal) {
            c.reward = 0.0;
            c.terminal = false;
        }
    }
    return main;
}

std::vector<bool> reachable_states(const GridSpec& spec) {
    std::vector<bool> seen(static_cast<std::size_t>(spec.num_states()), false);
    std::deque<int> frontier{spec.start};
    seen[static_cast<std::size_t>(spec.start)] = true;
    while (!frontier.empty()) {
        const int s = frontier.front();
        frontier.pop_front();
        if (spec.cell(s).terminal) continue;
        for (int a = 0; a < kNumActions; ++a) {
            const int n = move(spec, s, a);
            if (!seen[static_cast<std::size_t>(n)]) {
                seen[static_cast<std::size_t>(n)] = true;
                frontier.push_back(n);
            }
        }
    }
    return seen;
}

EnvPair make_pair(const GridSpec& aux) { return {aux, derive_main(aux)}; }

StepResult env_step(const GridSpec& env, int state, Action action, Rng& rng, const Dynamics& dynamics) {
    if (state < 0 || state >= env.num_states()) throw std::out_of_range("env_step: state out of range");
    const Cell& here = env.cell(state);
    if (here.terminal) throw std::logic_error("env_step: stepping from a terminal state");
    if (here.wall) throw std::logic_error("env_step: agent inside a wall");

    StepResult r;
    int executed = static_cast<int>(action);
    if (rng.bernoulli(dynamics.noise)) executed = static_cast<int>(rng.below(kNumActions));
    r.executed = static_cast<Action>(executed);
    r.next_state = move(env, state, executed);
    if (r.next_state != state) {
        const Cell& landed = env.cell(r.next_state);
        r.reward = landed.reward;
        r.done = landed.terminal;
    }
    if (rng.bernoulli(dynamics.kill)) {
        r.killed = true;
        r.reward = 0.0;
        r.done = true;
    }
    return r;
}

QTable q_learning(const GridSpec& env, const QLearningConfig& config, Rng& rng, const Dynamics& dynamics) {
    QTable q;
    q.values.assign(static_cast<std::size_t>(env.num_states()), ActionDistribution{0.0, 0.0, 0.0, 0.0});
    int state = env.start;
    for (std::size_t t = 0; t < config.transitions; ++t) {
        const int a = static_cast<int>(rng.below(kNumActions));
        const StepResult r = env_step(env, state, static_cast<Action>(a), rng, dynamics);
        double target = r.reward;
        if (!r.done) {
            const auto& next = q.values[static_cast<std::size_t>(r.next_state)];
            target += config.gamma * *std::max_element(next.begin(), next.end());
        }
        double& qsa = q.values[static_cast<std::size_t>(state)][static_cast<std::size_t>(a)];
        qsa += config.learning_rate * (target - qsa);
        state = r.done ? env.start : r.next_state;
    }
    return q;
}

TeacherPolicy teacher_policy(const QTable& q, double temperature) {
    if (!(temperature >= 0.0)) throw std::invalid_argument("teacher_policy: temperature must be >= 0");
    TeacherPolicy t;
    t.probs.resize(q.values.size());
    for (std::size_t s = 0; s < q.values.size(); ++s) {
        const auto& row = q.values[s];
        auto& p = t.probs[s];
        if (temperature == 0.0) {
            const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
            p.fill(0.0);
            p[best] = 1.0;
            continue;
        }
        const double m = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (int a = 0; a < kNumActions; ++a) {
            p[static_cast<std::size_t>(a)] = std::exp((row[static_cast<std::size_t>(a)] - m) / temperature);
            z += p[static_cast<std::size_t>(a)];
        }
        for (auto& e : p) e /= z;
    }
    return t;
}

SoftmaxPolicy::SoftmaxPolicy(int num_states)
    : num_states_(num_states),
      logits_(static_cast<std::size_t>(num_states * kNumActions), 0.0),
      baseline_(static_cast<std::size_t>(num_states), 0.0) {}

ActionDistribution SoftmaxPolicy::probs(int state) const {
    ActionDistribution p{};
    const double* l = logits_.data() + static_cast<std::ptrdiff_t>(state * kNumActions);
    const double m = *std::max_element(l, l + kNumActions);
    double z = 0.0;
    for (std::size_t a = 0; a < kNumActions; ++a) {
        p[a] = std::exp(l[a] - m);
        z += p[a];
    }
    for (auto& e : p) e /= z;
    return p;
}

namespace {

int sample_action(const ActionDistribution& p, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int a = 0; a < kNumActions - 1; ++a) {
        acc += p[static_cast<std::size_t>(a)];
        if (u < acc) return a;
    }
    return kNumActions - 1;
}

template <typename Chooser>
Episode run_episode(const GridSpec& env, Chooser&& choose, Rng& rng, std::size_t max_steps,
                    const Dynamics& dynamics) {
    Episode ep;
    int state = env.start;
    while (ep.steps.size() < max_steps) {
        const int a = choose(state);
        const StepResult r = env_step(env, state, static_cast<Action>(a), rng, dynamics);
        ep.steps.push_back({state, a, r.reward});
        if (r.done) {
            ep.terminated = true;
            break;
        }
        state = r.next_state;
    }
    return ep;
}

}  // namespace

Episode rollout(const GridSpec& env, const SoftmaxPolicy& policy, Rng& rng, std::size_t max_steps,
                const Dynamics& dynamics) {
    return run_episode(env, [&](int s) { return sample_action(policy.probs(s), rng); }, rng, max_steps, dynamics);
}

Episode random_rollout(const GridSpec& env, Rng& rng, std::size_t max_steps, const Dynamics& dynamics) {
    return run_episode(env, [&](int) { return static_cast<int>(rng.below(kNumActions)); }, rng, max_steps, dynamics);
}

std::vector<double> returns_to_go(const Episode& episode, double gamma, bool discounted) {
    std::vector<double> out(episode.steps.size());
    const double g = discounted ? gamma : 1.0;
    double acc = 0.0;
    for (std::size_t i = episode.steps.size(); i-- > 0;) {
        acc = episode.steps[i].reward + g * acc;
        out[i] = acc;
    }
    return out;
}

PolicyGradient pg_update(const SoftmaxPolicy& policy, const Episode& episode, const PolicyGradientConfig& config) {
    if (episode.steps.empty()) throw std::invalid_argument("pg_update: empty episode");
    const std::size_t n_logits = static_cast<std::size_t>(policy.num_states() * kNumActions);
    std::vector<double> g(n_logits, 0.0);
    PolicyGradient out;
    out.baseline_step.assign(static_cast<std::size_t>(policy.num_states()), 0.0);

    const std::vector<double> ret = returns_to_go(episode, config.gamma, config.discounted);
    const auto baseline = policy.baseline();
    for (std::size_t t = 0; t < episode.steps.size(); ++t) {
        const auto& st = episode.steps[t];
        const double b = baseline[static_cast<std::size_t>(st.state)];
        const double adv = ret[t] - b;
        const ActionDistribution p = policy.probs(st.state);
        double* row = g.data() + static_cast<std::ptrdiff_t>(st.state * kNumActions);
        for (int a = 0; a < kNumActions; ++a) {
            const double indicator = a == st.action ? 1.0 : 0.0;
            row[a] += (indicator - p[static_cast<std::size_t>(a)]) * adv;
        }
        out.baseline_step[static_cast<std::size_t>(st.state)] += -config.alpha * 2.0 * (b - ret[t]);
    }
    out.g = ParamVector(std::move(g));
    return out;
}

ParamVector distill_gradient(const SoftmaxPolicy& policy, const TeacherPolicy& teacher, const Episode& episode) {
    const std::size_t n_logits = static_cast<std::size_t>(policy.num_states() * kNumActions);
    std::vector<double> v(n_logits, 0.0);
    for (const auto& st : episode.steps) {
        if (st.state < 0 || st.state >= teacher.num_states()) {
            throw std::out_of_range("distill_gradient: teacher has no distribution for state " +
                                    std::to_string(st.state));
        }
        const ActionDistribution p = policy.probs(st.state);
        const ActionDistribution& q = teacher.probs[static_cast<std::size_t>(st.state)];
        double* row = v.data() + static_cast<std::ptrdiff_t>(st.state * kNumActions);
        for (std::size_t a = 0; a < kNumActions; ++a) row[a] += q[a] - p[a];
    }
    return ParamVector(std::move(v));
}

std::string_view to_string(TrainMethod method) {
    switch (method) {
        case TrainMethod::Reward: return "reward";
        case TrainMethod::Distill: return "distill";
        case TrainMethod::Add: return "add";
        case TrainMethod::CosWeighted: return "cos_weighted";
        case TrainMethod::CosUnweighted: return "cos_unweighted";
        case TrainMethod::SignedExperimental: return "signed_experimental";
    }
    return "unknown";
}

TrainMethod parse_train_method(std::string_view text) {
    for (auto m : {TrainMethod::Reward, TrainMethod::Distill, TrainMethod::Add, TrainMethod::CosWeighted,
                   TrainMethod::CosUnweighted, TrainMethod::SignedExperimental}) {
        if (text == to_string(m)) return m;
    }
    throw std::invalid_argument("unknown training method '" + std::string(text) + "'");
}

bool uses_teacher(TrainMethod method) { return method != TrainMethod::Reward; }

double evaluate(const GridSpec& env, const SoftmaxPolicy& policy, Rng& rng, std::size_t episodes,
                std::size_t max_steps, const Dynamics& dynamics) {
    if (episodes == 0) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < episodes; ++i) {
        const Episode ep = rollout(env, policy, rng, max_steps, dynamics);
        for (const auto& st : ep.steps) total += st.reward;
    }
    return total / static_cast<double>(episodes);
}

namespace {

GateConfig gate_for(TrainMethod method, double ema_decay) {
    GateConfig cfg;
    cfg.ema_decay = ema_decay;
    switch (method) {
        case TrainMethod::Reward: cfg.mode = GateMode::Off; break;
        case TrainMethod::Add: cfg.mode = GateMode::AlwaysOn; cfg.lambda = 1.0; break;
        case TrainMethod::CosWeighted: cfg.mode = GateMode::Weighted; break;
        case TrainMethod::CosUnweighted: cfg.mode = GateMode::Unweighted; break;
        case TrainMethod::Distill:
        case TrainMethod::SignedExperimental: cfg.mode = GateMode::Off; break;
    }
    return cfg;
}

}  // namespace

LearningCurve train(const GridSpec& main_env, TrainMethod method, const TeacherPolicy* teacher,
                    const TrainConfig& config, Rng& rng, Rng& eval_rng) {
    if (uses_teacher(method) && teacher == nullptr) {
        throw std::invalid_argument("train: method '" + std::string(to_string(method)) + "' needs a teacher");
    }
    if (config.eval_every == 0) throw std::invalid_argument("train: eval_every must be positive");

    SoftmaxPolicy policy(main_env.num_states());
    Gate gate(gate_for(method, config.ema_decay));
    const std::size_t n_logits = policy.logits().size();
    std::vector<double> update(n_logits);

    LearningCurve curve;
    curve.min_inner = std::numeric_limits<double>::infinity();
    double cos_sum = 0.0;
    double weight_sum = 0.0;
    std::size_t window = 0;

    auto record = [&](std::size_t step) {
        EvalPoint pt;
        pt.step = step;
        pt.mean_return = evaluate(main_env, policy, eval_rng, config.eval_episodes, config.eval_max_steps,
                                  config.dynamics);
        if (window > 0) {
            pt.mean_cos = cos_sum / static_cast<double>(window);
            pt.mean_weight = weight_sum / static_cast<double>(window);
        }
        cos_sum = weight_sum = 0.0;
        window = 0;
        curve.points.push_back(pt);
    };

    record(0);
    std::size_t used = 0;
    std::size_t next_eval = config.eval_every;
    while (used < config.steps) {
        const Episode ep = rollout(main_env, policy, rng, config.steps - used, config.dynamics);
        used += ep.steps.size();

        const PolicyGradient pg = pg_update(policy, ep, config.pg);
        const auto g = pg.g.span();
        GateDecision decision;
        if (teacher != nullptr) {
            const ParamVector v = distill_gradient(policy, *teacher, ep);
            decision = gate.decide(g, v.span());
            switch (method) {
                case TrainMethod::Distill:
                    std::copy(v.span().begin(), v.span().end(), update.begin());
                    decision.weight = 1.0;
                    break;
                case TrainMethod::SignedExperimental: {
                    const double sign = decision.raw_cos > 0.0 ? 1.0 : (decision.raw_cos < 0.0 ? -1.0 : 0.0);
                    decision.weight = 2.0 * sign - 1.0;
                    for (std::size_t i = 0; i < n_logits; ++i) update[i] = g[i] + decision.weight * v[i];
                    break;
                }
                default:
                    combine_into(g, v.span(), decision.weight, update);
                    break;
            }
        } else {
            std::copy(g.begin(), g.end(), update.begin());
        }

        curve.min_inner = std::min(curve.min_inner, dot(update, g));
        cos_sum += decision.raw_cos;
        weight_sum += decision.weight;
        ++window;
        ++curve.updates;

        auto logits = policy.logits();
        for (std::size_t i = 0; i < n_logits; ++i) logits[i] += config.pg.alpha * update[i];
        auto baseline = policy.baseline();
        for (std::size_t s = 0; s < baseline.size(); ++s) baseline[s] += pg.baseline_step[s];

        while (used >= next_eval && next_eval <= config.steps) {
            record(next_eval);
            next_eval += config.eval_every;
        }
    }
    if (curve.points.back().step != config.steps) record(config.steps);
    return curve;
}

std::vector<AggregatePoint> ExperimentResult::curve(TrainMethod method, double temperature) const {
    std::vector<AggregatePoint> out;
    for (const auto& p : aggregate) {
        if (p.method == method && p.temperature == temperature) out.push_back(p);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
    return out;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
    if (spec.pairs == 0) throw std::invalid_argument("run_experiment: need at least one environment pair");
    if (spec.temperatures.empty() || spec.methods.empty()) {
        throw std::invalid_argument("run_experiment: temperatures and methods must be non-empty");
    }
    ExperimentResult result;
    for (std::size_t pair = 0; pair < spec.pairs; ++pair) {
        const std::uint64_t pair_seed = derive_seed(spec.seed, pair);
        Rng env_rng = Rng::stream(pair_seed, 0);
        const EnvPair envs = make_pair(sample_env(env_rng, spec.generation));
        result.layouts.push_back(envs.aux_env);
        Rng q_rng = Rng::stream(pair_seed, 1);
        const QTable q = q_learning(spec.same_task ? envs.main_env : envs.aux_env, spec.qlearning, q_rng,
                                    spec.train.dynamics);

        for (std::size_t m = 0; m < spec.methods.size(); ++m) {
            const TrainMethod method = spec.methods[m];
            const auto method_id = static_cast<std::uint64_t>(method);
            if (!uses_teacher(method)) {
                Rng rng = Rng::stream(pair_seed, 100 + method_id);
                Rng eval_rng = Rng::stream(pair_seed, 200 + method_id);
                const LearningCurve curve = train(envs.main_env, method, nullptr, spec.train, rng, eval_rng);
                for (double t : spec.temperatures) result.trials.push_back({pair, method, t, curve});
                continue;
            }
            for (std::size_t j = 0; j < spec.temperatures.size(); ++j) {
                const TeacherPolicy teacher = teacher_policy(q, spec.temperatures[j]);
                Rng rng = Rng::stream(pair_seed, 1000 + method_id * 64 + j);
                Rng eval_rng = Rng::stream(pair_seed, 2000 + method_id * 64 + j);
                result.trials.push_back(
                    {pair, method, spec.temperatures[j], train(envs.main_env, method, &teacher, spec.train, rng, eval_rng)});
            }
        }
    }

    // Mean and standard error over pairs at every evaluation step.
    std::map<std::tuple<int, double, std::size_t>, std::vector<double>> cells;
    for (const auto& trial : result.trials) {
        for (const auto& pt : trial.curve.points) {
            cells[{static_cast<int>(trial.method), trial.temperature, pt.step}].push_back(pt.mean_return);
        }
    }
    for (const auto& [key, values] : cells) {
        const auto& [method, temperature, step] = key;
        const double n = static_cast<double>(values.size());
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        const double se = values.size() > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
        result.aggregate.push_back({static_cast<TrainMethod>(method), temperature, step, mean, se});
    }
    return result;
}

nlohmann::json to_json(const GridSpec& spec) {
    nlohmann::json rows = nlohmann::json::array();
    nlohmann::json rewards = nlohmann::json::array();
    for (int y = 0; y < spec.height; ++y) {
        std::string row;
        for (int x = 0; x < spec.width; ++x) {
            const Cell& c = spec.at(x, y);
            char ch = '.';
            if (c.wall) ch = '#';
            else if (c.reward > 0.0) ch = c.reward >= 10.0 ? 'T' : 'F';
            else if (c.reward < 0.0) ch = c.terminal ? 'X' : 'n';
            else if (c.terminal) ch = 'o';
            if (spec.index(x, y) == spec.start) ch = 'S';
            row.push_back(ch);
            if (c.reward != 0.0 || c.terminal) {
                rewards.push_back({{"x", x}, {"y", y}, {"reward", c.reward}, {"terminal", c.terminal}});
            }
        }
        rows.push_back(row);
    }
    return {{"width", spec.width},
            {"height", spec.height},
            {"seed", spec.seed},
            {"start", {{"x", spec.start % spec.width}, {"y", spec.start / spec.width}}},
            {"legend", "# wall, S start, F +5, T +10, X negative terminal, n negative non-terminal, . empty"},
            {"rows", rows},
            {"rewards", rewards}};
}

}  // namespace cosgate::grid
