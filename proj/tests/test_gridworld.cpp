#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cosgate/gridworld.hpp"

using namespace cosgate;
using namespace cosgate::grid;

namespace {

constexpr Dynamics kExact{0.0, 0.0};

// 5x1 corridor, start at the left end, +5 terminal at the right end.
GridSpec corridor() {
    GridSpec g;
    g.width = 5;
    g.height = 1;
    g.cells.assign(5, Cell{});
    g.start = 0;
    g.at(4, 0) = Cell{false, 5.0, true};
    return g;
}

// 3x3 open room with a wall above the centre and rewards on two sides.
GridSpec room() {
    GridSpec g;
    g.width = 3;
    g.height = 3;
    g.cells.assign(9, Cell{});
    g.start = g.index(1, 1);
    g.at(1, 0).wall = true;
    g.at(0, 1) = Cell{false, -1.0, false};
    g.at(2, 1) = Cell{false, 10.0, true};
    return g;
}

Episode random_episode(const GridSpec& env, Rng& rng, std::size_t max_steps) {
    return random_rollout(env, rng, max_steps);
}

void randomize(SoftmaxPolicy& policy, Rng& rng, double scale) {
    for (auto& l : policy.logits()) l = scale * rng.normal();
    for (auto& b : policy.baseline()) b = rng.normal();
}

double log_prob(const SoftmaxPolicy& p, int s, int a) {
    return std::log(p.probs(s)[static_cast<std::size_t>(a)]);
}

}  // namespace

TEST_CASE("env_step blocking and reward semantics") {
    const GridSpec g = room();
    Rng rng(1);
    const int centre = g.index(1, 1);

    StepResult r = env_step(g, centre, Action::Up, rng, kExact);  // wall
    CHECK(r.next_state == centre);
    CHECK(r.reward == 0.0);
    CHECK_FALSE(r.done);

    r = env_step(g, g.index(1, 2), Action::Down, rng, kExact);  // off-grid
    CHECK(r.next_state == g.index(1, 2));
    CHECK(r.reward == 0.0);

    r = env_step(g, centre, Action::Left, rng, kExact);  // non-terminal penalty
    CHECK(r.next_state == g.index(0, 1));
    CHECK(r.reward == -1.0);
    CHECK_FALSE(r.done);

    r = env_step(g, centre, Action::Right, rng, kExact);
    CHECK(r.next_state == g.index(2, 1));
    CHECK(r.reward == 10.0);
    CHECK(r.done);

    r = env_step(g, centre, Action::Down, rng, kExact);
    CHECK(r.next_state == g.index(1, 2));
    CHECK(r.executed == Action::Down);

    CHECK_THROWS_AS(env_step(g, g.index(2, 1), Action::Left, rng, kExact), std::logic_error);
    CHECK_THROWS_AS(env_step(g, g.index(1, 0), Action::Left, rng, kExact), std::logic_error);
    CHECK_THROWS_AS(env_step(g, 9, Action::Left, rng, kExact), std::out_of_range);
}

TEST_CASE("noise and kill rates") {
    GridSpec g;
    g.width = 15;
    g.height = 15;
    g.cells.assign(225, Cell{});
    const int centre = g.index(7, 7);
    Rng rng(2);
    const int n = 1000000;
    int killed = 0;
    int redirected = 0;
    for (int i = 0; i < n; ++i) {
        const Action a = static_cast<Action>(i % 4);
        const StepResult r = env_step(g, centre, a, rng);
        if (r.killed) {
            ++killed;
            CHECK(r.reward == 0.0);
            CHECK(r.done);
        }
        if (r.executed != a) ++redirected;
    }
    CHECK(std::abs(killed / double(n) - 0.01) <= 0.001);
    CHECK(std::abs(redirected / double(n) - 0.075) <= 0.003);
}

TEST_CASE("sample_env is deterministic and well formed") {
    Rng a(42);
    Rng b(42);
    const GridSpec ga = sample_env(a);
    CHECK(ga == sample_env(b));
    CHECK(ga.width == 15);
    CHECK(ga.height == 15);

    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const GridSpec g = sample_env(rng);
        CHECK_FALSE(g.cell(g.start).wall);
        CHECK_FALSE(g.cell(g.start).terminal);
        int plus10 = 0;
        int plus5 = 0;
        for (const Cell& c : g.cells) {
            if (c.reward == 10.0) {
                ++plus10;
                CHECK(c.terminal);
            }
            if (c.reward == 5.0) {
                ++plus5;
                CHECK(c.terminal);
            }
        }
        CHECK(plus10 == 2);
        CHECK(plus5 == 2);
        const auto reach = reachable_states(g);
        bool positive = false;
        for (int s = 0; s < g.num_states(); ++s) positive = positive || (reach[s] && g.cell(s).reward > 0.0);
        CHECK(positive);
    }
}

TEST_CASE("sample_env gives up when no layout qualifies") {
    GenerationParams p;
    p.wall_prob = 1.0;
    p.max_retries = 3;
    Rng rng(4);
    CHECK_THROWS_AS(sample_env(rng, p), GenerationError);
}

TEST_CASE("derive_main") {
    GridSpec g = corridor();
    CHECK(derive_main(g) == g);

    GridSpec big;
    big.width = 15;
    big.height = 15;
    big.cells.assign(225, Cell{});
    big.at(3, 4) = Cell{false, 10.0, true};
    const GridSpec m = derive_main(big);
    CHECK(m.at(3, 4) == Cell{false, 0.0, false});

    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const GridSpec aux = sample_env(rng);
        const GridSpec main = derive_main(aux);
        CHECK(derive_main(main) == main);
        double pa = 0.0;
        double pm = 0.0;
        int tens = 0;
        for (int s = 0; s < aux.num_states(); ++s) {
            if (aux.cell(s).reward > 0) pa += aux.cell(s).reward;
            if (main.cell(s).reward > 0) pm += main.cell(s).reward;
            if (aux.cell(s).reward == 10.0) {
                ++tens;
            } else {
                CHECK(aux.cell(s) == main.cell(s));
            }
        }
        CHECK(pm == pa - 10.0 * tens);
        const EnvPair pair = make_pair(aux);
        CHECK(pair.main_env == main);
    }
}

TEST_CASE("random episodes have geometric-tailed length") {
    Rng gen(6);
    const GridSpec env = derive_main(sample_env(gen));
    Rng rng(7);
    double total = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const Episode ep = random_episode(env, rng, 100000);
        CHECK(ep.terminated);
        total += static_cast<double>(ep.steps.size());
    }
    CHECK(total / n <= 100.0 + 5.0);
}

TEST_CASE("q-learning on a corridor") {
    const GridSpec g = corridor();
    QLearningConfig cfg;
    cfg.transitions = 20000;
    Rng rng(8);
    const QTable q = q_learning(g, cfg, rng, kExact);
    const TeacherPolicy t = teacher_policy(q, 0.0);
    for (int s = 0; s < 4; ++s) CHECK(t.probs[s][static_cast<std::size_t>(Action::Right)] == 1.0);
    // value iteration oracle: Q(s, Right) = 5 * 0.95^(3 - s)
    for (int s = 0; s < 4; ++s) {
        CHECK(q.values[s][static_cast<std::size_t>(Action::Right)] == doctest::Approx(5.0 * std::pow(0.95, 3 - s)).epsilon(1e-3));
    }
}

TEST_CASE("q-values bounded and greedy teacher beats random") {
    Rng gen(9);
    const GridSpec aux = sample_env(gen);
    Rng rng(10);
    QLearningConfig cfg;
    const QTable q = q_learning(aux, cfg, rng);
    for (const auto& row : q.values) {
        for (double v : row) {
            CHECK(std::isfinite(v));
            CHECK(v <= 10.0 / (1.0 - cfg.gamma * 0.99));
        }
    }
    const TeacherPolicy greedy = teacher_policy(q, 0.0);
    SoftmaxPolicy as_policy(aux.num_states());
    for (int s = 0; s < aux.num_states(); ++s) {
        for (int a = 0; a < kNumActions; ++a) {
            as_policy.logits()[static_cast<std::size_t>(s * kNumActions + a)] = greedy.probs[s][a] == 1.0 ? 50.0 : 0.0;
        }
    }
    const SoftmaxPolicy uniform(aux.num_states());
    Rng e1(11);
    Rng e2(11);
    CHECK(evaluate(aux, as_policy, e1, 100, 1000) >= evaluate(aux, uniform, e2, 100, 1000));
}

TEST_CASE("teacher policy temperatures") {
    QTable q;
    q.values = {{1, 2, 3, 0}, {0, 0, 0, 0}, {2, 5, 5, 1}};
    const TeacherPolicy greedy = teacher_policy(q, 0.0);
    CHECK(greedy.probs[0] == ActionDistribution{0, 0, 1, 0});
    CHECK(greedy.probs[1] == ActionDistribution{1, 0, 0, 0});
    CHECK(greedy.probs[2] == ActionDistribution{0, 1, 0, 0});

    const TeacherPolicy t1 = teacher_policy(q, 1.0);
    for (double p : t1.probs[1]) CHECK(p == 0.25);
    const TeacherPolicy hot = teacher_policy(q, 1e6);
    for (const auto& row : hot.probs) {
        for (double p : row) CHECK(std::abs(p - 0.25) < 1e-3);
    }
    CHECK_THROWS(teacher_policy(q, -1.0));
}

TEST_CASE("softmax policy stays normalized") {
    SoftmaxPolicy p(10);
    Rng rng(12);
    for (double scale : {0.0, 1.0, 30.0, 700.0}) {
        randomize(p, rng, scale);
        for (int s = 0; s < 10; ++s) {
            const auto pr = p.probs(s);
            double z = 0.0;
            for (double e : pr) {
                CHECK(e >= 0.0);
                CHECK(e <= 1.0);
                z += e;
            }
            CHECK(std::abs(z - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("returns to go") {
    Episode ep;
    ep.steps = {{0, 0, 1.0}, {1, 0, 0.0}, {2, 0, 2.0}};
    const auto d = returns_to_go(ep, 0.5, true);
    CHECK(d == std::vector<double>{1.5, 1.0, 2.0});
    const auto u = returns_to_go(ep, 0.5, false);
    CHECK(u == std::vector<double>{3.0, 2.0, 2.0});
}

TEST_CASE("policy gradient examples") {
    SoftmaxPolicy p(3);
    Rng rng(13);
    randomize(p, rng, 1.0);
    Episode one;
    one.steps = {{1, 2, 4.0}};
    const double b = p.baseline()[1];
    const PolicyGradient pg = pg_update(p, one);
    const auto pr = p.probs(1);
    CHECK(pg.g[1 * kNumActions + 2] == doctest::Approx((1.0 - pr[2]) * (4.0 - b)).epsilon(1e-14));
    CHECK(pg.baseline_step[1] == doctest::Approx(-0.01 * 2.0 * (b - 4.0)).epsilon(1e-14));
    for (int a = 0; a < kNumActions; ++a) {
        CHECK(pg.g[0 * kNumActions + a] == 0.0);
        CHECK(pg.g[2 * kNumActions + a] == 0.0);
    }

    // r = B everywhere
    SoftmaxPolicy q(3);
    randomize(q, rng, 1.0);
    q.baseline()[0] = 2.0;
    Episode flat;
    flat.steps = {{0, 1, 2.0}};
    const PolicyGradient zero = pg_update(q, flat);
    for (double e : zero.g.span()) CHECK(e == 0.0);

    CHECK_THROWS(pg_update(q, Episode{}));
}

TEST_CASE("policy gradient matches finite differences of the surrogate") {
    Rng gen(14);
    const GridSpec env = derive_main(sample_env(gen));
    SoftmaxPolicy p(env.num_states());
    Rng rng(15);
    randomize(p, rng, 0.5);
    for (bool discounted : {true, false}) {
        CAPTURE(discounted);
        Episode ep = random_episode(env, rng, 40);
        PolicyGradientConfig cfg;
        cfg.discounted = discounted;
        const PolicyGradient pg = pg_update(p, ep, cfg);
        const auto ret = returns_to_go(ep, cfg.gamma, discounted);
        std::vector<double> adv(ret.size());
        for (std::size_t t = 0; t < ret.size(); ++t) adv[t] = ret[t] - p.baseline()[ep.steps[t].state];

        auto surrogate = [&](const SoftmaxPolicy& pol) {
            double s = 0.0;
            for (std::size_t t = 0; t < ep.steps.size(); ++t) s += log_prob(pol, ep.steps[t].state, ep.steps[t].action) * adv[t];
            return s;
        };
        std::vector<int> visited;
        for (const auto& st : ep.steps) visited.push_back(st.state);
        std::sort(visited.begin(), visited.end());
        visited.erase(std::unique(visited.begin(), visited.end()), visited.end());
        for (int s : visited) {
            for (int a = 0; a < kNumActions; ++a) {
                const std::size_t i = static_cast<std::size_t>(s * kNumActions + a);
                SoftmaxPolicy hi = p;
                SoftmaxPolicy lo = p;
                hi.logits()[i] += 1e-6;
                lo.logits()[i] -= 1e-6;
                const double fd = (surrogate(hi) - surrogate(lo)) / 2e-6;
                CHECK(std::abs(fd - pg.g[i]) <= 1e-5 * std::max(1.0, std::abs(fd)));
            }
        }
    }
}

TEST_CASE("distillation gradient examples and finite differences") {
    SoftmaxPolicy p(2);
    TeacherPolicy t;
    t.probs = {ActionDistribution{0, 0, 1, 0}, p.probs(1)};
    Episode ep;
    ep.steps = {{0, 0, 0.0}, {1, 3, 0.0}};
    const ParamVector v = distill_gradient(p, t, ep);
    CHECK(v[0] == -0.25);
    CHECK(v[1] == -0.25);
    CHECK(v[2] == 0.75);
    CHECK(v[3] == -0.25);
    for (int a = 0; a < kNumActions; ++a) CHECK(v[static_cast<std::size_t>(kNumActions + a)] == 0.0);

    TeacherPolicy small;
    small.probs = {ActionDistribution{0.25, 0.25, 0.25, 0.25}};
    CHECK_THROWS_AS(distill_gradient(p, small, ep), std::out_of_range);

    Rng gen(16);
    const GridSpec env = derive_main(sample_env(gen));
    SoftmaxPolicy s(env.num_states());
    Rng rng(17);
    randomize(s, rng, 0.5);
    QTable q;
    q.values.resize(static_cast<std::size_t>(env.num_states()));
    for (auto& row : q.values) {
        for (auto& e : row) e = rng.normal();
    }
    const TeacherPolicy teacher = teacher_policy(q, 1.0);
    const Episode walk = random_episode(env, rng, 40);
    const ParamVector grad = distill_gradient(s, teacher, walk);
    auto neg_cross_entropy = [&](const SoftmaxPolicy& pol) {
        double h = 0.0;
        for (const auto& st : walk.steps) {
            for (int a = 0; a < kNumActions; ++a) h += teacher.probs[st.state][a] * log_prob(pol, st.state, a);
        }
        return h;
    };
    for (const auto& st : walk.steps) {
        for (int a = 0; a < kNumActions; ++a) {
            const std::size_t i = static_cast<std::size_t>(st.state * kNumActions + a);
            SoftmaxPolicy hi = s;
            SoftmaxPolicy lo = s;
            hi.logits()[i] += 1e-6;
            lo.logits()[i] -= 1e-6;
            const double fd = (neg_cross_entropy(hi) - neg_cross_entropy(lo)) / 2e-6;
            CHECK(std::abs(fd - grad[i]) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("a matched teacher contributes nothing") {
    SoftmaxPolicy p(4);
    Rng rng(18);
    randomize(p, rng, 1.0);
    TeacherPolicy t;
    for (int s = 0; s < 4; ++s) t.probs.push_back(p.probs(s));
    Episode ep;
    ep.steps = {{0, 1, 0.0}, {3, 2, 1.0}, {0, 0, 0.0}};
    const ParamVector v = distill_gradient(p, t, ep);
    for (double e : v.span()) CHECK(std::abs(e) < 1e-15);

    // With V = 0 the Add update is the Reward update.
    const PolicyGradient pg = pg_update(p, ep);
    const std::vector<double> zero(pg.g.size(), 0.0);
    std::vector<double> add(pg.g.size());
    combine_into(pg.g.span(), zero, 1.0, add);
    CHECK(add == pg.g.values());
}

TEST_CASE("reward training ignores the teacher") {
    Rng gen(19);
    const GridSpec env = derive_main(sample_env(gen));
    QTable q;
    q.values.assign(static_cast<std::size_t>(env.num_states()), ActionDistribution{1, 0, 0, 0});
    const TeacherPolicy t = teacher_policy(q, 0.0);
    TrainConfig cfg;
    cfg.steps = 2000;
    Rng r1(20), e1(21), r2(20), e2(21);
    const LearningCurve with = train(env, TrainMethod::Reward, &t, cfg, r1, e1);
    const LearningCurve without = train(env, TrainMethod::Reward, nullptr, cfg, r2, e2);
    REQUIRE(with.points.size() == without.points.size());
    for (std::size_t i = 0; i < with.points.size(); ++i) {
        CHECK(with.points[i].step == without.points[i].step);
        CHECK(with.points[i].mean_return == without.points[i].mean_return);
    }
    CHECK(with.points.back().step == cfg.steps);
    CHECK_THROWS(train(env, TrainMethod::Add, nullptr, cfg, r1, e1));
}

TEST_CASE("gated methods never step against the policy gradient") {
    ExperimentSpec spec;
    spec.pairs = 3;
    spec.temperatures = {0.0, 1.0};
    spec.methods = {TrainMethod::CosWeighted, TrainMethod::CosUnweighted};
    spec.seed = 22;
    spec.train.steps = 3000;
    spec.qlearning.transitions = 10000;
    const ExperimentResult res = run_experiment(spec);
    CHECK(res.trials.size() == 3 * 2 * 2);
    for (const auto& t : res.trials) CHECK(t.curve.min_inner >= -1e-12);
}

TEST_CASE("run_experiment is deterministic and reward is temperature independent") {
    ExperimentSpec spec;
    spec.pairs = 1;
    spec.seed = 23;
    spec.train.steps = 2000;
    spec.qlearning.transitions = 10000;
    const ExperimentResult a = run_experiment(spec);
    const ExperimentResult b = run_experiment(spec);
    REQUIRE(a.aggregate.size() == b.aggregate.size());
    for (std::size_t i = 0; i < a.aggregate.size(); ++i) {
        CHECK(a.aggregate[i].mean_return == b.aggregate[i].mean_return);
        CHECK(a.aggregate[i].stderr_return == b.aggregate[i].stderr_return);
    }
    CHECK(a.layouts == b.layouts);
    CHECK(to_json(a.layouts[0]) == to_json(b.layouts[0]));

    const auto r0 = a.curve(TrainMethod::Reward, 0.0);
    const auto r1 = a.curve(TrainMethod::Reward, 1.0);
    REQUIRE(r0.size() == r1.size());
    for (std::size_t i = 0; i < r0.size(); ++i) CHECK(r0[i].mean_return == r1[i].mean_return);
}

TEST_CASE("method names round trip") {
    for (TrainMethod m : {TrainMethod::Reward, TrainMethod::Distill, TrainMethod::Add, TrainMethod::CosWeighted,
                          TrainMethod::CosUnweighted, TrainMethod::SignedExperimental}) {
        CHECK(parse_train_method(to_string(m)) == m);
    }
    CHECK_THROWS(parse_train_method("bogus"));
}
