#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

#include "cosgate/gate.hpp"
#include "cosgate/rng.hpp"

using namespace cosgate;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

GateConfig with_mode(GateMode mode, double threshold = 0.0) {
    GateConfig c;
    c.mode = mode;
    c.threshold = threshold;
    return c;
}

}  // namespace

TEST_CASE("param vector rejects non-finite values and bad partitions") {
    CHECK_THROWS_AS(ParamVector({1.0, std::numeric_limits<double>::quiet_NaN()}), NonFiniteError);
    CHECK_THROWS_AS(ParamVector({std::numeric_limits<double>::infinity()}), NonFiniteError);
    ParamVector p{1.0, 2.0};
    CHECK_THROWS_AS(p.set(0, std::numeric_limits<double>::infinity()), NonFiniteError);
    CHECK(p[0] == 1.0);

    CHECK_THROWS_AS(Partition({{0, 2}, {3, 4}}, 4), DimensionError);  // gap
    CHECK_THROWS_AS(Partition({{0, 3}, {2, 4}}, 4), DimensionError);  // overlap
    CHECK_THROWS_AS(Partition({{0, 2}}, 4), DimensionError);          // not covering
    const std::vector<std::size_t> sizes{2, 3};
    const auto part = Partition::from_sizes(sizes);
    CHECK(part.total() == 5);
    CHECK(part.layers()[1] == LayerRange{2, 5});
    CHECK_THROWS_AS(ParamVector(std::vector<double>(4, 0.0), part), DimensionError);
}

TEST_CASE("cosine examples") {
    CHECK(cosine(ParamVector{1, 0}, ParamVector{1, 0}) == 1.0);
    // (theta-10)^2 and theta^2 at theta = -20 and theta = 5
    CHECK(cosine(ParamVector{-60}, ParamVector{-40}) == 1.0);
    CHECK(cosine(ParamVector{-10}, ParamVector{10}) == -1.0);
    CHECK(cosine(ParamVector{0, 0}, ParamVector{3, 4}) == 0.0);
    CHECK(cosine(ParamVector{3, 4}, ParamVector{4, 3}) == doctest::Approx(24.0 / 25.0).epsilon(1e-15));
    CHECK_THROWS_AS(cosine(ParamVector{1, 2}, ParamVector{1}), DimensionError);
    const std::vector<double> bad{1.0, std::numeric_limits<double>::quiet_NaN()};
    const std::vector<double> ok{1.0, 1.0};
    CHECK_THROWS_AS(cosine(bad, ok), NonFiniteError);
}

TEST_CASE("cosine handles extreme magnitudes and stays clamped") {
    CHECK(cosine(ParamVector{1e200, 1e200}, ParamVector{1e200, 0}) == doctest::Approx(std::sqrt(0.5)));
    CHECK(cosine(ParamVector{1e-200, 1e-200}, ParamVector{1e-200, 0}) == doctest::Approx(std::sqrt(0.5)));
    Rng rng(7);
    for (int k = 0; k < 200; ++k) {
        auto g = random_vec(rng, 1000);
        auto v = g;
        for (auto& x : v) x *= 1.0 + 1e-15 * rng.normal();
        const double c = cosine(g, v);
        CHECK(c <= 1.0);
        CHECK(c >= -1.0);
    }
}

TEST_CASE("cosine is scale invariant") {
    Rng rng(3);
    for (int k = 0; k < 100; ++k) {
        const auto g = random_vec(rng, 10);
        const auto v = random_vec(rng, 10);
        const double a = std::exp(4.0 * rng.normal());
        const double b = std::exp(4.0 * rng.normal());
        auto ga = g;
        auto vb = v;
        for (auto& x : ga) x *= a;
        for (auto& x : vb) x *= b;
        CHECK(std::abs(cosine(ga, vb) - cosine(g, v)) <= 1e-12);
    }
}

TEST_CASE("per-layer cosine") {
    const std::vector<std::size_t> one{4};
    const std::vector<std::size_t> two{2, 2};
    const std::vector<double> g{1, 0, 0, 1};
    const std::vector<double> v{1, 0, 0, -1};
    CHECK(per_layer_cosine(g, v, Partition::from_sizes(one)) == cosine(g, v));
    CHECK(per_layer_cosine(g, v, Partition::from_sizes(two)) == 0.0);

    Rng rng(11);
    const std::vector<std::size_t> three{3, 3};
    for (int k = 0; k < 20; ++k) {
        const auto a = random_vec(rng, 6);
        const auto b = random_vec(rng, 6);
        const std::vector<double> a1(a.begin(), a.begin() + 3), a2(a.begin() + 3, a.end());
        const std::vector<double> b1(b.begin(), b.begin() + 3), b2(b.begin() + 3, b.end());
        const double expected = 0.5 * (cosine(a1, b1) + cosine(a2, b2));
        CHECK(per_layer_cosine(a, b, Partition::from_sizes(three)) == doctest::Approx(expected).epsilon(1e-15));
    }
    CHECK_THROWS_AS(per_layer_cosine(ParamVector{1, 2}, ParamVector{1, 2}), DimensionError);
    const std::vector<std::size_t> bad{3};
    CHECK_THROWS_AS(per_layer_cosine(g, v, Partition::from_sizes(bad)), DimensionError);
}

TEST_CASE("smoothing") {
    CosineTracker t;
    t = smooth(t, 0.5, 0.999);
    CHECK(t.initialized);
    CHECK(t.smoothed == 0.5);

    CosineTracker z{0.0, true};
    CHECK(smooth(z, 1.0, 0.999).smoothed == doctest::Approx(0.001).epsilon(1e-12));

    CosineTracker s{0.3, true};
    CHECK(smooth(s, -0.7, 0.0).smoothed == -0.7);
    CHECK_THROWS_AS(smooth(s, 1.5, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(smooth(s, 0.5, 1.0), std::invalid_argument);

    Rng rng(5);
    CosineTracker r;
    for (int k = 0; k < 10000; ++k) {
        r = smooth(r, rng.uniform(-1.0, 1.0) > 0 ? 1.0 : -1.0, rng.uniform(0.0, 0.9999));
        REQUIRE(r.smoothed <= 1.0);
        REQUIRE(r.smoothed >= -1.0);
    }
}

TEST_CASE("gate weights") {
    CHECK(gate_weight(with_mode(GateMode::Weighted), -0.3) == 0.0);
    CHECK(gate_weight(with_mode(GateMode::Weighted), 0.4) == 0.4);
    CHECK(gate_weight(with_mode(GateMode::Unweighted, 0.02), 0.019) == 0.0);
    CHECK(gate_weight(with_mode(GateMode::Unweighted, 0.02), 0.02) == 1.0);
    CHECK(gate_weight(with_mode(GateMode::Unweighted), 0.0) == 1.0);
    CHECK(gate_weight(with_mode(GateMode::Unweighted), -1e-300) == 0.0);
    GateConfig on = with_mode(GateMode::AlwaysOn);
    on.lambda = 0.25;
    CHECK(gate_weight(on, -1.0) == 0.25);
    CHECK(gate_weight(with_mode(GateMode::Off), 1.0) == 0.0);
    // thresholded weighted: zero below the threshold, max(0, cos) above
    CHECK(gate_weight(with_mode(GateMode::Weighted, 0.5), 0.4) == 0.0);
    CHECK(gate_weight(with_mode(GateMode::Weighted, 0.5), 0.6) == 0.6);

    GateConfig bad;
    bad.ema_decay = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = GateConfig{};
    bad.lambda = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK(parse_gate_mode("always_on") == GateMode::AlwaysOn);
    CHECK(to_string(GateMode::Weighted) == "weighted");
    CHECK_THROWS_AS(parse_gate_mode("sometimes"), std::invalid_argument);
}

TEST_CASE("combine and step") {
    const ParamVector g{-0.0, 1.5, -2.0};
    const ParamVector v{3.0, -1.0, 7.0};
    const ParamVector closed = combine(g, v, 0.0);
    CHECK(closed == g);
    CHECK(std::signbit(closed[0]));
    CHECK(combine(ParamVector{1, 0}, ParamVector{0, 1}, 1.0) == ParamVector{1, 1});
    CHECK(combine(ParamVector{-60}, ParamVector{-40}, 1.0) == ParamVector{-100});
    CHECK_THROWS_AS(combine(g, v, -0.5), std::invalid_argument);
    CHECK_THROWS_AS(combine(g, ParamVector{1.0}, 1.0), DimensionError);

    CHECK(step(ParamVector{1, 2}, ParamVector{0, 0}, 0.01) == ParamVector{1, 2});
    CHECK(step(ParamVector{0}, ParamVector{-100}, 0.01) == ParamVector{1.0});
    CHECK_THROWS_AS(step(ParamVector{1e308}, ParamVector{-1e308}, 10.0), NonFiniteError);
    CHECK_THROWS_AS(step(ParamVector{1}, ParamVector{1}, 0.0), std::invalid_argument);

    // 600 steps on L1 from (2, 2): the iterate contracts by 0.98 per step
    ParamVector x{2, 2};
    for (int k = 0; k < 600; ++k) x = step(x, ParamVector{2 * x[0], 2 * x[1]}, 0.01);
    CHECK(x[0] * x[0] + x[1] * x[1] < 0.1);
}

TEST_CASE("descent invariant over random pairs") {
    Rng rng(2024);
    for (std::size_t d : {1u, 2u, 10u, 1000u}) {
        for (GateMode mode : {GateMode::Weighted, GateMode::Unweighted}) {
            for (int k = 0; k < 2000; ++k) {
                const auto g = random_vec(rng, d);
                const auto v = random_vec(rng, d);
                const double w = gate_weight(with_mode(mode), cosine(g, v));
                std::vector<double> u(d);
                combine_into(g, v, w, u);
                REQUIRE(dot(u, g) >= -1e-12);
                REQUIRE(dot(u, g) > 0.0);
            }
        }
    }
}

TEST_CASE("gate tracker folds cosines") {
    GateConfig c;
    c.mode = GateMode::Unweighted;
    c.ema_decay = 0.5;
    Gate gate(c);
    const std::vector<double> g{1, 0};
    const auto d1 = gate.decide(g, std::vector<double>{1, 0});
    CHECK(d1.raw_cos == 1.0);
    CHECK(d1.smoothed_cos == 1.0);
    CHECK(d1.weight == 1.0);
    const auto d2 = gate.decide(g, std::vector<double>{-1, 0});
    CHECK(d2.raw_cos == -1.0);
    CHECK(d2.smoothed_cos == 0.0);
    CHECK(d2.weight == 1.0);  // 0 >= 0
    const auto d3 = gate.decide(g, std::vector<double>{-1, 0});
    CHECK(d3.smoothed_cos == -0.5);
    CHECK(d3.weight == 0.0);

    GateConfig pl;
    pl.per_layer = true;
    Gate needs_partition(pl);
    CHECK_THROWS(needs_partition.decide(g, g));
}

TEST_CASE("partitioned step") {
    TaskParams p{ParamVector{1, 1}, ParamVector{0.5}, ParamVector{-0.5}};
    TaskGrads gr{ParamVector{1, 0}, ParamVector{-1, 0.1}, ParamVector{2}, ParamVector{4}};

    SUBCASE("closed gate equals main-only step") {
        Gate gate;
        const auto r = partitioned_step(p, gr, gate, 0.1);
        CHECK(r.decision.weight == 0.0);
        CHECK(r.params.shared == step(p.shared, gr.shared_main, 0.1));
    }
    SUBCASE("open gate equals the multi-task step") {
        gr.shared_aux = ParamVector{1, 0.5};
        Gate gate;
        const auto r = partitioned_step(p, gr, gate, 0.1);
        CHECK(r.decision.weight == 1.0);
        CHECK(r.params.shared == step(p.shared, combine(gr.shared_main, gr.shared_aux, 1.0), 0.1));
        CHECK(r.params.main_head == step(p.main_head, gr.main_head, 0.1));
    }
    SUBCASE("aux head ignores the main gradient") {
        Gate g1, g2;
        const auto a = partitioned_step(p, gr, g1, 0.1);
        TaskGrads other = gr;
        other.shared_main = ParamVector{-3, 7};
        other.main_head = ParamVector{-9};
        const auto b = partitioned_step(p, other, g2, 0.1);
        CHECK(a.params.aux_head == b.params.aux_head);
    }
    SUBCASE("shape mismatch") {
        Gate gate;
        gr.main_head = ParamVector{1, 2};
        CHECK_THROWS_AS(partitioned_step(p, gr, gate, 0.1), DimensionError);
    }
}

TEST_CASE("seed derivation") {
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
    CHECK(derive_seed(5, 9) == derive_seed(5, 9));
    Rng a = Rng::stream(42, 3), b = Rng::stream(42, 3);
    for (int k = 0; k < 10; ++k) CHECK(a.next_u64() == b.next_u64());
    Rng r(1);
    double mean = 0.0, sq = 0.0;
    const int n = 200000;
    for (int k = 0; k < n; ++k) {
        const double x = r.normal();
        mean += x;
        sq += x * x;
    }
    mean /= n;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(sq / n - 1.0) < 0.02);
    for (int k = 0; k < 1000; ++k) CHECK(r.below(7) < 7);
}
