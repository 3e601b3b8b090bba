#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "cosgate/landscapes.hpp"

using namespace cosgate;
using namespace cosgate::landscape;

namespace {

GateConfig with_mode(GateMode mode) {
    GateConfig c;
    c.mode = mode;
    return c;
}

Point central_difference(const ScalarField& f, const Point& x, double h) {
    Point g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        Point lo = x;
        Point hi = x;
        lo[i] -= h;
        hi[i] += h;
        g[i] = (f.eval(hi) - f.eval(lo)) / (2.0 * h);
    }
    return g;
}

double dot2(const Point& a, const Point& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("builtin values") {
    CHECK(builtin_scalar("L1").eval(Point{1, 1}) == 2.0);
    CHECK(builtin_scalar("L3").eval(Point{1, 1}) == 0.0);
    CHECK(builtin_scalar("L4").eval(Point{2, 0.5}) == 0.0);
    CHECK(builtin_scalar("quad1d_main").eval(Point{5}) == 25.0);
    CHECK(builtin_scalar("quad1d_aux").eval(Point{5}) == 25.0);
    CHECK(builtin_scalar("L2").eval(Point{1e-300, 0}) == doctest::Approx(0.0));
    CHECK(builtin_scalar("L2").eval(Point{-1, 1}) == 2.0);

    const Point g2 = builtin_scalar("L2").grad(Point{1, 0});
    CHECK(g2[0] == doctest::Approx(4.0 * std::exp(-2.0)).epsilon(1e-14));
    CHECK(g2[1] == 0.0);

    const Point v = builtin_vector("V").eval(Point{1, 0});
    CHECK(v[0] == -2.0);
    CHECK(v[1] == 1.0);

    CHECK(builtin_scalar("prop3_main", 2.0).eval(Point{1.5, 3}) == 3.0);
    CHECK(builtin_scalar("prop3_aux", 2.0).eval(Point{1.5, 0.5}) == 3.0);
    CHECK(builtin_scalar("prop3_aux", 2.0).eval(Point{0.5, 0.5}) == 0.0);

    CHECK_THROWS(builtin_field("L9"));
    CHECK_THROWS(builtin_scalar("V"));
    CHECK_THROWS(builtin_vector("L1"));
}

TEST_CASE("builtin gradients match central differences") {
    Rng rng(7);
    for (const char* name : {"quad1d_main", "quad1d_aux", "L1", "L2", "L3", "L4", "prop3_main", "prop3_aux"}) {
        CAPTURE(name);
        const ScalarField f = builtin_scalar(name, 1.5);
        int checked = 0;
        while (checked < 100) {
            Point x(f.arity);
            for (auto& e : x) e = rng.uniform(-3.0, 3.0);
            if (!f.smooth_at(x)) continue;
            // keep the stencil on one side of any non-smooth locus
            bool stencil_smooth = true;
            for (std::size_t i = 0; i < x.size() && stencil_smooth; ++i) {
                Point lo = x;
                Point hi = x;
                lo[i] -= 1e-6;
                hi[i] += 1e-6;
                stencil_smooth = f.smooth_at(lo) && f.smooth_at(hi);
            }
            if (!stencil_smooth) continue;
            const Point a = f.grad(x);
            const Point n = central_difference(f, x, 1e-6);
            REQUIRE(a.size() == x.size());
            for (std::size_t i = 0; i < x.size(); ++i) {
                CHECK(std::abs(a[i] - n[i]) <= 1e-5 * std::max(1.0, std::abs(a[i])));
            }
            ++checked;
        }
    }
}

TEST_CASE("V is singular only at the origin") {
    const VectorField v = builtin_vector("V");
    REQUIRE(v.singularities.size() == 1);
    CHECK(v.singularities[0] == Point{0, 0});
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const Point x{rng.uniform(-3, 3), rng.uniform(-3, 3)};
        const Point y = v.eval(x);
        CHECK(std::isfinite(y[0]));
        CHECK(std::isfinite(y[1]));
    }
}

TEST_CASE("merged field examples") {
    const ScalarField l1 = builtin_scalar("L1");
    const auto same = merged_field(l1, l1, with_mode(GateMode::Weighted));
    Rng rng(11);
    for (int i = 0; i < 100; ++i) {
        const Point x{rng.uniform(-3, 3), rng.uniform(-3, 3)};
        const Point g = l1.grad(x);
        const Point m = same(x);
        CHECK(m[0] == 2.0 * g[0]);
        CHECK(m[1] == 2.0 * g[1]);
    }

    const auto blocked =
        merged_field(builtin_scalar("quad1d_main"), builtin_field("quad1d_aux"), with_mode(GateMode::Weighted));
    const GatedSample s = blocked.sample(Point{5});
    CHECK(s.decision.weight == 0.0);
    CHECK(s.update == Point{-10});

    const ScalarField l3 = builtin_scalar("L3");
    const auto pair = merged_field(l1, l3, with_mode(GateMode::Weighted));
    const Point x{-1, -1};
    const Point g1 = l1.grad(x);
    const Point g3 = l3.grad(x);
    CHECK(g1 == Point{-2, -2});
    CHECK(g3 == Point{-4, -4});
    const GatedSample p = pair.sample(x);
    CHECK(p.decision.raw_cos == 1.0);
    CHECK(p.update == Point{-6, -6});

    const auto with_v = merged_field(l1, builtin_field("V"), with_mode(GateMode::Unweighted));
    CHECK_THROWS_AS(with_v(Point{0, 0}), SingularityError);
    CHECK_THROWS(merged_field(builtin_scalar("quad1d_main"), l1, with_mode(GateMode::Weighted)));
}

TEST_CASE("descend and convergence time") {
    const ScalarField l1 = builtin_scalar("L1");
    const TrajectoryRecord t = descend(gradient_field(l1), Point{2, 2}, l1);
    CHECK(t.points.size() == t.main_loss.size());
    CHECK_FALSE(t.diverged);
    REQUIRE(t.convergence_step.has_value());
    for (std::size_t i = 1; i < t.main_loss.size(); ++i) CHECK(t.main_loss[i] < t.main_loss[i - 1]);
    CHECK(t.convergence_step == convergence_time(t));
    // recompute by linear scan
    std::optional<std::size_t> scan;
    for (std::size_t i = 0; i < t.main_loss.size(); ++i) {
        if (t.main_loss[i] < 0.1) {
            scan = i;
            break;
        }
    }
    CHECK(scan == t.convergence_step);

    TrajectoryRecord fake;
    fake.main_loss = {1.0, 0.5, 0.09, 0.2};
    CHECK(convergence_time(fake) == std::optional<std::size_t>(2));
    fake.main_loss = {1.0, 0.5, 0.1};
    CHECK_FALSE(convergence_time(fake).has_value());
}

TEST_CASE("divergence is recorded rather than thrown") {
    const ScalarField l1 = builtin_scalar("L1");
    DescentOptions o;
    o.alpha = 2.0;  // x <- -3x
    const TrajectoryRecord t = descend(gradient_field(l1), Point{1, 1}, l1, o);
    CHECK(t.diverged);
    CHECK_FALSE(t.convergence_step.has_value());
}

TEST_CASE("gated descent never opposes the main gradient") {
    Rng rng(5);
    const auto inits = sample_inits(rng, 20);
    struct Pair {
        const char* main;
        const char* aux;
    };
    for (const auto& [main_name, aux_name] : {Pair{"L1", "V"}, Pair{"L1", "L3"}, Pair{"L2", "L4"}}) {
        for (GateMode mode : {GateMode::Weighted, GateMode::Unweighted}) {
            const ScalarField main = builtin_scalar(main_name);
            const auto field = merged_field(main, builtin_field(aux_name), with_mode(mode));
            for (const auto& x0 : inits) {
                const TrajectoryRecord t = descend(field, x0);
                CHECK(t.cos.size() == t.weight.size());
                for (std::size_t i = 0; i + 1 < t.points.size(); ++i) {
                    CHECK(dot2(field(t.points[i]), main.grad(t.points[i])) >= 0.0);
                }
            }
        }
    }
}

TEST_CASE("sample_inits respects the box and the exclusion radius") {
    Rng rng(9);
    const auto inits = sample_inits(rng, 500);
    CHECK(inits.size() == 500);
    for (const auto& p : inits) {
        CHECK(p[0] >= -3.0);
        CHECK(p[0] <= 3.0);
        CHECK(p[1] >= -3.0);
        CHECK(p[1] <= 3.0);
        CHECK(p[0] * p[0] + p[1] * p[1] >= 0.1);
    }
    Rng again(9);
    CHECK(sample_inits(again, 500) == inits);
}

TEST_CASE("line integrals") {
    const Path a = Path::polyline({{0, 0}, {0, 2}, {2, 2}});
    const Path b = Path::polyline({{0, 0}, {2, 0}, {2, 2}});
    CHECK(a.segments().size() == 2);

    GateConfig w = with_mode(GateMode::Weighted);
    const auto prop3 = merged_field(builtin_scalar("prop3_main"), builtin_field("prop3_aux"), w);
    const VectorField field = prop3.as_vector_field();
    const double ia = line_integral(field, a);
    const double ib = line_integral(field, b);
    CHECK(std::abs(ia - 2.0) < 1e-6);
    CHECK(std::abs(ib - 3.0) < 1e-6);
    CHECK(std::abs(ia - ib) > 0.5);

    const VectorField grad_l1 = gradient_field(builtin_scalar("L1"));
    CHECK(std::abs(line_integral(grad_l1, a) - line_integral(grad_l1, b)) < 1e-6);
    CHECK(line_integral(grad_l1, a) == doctest::Approx(8.0).epsilon(1e-12));

    const VectorField v = builtin_vector("V");
    CHECK_THROWS_AS(line_integral(v, Path::polyline({{-1, 0}, {1, 0}})), SingularityError);
    CHECK_THROWS(line_integral(grad_l1, a, 999));
    CHECK_THROWS(Path({Segment{{0, 0}, {1, 0}}, Segment{{2, 0}, {3, 0}}}));
}
