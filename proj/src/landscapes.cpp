#include "cosgate/landscapes.hpp"

#include <algorithm>
#include <cmath>

namespace cosgate::landscape {

namespace {

void require_arity(std::span<const double> x, std::size_t arity, const std::string& name) {
    if (x.size() != arity) {
        throw DimensionError(name + ": expected a point of dimension " + std::to_string(arity) + ", got " +
                             std::to_string(x.size()));
    }
}

double r2(std::span<const double> x) { return x[0] * x[0] + x[1] * x[1]; }

ScalarField quadratic_bowl(std::string name, double c1, double c2) {
    ScalarField f;
    f.name = name;
    f.arity = 2;
    f.eval = [=](std::span<const double> x) {
        require_arity(x, 2, name);
        return (x[0] - c1) * (x[0] - c1) + (x[1] - c2) * (x[1] - c2);
    };
    f.grad = [=](std::span<const double> x) {
        require_arity(x, 2, name);
        return Point{2.0 * (x[0] - c1), 2.0 * (x[1] - c2)};
    };
    return f;
}

ScalarField quad1d(std::string name, double center) {
    ScalarField f;
    f.name = name;
    f.arity = 1;
    f.eval = [=](std::span<const double> x) {
        require_arity(x, 1, name);
        return (x[0] - center) * (x[0] - center);
    };
    f.grad = [=](std::span<const double> x) {
        require_arity(x, 1, name);
        return Point{2.0 * (x[0] - center)};
    };
    return f;
}

// Bowl for t1 <= 0, saturating 1 - exp(-2 r^2) plateau for t1 > 0.
ScalarField plateau_loss() {
    ScalarField f;
    f.name = "L2";
    f.arity = 2;
    f.eval = [](std::span<const double> x) {
        require_arity(x, 2, "L2");
        const double r = r2(x);
        return x[0] <= 0.0 ? r : 1.0 - std::exp(-2.0 * r);
    };
    f.grad = [](std::span<const double> x) {
        require_arity(x, 2, "L2");
        if (x[0] <= 0.0) return Point{2.0 * x[0], 2.0 * x[1]};
        const double s = 4.0 * std::exp(-2.0 * r2(x));
        return Point{s * x[0], s * x[1]};
    };
    f.smooth_at = [](std::span<const double> x) { return x[0] != 0.0; };
    return f;
}

bool in_prop3_box(std::span<const double> x) { return x[0] >= 1.0 && x[0] <= 2.0 && x[1] >= 0.0 && x[1] <= 1.0; }

ScalarField prop3_main(double a) {
    ScalarField f;
    f.name = "prop3_main";
    f.arity = 2;
    f.eval = [=](std::span<const double> x) {
        require_arity(x, 2, "prop3_main");
        return a * x[0];
    };
    f.grad = [=](std::span<const double> x) {
        require_arity(x, 2, "prop3_main");
        return Point{a, 0.0};
    };
    return f;
}

ScalarField prop3_aux(double a) {
    ScalarField f;
    f.name = "prop3_aux";
    f.arity = 2;
    f.eval = [=](std::span<const double> x) {
        require_arity(x, 2, "prop3_aux");
        return in_prop3_box(x) ? a * x[0] : 0.0;
    };
    f.grad = [=](std::span<const double> x) {
        require_arity(x, 2, "prop3_aux");
        return in_prop3_box(x) ? Point{a, 0.0} : Point{0.0, 0.0};
    };
    f.smooth_at = [](std::span<const double> x) {
        const bool on_edge_x = (x[0] == 1.0 || x[0] == 2.0) && x[1] >= 0.0 && x[1] <= 1.0;
        const bool on_edge_y = (x[1] == 0.0 || x[1] == 1.0) && x[0] >= 1.0 && x[0] <= 2.0;
        return !on_edge_x && !on_edge_y;
    };
    return f;
}

// Rotation about the origin plus a pull toward it; singular at the origin.
VectorField swirl_field() {
    VectorField f;
    f.name = "V";
    f.arity = 2;
    f.eval = [](std::span<const double> x) {
        require_arity(x, 2, "V");
        const double r = r2(x);
        if (r == 0.0) throw SingularityError("V: singular at the origin");
        return Point{-x[1] / r - 2.0 * x[0], x[0] / r - 2.0 * x[1]};
    };
    f.singularities = {Point{0.0, 0.0}};
    return f;
}

}  // namespace

Field builtin_field(std::string_view name, double a) {
    if (name == "quad1d_main") return quad1d("quad1d_main", 10.0);
    if (name == "quad1d_aux") return quad1d("quad1d_aux", 0.0);
    if (name == "L1") return quadratic_bowl("L1", 0.0, 0.0);
    if (name == "L2") return plateau_loss();
    if (name == "L3") return quadratic_bowl("L3", 1.0, 1.0);
    if (name == "L4") return quadratic_bowl("L4", 2.0, 0.5);
    if (name == "V") return swirl_field();
    if (name == "prop3_main") return prop3_main(a);
    if (name == "prop3_aux") return prop3_aux(a);
    throw std::invalid_argument("unknown builtin field '" + std::string(name) + "'");
}

ScalarField builtin_scalar(std::string_view name, double a) {
    Field f = builtin_field(name, a);
    if (auto* s = std::get_if<ScalarField>(&f)) return std::move(*s);
    throw std::invalid_argument("builtin field '" + std::string(name) + "' is a vector field");
}

VectorField builtin_vector(std::string_view name) {
    Field f = builtin_field(name);
    if (auto* v = std::get_if<VectorField>(&f)) return std::move(*v);
    throw std::invalid_argument("builtin field '" + std::string(name) + "' is a scalar field");
}

VectorField gradient_field(const ScalarField& f) {
    VectorField v;
    v.name = "grad_" + f.name;
    v.arity = f.arity;
    v.eval = f.grad;
    return v;
}

VectorField update_field(const Field& f) {
    if (const auto* s = std::get_if<ScalarField>(&f)) return gradient_field(*s);
    return std::get<VectorField>(f);
}

MergedField::MergedField(ScalarField main, VectorField aux, GateConfig config)
    : main_(std::move(main)), aux_(std::move(aux)), config_(config) {
    if (main_.arity != aux_.arity) throw DimensionError("merged_field: main and aux arity differ");
    config_.validate();
}

GatedSample MergedField::sample(std::span<const double> x) const {
    GatedSample s;
    const ParamVector g(main_.grad(x));
    const ParamVector v(aux_.eval(x));
    s.decision.raw_cos = cosine(g, v);
    s.decision.smoothed_cos = s.decision.raw_cos;
    s.decision.weight = gate_weight(config_, s.decision.raw_cos);
    s.update = combine(g, v, s.decision.weight).values();
    return s;
}

VectorField MergedField::as_vector_field() const {
    VectorField v;
    v.name = "merged(" + main_.name + "," + aux_.name + "," + std::string(to_string(config_.mode)) + ")";
    v.arity = main_.arity;
    v.eval = [self = *this](std::span<const double> x) { return self.sample(x).update; };
    v.singularities = aux_.singularities;
    return v;
}

MergedField merged_field(const ScalarField& main, const Field& aux, const GateConfig& config) {
    return MergedField(main, update_field(aux), config);
}

namespace {

template <typename Sampler>
TrajectoryRecord run_descent(Sampler&& sampler, const Point& init, const ScalarField& main,
                             const DescentOptions& options, bool record_gate) {
    if (options.steps == 0) throw std::invalid_argument("descend: steps must be positive");
    if (!(options.alpha > 0.0)) throw std::invalid_argument("descend: alpha must be positive");
    require_finite(init, "descend init");

    TrajectoryRecord rec;
    rec.points.reserve(options.steps + 1);
    rec.main_loss.reserve(options.steps + 1);
    Point x = init;
    for (std::size_t k = 0;; ++k) {
        const double loss = main.eval(x);
        rec.points.push_back(x);
        rec.main_loss.push_back(loss);
        if (!std::isfinite(loss) || loss > options.divergence_loss) {
            rec.diverged = true;
            break;
        }
        if (k == options.steps) break;

        GatedSample s;
        try {
            s = sampler(x);
        } catch (const SingularityError&) {
            rec.diverged = true;
            break;
        }
        if (record_gate) {
            rec.cos.push_back(s.decision.raw_cos);
            rec.weight.push_back(s.decision.weight);
        }
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= options.alpha * s.update[i];
    }
    rec.convergence_step = convergence_time(rec, options.level);
    return rec;
}

}  // namespace

TrajectoryRecord descend(const VectorField& field, const Point& init, const ScalarField& main,
                         const DescentOptions& options) {
    if (field.arity != main.arity || init.size() != main.arity) throw DimensionError("descend: arity mismatch");
    return run_descent([&](const Point& x) { return GatedSample{field.eval(x), {}}; }, init, main, options, false);
}

TrajectoryRecord descend(const MergedField& field, const Point& init, const DescentOptions& options) {
    if (init.size() != field.main().arity) throw DimensionError("descend: arity mismatch");
    return run_descent([&](const Point& x) { return field.sample(x); }, init, field.main(), options, true);
}

std::optional<std::size_t> convergence_time(const TrajectoryRecord& trajectory, double level) {
    for (std::size_t i = 0; i < trajectory.main_loss.size(); ++i) {
        if (trajectory.main_loss[i] < level) return i;
    }
    return std::nullopt;
}

Path::Path(std::vector<Segment> segments) : segments_(std::move(segments)) {
    if (segments_.empty()) throw std::invalid_argument("Path: needs at least one segment");
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        const auto& s = segments_[i];
        if (s.start.size() != s.end.size()) throw DimensionError("Path: segment endpoints differ in dimension");
        if (i > 0 && segments_[i - 1].end != s.start) {
            throw std::invalid_argument("Path: segment " + std::to_string(i) + " does not start where the previous ends");
        }
    }
}

Path Path::polyline(const std::vector<Point>& vertices) {
    if (vertices.size() < 2) throw std::invalid_argument("Path::polyline: needs at least two vertices");
    std::vector<Segment> segments;
    for (std::size_t i = 0; i + 1 < vertices.size(); ++i) segments.push_back({vertices[i], vertices[i + 1]});
    return Path(std::move(segments));
}

namespace {

// Distance from p to the closed segment [a, b].
double distance_to_segment(const Point& p, const Segment& s) {
    double len2 = 0.0;
    double proj = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = s.end[i] - s.start[i];
        len2 += d * d;
        proj += (p[i] - s.start[i]) * d;
    }
    const double t = len2 > 0.0 ? std::clamp(proj / len2, 0.0, 1.0) : 0.0;
    double dist2 = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = s.start[i] + t * (s.end[i] - s.start[i]);
        dist2 += (p[i] - q) * (p[i] - q);
    }
    return std::sqrt(dist2);
}

}  // namespace

double line_integral(const VectorField& field, const Path& path, std::size_t n_per_segment) {
    if (n_per_segment < 1000) throw std::invalid_argument("line_integral: need at least 1000 points per segment");
    double total = 0.0;
    for (const auto& seg : path.segments()) {
        if (seg.start.size() != field.arity) throw DimensionError("line_integral: path dimension does not match field");
        for (const auto& singular : field.singularities) {
            if (distance_to_segment(singular, seg) < 1e-12) {
                throw SingularityError("line_integral: path passes through a singularity of " + field.name);
            }
        }
        const std::size_t dim = seg.start.size();
        Point delta(dim);
        for (std::size_t i = 0; i < dim; ++i) delta[i] = (seg.end[i] - seg.start[i]) / static_cast<double>(n_per_segment);
        Point mid(dim);
        double seg_sum = 0.0;
        for (std::size_t k = 0; k < n_per_segment; ++k) {
            const double t = (static_cast<double>(k) + 0.5) / static_cast<double>(n_per_segment);
            for (std::size_t i = 0; i < dim; ++i) mid[i] = seg.start[i] + t * (seg.end[i] - seg.start[i]);
            const Point f = field.eval(mid);
            for (std::size_t i = 0; i < dim; ++i) seg_sum += f[i] * delta[i];
        }
        total += seg_sum;
    }
    return total;
}

std::vector<Point> sample_inits(Rng& rng, std::size_t count, double lo, double hi, double min_radius_sq) {
    std::vector<Point> inits;
    inits.reserve(count);
    while (inits.size() < count) {
        Point p{rng.uniform(lo, hi), rng.uniform(lo, hi)};
        if (p[0] * p[0] + p[1] * p[1] >= min_radius_sq) inits.push_back(std::move(p));
    }
    return inits;
}

}  // namespace cosgate::landscape
