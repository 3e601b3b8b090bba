#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cosgate/gate.hpp"
#include "cosgate/rng.hpp"

namespace cosgate::landscape {

using Point = std::vector<double>;

/// Evaluation at (or a path through) a declared singular point of a field.
class SingularityError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Analytic loss with a hand-coded exact gradient.
struct ScalarField {
    std::string name;
    std::size_t arity = 2;
    std::function<double(std::span<const double>)> eval;
    std::function<Point(std::span<const double>)> grad;
    /// False on loci where the function is not differentiable (finite-difference checks skip them).
    std::function<bool(std::span<const double>)> smooth_at = [](std::span<const double>) { return true; };
};

/// Arbitrary update field; need not be the gradient of anything.
struct VectorField {
    std::string name;
    std::size_t arity = 2;
    std::function<Point(std::span<const double>)> eval;
    std::vector<Point> singularities;
};

using Field = std::variant<ScalarField, VectorField>;

/// Builtins: quad1d_main (t-10)^2, quad1d_aux t^2, L1..L4, V, prop3_main, prop3_aux.
/// `a` scales the two prop3 losses and is ignored by the others.
Field builtin_field(std::string_view name, double a = 1.0);
ScalarField builtin_scalar(std::string_view name, double a = 1.0);
VectorField builtin_vector(std::string_view name);

/// The gradient of a scalar field viewed as an update field.
VectorField gradient_field(const ScalarField& f);

/// Scalar fields contribute their gradient; vector fields are used as-is.
VectorField update_field(const Field& f);

struct GatedSample {
    Point update;
    GateDecision decision;
};

/// Pointwise grad(main) + w(cos) * aux, with the raw (unsmoothed) cosine.
class MergedField {
public:
    MergedField(ScalarField main, VectorField aux, GateConfig config);

    GatedSample sample(std::span<const double> x) const;
    Point operator()(std::span<const double> x) const { return sample(x).update; }

    const ScalarField& main() const { return main_; }
    const VectorField& aux() const { return aux_; }
    const GateConfig& config() const { return config_; }

    VectorField as_vector_field() const;

private:
    ScalarField main_;
    VectorField aux_;
    GateConfig config_;
};

MergedField merged_field(const ScalarField& main, const Field& aux, const GateConfig& config);

struct TrajectoryRecord {
    std::vector<Point> points;
    std::vector<double> main_loss;
    /// One entry per step taken; empty for plain (ungated) fields.
    std::vector<double> cos;
    std::vector<double> weight;
    std::optional<std::size_t> convergence_step;
    bool diverged = false;
};

struct DescentOptions {
    std::size_t steps = 600;
    double alpha = 0.01;
    double level = 0.1;
    double divergence_loss = 1e6;
};

/// Steepest descent x <- x - alpha * field(x). Divergence (loss above the
/// sentinel, non-finite loss, or hitting a singularity) stops the run and is
/// recorded rather than thrown.
TrajectoryRecord descend(const VectorField& field, const Point& init, const ScalarField& main,
                         const DescentOptions& options = {});
TrajectoryRecord descend(const MergedField& field, const Point& init, const DescentOptions& options = {});

/// First index with main_loss < level.
std::optional<std::size_t> convergence_time(const TrajectoryRecord& trajectory, double level = 0.1);

struct Segment {
    Point start;
    Point end;
};

/// Connected chain of straight segments.
class Path {
public:
    explicit Path(std::vector<Segment> segments);
    static Path polyline(const std::vector<Point>& vertices);

    const std::vector<Segment>& segments() const { return segments_; }

private:
    std::vector<Segment> segments_;
};

/// Midpoint-rule approximation of the line integral of `field` along `path`.
/// Throws SingularityError if the path touches one of the field's singular points.
double line_integral(const VectorField& field, const Path& path, std::size_t n_per_segment = 100000);

/// `count` points uniform in [lo, hi]^2, rejecting points with |x|^2 < min_radius_sq.
std::vector<Point> sample_inits(Rng& rng, std::size_t count, double lo = -3.0, double hi = 3.0,
                                double min_radius_sq = 0.1);

}  // namespace cosgate::landscape
