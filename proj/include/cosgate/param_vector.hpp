#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cosgate {

/// Raised on length or partition mismatches between vectors that must agree.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a NaN or Inf shows up where only finite values are allowed.
class NonFiniteError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Half-open index range [begin, end) naming one layer of a flat parameter vector.
struct LayerRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool operator==(const LayerRange&) const = default;
};

/// Ordered, disjoint ranges that cover [0, n) exactly.
class Partition {
public:
    Partition() = default;

    /// Throws DimensionError unless `layers` are sorted, non-empty, contiguous and cover [0, total).
    Partition(std::vector<LayerRange> layers, std::size_t total);

    /// Builds a partition from consecutive layer sizes.
    static Partition from_sizes(std::span<const std::size_t> sizes);

    const std::vector<LayerRange>& layers() const { return layers_; }
    std::size_t num_layers() const { return layers_.size(); }
    std::size_t total() const { return total_; }

    bool operator==(const Partition&) const = default;

private:
    std::vector<LayerRange> layers_;
    std::size_t total_ = 0;
};

/// Flat real-valued parameter or gradient vector with an optional layer partition.
///
/// Every stored value is finite. Mutation goes through `set` or `assign`, which
/// re-check that invariant; bulk numeric code works on `span()` views instead.
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(std::size_t n, double fill = 0.0);
    explicit ParamVector(std::vector<double> values);
    ParamVector(std::initializer_list<double> values);
    ParamVector(std::vector<double> values, Partition partition);

    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    double operator[](std::size_t i) const { return values_[i]; }
    void set(std::size_t i, double value);
    void assign(std::span<const double> values);

    std::span<const double> span() const { return values_; }
    const std::vector<double>& values() const { return values_; }

    const std::optional<Partition>& partition() const { return partition_; }
    void set_partition(Partition partition);

    /// Copy of the values in one layer range.
    ParamVector slice(LayerRange range) const;

    bool operator==(const ParamVector&) const = default;

private:
    std::vector<double> values_;
    std::optional<Partition> partition_;
};

/// Throws NonFiniteError naming `what` if any value is NaN or infinite.
void require_finite(std::span<const double> values, const std::string& what);

/// Throws DimensionError if the lengths differ.
void require_same_size(std::size_t a, std::size_t b, const std::string& what);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

}  // namespace cosgate
