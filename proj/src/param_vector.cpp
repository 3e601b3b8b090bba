#include "cosgate/param_vector.hpp"

#include <cmath>
#include <numeric>

namespace cosgate {

Partition::Partition(std::vector<LayerRange> layers, std::size_t total)
    : layers_(std::move(layers)), total_(total) {
    std::size_t cursor = 0;
    for (const auto& layer : layers_) {
        if (layer.begin != cursor || layer.end <= layer.begin) {
            throw DimensionError("partition ranges must be non-empty, ordered and contiguous (gap or overlap at index " +
                                 std::to_string(cursor) + ")");
        }
        cursor = layer.end;
    }
    if (cursor != total_) {
        throw DimensionError("partition covers [0, " + std::to_string(cursor) + ") but vector length is " +
                             std::to_string(total_));
    }
}

Partition Partition::from_sizes(std::span<const std::size_t> sizes) {
    std::vector<LayerRange> layers;
    layers.reserve(sizes.size());
    std::size_t cursor = 0;
    for (std::size_t n : sizes) {
        layers.push_back({cursor, cursor + n});
        cursor += n;
    }
    return Partition(std::move(layers), cursor);
}

ParamVector::ParamVector(std::size_t n, double fill) : values_(n, fill) {
    require_finite(values_, "ParamVector");
}

ParamVector::ParamVector(std::vector<double> values) : values_(std::move(values)) {
    require_finite(values_, "ParamVector");
}

ParamVector::ParamVector(std::initializer_list<double> values) : values_(values) {
    require_finite(values_, "ParamVector");
}

ParamVector::ParamVector(std::vector<double> values, Partition partition) : values_(std::move(values)) {
    require_finite(values_, "ParamVector");
    set_partition(std::move(partition));
}

void ParamVector::set(std::size_t i, double value) {
    if (!std::isfinite(value)) {
        throw NonFiniteError("ParamVector: non-finite value at index " + std::to_string(i));
    }
    values_.at(i) = value;
}

void ParamVector::assign(std::span<const double> values) {
    require_same_size(values.size(), values_.size(), "ParamVector::assign");
    require_finite(values, "ParamVector::assign");
    std::copy(values.begin(), values.end(), values_.begin());
}

void ParamVector::set_partition(Partition partition) {
    require_same_size(partition.total(), values_.size(), "ParamVector partition");
    partition_ = std::move(partition);
}

ParamVector ParamVector::slice(LayerRange range) const {
    if (range.end > values_.size() || range.begin > range.end) {
        throw DimensionError("slice out of range");
    }
    return ParamVector(std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(range.begin),
                                           values_.begin() + static_cast<std::ptrdiff_t>(range.end)));
}

void require_finite(std::span<const double> values, const std::string& what) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw NonFiniteError(what + ": non-finite value at index " + std::to_string(i));
        }
    }
}

void require_same_size(std::size_t a, std::size_t b, const std::string& what) {
    if (a != b) {
        throw DimensionError(what + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    require_same_size(a.size(), b.size(), "dot");
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double norm(std::span<const double> a) {
    return std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
}

}  // namespace cosgate
