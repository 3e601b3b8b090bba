#include "cosgate/densenet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <numeric>

namespace cosgate::dense {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::span<const std::uint8_t> buf, std::size_t offset) {
    return (static_cast<std::uint32_t>(buf[offset]) << 24) | (static_cast<std::uint32_t>(buf[offset + 1]) << 16) |
           (static_cast<std::uint32_t>(buf[offset + 2]) << 8) | static_cast<std::uint32_t>(buf[offset + 3]);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IdxError(IdxErrorKind::Io, "cannot open " + path.string());
    std::vector<std::uint8_t> out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IdxError(IdxErrorKind::Io, "read failed: " + path.string());
    return out;
}

using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatMap weights(std::span<const double> params, const LayerSlot& slot) {
    return ConstMatMap(params.data() + slot.weight_offset, slot.out, slot.in);
}

ConstVecMap bias(std::span<const double> params, const LayerSlot& slot) {
    return ConstVecMap(params.data() + slot.bias_offset, slot.out);
}

// Writes dW = delta * input^T and db = rowwise sum of delta into `out` at the slot's
// offsets, shifted down by `base`.
void write_layer_grads(const Eigen::MatrixXd& delta, const Eigen::MatrixXd& input, const LayerSlot& slot,
                       std::size_t base, std::vector<double>& out) {
    MatMap dw(out.data() + (slot.weight_offset - base), slot.out, slot.in);
    dw.noalias() = delta * input.transpose();
    Eigen::Map<Eigen::VectorXd> db(out.data() + (slot.bias_offset - base), slot.out);
    db = delta.rowwise().sum();
}

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
    // Fisher-Yates with our own generator so the order is the same on every standard library.
    for (std::size_t i = order.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(order[i - 1], order[j]);
    }
}

}  // namespace

Dataset Dataset::head(std::size_t n) const {
    const std::size_t k = std::min(n, size());
    Dataset out;
    out.rows = rows;
    out.cols = cols;
    out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(k));
    out.pixels.assign(pixels.begin(), pixels.begin() + static_cast<std::ptrdiff_t>(k * image_size()));
    return out;
}

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
    if (images.size() < 16) throw IdxError(IdxErrorKind::Truncated, "idx images: truncated header");
    if (labels.size() < 8) throw IdxError(IdxErrorKind::Truncated, "idx labels: truncated header");
    if (read_be32(images, 0) != kImageMagic) throw IdxError(IdxErrorKind::BadMagic, "idx images: bad magic");
    if (read_be32(labels, 0) != kLabelMagic) throw IdxError(IdxErrorKind::BadMagic, "idx labels: bad magic");

    const std::size_t n_images = read_be32(images, 4);
    const std::size_t rows = read_be32(images, 8);
    const std::size_t cols = read_be32(images, 12);
    const std::size_t n_labels = read_be32(labels, 4);
    if (n_images != n_labels) {
        throw IdxError(IdxErrorKind::CountMismatch, "idx: " + std::to_string(n_images) + " images but " +
                                                        std::to_string(n_labels) + " labels");
    }
    const std::size_t pixel_count = n_images * rows * cols;
    if (images.size() - 16 < pixel_count) throw IdxError(IdxErrorKind::Truncated, "idx images: truncated data");
    if (labels.size() - 8 < n_labels) throw IdxError(IdxErrorKind::Truncated, "idx labels: truncated data");

    Dataset out;
    out.rows = static_cast<int>(rows);
    out.cols = static_cast<int>(cols);
    out.pixels.resize(pixel_count);
    for (std::size_t i = 0; i < pixel_count; ++i) out.pixels[i] = images[16 + i] / 255.0;
    out.labels.assign(labels.begin() + 8, labels.begin() + 8 + static_cast<std::ptrdiff_t>(n_labels));
    return out;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto images = read_file(images_path);
    const auto labels = read_file(labels_path);
    return parse_idx(images, labels);
}

bool is_supported_rotation(int degrees) {
    return degrees == 0 || degrees == 45 || degrees == 90 || degrees == 135 || degrees == 180;
}

std::vector<double> rotate(std::span<const double> image, int degrees, int rows, int cols) {
    if (!is_supported_rotation(degrees)) {
        throw std::invalid_argument("rotate: unsupported angle " + std::to_string(degrees));
    }
    if (image.size() != static_cast<std::size_t>(rows * cols)) {
        throw DimensionError("rotate: image has " + std::to_string(image.size()) + " pixels, expected " +
                             std::to_string(rows * cols));
    }
    std::vector<double> out(image.size(), 0.0);
    auto in_at = [&](int r, int c) { return image[static_cast<std::size_t>(r * cols + c)]; };
    auto out_at = [&](int r, int c) -> double& { return out[static_cast<std::size_t>(r * cols + c)]; };

    if (degrees == 0) {
        std::copy(image.begin(), image.end(), out.begin());
        return out;
    }
    if (degrees == 180) {
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) out_at(r, c) = in_at(rows - 1 - r, cols - 1 - c);
        return out;
    }
    if (degrees == 90 && rows == cols) {
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) out_at(r, c) = in_at(c, cols - 1 - r);
        return out;
    }

    // Inverse map: each output pixel samples the source at the point rotated back by -theta.
    // Coordinates are x to the right, y up, origin at the image center.
    const double theta = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(theta);
    const double sn = std::sin(theta);
    const double cy = (rows - 1) / 2.0;
    const double cx = (cols - 1) / 2.0;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double x = c - cx;
            const double y = cy - r;
            const double sx = cs * x + sn * y;
            const double sy = -sn * x + cs * y;
            const double src_r = cy - sy;
            const double src_c = cx + sx;
            const int r0 = static_cast<int>(std::floor(src_r));
            const int c0 = static_cast<int>(std::floor(src_c));
            const double fr = src_r - r0;
            const double fc = src_c - c0;
            double v = 0.0;
            for (int dr = 0; dr < 2; ++dr) {
                for (int dc = 0; dc < 2; ++dc) {
                    const int rr = r0 + dr;
                    const int cc = c0 + dc;
                    if (rr < 0 || cc < 0 || rr >= rows || cc >= cols) continue;
                    const double w = (dr ? fr : 1.0 - fr) * (dc ? fc : 1.0 - fc);
                    v += w * in_at(rr, cc);
                }
            }
            out_at(r, c) = v;
        }
    }
    return out;
}

Dataset rotate_dataset(const Dataset& data, int degrees) {
    Dataset out;
    out.rows = data.rows;
    out.cols = data.cols;
    out.labels = data.labels;
    out.pixels.reserve(data.pixels.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto img = rotate(data.image(i), degrees, data.rows, data.cols);
        out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    }
    return out;
}

// ---------------------------------------------------------------------------

std::size_t parameter_count(const Architecture& arch) {
    std::size_t n = 0;
    int in = arch.inputs;
    for (int h : arch.hidden) {
        n += static_cast<std::size_t>(in * h + h);
        in = h;
    }
    return n + 2 * static_cast<std::size_t>(in * arch.classes + arch.classes);
}

DenseNet::DenseNet(Architecture arch) : arch_(std::move(arch)) {
    layout();
    params_.assign(parameter_count(arch_), 0.0);
}

DenseNet::DenseNet(Architecture arch, Rng& rng) : DenseNet(std::move(arch)) {
    auto init = [&](const LayerSlot& slot) {
        const double limit = std::sqrt(6.0 / (slot.in + slot.out));
        for (std::size_t i = 0; i < static_cast<std::size_t>(slot.in * slot.out); ++i) {
            params_[slot.weight_offset + i] = rng.uniform(-limit, limit);
        }
    };
    for (const auto& slot : trunk_) init(slot);
    init(main_head_);
    init(aux_head_);
}

void DenseNet::layout() {
    if (arch_.inputs < 1 || arch_.classes < 1 || arch_.hidden.empty()) {
        throw std::invalid_argument("DenseNet: need inputs, classes and at least one hidden layer");
    }
    std::size_t offset = 0;
    int in = arch_.inputs;
    auto slot_for = [&](int out) {
        if (out < 1) throw std::invalid_argument("DenseNet: layer width must be positive");
        LayerSlot s;
        s.in = in;
        s.out = out;
        s.weight_offset = offset;
        s.bias_offset = offset + static_cast<std::size_t>(in * out);
        offset += s.size();
        return s;
    };
    trunk_.clear();
    for (int h : arch_.hidden) {
        trunk_.push_back(slot_for(h));
        in = h;
    }
    shared_size_ = offset;
    main_head_ = slot_for(arch_.classes);
    aux_head_ = slot_for(arch_.classes);
}

LayerRange DenseNet::head_range(Head head) const {
    const LayerSlot& s = head_layer(head);
    return {s.weight_offset, s.weight_offset + s.size()};
}

Partition DenseNet::shared_partition() const {
    std::vector<std::size_t> sizes;
    for (const auto& slot : trunk_) sizes.push_back(slot.size());
    return Partition::from_sizes(sizes);
}

ForwardCache DenseNet::forward(const Eigen::MatrixXd& batch, Head head) const {
    if (batch.rows() != arch_.inputs) {
        throw DimensionError("forward: batch has " + std::to_string(batch.rows()) + " rows, expected " +
                             std::to_string(arch_.inputs));
    }
    ForwardCache cache;
    cache.activations.reserve(trunk_.size() + 1);
    cache.pre.reserve(trunk_.size());
    cache.activations.push_back(batch);
    for (const auto& slot : trunk_) {
        Eigen::MatrixXd z = weights(params_, slot) * cache.activations.back();
        z.colwise() += bias(params_, slot);
        cache.activations.push_back(z.cwiseMax(0.0));
        cache.pre.push_back(std::move(z));
    }
    const LayerSlot& h = head_layer(head);
    cache.logits = weights(params_, h) * cache.activations.back();
    cache.logits.colwise() += bias(params_, h);
    return cache;
}

HeadGradients DenseNet::backward(const ForwardCache& cache, std::span<const std::uint8_t> labels, Head head) const {
    const auto batch = cache.logits.cols();
    if (static_cast<std::size_t>(batch) != labels.size()) {
        throw DimensionError("backward: " + std::to_string(labels.size()) + " labels for a batch of " +
                             std::to_string(batch));
    }
    if (cache.activations.size() != trunk_.size() + 1) throw DimensionError("backward: cache does not match net");

    HeadGradients out;
    out.loss = cross_entropy(cache.logits, labels);

    Eigen::MatrixXd delta = softmax(cache.logits);
    for (Eigen::Index j = 0; j < batch; ++j) delta(labels[static_cast<std::size_t>(j)], j) -= 1.0;
    delta /= static_cast<double>(batch);

    const LayerSlot& h = head_layer(head);
    out.head.assign(h.size(), 0.0);
    write_layer_grads(delta, cache.activations.back(), h, h.weight_offset, out.head);

    out.shared.assign(shared_size_, 0.0);
    Eigen::MatrixXd upstream = weights(params_, h).transpose() * delta;
    for (std::size_t k = trunk_.size(); k-- > 0;) {
        const LayerSlot& slot = trunk_[k];
        Eigen::MatrixXd dz = (cache.pre[k].array() > 0.0).select(upstream, 0.0);
        write_layer_grads(dz, cache.activations[k], slot, 0, out.shared);
        if (k > 0) upstream = weights(params_, slot).transpose() * dz;
    }
    return out;
}

Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd out(logits.rows(), logits.cols());
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        const double m = logits.col(j).maxCoeff();
        out.col(j) = (logits.col(j).array() - m).exp();
        out.col(j) /= out.col(j).sum();
    }
    return out;
}

double cross_entropy(const Eigen::MatrixXd& logits, std::span<const std::uint8_t> labels) {
    if (static_cast<std::size_t>(logits.cols()) != labels.size()) {
        throw DimensionError("cross_entropy: label count does not match batch");
    }
    if (labels.empty()) return 0.0;
    double total = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        const int y = labels[static_cast<std::size_t>(j)];
        if (y >= logits.rows()) throw std::out_of_range("cross_entropy: label out of range");
        const double m = logits.col(j).maxCoeff();
        const double lse = m + std::log((logits.col(j).array() - m).exp().sum());
        total += lse - logits(y, j);
    }
    return total / static_cast<double>(labels.size());
}

Eigen::MatrixXd gather(const Dataset& data, std::span<const std::size_t> indices) {
    const auto d = static_cast<Eigen::Index>(data.image_size());
    Eigen::MatrixXd out(d, static_cast<Eigen::Index>(indices.size()));
    for (std::size_t j = 0; j < indices.size(); ++j) {
        if (indices[j] >= data.size()) throw std::out_of_range("gather: index past end of dataset");
        out.col(static_cast<Eigen::Index>(j)) = ConstVecMap(data.image(indices[j]).data(), d);
    }
    return out;
}

// ---------------------------------------------------------------------------

RmsProp::RmsProp(std::size_t n, RmsPropConfig config) : config_(config), acc_(n, 0.0) {
    if (!(config.learning_rate > 0.0) || !(config.rho >= 0.0 && config.rho < 1.0) || !(config.epsilon > 0.0)) {
        throw std::invalid_argument("RmsProp: need lr > 0, 0 <= rho < 1, eps > 0");
    }
}

void RmsProp::step(std::span<double> params, std::span<const double> grads) { step(params, grads, grads); }

void RmsProp::step(std::span<double> params, std::span<const double> grads, std::span<const double> stats) {
    require_same_size(params.size(), acc_.size(), "rmsprop params");
    require_same_size(grads.size(), acc_.size(), "rmsprop grads");
    require_same_size(stats.size(), acc_.size(), "rmsprop stats");
    const double rho = config_.rho;
    for (std::size_t i = 0; i < acc_.size(); ++i) {
        acc_[i] = rho * acc_[i] + (1.0 - rho) * stats[i] * stats[i];
        params[i] -= config_.learning_rate * grads[i] / (std::sqrt(acc_[i]) + config_.epsilon);
    }
}

// ---------------------------------------------------------------------------

std::string_view to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::SingleTask: return "single_task";
        case TrainMode::MultiTask: return "multi_task";
        case TrainMode::Gated: return "gated";
    }
    return "?";
}

TrainMode parse_train_mode(std::string_view text) {
    if (text == "single_task") return TrainMode::SingleTask;
    if (text == "multi_task") return TrainMode::MultiTask;
    if (text == "gated") return TrainMode::Gated;
    throw std::invalid_argument("unknown train mode '" + std::string(text) + "'");
}

double test_error(const DenseNet& net, const Dataset& test) {
    if (test.size() == 0) throw std::invalid_argument("test_error: empty test set");
    constexpr std::size_t chunk = 1000;
    std::size_t wrong = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < test.size(); start += chunk) {
        const std::size_t end = std::min(test.size(), start + chunk);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const auto cache = net.forward(gather(test, idx), Head::Main);
        for (Eigen::Index j = 0; j < cache.logits.cols(); ++j) {
            Eigen::Index best = 0;
            cache.logits.col(j).maxCoeff(&best);  // first maximum on ties
            if (best != test.labels[start + static_cast<std::size_t>(j)]) ++wrong;
        }
    }
    return 100.0 * static_cast<double>(wrong) / static_cast<double>(test.size());
}

MnistTrainResult train(const Dataset& main_train, const Dataset& aux_train, const Dataset& test,
                       const MnistTrainConfig& config) {
    if (main_train.size() == 0) throw std::invalid_argument("train: empty training set");
    if (config.mode != TrainMode::SingleTask && aux_train.size() != main_train.size()) {
        throw DimensionError("train: aux set must pair with the main set example for example");
    }
    if (config.epochs < 0 || config.batch < 1) throw std::invalid_argument("train: need epochs >= 0, batch >= 1");
    config.gate.validate();

    Rng init_rng = Rng::stream(config.seed, 0);
    Rng order_rng = Rng::stream(config.seed, 1);

    MnistTrainResult result{DenseNet(config.arch, init_rng), {}, std::numeric_limits<double>::infinity()};
    DenseNet& net = result.net;
    const std::size_t n_params = net.params().size();
    const LayerRange shared = net.shared_range();
    const LayerRange main_r = net.head_range(Head::Main);
    const LayerRange aux_r = net.head_range(Head::Aux);
    const Partition partition = net.shared_partition();

    GateConfig gate_config = config.gate;
    if (config.mode == TrainMode::MultiTask) gate_config = GateConfig{GateMode::AlwaysOn, 1.0, 0.0, 0.0, false};
    Gate gate(gate_config);
    RmsProp opt(n_params, config.optimizer);

    std::vector<std::size_t> order(main_train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> grads(n_params, 0.0);
    std::vector<double> stats(n_params, 0.0);
    std::vector<std::uint8_t> labels;
    const auto batch = static_cast<std::size_t>(config.batch);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle(order, order_rng);
        EpochMetrics m;
        m.epoch = epoch;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::span<const std::size_t> idx(order.data() + start, std::min(batch, order.size() - start));
            labels.resize(idx.size());
            for (std::size_t j = 0; j < idx.size(); ++j) labels[j] = main_train.labels[idx[j]];

            const auto main_cache = net.forward(gather(main_train, idx), Head::Main);
            const HeadGradients gm = net.backward(main_cache, labels, Head::Main);
            m.train_loss_main += gm.loss;

            std::span<double> u(grads.data() + shared.begin, shared.size());
            std::copy(gm.head.begin(), gm.head.end(), grads.begin() + static_cast<std::ptrdiff_t>(main_r.begin));
            double cos = 0.0;
            double weight = 0.0;
            if (config.mode == TrainMode::SingleTask) {
                std::copy(gm.shared.begin(), gm.shared.end(), u.begin());
                std::fill(grads.begin() + static_cast<std::ptrdiff_t>(aux_r.begin),
                          grads.begin() + static_cast<std::ptrdiff_t>(aux_r.end), 0.0);
            } else {
                for (std::size_t j = 0; j < idx.size(); ++j) labels[j] = aux_train.labels[idx[j]];
                const auto aux_cache = net.forward(gather(aux_train, idx), Head::Aux);
                const HeadGradients ga = net.backward(aux_cache, labels, Head::Aux);
                m.train_loss_aux += ga.loss;
                std::copy(ga.head.begin(), ga.head.end(), grads.begin() + static_cast<std::ptrdiff_t>(aux_r.begin));
                if (config.mode == TrainMode::MultiTask) {
                    cos = cosine(gm.shared, ga.shared);
                    weight = 1.0;
                    for (std::size_t i = 0; i < u.size(); ++i) u[i] = gm.shared[i] + ga.shared[i];
                } else {
                    const GateDecision d = gate.decide(gm.shared, ga.shared, &partition);
                    cos = d.raw_cos;
                    weight = d.weight;
                    combine_into(gm.shared, ga.shared, weight, u);
                }
            }
            m.mean_cos += cos;
            m.mean_gate_weight += weight;
            result.min_inner = std::min(result.min_inner, dot(u, gm.shared));

            if (config.accumulate_main_only) {
                std::copy(grads.begin(), grads.end(), stats.begin());
                std::copy(gm.shared.begin(), gm.shared.end(), stats.begin());
                opt.step(net.params(), grads, stats);
            } else {
                opt.step(net.params(), grads);
            }
            ++batches;
        }
        const auto nb = static_cast<double>(batches);
        m.train_loss_main /= nb;
        m.train_loss_aux /= nb;
        m.mean_cos /= nb;
        m.mean_gate_weight /= nb;
        m.test_error = test.size() > 0 ? test_error(net, test) : 0.0;
        result.epochs.push_back(m);
    }
    if (!std::isfinite(result.min_inner)) result.min_inner = 0.0;
    return result;
}

}  // namespace cosgate::dense
