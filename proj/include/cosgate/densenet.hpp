#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cosgate/gate.hpp"
#include "cosgate/rng.hpp"

namespace cosgate::dense {

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// Grayscale images in [0, 1], stored row-major per image, one image after another.
struct Dataset {
    int rows = 28;
    int cols = 28;
    std::vector<double> pixels;
    std::vector<std::uint8_t> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t image_size() const { return static_cast<std::size_t>(rows * cols); }
    std::span<const double> image(std::size_t i) const {
        return std::span<const double>(pixels).subspan(i * image_size(), image_size());
    }

    /// First `n` examples (or all of them if there are fewer).
    Dataset head(std::size_t n) const;
};

enum class IdxErrorKind { Io, BadMagic, Truncated, CountMismatch };

class IdxError : public std::runtime_error {
public:
    IdxError(IdxErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
    IdxErrorKind kind() const { return kind_; }

private:
    IdxErrorKind kind_;
};

/// Reads an uncompressed IDX image file (magic 0x00000803) and label file
/// (magic 0x00000801). Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Parses in-memory IDX buffers; same rules as load_idx.
Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

/// Rotation (counter-clockwise) about the image center with bilinear
/// sampling and zero background. 0, 90 and 180 degrees are exact pixel permutations.
std::vector<double> rotate(std::span<const double> image, int degrees, int rows = 28, int cols = 28);

Dataset rotate_dataset(const Dataset& data, int degrees);

bool is_supported_rotation(int degrees);

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

enum class Head { Main, Aux };

struct Architecture {
    int inputs = 784;
    std::vector<int> hidden{100, 100, 100};
    int classes = 10;
};

/// Offsets of one dense layer (weights column-major out x in, then bias) in the flat vector.
struct LayerSlot {
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
    int in = 0;
    int out = 0;

    std::size_t size() const { return static_cast<std::size_t>(in * out + out); }
};

struct ForwardCache {
    std::vector<Eigen::MatrixXd> activations;  // input, then each hidden ReLU output
    std::vector<Eigen::MatrixXd> pre;          // hidden pre-activations
    Eigen::MatrixXd logits;                    // classes x batch
};

struct HeadGradients {
    std::vector<double> shared;
    std::vector<double> head;
    double loss = 0.0;
};

/// ReLU trunk with two linear heads; all parameters live in one flat vector
/// laid out as [trunk | main head | aux head].
class DenseNet {
public:
    /// All-zero parameters.
    explicit DenseNet(Architecture arch = {});

    /// Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases.
    DenseNet(Architecture arch, Rng& rng);

    const Architecture& architecture() const { return arch_; }

    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    LayerRange shared_range() const { return {0, shared_size_}; }
    LayerRange head_range(Head head) const;

    /// Per-layer partition of the shared block, for per-layer cosines.
    Partition shared_partition() const;

    std::span<const double> shared() const { return std::span<const double>(params_).first(shared_size_); }

    const std::vector<LayerSlot>& trunk_layers() const { return trunk_; }
    const LayerSlot& head_layer(Head head) const { return head == Head::Main ? main_head_ : aux_head_; }

    /// `batch` is inputs x batch_size, one example per column.
    ForwardCache forward(const Eigen::MatrixXd& batch, Head head) const;

    /// Gradients of the mean cross-entropy over the batch.
    HeadGradients backward(const ForwardCache& cache, std::span<const std::uint8_t> labels, Head head) const;

private:
    void layout();

    Architecture arch_;
    std::vector<LayerSlot> trunk_;
    LayerSlot main_head_;
    LayerSlot aux_head_;
    std::size_t shared_size_ = 0;
    std::vector<double> params_;
};

/// Expected parameter count for an architecture.
std::size_t parameter_count(const Architecture& arch);

/// Row-wise softmax over logits (classes x batch), computed stably.
Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits);

/// Mean cross-entropy of logits against labels.
double cross_entropy(const Eigen::MatrixXd& logits, std::span<const std::uint8_t> labels);

/// Columns `indices` of `data` as an inputs x batch matrix.
Eigen::MatrixXd gather(const Dataset& data, std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct RmsPropConfig {
    double learning_rate = 0.001;
    double rho = 0.9;
    double epsilon = 1e-8;
};

/// Uncentered RMSprop without momentum.
class RmsProp {
public:
    RmsProp(std::size_t n, RmsPropConfig config = {});

    /// acc <- rho acc + (1 - rho) g^2;  p <- p - lr g / (sqrt(acc) + eps).
    void step(std::span<double> params, std::span<const double> grads);

    /// Like step, but the accumulator sees `stats` while the parameters move along `grads`.
    void step(std::span<double> params, std::span<const double> grads, std::span<const double> stats);

    std::span<const double> accumulator() const { return acc_; }
    const RmsPropConfig& config() const { return config_; }

private:
    RmsPropConfig config_;
    std::vector<double> acc_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class TrainMode { SingleTask, MultiTask, Gated };

std::string_view to_string(TrainMode mode);
TrainMode parse_train_mode(std::string_view text);

struct MnistTrainConfig {
    TrainMode mode = TrainMode::Gated;
    GateConfig gate;  // used by Gated; MultiTask is AlwaysOn(1)
    int epochs = 50;
    int batch = 128;
    std::uint64_t seed = 0;
    RmsPropConfig optimizer;
    /// Shared-parameter RMSprop statistics follow the main gradient only instead of the applied update.
    bool accumulate_main_only = false;
    Architecture arch;
};

struct EpochMetrics {
    int epoch = 0;
    double train_loss_main = 0.0;
    double train_loss_aux = 0.0;
    double test_error = 0.0;
    double mean_cos = 0.0;
    double mean_gate_weight = 0.0;
};

struct MnistTrainResult {
    DenseNet net;
    std::vector<EpochMetrics> epochs;
    /// min over steps of <applied shared update, shared main gradient>.
    double min_inner = 0.0;
};

/// Trains on `main_train` with `aux_train` as the auxiliary task (same order,
/// same labels, typically rotated images). Test error is measured on `test`
/// after every epoch.
MnistTrainResult train(const Dataset& main_train, const Dataset& aux_train, const Dataset& test,
                       const MnistTrainConfig& config);

/// Percentage of misclassified examples under argmax of the main head (ties to the lowest class).
double test_error(const DenseNet& net, const Dataset& test);

}  // namespace cosgate::dense
