#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xdepict/ops.hpp"
#include "xdepict/rng.hpp"
#include "xdepict/tensor.hpp"

namespace xdepict {

enum class HeadKind { classifier, embedder };

std::string_view to_string(HeadKind kind);
HeadKind parse_head_kind(std::string_view text);

// Hyperparameters of the residual network. The defaults describe the desk
// scale variant: a 14-layer network on 64x64 grayscale input.
struct ArchConfig {
    int in_channels = 1;
    std::vector<int> stage_channels{16, 32, 64};
    int blocks_per_stage = 2;
    int num_classes = 8;
    int embedding_dim = 128;
    int input_size = 64;
    // L2-normalize embeddings before they leave the network.
    bool normalize_embedding = false;

    void validate() const;
    // Everything below the head agrees.
    bool same_backbone(const ArchConfig& other) const;
    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

struct TrainingMeta {
    std::int64_t epochs = 0;
    double final_loss = 0.0;
    std::uint64_t seed = 0;
    friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

// Architecture plus a named copy of every parameter and BatchNorm buffer.
struct Checkpoint {
    ArchConfig arch;
    HeadKind head = HeadKind::classifier;
    std::vector<NamedTensor> tensors;
    TrainingMeta meta;

    const NamedTensor* find(std::string_view name) const;
};

struct ConvLayer {
    Tensor weight;  // [out, in, k, k], no bias
    int stride = 1;
    int pad = 0;

    ConvLayer() = default;
    ConvLayer(int in, int out, int kernel, int stride, int pad, Rng& rng);
    Tensor forward(const Tensor& x) const { return conv2d(x, weight, stride, pad); }
};

struct BatchNormLayer {
    Tensor gamma;
    Tensor beta;
    RunningStats<float> stats;

    BatchNormLayer() = default;
    explicit BatchNormLayer(int channels);
    Tensor forward(const Tensor& x, Mode mode);
    Tensor forward_eval(const Tensor& x) const;
};

// relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x)), where the shortcut is
// the identity, or a strided 1x1 convolution + BN when the block changes
// resolution or width.
class ResidualBlock {
public:
    ResidualBlock(int in, int out, int stride, Rng& rng);

    Tensor forward(const Tensor& x, Mode mode);
    Tensor forward_eval(const Tensor& x) const;
    bool has_projection() const { return projection_.has_value(); }

    void visit(const std::string& prefix, std::vector<NamedTensor>& out) const;

    ConvLayer conv1;
    BatchNormLayer bn1;
    ConvLayer conv2;
    BatchNormLayer bn2;

private:
    std::optional<ConvLayer> projection_;
    std::optional<BatchNormLayer> projection_bn_;
};

class ResNet {
public:
    // He-normal weights from `seed`, zero biases, BN gamma 1 / beta 0, running
    // stats at mean 0 / variance 1.
    ResNet(const ArchConfig& config, HeadKind head, std::uint64_t seed);

    // Rebuilds the architecture and copies every tensor; throws FormatError
    // naming the tensor when one is missing or has the wrong shape.
    static ResNet from_checkpoint(const Checkpoint& checkpoint);

    ResNet(const ResNet&) = delete;
    ResNet& operator=(const ResNet&) = delete;
    ResNet(ResNet&&) = default;
    ResNet& operator=(ResNet&&) = default;

    const ArchConfig& arch() const { return arch_; }
    HeadKind head() const { return head_; }

    // Head output: logits [N, num_classes] or embeddings [N, embedding_dim].
    Tensor forward(const Tensor& batch, Mode mode);
    // Eval mode without touching any state; safe to call concurrently.
    Tensor forward_eval(const Tensor& batch) const;

    Tensor forward_logits(const Tensor& batch, Mode mode);
    Tensor forward_embedding(const Tensor& batch, Mode mode);

    std::vector<Tensor> parameters() const;
    // Parameters and BatchNorm buffers in a fixed order.
    std::vector<NamedTensor> named_tensors() const;
    std::int64_t parameter_count() const;

    // Deep copy of the current state.
    Checkpoint to_checkpoint(TrainingMeta meta = {}) const;
    // Copies values from a checkpoint of the same architecture and head.
    void load_state(const Checkpoint& checkpoint);

private:
    void check_input(const Tensor& batch) const;
    std::string head_prefix() const;

    ArchConfig arch_;
    HeadKind head_;
    ConvLayer stem_;
    BatchNormLayer stem_bn_;
    std::vector<std::vector<ResidualBlock>> stages_;
    Tensor head_weight_;
    Tensor head_bias_;
};

// Replaces the classifier head of a checkpoint with a freshly initialized
// linear embedding head of width requested.embedding_dim. Everything below the
// head is copied verbatim. The backbone of `requested` must match the
// checkpoint's.
ResNet swap_head_to_embedding(const Checkpoint& classifier, const ArchConfig& requested, std::uint64_t seed);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Additionally requires the stored architecture to equal `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ArchConfig& expected);

}  // namespace xdepict
