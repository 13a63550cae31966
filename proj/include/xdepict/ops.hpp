#pragma once

#include <cstdint>
#include <span>

#include "xdepict/tensor.hpp"

// Differentiable operations. Every function records itself on the active tape
// (see Tape / TapeScope) when at least one input requires grad; otherwise it
// is a plain forward computation.
namespace xdepict {

enum class Mode { train, eval };

// 2-D cross-correlation (no kernel flip) with zero padding.
// input [N,Cin,H,W], weight [Cout,Cin,kH,kW], bias [Cout] -> [N,Cout,H',W']
// with H' = (H + 2*pad - kH) / stride + 1.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      int stride, int pad);
// Bias-free variant used inside residual blocks, where BatchNorm follows.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, int stride, int pad);

std::int64_t conv_output_extent(std::int64_t extent, std::int64_t kernel, int stride, int pad);

// Running statistics of a BatchNorm layer. Undefined tensors mean nothing has
// been recorded yet.
template <typename T>
struct RunningStats {
    BasicTensor<T> mean;
    BasicTensor<T> var;

    bool recorded() const noexcept { return mean.defined() && var.defined(); }
    static RunningStats identity(std::int64_t channels) {
        return {BasicTensor<T>(Shape{channels}, T(0)), BasicTensor<T>(Shape{channels}, T(1))};
    }
};

struct BatchNormOptions {
    double eps = 1e-5;
    double momentum = 0.1;
};

// Train mode normalizes with biased batch statistics over (N,H,W) and updates
// the running stats (unbiased variance) by exponential moving average. Eval
// mode uses the running stats only.
template <typename T>
BasicTensor<T> batch_norm2d(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                            RunningStats<T>& stats, Mode mode, BatchNormOptions options = {});

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

// input [N,Fin], weight [Fout,Fin], bias [Fout] -> input * weight^T + bias.
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

// [N,C,H,W] -> [N,C] spatial mean.
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input);

// Mean over samples of w[target] * -log softmax(logits)[target].
template <typename T>
BasicTensor<T> weighted_cross_entropy(const BasicTensor<T>& logits, std::span<const std::int64_t> targets,
                                      const BasicTensor<T>& class_weights);

// Elementwise arithmetic on equal shapes.
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

// Reductions to a shape-[1] tensor.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a);

// Rows [begin, begin+count) along the first axis.
template <typename T>
BasicTensor<T> narrow(const BasicTensor<T>& a, std::int64_t begin, std::int64_t count);

// Euclidean distance between matching rows: [N,D],[N,D] -> [N].
// The gradient at zero distance is taken as zero.
template <typename T>
BasicTensor<T> row_distance(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Each row divided by its Euclidean norm.
template <typename T>
BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& a);

// mean_i max(0, margin + d_ap[i] - d_an[i]).
template <typename T>
BasicTensor<T> margin_ranking_loss(const BasicTensor<T>& d_ap, const BasicTensor<T>& d_an, T margin);

}  // namespace xdepict
