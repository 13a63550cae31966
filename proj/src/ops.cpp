#include "xdepict/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>

namespace xdepict {
namespace {

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatrixRM<T>>;

template <typename T>
using ConstArray = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using MutArray = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
bool should_record(std::initializer_list<const BasicTensor<T>*> inputs) {
    if (Tape<T>::active() == nullptr) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const BasicTensor<T>* t) { return t && t->defined() && t->requires_grad(); });
}

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* op, const char* what) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
    }
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

// Output columns [lo, hi) whose input column ox*stride - pad + k lies inside [0, width).
inline void valid_columns(std::int64_t width, std::int64_t out_w, int stride, int pad, std::int64_t k,
                          std::int64_t& lo, std::int64_t& hi) {
    const std::int64_t first = pad - k;
    lo = first <= 0 ? 0 : (first + stride - 1) / stride;
    const std::int64_t last = width - 1 + pad - k;  // largest ox*stride allowed
    hi = last < 0 ? 0 : std::min(out_w, last / stride + 1);
    if (hi < lo) hi = lo;
}

// Unfolds one image [C,H,W] into a [C*kH*kW, Ho*Wo] patch matrix.
template <typename T>
void im2col(const T* image, std::int64_t channels, std::int64_t height, std::int64_t width, std::int64_t kh,
            std::int64_t kw, int stride, int pad, std::int64_t out_h, std::int64_t out_w, T* cols) {
    const std::int64_t plane = out_h * out_w;
    for (std::int64_t c = 0; c < channels; ++c) {
        for (std::int64_t ki = 0; ki < kh; ++ki) {
            for (std::int64_t kj = 0; kj < kw; ++kj) {
                T* row = cols + ((c * kh + ki) * kw + kj) * plane;
                std::int64_t lo = 0, hi = 0;
                valid_columns(width, out_w, stride, pad, kj, lo, hi);
                for (std::int64_t oy = 0; oy < out_h; ++oy) {
                    T* dst = row + oy * out_w;
                    const std::int64_t iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= height) {
                        std::fill(dst, dst + out_w, T(0));
                        continue;
                    }
                    const T* src = image + (c * height + iy) * width + kj - pad;
                    std::fill(dst, dst + lo, T(0));
                    if (stride == 1) {
                        std::copy(src + lo, src + hi, dst + lo);
                    } else {
                        for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride];
                    }
                    std::fill(dst + hi, dst + out_w, T(0));
                }
            }
        }
    }
}

// Adjoint of im2col: scatters patch gradients back onto the image.
template <typename T>
void col2im(const T* cols, std::int64_t channels, std::int64_t height, std::int64_t width, std::int64_t kh,
            std::int64_t kw, int stride, int pad, std::int64_t out_h, std::int64_t out_w, T* image) {
    const std::int64_t plane = out_h * out_w;
    for (std::int64_t c = 0; c < channels; ++c) {
        for (std::int64_t ki = 0; ki < kh; ++ki) {
            for (std::int64_t kj = 0; kj < kw; ++kj) {
                const T* row = cols + ((c * kh + ki) * kw + kj) * plane;
                std::int64_t lo = 0, hi = 0;
                valid_columns(width, out_w, stride, pad, kj, lo, hi);
                for (std::int64_t oy = 0; oy < out_h; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= height) continue;
                    const T* src = row + oy * out_w;
                    T* dst = image + (c * height + iy) * width + kj - pad;
                    if (stride == 1) {
                        for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
                    } else {
                        for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox * stride] += src[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
BasicTensor<T> conv2d_impl(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>* bias,
                           int stride, int pad) {
    require_rank(input, 4, "conv2d", "input");
    require_rank(weight, 4, "conv2d", "weight");
    if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
    const auto n = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
    const auto c_out = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != c_in) {
        throw ShapeError("conv2d: input has " + std::to_string(c_in) + " channels but weight " +
                         shape_str(weight.shape()) + " expects " + std::to_string(weight.dim(1)));
    }
    if (bias && (bias->rank() != 1 || bias->dim(0) != c_out)) {
        throw ShapeError("conv2d: bias " + shape_str(bias->shape()) + " does not match " + std::to_string(c_out) +
                         " output channels");
    }
    const auto out_h = conv_output_extent(h, kh, stride, pad);
    const auto out_w = conv_output_extent(w, kw, stride, pad);
    const std::int64_t plane = out_h * out_w;
    const std::int64_t patch = c_in * kh * kw;
    const std::int64_t in_stride = c_in * h * w;
    const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;

    BasicTensor<T> out(Shape{n, c_out, out_h, out_w});
    {
        AlignedVector<T> cols(pointwise ? 0 : static_cast<std::size_t>(patch * plane));
        ConstMapRM<T> wmat(weight.data().data(), c_out, patch);
        const T* x = input.data().data();
        T* y = out.data().data();
        for (std::int64_t i = 0; i < n; ++i) {
            const T* image = x + i * in_stride;
            if (!pointwise) im2col(image, c_in, h, w, kh, kw, stride, pad, out_h, out_w, cols.data());
            ConstMapRM<T> cmat(pointwise ? image : cols.data(), patch, plane);
            MapRM<T> omat(y + i * c_out * plane, c_out, plane);
            omat.noalias() = wmat * cmat;
            if (bias) {
                const T* b = bias->data().data();
                for (std::int64_t co = 0; co < c_out; ++co) omat.row(co).array() += b[co];
            }
        }
    }

    if (should_record<T>({&input, &weight, bias})) {
        BasicTensor<T> bias_copy = bias ? *bias : BasicTensor<T>();
        std::vector<BasicTensor<T>> inputs{input, weight};
        if (bias) inputs.push_back(*bias);
        Tape<T>::active()->record(
            "conv2d", std::move(inputs), out,
            [input, weight, bias_copy, out, stride, pad, n, c_in, h, w, c_out, kh, kw, out_h, out_w, plane, patch,
             in_stride, pointwise]() mutable {
                const T* g = out.grad().data();
                const T* x = input.data().data();
                ConstMapRM<T> wmat(weight.data().data(), c_out, patch);
                const bool want_x = input.requires_grad();
                const bool want_w = weight.requires_grad();
                AlignedVector<T> cols(pointwise ? 0 : static_cast<std::size_t>(patch * plane));
                AlignedVector<T> dcols(pointwise ? 0 : static_cast<std::size_t>(patch * plane));
                T* dx = want_x ? input.grad_buffer().data() : nullptr;
                T* dw = want_w ? weight.grad_buffer().data() : nullptr;
                for (std::int64_t i = 0; i < n; ++i) {
                    ConstMapRM<T> gmat(g + i * c_out * plane, c_out, plane);
                    const T* image = x + i * in_stride;
                    if (want_w) {
                        if (!pointwise) im2col(image, c_in, h, w, kh, kw, stride, pad, out_h, out_w, cols.data());
                        ConstMapRM<T> cmat(pointwise ? image : cols.data(), patch, plane);
                        MapRM<T> dwmat(dw, c_out, patch);
                        dwmat.noalias() += gmat * cmat.transpose();
                    }
                    if (want_x) {
                        if (pointwise) {
                            MapRM<T> dxmat(dx + i * in_stride, patch, plane);
                            dxmat.noalias() += wmat.transpose() * gmat;
                        } else {
                            MapRM<T> dcmat(dcols.data(), patch, plane);
                            dcmat.noalias() = wmat.transpose() * gmat;
                            col2im(dcols.data(), c_in, h, w, kh, kw, stride, pad, out_h, out_w, dx + i * in_stride);
                        }
                    }
                }
                if (bias_copy.defined() && bias_copy.requires_grad()) {
                    T* db = bias_copy.grad_buffer().data();
                    for (std::int64_t i = 0; i < n; ++i) {
                        for (std::int64_t co = 0; co < c_out; ++co) {
                            const T* row = g + (i * c_out + co) * plane;
                            T acc = 0;
                            for (std::int64_t p = 0; p < plane; ++p) acc += row[p];
                            db[co] += acc;
                        }
                    }
                }
            });
    }
    return out;
}

}  // namespace

std::int64_t conv_output_extent(std::int64_t extent, std::int64_t kernel, int stride, int pad) {
    const std::int64_t padded = extent + 2 * static_cast<std::int64_t>(pad);
    if (kernel > padded) {
        throw ShapeError("conv2d: kernel extent " + std::to_string(kernel) + " exceeds padded input extent " +
                         std::to_string(padded));
    }
    return (padded - kernel) / stride + 1;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      int stride, int pad) {
    return conv2d_impl(input, weight, &bias, stride, pad);
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, int stride, int pad) {
    return conv2d_impl<T>(input, weight, nullptr, stride, pad);
}

template <typename T>
BasicTensor<T> batch_norm2d(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                            RunningStats<T>& stats, Mode mode, BatchNormOptions options) {
    require_rank(input, 4, "batch_norm2d", "input");
    const auto n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw ShapeError("batch_norm2d: gamma/beta must have shape [" + std::to_string(c) + "]");
    }
    const std::int64_t count = n * hw;
    std::vector<T> mean_c(static_cast<std::size_t>(c));
    std::vector<T> inv_std(static_cast<std::size_t>(c));
    const T* x = input.data().data();

    if (mode == Mode::train) {
        if (count < 2) throw ShapeError("batch_norm2d: train mode needs N*H*W >= 2 values per channel");
        if (!stats.recorded()) stats = RunningStats<T>::identity(c);
        if (stats.mean.shape() != Shape{c} || stats.var.shape() != Shape{c}) {
            throw ShapeError("batch_norm2d: running stats do not match " + std::to_string(c) + " channels");
        }
        auto rmean = stats.mean.data();
        auto rvar = stats.var.data();
        for (std::int64_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += static_cast<double>(ConstArray<T>(x + (i * c + ch) * hw, hw).sum());
            const double mu = s / static_cast<double>(count);
            double ss = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                ss += static_cast<double>((ConstArray<T>(x + (i * c + ch) * hw, hw) - static_cast<T>(mu)).square().sum());
            }
            const double var = ss / static_cast<double>(count);
            mean_c[ch] = static_cast<T>(mu);
            inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + options.eps));
            const double unbiased = ss / static_cast<double>(count - 1);
            rmean[ch] = static_cast<T>((1.0 - options.momentum) * rmean[ch] + options.momentum * mu);
            rvar[ch] = static_cast<T>((1.0 - options.momentum) * rvar[ch] + options.momentum * unbiased);
        }
    } else {
        if (!stats.recorded()) throw Error("batch_norm2d: eval mode requires recorded running statistics");
        if (stats.mean.shape() != Shape{c} || stats.var.shape() != Shape{c}) {
            throw ShapeError("batch_norm2d: running stats do not match " + std::to_string(c) + " channels");
        }
        for (std::int64_t ch = 0; ch < c; ++ch) {
            mean_c[ch] = stats.mean.data()[ch];
            inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var.data()[ch]) + options.eps));
        }
    }

    BasicTensor<T> out(input.shape());
    T* y = out.data().data();
    const T* g = gamma.data().data();
    const T* b = beta.data().data();
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const T scale_c = g[ch] * inv_std[ch];
            const T shift_c = b[ch] - mean_c[ch] * scale_c;
            MutArray<T>(y + (i * c + ch) * hw, hw) = ConstArray<T>(x + (i * c + ch) * hw, hw) * scale_c + shift_c;
        }
    }

    if (should_record<T>({&input, &gamma, &beta})) {
        Tape<T>::active()->record(
            "batch_norm2d", {input, gamma, beta}, out,
            [input, gamma, beta, out, mean_c, inv_std, mode, n, c, hw, count]() mutable {
                const T* dy = out.grad().data();
                const T* xv = input.data().data();
                const T* gv = gamma.data().data();
                T* dx = input.requires_grad() ? input.grad_buffer().data() : nullptr;
                T* dg = gamma.requires_grad() ? gamma.grad_buffer().data() : nullptr;
                T* db = beta.requires_grad() ? beta.grad_buffer().data() : nullptr;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const T mu = mean_c[ch], is = inv_std[ch];
                    double sum_dy = 0.0, sum_dy_xhat = 0.0;
                    for (std::int64_t i = 0; i < n; ++i) {
                        const std::int64_t off = (i * c + ch) * hw;
                        ConstArray<T> dyr(dy + off, hw), xr(xv + off, hw);
                        sum_dy += static_cast<double>(dyr.sum());
                        sum_dy_xhat += static_cast<double>((dyr * (xr - mu)).sum()) * is;
                    }
                    if (dg) dg[ch] += static_cast<T>(sum_dy_xhat);
                    if (db) db[ch] += static_cast<T>(sum_dy);
                    if (!dx) continue;
                    if (mode == Mode::train) {
                        const double k = static_cast<double>(gv[ch]) * is / static_cast<double>(count);
                        const T a = static_cast<T>(k * static_cast<double>(count));
                        const T b0 = static_cast<T>(-k * sum_dy);
                        const T b1 = static_cast<T>(-k * sum_dy_xhat * is);
                        for (std::int64_t i = 0; i < n; ++i) {
                            const std::int64_t off = (i * c + ch) * hw;
                            MutArray<T>(dx + off, hw) +=
                                a * ConstArray<T>(dy + off, hw) + b0 + b1 * (ConstArray<T>(xv + off, hw) - mu);
                        }
                    } else {
                        const T k = gv[ch] * is;
                        for (std::int64_t i = 0; i < n; ++i) {
                            const std::int64_t off = (i * c + ch) * hw;
                            MutArray<T>(dx + off, hw) += k * ConstArray<T>(dy + off, hw);
                        }
                    }
                }
            });
    }
    return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
    BasicTensor<T> out(input.shape());
    auto x = input.data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] < T(0) ? T(0) : x[i];  // NaN passes through
    if (should_record<T>({&input})) {
        Tape<T>::active()->record("relu", {input}, out, [input, out]() mutable {
            const T* xv = input.data().data();
            const T* g = out.grad().data();
            T* dx = input.grad_buffer().data();
            const auto count = static_cast<std::size_t>(input.numel());
            for (std::size_t i = 0; i < count; ++i) dx[i] += xv[i] > T(0) ? g[i] : T(0);
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
    require_rank(input, 2, "linear", "input");
    require_rank(weight, 2, "linear", "weight");
    const auto n = input.dim(0), f_in = input.dim(1), f_out = weight.dim(0);
    if (weight.dim(1) != f_in) {
        throw ShapeError("linear: input has " + std::to_string(f_in) + " features but weight " +
                         shape_str(weight.shape()) + " expects " + std::to_string(weight.dim(1)));
    }
    if (bias.shape() != Shape{f_out}) {
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(f_out) +
                         " outputs");
    }
    BasicTensor<T> out(Shape{n, f_out});
    ConstMapRM<T> xm(input.data().data(), n, f_in);
    ConstMapRM<T> wm(weight.data().data(), f_out, f_in);
    MapRM<T> ym(out.data().data(), n, f_out);
    ym.noalias() = xm * wm.transpose();
    const T* b = bias.data().data();
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < f_out; ++j) ym(i, j) += b[j];
    }
    if (should_record<T>({&input, &weight, &bias})) {
        Tape<T>::active()->record("linear", {input, weight, bias}, out,
                                  [input, weight, bias, out, n, f_in, f_out]() mutable {
                                      ConstMapRM<T> g(out.grad().data(), n, f_out);
                                      if (input.requires_grad()) {
                                          MapRM<T> dx(input.grad_buffer().data(), n, f_in);
                                          ConstMapRM<T> wm(weight.data().data(), f_out, f_in);
                                          dx.noalias() += g * wm;
                                      }
                                      if (weight.requires_grad()) {
                                          MapRM<T> dw(weight.grad_buffer().data(), f_out, f_in);
                                          ConstMapRM<T> xm(input.data().data(), n, f_in);
                                          dw.noalias() += g.transpose() * xm;
                                      }
                                      if (bias.requires_grad()) {
                                          T* db = bias.grad_buffer().data();
                                          for (std::int64_t i = 0; i < n; ++i) {
                                              for (std::int64_t j = 0; j < f_out; ++j) db[j] += g(i, j);
                                          }
                                      }
                                  });
    }
    return out;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input) {
    require_rank(input, 4, "global_avg_pool", "input");
    const auto n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    BasicTensor<T> out(Shape{n, c});
    const T* x = input.data().data();
    T* y = out.data().data();
    for (std::int64_t i = 0; i < n * c; ++i) {
        double s = 0.0;
        for (std::int64_t j = 0; j < hw; ++j) s += x[i * hw + j];
        y[i] = static_cast<T>(s / static_cast<double>(hw));
    }
    if (should_record<T>({&input})) {
        Tape<T>::active()->record("global_avg_pool", {input}, out, [input, out, n, c, hw]() mutable {
            const T* g = out.grad().data();
            T* dx = input.grad_buffer().data();
            const T inv = T(1) / static_cast<T>(hw);
            for (std::int64_t i = 0; i < n * c; ++i) {
                const T gi = g[i] * inv;
                for (std::int64_t j = 0; j < hw; ++j) dx[i * hw + j] += gi;
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> weighted_cross_entropy(const BasicTensor<T>& logits, std::span<const std::int64_t> targets,
                                      const BasicTensor<T>& class_weights) {
    require_rank(logits, 2, "weighted_cross_entropy", "logits");
    const auto n = logits.dim(0), k = logits.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != n) {
        throw ShapeError("weighted_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows of logits");
    }
    if (class_weights.shape() != Shape{k}) {
        throw ShapeError("weighted_cross_entropy: class weights must have shape [" + std::to_string(k) + "]");
    }
    const T* w = class_weights.data().data();
    for (std::int64_t j = 0; j < k; ++j) {
        if (!(w[j] > T(0))) throw Error("weighted_cross_entropy: class weights must be positive");
    }
    for (auto t : targets) {
        if (t < 0 || t >= k) {
            throw Error("weighted_cross_entropy: target index " + std::to_string(t) + " outside [0," +
                        std::to_string(k) + ")");
        }
    }
    std::vector<std::int64_t> target_copy(targets.begin(), targets.end());
    const T* z = logits.data().data();
    std::vector<double> lse(static_cast<std::size_t>(n));
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const T* row = z + i * k;
        const double m = *std::max_element(row, row + k);
        double s = 0.0;
        for (std::int64_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
        lse[i] = m + std::log(s);
        total += w[target_copy[i]] * (lse[i] - row[target_copy[i]]);
    }
    auto out = BasicTensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
    if (should_record<T>({&logits, &class_weights})) {
        Tape<T>::active()->record(
            "weighted_cross_entropy", {logits, class_weights}, out,
            [logits, class_weights, out, target_copy, lse, n, k]() mutable {
                const double g = out.grad()[0] / static_cast<double>(n);
                const T* zv = logits.data().data();
                const T* wv = class_weights.data().data();
                if (logits.requires_grad()) {
                    T* dz = logits.grad_buffer().data();
                    for (std::int64_t i = 0; i < n; ++i) {
                        const auto t = target_copy[i];
                        const double wt = wv[t] * g;
                        for (std::int64_t j = 0; j < k; ++j) {
                            const double p = std::exp(zv[i * k + j] - lse[i]);
                            dz[i * k + j] += static_cast<T>(wt * (p - (j == t ? 1.0 : 0.0)));
                        }
                    }
                }
                if (class_weights.requires_grad()) {
                    T* dw = class_weights.grad_buffer().data();
                    for (std::int64_t i = 0; i < n; ++i) {
                        const auto t = target_copy[i];
                        dw[t] += static_cast<T>(g * (lse[i] - zv[i * k + t]));
                    }
                }
            });
    }
    return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a, b, "add");
    BasicTensor<T> out(a.shape());
    auto x = a.data(), y = b.data();
    auto z = out.data();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
    if (should_record<T>({&a, &b})) {
        Tape<T>::active()->record("add", {a, b}, out, [a, b, out]() mutable {
            auto g = out.grad();
            if (a.requires_grad()) {
                auto d = a.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
            if (b.requires_grad()) {
                auto d = b.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a, b, "sub");
    BasicTensor<T> out(a.shape());
    auto x = a.data(), y = b.data();
    auto z = out.data();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
    if (should_record<T>({&a, &b})) {
        Tape<T>::active()->record("sub", {a, b}, out, [a, b, out]() mutable {
            auto g = out.grad();
            if (a.requires_grad()) {
                auto d = a.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
            if (b.requires_grad()) {
                auto d = b.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a, b, "mul");
    BasicTensor<T> out(a.shape());
    auto x = a.data(), y = b.data();
    auto z = out.data();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
    if (should_record<T>({&a, &b})) {
        Tape<T>::active()->record("mul", {a, b}, out, [a, b, out]() mutable {
            auto g = out.grad();
            auto xv = a.data(), yv = b.data();
            if (a.requires_grad()) {
                auto d = a.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * yv[i];
            }
            if (b.requires_grad()) {
                auto d = b.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * xv[i];
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
    BasicTensor<T> out(a.shape());
    auto x = a.data();
    auto z = out.data();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * factor;
    if (should_record<T>({&a})) {
        Tape<T>::active()->record("scale", {a}, out, [a, out, factor]() mutable {
            auto g = out.grad();
            auto d = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
    double s = 0.0;
    for (T v : a.data()) s += v;
    auto out = BasicTensor<T>::scalar(static_cast<T>(s));
    if (should_record<T>({&a})) {
        Tape<T>::active()->record("sum", {a}, out, [a, out]() mutable {
            const T g = out.grad()[0];
            for (T& d : a.grad_buffer()) d += g;
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
    double s = 0.0;
    for (T v : a.data()) s += v;
    const auto count = a.numel();
    auto out = BasicTensor<T>::scalar(static_cast<T>(s / static_cast<double>(count)));
    if (should_record<T>({&a})) {
        Tape<T>::active()->record("mean", {a}, out, [a, out, count]() mutable {
            const T g = out.grad()[0] / static_cast<T>(count);
            for (T& d : a.grad_buffer()) d += g;
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> narrow(const BasicTensor<T>& a, std::int64_t begin, std::int64_t count) {
    const auto rows = a.dim(0);
    if (begin < 0 || count < 1 || begin + count > rows) {
        throw ShapeError("narrow: rows [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                         ") outside " + shape_str(a.shape()));
    }
    Shape shape = a.shape();
    shape[0] = count;
    const std::int64_t row_size = a.numel() / rows;
    auto src = a.data().subspan(static_cast<std::size_t>(begin * row_size), static_cast<std::size_t>(count * row_size));
    BasicTensor<T> out(shape, std::vector<T>(src.begin(), src.end()));
    if (should_record<T>({&a})) {
        Tape<T>::active()->record("narrow", {a}, out, [a, out, begin, row_size]() mutable {
            auto g = out.grad();
            auto d = a.grad_buffer().subspan(static_cast<std::size_t>(begin * row_size), g.size());
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> row_distance(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_rank(a, 2, "row_distance", "a");
    require_same_shape(a, b, "row_distance");
    const auto n = a.dim(0), d = a.dim(1);
    BasicTensor<T> out(Shape{n});
    const T* x = a.data().data();
    const T* y = b.data().data();
    T* z = out.data().data();
    for (std::int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double diff = static_cast<double>(x[i * d + j]) - y[i * d + j];
            s += diff * diff;
        }
        z[i] = static_cast<T>(std::sqrt(s));
    }
    if (should_record<T>({&a, &b})) {
        Tape<T>::active()->record("row_distance", {a, b}, out, [a, b, out, n, d]() mutable {
            const T* g = out.grad().data();
            const T* x = a.data().data();
            const T* y = b.data().data();
            const T* dist = out.data().data();
            T* da = a.requires_grad() ? a.grad_buffer().data() : nullptr;
            T* db = b.requires_grad() ? b.grad_buffer().data() : nullptr;
            for (std::int64_t i = 0; i < n; ++i) {
                if (dist[i] == T(0)) continue;
                const T k = g[i] / dist[i];
                for (std::int64_t j = 0; j < d; ++j) {
                    const T v = k * (x[i * d + j] - y[i * d + j]);
                    if (da) da[i * d + j] += v;
                    if (db) db[i * d + j] -= v;
                }
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& a) {
    require_rank(a, 2, "l2_normalize_rows", "input");
    const auto n = a.dim(0), d = a.dim(1);
    BasicTensor<T> out(a.shape());
    std::vector<T> norms(static_cast<std::size_t>(n));
    const T* x = a.data().data();
    T* y = out.data().data();
    for (std::int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::int64_t j = 0; j < d; ++j) s += static_cast<double>(x[i * d + j]) * x[i * d + j];
        norms[i] = static_cast<T>(std::max(std::sqrt(s), 1e-12));
        for (std::int64_t j = 0; j < d; ++j) y[i * d + j] = x[i * d + j] / norms[i];
    }
    if (should_record<T>({&a})) {
        Tape<T>::active()->record("l2_normalize_rows", {a}, out, [a, out, norms, n, d]() mutable {
            const T* g = out.grad().data();
            const T* y = out.data().data();
            T* dx = a.grad_buffer().data();
            for (std::int64_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (std::int64_t j = 0; j < d; ++j) dot += static_cast<double>(y[i * d + j]) * g[i * d + j];
                for (std::int64_t j = 0; j < d; ++j) {
                    dx[i * d + j] += static_cast<T>((g[i * d + j] - y[i * d + j] * dot) / norms[i]);
                }
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> margin_ranking_loss(const BasicTensor<T>& d_ap, const BasicTensor<T>& d_an, T margin) {
    require_rank(d_ap, 1, "margin_ranking_loss", "d_ap");
    require_same_shape(d_ap, d_an, "margin_ranking_loss");
    const auto n = d_ap.dim(0);
    auto p = d_ap.data(), q = d_an.data();
    std::vector<char> active(static_cast<std::size_t>(n));
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double h = static_cast<double>(margin) + p[i] - q[i];
        active[i] = h > 0.0 || std::isnan(h);  // NaN must reach the loss
        if (active[i]) total += h;
    }
    auto out = BasicTensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
    if (should_record<T>({&d_ap, &d_an})) {
        Tape<T>::active()->record("margin_ranking_loss", {d_ap, d_an}, out, [d_ap, d_an, out, active, n]() mutable {
            const T g = out.grad()[0] / static_cast<T>(n);
            T* dp = d_ap.requires_grad() ? d_ap.grad_buffer().data() : nullptr;
            T* dn = d_an.requires_grad() ? d_an.grad_buffer().data() : nullptr;
            for (std::int64_t i = 0; i < n; ++i) {
                if (!active[i]) continue;
                if (dp) dp[i] += g;
                if (dn) dn[i] -= g;
            }
        });
    }
    return out;
}

#define XDEPICT_INSTANTIATE_OPS(T)                                                                               \
    template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, int, int); \
    template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, int, int);                       \
    template BasicTensor<T> batch_norm2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,     \
                                         RunningStats<T>&, Mode, BatchNormOptions);                               \
    template BasicTensor<T> relu(const BasicTensor<T>&);                                                          \
    template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);          \
    template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                               \
    template BasicTensor<T> weighted_cross_entropy(const BasicTensor<T>&, std::span<const std::int64_t>,          \
                                                   const BasicTensor<T>&);                                        \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                    \
    template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                    \
    template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                    \
    template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                      \
    template BasicTensor<T> sum(const BasicTensor<T>&);                                                           \
    template BasicTensor<T> mean(const BasicTensor<T>&);                                                          \
    template BasicTensor<T> narrow(const BasicTensor<T>&, std::int64_t, std::int64_t);                            \
    template BasicTensor<T> row_distance(const BasicTensor<T>&, const BasicTensor<T>&);                           \
    template BasicTensor<T> l2_normalize_rows(const BasicTensor<T>&);                                             \
    template BasicTensor<T> margin_ranking_loss(const BasicTensor<T>&, const BasicTensor<T>&, T);

XDEPICT_INSTANTIATE_OPS(float)
XDEPICT_INSTANTIATE_OPS(double)

#undef XDEPICT_INSTANTIATE_OPS

}  // namespace xdepict
