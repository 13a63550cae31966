#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xdepict/error.hpp"

namespace xdepict {

using Shape = std::vector<std::int64_t>;

// Storage aligned to 64 bytes. Vectorized reductions split their input by
// address alignment, so a fixed alignment keeps their summation order (and
// therefore training) identical from run to run.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array. A BasicTensor is a shared handle: copies refer to the
// same storage, which is what lets the tape route gradients back to the
// tensors a graph was built from. Use clone() for an independent copy.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Shape shape, T fill = T(0));
    BasicTensor(Shape shape, std::vector<T> values);

    static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, std::vector<T>{value}); }

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::int64_t dim(std::size_t axis) const;
    std::int64_t numel() const;

    std::span<T> data();
    std::span<const T> data() const;
    T item() const;

    bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
    BasicTensor& set_requires_grad(bool on);

    bool has_grad() const noexcept { return impl_ && !impl_->grad.empty(); }
    std::span<const T> grad() const;
    // Gradient buffer, allocated as zeros on first access.
    std::span<T> grad_buffer() const;
    void zero_grad() const;
    // Drops the gradient buffer entirely (has_grad() becomes false).
    void release_grad() const;

    // Deep copy of shape and values. The copy does not require grad.
    BasicTensor clone() const;

    bool same_storage(const BasicTensor& other) const noexcept { return impl_ == other.impl_; }

private:
    struct Impl {
        Shape shape;
        AlignedVector<T> data;
        AlignedVector<T> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// Ordered record of differentiable operations. Operations are recorded only
// while a TapeScope for the tape is alive on the current thread and at least
// one input requires grad.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void()>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::string_view op, std::vector<BasicTensor<T>> inputs, BasicTensor<T> output,
                BackwardFn backward);

    // Seeds d(loss)/d(loss) = 1 and runs the recorded backward functions in
    // exact reverse order. Leaf gradients accumulate into existing buffers;
    // gradients of recorded outputs are reset first.
    void backward(const BasicTensor<T>& loss);

    void clear() { entries_.clear(); }
    std::size_t size() const noexcept { return entries_.size(); }
    std::vector<std::string_view> op_names() const;

    // Tape active on this thread, or nullptr.
    static Tape* active() noexcept;
    // Installs a tape as active on this thread; returns the previous one.
    static Tape* exchange_active(Tape* tape) noexcept;

private:
    struct Entry {
        std::string_view op;
        std::vector<BasicTensor<T>> inputs;
        BasicTensor<T> output;
        BackwardFn backward;
    };
    std::vector<Entry> entries_;
    static thread_local Tape* active_;
};

template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::exchange_active(&tape)) {}
    ~TapeScope() { Tape<T>::exchange_active(previous_); }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* previous_;
};

// Runs backward on the tape active on this thread.
template <typename T>
void backward(const BasicTensor<T>& loss);

// Throws DivergenceError when any value is NaN or Inf.
template <typename T>
void check_finite(const BasicTensor<T>& t, std::string_view context);

}  // namespace xdepict
