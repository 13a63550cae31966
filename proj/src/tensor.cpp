#include "xdepict/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace xdepict {

namespace {

#if defined(__GLIBC__)
// Activation buffers of a few MB are allocated and freed every step. Keeping
// them on the heap instead of fresh mmap pages avoids a page fault per 4 KB.
const bool heap_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
}();
#endif

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto extent : shape) {
        if (extent <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        n *= extent;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
    out << ']';
    return out.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
    const auto n = shape_numel(shape);
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<std::size_t>(n), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
    const auto n = shape_numel(shape);
    if (static_cast<std::int64_t>(values.size()) != n) {
        throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(n) + " values, got " +
                         std::to_string(values.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data.assign(values.begin(), values.end());
}

template <typename T>
const Shape& BasicTensor<T>::shape() const {
    if (!impl_) throw Error("use of undefined tensor");
    return impl_->shape;
}

template <typename T>
std::int64_t BasicTensor<T>::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[axis];
}

template <typename T>
std::int64_t BasicTensor<T>::numel() const {
    return static_cast<std::int64_t>(impl_ ? impl_->data.size() : 0);
}

template <typename T>
std::span<T> BasicTensor<T>::data() {
    if (!impl_) throw Error("use of undefined tensor");
    return impl_->data;
}

template <typename T>
std::span<const T> BasicTensor<T>::data() const {
    if (!impl_) throw Error("use of undefined tensor");
    return impl_->data;
}

template <typename T>
T BasicTensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_str(shape()));
    return impl_->data[0];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool on) {
    if (!impl_) throw Error("use of undefined tensor");
    impl_->requires_grad = on;
    return *this;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
    if (!has_grad()) throw Error("tensor " + shape_str(shape()) + " has no gradient");
    return impl_->grad;
}

template <typename T>
std::span<T> BasicTensor<T>::grad_buffer() const {
    if (!impl_) throw Error("use of undefined tensor");
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() const {
    if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
void BasicTensor<T>::release_grad() const {
    if (impl_) AlignedVector<T>().swap(impl_->grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
    if (!impl_) return {};
    BasicTensor out(impl_->shape);
    out.impl_->data = impl_->data;
    return out;
}

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

template <typename T>
Tape<T>* Tape<T>::active() noexcept {
    return active_;
}

template <typename T>
Tape<T>* Tape<T>::exchange_active(Tape* tape) noexcept {
    Tape* previous = active_;
    active_ = tape;
    return previous;
}

template <typename T>
void Tape<T>::record(std::string_view op, std::vector<BasicTensor<T>> inputs, BasicTensor<T> output,
                     BackwardFn backward) {
    output.set_requires_grad(true);
    entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const BasicTensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward needs a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
    }
    const bool recorded = std::any_of(entries_.rbegin(), entries_.rend(),
                                      [&](const Entry& e) { return e.output.same_storage(loss); });
    if (!recorded) throw Error("backward: loss was not produced by an operation recorded on this tape");

    for (auto& e : entries_) e.output.release_grad();
    auto seed = loss.grad_buffer();
    seed[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->output.has_grad()) it->backward();
    }
}

template <typename T>
std::vector<std::string_view> Tape<T>::op_names() const {
    std::vector<std::string_view> names;
    names.reserve(entries_.size());
    for (const auto& e : entries_) names.push_back(e.op);
    return names;
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
    auto* tape = Tape<T>::active();
    if (!tape) throw Error("backward called with no active tape");
    tape->backward(loss);
}

template <typename T>
void check_finite(const BasicTensor<T>& t, std::string_view context) {
    for (T v : t.data()) {
        if (!std::isfinite(v)) throw DivergenceError("non-finite value in " + std::string(context));
    }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward<float>(const BasicTensor<float>&);
template void backward<double>(const BasicTensor<double>&);
template void check_finite<float>(const BasicTensor<float>&, std::string_view);
template void check_finite<double>(const BasicTensor<double>&, std::string_view);

}  // namespace xdepict
