#pragma once

#include <span>

#include "xdepict/tensor.hpp"

namespace xdepict {

// Plain stochastic gradient descent: p <- p - lr * g, then g <- 0.
// Throws if a parameter has no gradient buffer.
void sgd_step(std::span<Tensor> params, float lr);

}  // namespace xdepict
