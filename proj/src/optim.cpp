#include "xdepict/optim.hpp"

#include <string>

namespace xdepict {

void sgd_step(std::span<Tensor> params, float lr) {
    if (!(lr >= 0.0f)) throw Error("sgd_step: learning rate must be non-negative");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) {
            throw Error("sgd_step: parameter " + std::to_string(i) + " " + shape_str(params[i].shape()) +
                        " has no gradient");
        }
    }
    for (auto& p : params) {
        auto values = p.data();
        auto grads = p.grad();
        for (std::size_t j = 0; j < values.size(); ++j) values[j] -= lr * grads[j];
        p.zero_grad();
    }
}

}  // namespace xdepict
