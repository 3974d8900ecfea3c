// Second-moment adaptive step: acc <- acc*rho + g^2*(1-rho),
// p <- p - lr * g / (sqrt(acc) + 1e-8). Chosen over momentum-of-gradient
// schemes because the gradient half of the VQ inputs is EMA-smoothed, which
// interacts badly with optimizers that accumulate gradient history.
#pragma once

#include <cmath>
#include <cstddef>

#include "vqgnn/common.hpp"

namespace vqgnn {

constexpr double kRmsEps = 1e-8;

template <typename T>
void rms_step(T* param, const T* grad, T* acc, std::size_t count, double lr, double smoothing) {
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::isfinite(static_cast<double>(grad[i])))
            throw numeric_error("rms_step: non-finite gradient");
        acc[i] = static_cast<T>(acc[i] * smoothing + grad[i] * grad[i] * (1.0 - smoothing));
        param[i] -= static_cast<T>(lr * grad[i] /
                                   (std::sqrt(static_cast<double>(acc[i])) + kRmsEps));
    }
}

}  // namespace vqgnn
