// Per-feature affine batch normalization with running statistics. Applied to
// the pre-activation of hidden layers during learning runs; verification runs
// disable it because it perturbs oracle-equivalence checks.
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "vqgnn/common.hpp"
#include "vqgnn/dense.hpp"

namespace vqgnn {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;  // running <- running*m + batch*(1-m)

template <typename T>
struct BatchNormState {
    std::vector<T> gamma, beta;
    std::vector<T> running_mean, running_var;

    static BatchNormState init(std::size_t f) {
        BatchNormState s;
        s.gamma.assign(f, T(1));
        s.beta.assign(f, T(0));
        s.running_mean.assign(f, T(0));
        s.running_var.assign(f, T(1));
        return s;
    }
};

template <typename T>
struct BatchNormCache {
    DenseMatrix<T> x_hat;      // normalized input
    std::vector<T> inv_std;    // 1 / sqrt(var + eps)
};

template <typename T>
DenseMatrix<T> batchnorm_forward(BatchNormState<T>& bn, const DenseMatrix<T>& x, bool training,
                                 BatchNormCache<T>* cache) {
    const std::size_t b = x.rows, f = x.cols;
    DenseMatrix<T> out(b, f);
    std::vector<T> mean(f, T(0)), var(f, T(0));
    if (training) {
        for (std::size_t r = 0; r < b; ++r)
            for (std::size_t c = 0; c < f; ++c) mean[c] += x.at(r, c);
        for (auto& m : mean) m /= static_cast<T>(b);
        for (std::size_t r = 0; r < b; ++r)
            for (std::size_t c = 0; c < f; ++c) {
                const T d = x.at(r, c) - mean[c];
                var[c] += d * d;
            }
        for (auto& v : var) v /= static_cast<T>(b);
        for (std::size_t c = 0; c < f; ++c) {
            bn.running_mean[c] = static_cast<T>(bn.running_mean[c] * kBnMomentum +
                                                mean[c] * (1.0 - kBnMomentum));
            bn.running_var[c] =
                static_cast<T>(bn.running_var[c] * kBnMomentum + var[c] * (1.0 - kBnMomentum));
        }
    } else {
        mean = bn.running_mean;
        var = bn.running_var;
    }
    std::vector<T> inv_std(f);
    for (std::size_t c = 0; c < f; ++c)
        inv_std[c] = T(1) / std::sqrt(var[c] + static_cast<T>(kBnEps));
    DenseMatrix<T> x_hat(b, f);
    for (std::size_t r = 0; r < b; ++r)
        for (std::size_t c = 0; c < f; ++c) {
            x_hat.at(r, c) = (x.at(r, c) - mean[c]) * inv_std[c];
            out.at(r, c) = bn.gamma[c] * x_hat.at(r, c) + bn.beta[c];
        }
    if (cache) {
        cache->x_hat = std::move(x_hat);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

// Standard batch-norm backward over the training-mode statistics.
template <typename T>
DenseMatrix<T> batchnorm_backward(const BatchNormState<T>& bn, const BatchNormCache<T>& cache,
                                  const DenseMatrix<T>& grad_out, std::vector<T>& grad_gamma,
                                  std::vector<T>& grad_beta) {
    const std::size_t b = grad_out.rows, f = grad_out.cols;
    DenseMatrix<T> grad_x(b, f);
    for (std::size_t c = 0; c < f; ++c) {
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (std::size_t r = 0; r < b; ++r) {
            sum_dy += grad_out.at(r, c);
            sum_dy_xhat += grad_out.at(r, c) * cache.x_hat.at(r, c);
        }
        grad_beta[c] += sum_dy;
        grad_gamma[c] += sum_dy_xhat;
        const T scale = bn.gamma[c] * cache.inv_std[c];
        const T inv_b = T(1) / static_cast<T>(b);
        for (std::size_t r = 0; r < b; ++r) {
            grad_x.at(r, c) = scale * (grad_out.at(r, c) - sum_dy * inv_b -
                                       cache.x_hat.at(r, c) * sum_dy_xhat * inv_b);
        }
    }
    return grad_x;
}

}  // namespace vqgnn
