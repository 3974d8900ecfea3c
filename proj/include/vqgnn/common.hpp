// Shared error taxonomy and small helpers used across the library.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace vqgnn {

// Bad caller-supplied data (indices out of range, shape mismatch, malformed files).
struct input_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid or unsupported configuration.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values or degenerate numerics encountered mid-computation.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operation invoked against stale or missing internal state.
struct state_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File-system level failure.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A run (training, verification) failed while otherwise well-formed.
struct run_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// Derives an independent stream from (seed, stream index) so parallel or
// per-trial RNG use stays reproducible.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{seed, stream ^ std::uint64_t(0x9e3779b97f4a7c15ull)};
    return Rng(seq);
}

template <typename T>
bool all_finite(const T* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::isfinite(static_cast<double>(data[i]))) return false;
    }
    return true;
}

}  // namespace vqgnn
