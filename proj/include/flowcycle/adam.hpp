#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "flowcycle/errors.hpp"
#include "flowcycle/tensor.hpp"

namespace flowcycle {

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_hat = 1e-8;

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// Standard Adam update with bias correction. Leaves state untouched when
// the gradient contains non-finite entries.
inline void adam_step(std::span<double> params, std::span<const double> grads,
                      AdamState& state, double lr) {
    if (params.size() != grads.size() || state.m.size() != params.size())
        throw std::invalid_argument("adam_step: length mismatch");
    if (lr <= 0.0) throw std::invalid_argument("adam_step: lr must be positive");
    for (double g : grads)
        if (!std::isfinite(g)) throw numeric_failure("adam_step: non-finite gradient");

    state.step_count += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps_hat);
    }
}

inline void adam_step(Tensor& params, std::span<const double> grads, AdamState& state,
                      double lr) {
    adam_step(std::span<double>(params.values()), grads, state, lr);
}

}  // namespace flowcycle
