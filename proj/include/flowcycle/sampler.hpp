#pragma once

#include <concepts>
#include <string>
#include <vector>

#include "flowcycle/errors.hpp"
#include "flowcycle/flowmodel.hpp"
#include "flowcycle/tensor.hpp"

namespace flowcycle {

template <class F>
concept VelocityField = requires(const F& f, const Tensor& x, double t, const Condition& c) {
    { f.velocity(x, t, c) } -> std::same_as<Tensor>;
};

// Strictly decreasing times t_0 = t_start > ... > t_N = 0.
struct TimeGrid {
    std::vector<double> times;

    double t_start() const { return times.front(); }
    std::size_t steps() const { return times.size() - 1; }
    double delta(std::size_t i) const { return times[i] - times[i + 1]; }
};

inline TimeGrid make_time_grid(int n_steps, double t_start) {
    if (n_steps < 1) throw std::invalid_argument("make_time_grid: n_steps must be >= 1");
    if (t_start <= 0.0 || t_start > 1.0)
        throw std::invalid_argument("make_time_grid: t_start outside (0,1]");
    TimeGrid grid;
    grid.times.reserve(n_steps + 1);
    for (int i = 0; i < n_steps; ++i)
        grid.times.push_back(t_start * (n_steps - i) / n_steps);
    grid.times.push_back(0.0);
    return grid;
}

// (1-t) x0 + t eps.
inline Tensor interpolate(const Tensor& x0, const Tensor& eps, double t) {
    detail::check_same_shape(x0, eps, "interpolate");
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("interpolate: t outside [0,1]");
    return add(scale(x0, 1.0 - t), scale(eps, t));
}

struct GuidanceSpec {
    double scale = 1.0;
    Condition condition;
};

// Classifier-free guidance: v_null + scale * (v_cond - v_null). The
// scale 1 and 0 endpoints short-circuit to the plain branches so they
// are bit-identical to a single conditional/unconditional evaluation.
template <VelocityField F>
Tensor guided_velocity(const F& field, const Tensor& x, double t, const GuidanceSpec& g) {
    if (g.scale < 0.0) throw std::invalid_argument("guided_velocity: negative scale");
    if (g.scale == 0.0) return field.velocity(x, t, Condition::null());
    Tensor v_cond = field.velocity(x, t, g.condition);
    if (g.scale == 1.0) return v_cond;
    Tensor v_null = field.velocity(x, t, Condition::null());
    return add(v_null, scale(sub(v_cond, v_null), g.scale));
}

// Euler integration down the grid: x <- x - v(x, t_i) * (t_i - t_{i+1}).
// With track_grad the whole chain stays on the tape so gradients reach
// the starting state (and through it any learnable noise).
template <VelocityField F>
Tensor euler_denoise(const F& field, const Tensor& x_t, const TimeGrid& grid,
                     const GuidanceSpec& g, bool track_grad = false) {
    Tensor x = track_grad ? x_t : x_t.detach();
    for (std::size_t i = 0; i < grid.steps(); ++i) {
        Tensor v = guided_velocity(field, x, grid.times[i], g);
        x = sub(x, scale(v, grid.delta(i)));
        if (!x.all_finite())
            throw numeric_failure("euler_denoise: non-finite state at step " + std::to_string(i));
    }
    return x;
}

// Forward Euler up the grid (the standard ODE-inversion corruption):
// x <- x + v(x, t_{i+1}) * (t_i - t_{i+1}), ending at t_start.
template <VelocityField F>
Tensor euler_invert(const F& field, const Tensor& x0, const TimeGrid& grid,
                    const GuidanceSpec& g) {
    Tensor x = x0.detach();
    for (std::size_t i = grid.steps(); i-- > 0;) {
        Tensor v = guided_velocity(field, x, grid.times[i + 1], g);
        x = add(x, scale(v, grid.delta(i)));
        if (!x.all_finite())
            throw numeric_failure("euler_invert: non-finite state at step " + std::to_string(i));
    }
    return x;
}

}  // namespace flowcycle
