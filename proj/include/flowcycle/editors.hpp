#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "flowcycle/adam.hpp"
#include "flowcycle/errors.hpp"
#include "flowcycle/rng.hpp"
#include "flowcycle/sampler.hpp"
#include "flowcycle/tensor.hpp"

namespace flowcycle {

// One editing problem: move x0_src from its source condition toward the
// target condition, corrupting at t_corrupt over the given grid.
struct EditTask {
    Tensor x0_src;
    Condition c_src;
    Condition c_tar;
    double t_corrupt = 0.66;
    TimeGrid grid;

    void validate() const {
        if (c_src.is_null() || c_tar.is_null())
            throw std::invalid_argument("EditTask: conditions must be attribute pairs");
        if (c_src == c_tar)
            throw std::invalid_argument("EditTask: source and target conditions coincide");
        if (std::abs(t_corrupt - grid.t_start()) > 1e-12)
            throw std::invalid_argument("EditTask: t_corrupt must equal grid.t_start");
    }
};

struct CycleConfig {
    double lambda = 0.2;
    int opt_steps = 100;
    double lr = 0.1;
    double src_guidance = 3.5;
    double tar_guidance = 5.5;
    std::uint64_t seed = 0;

    void validate() const {
        if (lambda < 0.0) throw std::invalid_argument("CycleConfig: lambda must be >= 0");
        if (opt_steps < 0) throw std::invalid_argument("CycleConfig: opt_steps must be >= 0");
        if (lr <= 0.0) throw std::invalid_argument("CycleConfig: lr must be positive");
    }
};

struct NoisePair {
    Tensor eps_src;
    Tensor eps_tar;
};

// One source -> target -> source pass with its loss components.
struct CycleTrace {
    Tensor x_t_src;
    Tensor x0_tar;
    Tensor z_t_tar;
    Tensor z0_src;
    double l_rec = 0.0;
    double l_align = 0.0;
    double l_total = 0.0;
};

struct CycleLosses {
    Tensor l_rec;
    Tensor l_align;
    Tensor l_total;
};

struct LossRecord {
    double l_rec;
    double l_align;
    double l_total;
};

// ---------------------------------------------------------------------------
// Baseline editors
// ---------------------------------------------------------------------------

// Random corruption at t_corrupt, then denoise under the target
// condition. No gradient tracking.
template <VelocityField F>
Tensor sdedit_edit(const EditTask& task, const F& net, RngStream& stream,
                   double tar_guidance = 5.5) {
    task.validate();
    Tensor eps = rng_normal(stream, task.x0_src.shape());
    Tensor x_t = interpolate(task.x0_src, eps, task.t_corrupt);
    return euler_denoise(net, x_t, task.grid, {tar_guidance, task.c_tar});
}

// Euler inversion under the source condition, then denoise under the
// target condition. Fully deterministic.
template <VelocityField F>
Tensor ode_inversion_edit(const EditTask& task, const F& net, double src_guidance = 3.5,
                          double tar_guidance = 5.5) {
    task.validate();
    Tensor x_t = euler_invert(net, task.x0_src, task.grid, {src_guidance, task.c_src});
    return euler_denoise(net, x_t, task.grid, {tar_guidance, task.c_tar});
}

// ---------------------------------------------------------------------------
// FlowEdit, in its two algebraically equivalent forms. Both consume one
// fresh standard-normal draw per grid step, in the same order, so they
// can share a seed for the equivalence check.
// ---------------------------------------------------------------------------

template <VelocityField F>
Tensor flowedit_edit(const EditTask& task, const F& net, RngStream& stream,
                     double src_guidance = 3.5, double tar_guidance = 5.5) {
    task.validate();
    Tensor z = task.x0_src.detach();
    const GuidanceSpec g_src{src_guidance, task.c_src};
    const GuidanceSpec g_tar{tar_guidance, task.c_tar};
    for (std::size_t i = 0; i < task.grid.steps(); ++i) {
        const double t = task.grid.times[i];
        Tensor noise = rng_normal(stream, task.x0_src.shape());
        Tensor z_src = interpolate(task.x0_src, noise, t);
        // (z - x0) + z_src: the offset is exactly zero on the first
        // step, so coinciding velocities keep z == x0 bit-exactly.
        Tensor z_tar = add(sub(z, task.x0_src), z_src);
        Tensor v_delta = sub(guided_velocity(net, z_tar, t, g_tar),
                             guided_velocity(net, z_src, t, g_src));
        z = sub(z, scale(v_delta, task.grid.delta(i)));
        if (!z.all_finite())
            throw numeric_failure("flowedit_edit: non-finite state at step " + std::to_string(i));
    }
    return z;
}

// Same trajectory written as naive guided denoising of the shifted state
// plus an injection drift built from the source velocity.
template <VelocityField F>
Tensor flowedit_drift_form(const EditTask& task, const F& net, RngStream& stream,
                           double src_guidance = 3.5, double tar_guidance = 5.5) {
    task.validate();
    Tensor z = task.x0_src.detach();
    const GuidanceSpec g_src{src_guidance, task.c_src};
    const GuidanceSpec g_tar{tar_guidance, task.c_tar};
    for (std::size_t i = 0; i < task.grid.steps(); ++i) {
        const double t = task.grid.times[i];
        const double dt = task.grid.delta(i);
        Tensor noise = rng_normal(stream, task.x0_src.shape());
        Tensor z_src = interpolate(task.x0_src, noise, t);
        Tensor shifted = add(sub(z, task.x0_src), z_src);
        Tensor drift = scale(guided_velocity(net, z_src, t, g_src), dt);
        z = add(z, add(scale(guided_velocity(net, shifted, t, g_tar), -dt), drift));
        if (!z.all_finite())
            throw numeric_failure("flowedit_drift_form: non-finite state at step " +
                                  std::to_string(i));
    }
    return z;
}

// ---------------------------------------------------------------------------
// FlowCycle
// ---------------------------------------------------------------------------

// Full source -> target -> source chain, graph-tracked end to end so
// gradients reach both learnable noises through the unrolled solvers.
template <VelocityField F>
CycleTrace cycle_forward(const EditTask& task, const F& net, const NoisePair& pair,
                         const CycleConfig& cfg) {
    task.validate();
    if (pair.eps_src.size() != task.x0_src.size() || pair.eps_tar.size() != task.x0_src.size())
        throw std::invalid_argument("cycle_forward: noise dimension mismatch");
    CycleTrace trace;
    trace.x_t_src = interpolate(task.x0_src, pair.eps_src, task.t_corrupt);
    try {
        trace.x0_tar = euler_denoise(net, trace.x_t_src, task.grid,
                                     {cfg.tar_guidance, task.c_tar}, /*track_grad=*/true);
    } catch (const numeric_failure& e) {
        throw numeric_failure(std::string("cycle_forward[source->target]: ") + e.what());
    }
    trace.z_t_tar = interpolate(trace.x0_tar, pair.eps_tar, task.t_corrupt);
    try {
        trace.z0_src = euler_denoise(net, trace.z_t_tar, task.grid,
                                     {cfg.src_guidance, task.c_src}, /*track_grad=*/true);
    } catch (const numeric_failure& e) {
        throw numeric_failure(std::string("cycle_forward[target->source]: ") + e.what());
    }
    return trace;
}

inline CycleLosses cycle_losses(CycleTrace& trace, const EditTask& task, double lambda) {
    CycleLosses losses;
    losses.l_align = mse(trace.x_t_src, trace.z_t_tar);
    losses.l_rec = mse(trace.z0_src, task.x0_src);
    losses.l_total = add(losses.l_rec, scale(losses.l_align, lambda));
    trace.l_rec = losses.l_rec.item();
    trace.l_align = losses.l_align.item();
    trace.l_total = losses.l_total.item();
    return losses;
}

// Joint Adam optimization of (eps_src, eps_tar) against
// l_rec + lambda * l_align; one Adam state over the concatenation.
// on_step, when set, observes the pair after every update (step index is
// the number of completed updates).
template <VelocityField F>
std::pair<NoisePair, std::vector<LossRecord>> flowcycle_optimize(
    const EditTask& task, const F& net, const CycleConfig& cfg,
    const std::function<void(int, const NoisePair&)>& on_step = {}) {
    task.validate();
    cfg.validate();
    RngStream stream(cfg.seed);
    const std::size_t d = task.x0_src.size();
    NoisePair pair{rng_normal(stream, task.x0_src.shape()),
                   rng_normal(stream, task.x0_src.shape())};
    pair.eps_src.set_requires_grad(true);
    pair.eps_tar.set_requires_grad(true);

    std::vector<LossRecord> history;
    history.reserve(cfg.opt_steps);
    if (on_step) on_step(0, pair);
    AdamState state(2 * d);
    std::vector<double> joint_params(2 * d), joint_grads(2 * d);
    for (int step = 0; step < cfg.opt_steps; ++step) {
        CycleTrace trace = cycle_forward(task, net, pair, cfg);
        CycleLosses losses = cycle_losses(trace, task, cfg.lambda);
        if (!losses.l_total.all_finite())
            throw numeric_failure("flowcycle_optimize: non-finite loss at step " +
                                  std::to_string(step));
        history.push_back({trace.l_rec, trace.l_align, trace.l_total});
        backward(losses.l_total);
        for (std::size_t i = 0; i < d; ++i) {
            joint_params[i] = pair.eps_src.values()[i];
            joint_params[d + i] = pair.eps_tar.values()[i];
            joint_grads[i] = pair.eps_src.grad()[i];
            joint_grads[d + i] = pair.eps_tar.grad()[i];
        }
        adam_step(std::span<double>(joint_params), joint_grads, state, cfg.lr);
        for (std::size_t i = 0; i < d; ++i) {
            pair.eps_src.values()[i] = joint_params[i];
            pair.eps_tar.values()[i] = joint_params[d + i];
        }
        if (on_step) on_step(step + 1, pair);
    }
    return {std::move(pair), std::move(history)};
}

// Inference: interpolate with the (optimized) source noise, then plain
// guided denoising under the target condition. eps_tar plays no role.
template <VelocityField F>
Tensor flowcycle_edit(const EditTask& task, const F& net, const Tensor& eps_src,
                      double tar_guidance = 5.5) {
    task.validate();
    if (eps_src.size() != task.x0_src.size())
        throw std::invalid_argument("flowcycle_edit: noise dimension mismatch");
    Tensor x_t = interpolate(task.x0_src.detach(), eps_src.detach(), task.t_corrupt);
    return euler_denoise(net, x_t, task.grid, {tar_guidance, task.c_tar});
}

}  // namespace flowcycle
