#ifndef VSHUFFLE_DIFFUSION_HPP
#define VSHUFFLE_DIFFUSION_HPP

#include <string>
#include <vector>

#include "vshuffle/denoiser.hpp"
#include "vshuffle/schedule.hpp"
#include "vshuffle/tensor.hpp"

namespace vshuffle {

// Ordered latents z_0..z_T from one deterministic DDIM inversion.
template <typename Real>
struct Trajectory {
    std::vector<Tensor<Real>> latents;
    int T = 0;
    std::string source_tag;

    const Tensor<Real>& at(int t) const {
        if (t < 0 || t > T) throw ConfigError("Trajectory: step " + std::to_string(t) + " outside 0..T");
        return latents[static_cast<size_t>(t)];
    }
};

namespace detail_ddim {

template <typename Real>
Tensor<Real> combine(const Tensor<Real>& z, const Tensor<Real>& eps, Real a_from, Real a_to) {
    // x0 = (z - sqrt(1-a_from) eps) / sqrt(a_from); out = sqrt(a_to) x0 + sqrt(1-a_to) eps
    const Real s_from = std::sqrt(a_from), r_from = std::sqrt(Real(1) - a_from);
    const Real s_to = std::sqrt(a_to), r_to = std::sqrt(Real(1) - a_to);
    const Real cz = s_to / s_from;
    const Real ce = r_to - cz * r_from;
    Tensor<Real> out(z.shape);
    const Real* pz = z.ptr();
    const Real* pe = eps.ptr();
    Real* po = out.ptr();
    for (int64_t i = 0; i < z.numel(); ++i) po[i] = cz * pz[i] + ce * pe[i];
    return out;
}

}  // namespace detail_ddim

// Deterministic reverse update z_t -> z_{t-1} (eta = 0).
template <typename Real>
Tensor<Real> ddim_step(const DenoiserModel<Real>& model, const Schedule<Real>& sched,
                       const Tensor<Real>& z_t, int t, const Tensor<Real>* eps_override = nullptr) {
    if (t < 1 || t > sched.T)
        throw ConfigError("ddim_step: t=" + std::to_string(t) + " outside 1.." + std::to_string(sched.T));
    Tensor<Real> eps = eps_override ? eps_override->detach()
                                    : forward(model, z_t, sched.train_index(t)).eps.detach();
    detail::require_same_shape(z_t, eps, "ddim_step");
    auto out = detail_ddim::combine(z_t, eps, sched.abar(t), sched.abar(t - 1));
    check_finite(out, "ddim_step");
    return out;
}

// Forward update z_{t-1} -> z_t with a frozen eps; the exact algebraic
// inverse of ddim_step for the same eps.
template <typename Real>
Tensor<Real> ddim_invert_step(const Schedule<Real>& sched, const Tensor<Real>& z_prev, int t,
                              const Tensor<Real>& eps) {
    if (t < 1 || t > sched.T)
        throw ConfigError("ddim_invert_step: t=" + std::to_string(t) + " outside 1.." + std::to_string(sched.T));
    return detail_ddim::combine(z_prev, eps, sched.abar(t - 1), sched.abar(t));
}

// First-order DDIM inversion: the model's prediction at the current latent
// is reused for the step that climbs to the next noise level.
template <typename Real>
Trajectory<Real> ddim_invert(const DenoiserModel<Real>& model, const Schedule<Real>& sched,
                             const Tensor<Real>& z0, const std::string& source_tag = "") {
    check_finite(z0, "ddim_invert input");
    Trajectory<Real> traj;
    traj.T = sched.T;
    traj.source_tag = source_tag;
    traj.latents.reserve(static_cast<size_t>(sched.T) + 1);
    traj.latents.push_back(z0.detach());
    for (int t = 1; t <= sched.T; ++t) {
        const auto& z_prev = traj.latents.back();
        auto eps = forward(model, z_prev, sched.train_index(t)).eps.detach();
        auto z_t = ddim_invert_step(sched, z_prev, t, eps);
        for (int64_t i = 0; i < z_t.numel(); ++i)
            if (!std::isfinite(static_cast<double>(z_t[i])))
                throw NumericError("ddim_invert: non-finite latent at t=" + std::to_string(t));
        traj.latents.push_back(std::move(z_t));
    }
    return traj;
}

// Full deterministic sampling z_T -> z_0.
template <typename Real>
Tensor<Real> ddim_sample(const DenoiserModel<Real>& model, const Schedule<Real>& sched,
                         const Tensor<Real>& z_T) {
    Tensor<Real> z = z_T.detach();
    for (int t = sched.T; t >= 1; --t) z = ddim_step(model, sched, z, t);
    return z;
}

}  // namespace vshuffle

#endif
