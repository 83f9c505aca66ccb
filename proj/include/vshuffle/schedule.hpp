#ifndef VSHUFFLE_SCHEDULE_HPP
#define VSHUFFLE_SCHEDULE_HPP

#include <cmath>
#include <vector>

#include "vshuffle/tensor.hpp"

namespace vshuffle {

// Noise schedule: cumulative alphas over the training discretization plus a
// strictly increasing map from the T inference steps onto train steps.
// abar(0) == 1 is the clean end of the trajectory.
template <typename Real>
struct Schedule {
    int T = 200;
    int train_steps = 1000;
    std::vector<Real> alphas_bar_train;  // size train_steps, decreasing
    std::vector<int> step_to_train;      // size T+1, [0] unused (-1)

    static Schedule linear_beta(int T = 200, int train_steps = 1000, double beta_start = 1e-4,
                                double beta_end = 0.02) {
        if (T < 1 || train_steps < T) throw ConfigError("Schedule: need 1 <= T <= train_steps");
        Schedule s;
        s.T = T;
        s.train_steps = train_steps;
        s.alphas_bar_train.resize(static_cast<size_t>(train_steps));
        double acc = 1.0;
        for (int i = 0; i < train_steps; ++i) {
            const double beta = beta_start + (beta_end - beta_start) * i / (train_steps - 1);
            acc *= 1.0 - beta;
            s.alphas_bar_train[static_cast<size_t>(i)] = static_cast<Real>(acc);
        }
        s.step_to_train.assign(static_cast<size_t>(T) + 1, -1);
        for (int t = 1; t <= T; ++t)
            s.step_to_train[static_cast<size_t>(t)] = t * train_steps / T - 1;
        s.validate();
        return s;
    }

    // Explicit abar per inference step (abar[0] must be 1); used by tests
    // that need degenerate schedules.
    static Schedule from_inference_abar(const std::vector<Real>& abar) {
        if (abar.size() < 2 || abar[0] != Real(1))
            throw ConfigError("Schedule: abar must start at 1 and contain at least one step");
        Schedule s;
        s.T = static_cast<int>(abar.size()) - 1;
        s.train_steps = s.T;
        s.alphas_bar_train.assign(abar.begin() + 1, abar.end());
        s.step_to_train.assign(static_cast<size_t>(s.T) + 1, -1);
        for (int t = 1; t <= s.T; ++t) s.step_to_train[static_cast<size_t>(t)] = t - 1;
        for (Real a : s.alphas_bar_train)
            if (!(a > 0 && a <= 1)) throw ConfigError("Schedule: abar values must lie in (0,1]");
        return s;
    }

    void validate() const {
        for (size_t i = 0; i < alphas_bar_train.size(); ++i) {
            if (!(alphas_bar_train[i] > 0 && alphas_bar_train[i] <= 1))
                throw ConfigError("Schedule: abar out of (0,1]");
            if (i > 0 && !(alphas_bar_train[i] < alphas_bar_train[i - 1]))
                throw ConfigError("Schedule: abar not strictly decreasing");
        }
        for (int t = 2; t <= T; ++t)
            if (step_to_train[static_cast<size_t>(t)] <= step_to_train[static_cast<size_t>(t) - 1])
                throw ConfigError("Schedule: step map not strictly increasing");
    }

    Real abar(int t) const {
        if (t < 0 || t > T) throw ConfigError("Schedule: step " + std::to_string(t) + " outside 0.." + std::to_string(T));
        if (t == 0) return Real(1);
        return alphas_bar_train[static_cast<size_t>(step_to_train[static_cast<size_t>(t)])];
    }

    // Train-step label fed to the model at inference step t.
    int train_index(int t) const {
        if (t < 1 || t > T) throw ConfigError("Schedule: no train index for step " + std::to_string(t));
        return step_to_train[static_cast<size_t>(t)];
    }
};

}  // namespace vshuffle

#endif
