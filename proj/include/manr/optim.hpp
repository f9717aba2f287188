#pragma once

#include <cmath>
#include <vector>

#include "manr/autodiff.hpp"
#include "manr/errors.hpp"

namespace manr::ad {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    std::vector<Array> m;
    std::vector<Array> v;
    long step = 0;
    double base_lr = 5e-4;

    static OptimizerState for_params(const std::vector<Array>& params, double base_lr) {
        OptimizerState s;
        s.base_lr = base_lr;
        for (const Array& p : params) {
            s.m.emplace_back(p.rows, p.cols);
            s.v.emplace_back(p.rows, p.cols);
        }
        return s;
    }

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

// Staircase decay: base_lr * rate^floor(step / decay_steps).
inline double lr_at(double base_lr, long step, double rate = 0.9, long decay_steps = 200) {
    if (step < 0) throw ContractError("lr_at: negative step");
    return base_lr * std::pow(rate, static_cast<double>(step / decay_steps));
}

inline double global_norm(const std::vector<Array>& grads) {
    double s = 0.0;
    for (const Array& g : grads) {
        for (double x : g.data) s += x * x;
    }
    return std::sqrt(s);
}

// Global-norm clipping. Returns the norm before clipping.
inline double clip_gradients(std::vector<Array>& grads, double threshold) {
    if (!(threshold > 0.0)) throw ContractError("clip threshold must be positive");
    const double norm = global_norm(grads);
    if (norm > threshold) {
        const double f = threshold / norm;
        for (Array& g : grads) {
            for (double& x : g.data) x *= f;
        }
    }
    return norm;
}

inline void adam_step(std::vector<Array>& params, const std::vector<Array>& grads, OptimizerState& state, double lr,
                      const AdamConfig& cfg = {}) {
    if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
        throw ShapeError("adam_step: parameter, gradient and moment lists differ in length");
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Array& p = params[i];
        const Array& g = grads[i];
        Array& m = state.m[i];
        Array& v = state.v[i];
        if (!p.same_shape(g) || !p.same_shape(m) || !p.same_shape(v)) {
            throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i) + " " + p.shape_string() +
                             " vs gradient " + g.shape_string());
        }
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            m.data[j] = cfg.beta1 * m.data[j] + (1.0 - cfg.beta1) * g.data[j];
            v.data[j] = cfg.beta2 * v.data[j] + (1.0 - cfg.beta2) * g.data[j] * g.data[j];
            const double mhat = m.data[j] / bc1;
            const double vhat = v.data[j] / bc2;
            p.data[j] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
    }
}

}  // namespace manr::ad
