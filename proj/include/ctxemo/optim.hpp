#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "ctxemo/errors.hpp"
#include "ctxemo/tensor.hpp"

namespace ctxemo {

/// One cosine-annealing run; T_i and T_cur are measured in epochs.
struct SchedulerState {
    double eta_max = 2e-5;
    double eta_min = 0.0;
    double period = 1.0;    // T_i
    double elapsed = 0.0;   // T_cur
    int run_index = 0;      // i; this project never restarts
};

inline double cosine_lr(const SchedulerState& s) {
    return s.eta_min + 0.5 * (s.eta_max - s.eta_min) * (1.0 + std::cos(std::numbers::pi * s.elapsed / s.period));
}

/// Global L2 norm over every tensor of a gradient set.
template <ParameterSet P>
double global_norm(const P& grads) {
    double sq = 0.0;
    for (const auto& t : grads.tensors()) {
        for (double v : t.tensor->values()) sq += v * v;
    }
    return std::sqrt(sq);
}

/// Rescales all gradients by clip_norm/norm when the global norm exceeds clip_norm.
/// Returns the norm before clipping.
template <ParameterSet P>
double clip_gradients(P& grads, double clip_norm) {
    if (!(clip_norm > 0.0)) throw UsageError("clip_norm must be positive");
    for (const auto& t : grads.tensors()) {
        if (!t.tensor->all_finite()) throw TrainingError("non-finite gradient in tensor " + t.name);
    }
    const double norm = global_norm(grads);
    if (norm > clip_norm) {
        const double scale = clip_norm / norm;
        for (auto& t : grads.tensors()) *t.tensor *= scale;
    }
    return norm;
}

struct AdamState {
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    std::size_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    template <ParameterSet P>
    static AdamState for_params(const P& params) {
        AdamState s;
        for (const auto& t : params.tensors()) {
            s.first_moment.push_back(zeros_like(*t.tensor));
            s.second_moment.push_back(zeros_like(*t.tensor));
        }
        return s;
    }
};

/// Bias-corrected Adam update with learning rate `lr`.
template <ParameterSet P>
void adam_step(P& params, const P& grads, AdamState& state, double lr) {
    auto pt = params.tensors();
    auto gt = grads.tensors();
    if (pt.size() != gt.size() || pt.size() != state.first_moment.size()) throw ShapeError("adam_step: tensor count mismatch");
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < pt.size(); ++i) {
        if (!pt[i].tensor->same_shape(*gt[i].tensor) || !pt[i].tensor->same_shape(state.first_moment[i])) {
            throw ShapeError("adam_step: shape mismatch for " + pt[i].name);
        }
        auto p = pt[i].tensor->values();
        auto g = gt[i].tensor->values();
        auto m = state.first_moment[i].values();
        auto v = state.second_moment[i].values();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace ctxemo
