#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "psta/layers.hpp"

namespace psta {

/// Adam with the reference defaults. Moment buffers are keyed by position
/// in the parameter list, which must stay stable across steps.
template <typename T>
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::vector<std::vector<T>> m, v;
};

template <typename T>
void adam_step(std::vector<NamedTensor<T>>& params, AdamState<T>& state) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].tensor.size(), T(0));
            state.v[i].assign(params[i].tensor.size(), T(0));
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: parameter list changed size");

    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].tensor;
        if (state.m[i].size() != p.size())
            throw std::invalid_argument("adam_step: shape of '" + params[i].name +
                                        "' changed between steps");
        const T* g = p.grad_if();
        for (std::size_t j = 0; j < p.size(); ++j) {
            const T gj = g ? g[j] : T(0);
            if (!std::isfinite(gj))
                throw NonFiniteError("adam_step: non-finite gradient in parameter '" +
                                     params[i].name + "'");
            state.m[i][j] = b1 * state.m[i][j] + (T(1) - b1) * gj;
            state.v[i][j] = b2 * state.v[i][j] + (T(1) - b2) * gj * gj;
            const double mhat = static_cast<double>(state.m[i][j]) / bc1;
            const double vhat = static_cast<double>(state.v[i][j]) / bc2;
            p.data()[j] -=
                static_cast<T>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

}  // namespace psta
