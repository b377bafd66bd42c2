#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wellqc/errors.hpp"
#include "wellqc/model.hpp"
#include "wellqc/tensor.hpp"

namespace wellqc {

/// Training knobs. Defaults are the tuned values shipped with the project.
struct Hyperparams {
    double learning_rate = 0.001;
    std::string optimizer = "adam";
    int epochs = 40;
    int batch_size = 16;
    double dropout_rate = 0.2;
    double l2_lambda = 0.3;
    std::string loss = "sparse_categorical_crossentropy";

    void validate() const {
        // Zero is accepted: it freezes the weights, which is useful as a null-update probe.
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw ConfigError("learning_rate must be non-negative and finite");
        if (optimizer != "adam") throw ConfigError("only the adam optimizer is supported");
        if (epochs < 1) throw ConfigError("epochs must be at least 1");
        if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
        if (!(l2_lambda >= 0.0)) throw ConfigError("l2_lambda must be non-negative");
        if (loss != "sparse_categorical_crossentropy")
            throw ConfigError("only sparse_categorical_crossentropy is supported");
    }

    friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::uint64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    AdamState() = default;
    explicit AdamState(std::span<const Parameter<T>> params) {
        for (const auto& p : params) {
            m.emplace_back(p.value.shape());
            v.emplace_back(p.value.shape());
        }
    }
};

/// One bias-corrected Adam update. Throws NonFiniteGradient (before touching
/// any state) when a gradient element is NaN or infinite.
template <typename T>
void adam_step(std::span<Parameter<T>> params, std::span<const Tensor<T>> grads, AdamState<T>& state, double lr) {
    if (params.size() != grads.size() || state.m.size() != params.size())
        throw ShapeError("adam_step: parameter, gradient and state counts differ");
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i].value.require_same_shape(grads[i], "adam_step");
        if (!grads[i].all_finite()) throw NonFiniteGradient("non-finite gradient in " + params[i].name);
    }
    state.t += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i].value.data();
        auto g = grads[i].data();
        auto m = state.m[i].data();
        auto v = state.v[i].data();
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double gj = static_cast<double>(g[j]);
            const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
            const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double m_hat = mj / c1;
            const double v_hat = vj / c2;
            theta[j] = static_cast<T>(static_cast<double>(theta[j]) - lr * m_hat / (std::sqrt(v_hat) + state.epsilon));
        }
    }
}

template <typename T>
void adam_step(std::vector<Parameter<T>>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state, double lr) {
    adam_step(std::span<Parameter<T>>(params), std::span<const Tensor<T>>(grads), state, lr);
}

/// Adds the gradient of lambda * sum(theta^2), i.e. 2*lambda*theta, to weight
/// gradients. Bias gradients are left untouched.
template <typename T>
void apply_l2(std::span<Tensor<T>> grads, std::span<const Parameter<T>> params, double lambda) {
    if (grads.size() != params.size()) throw ShapeError("apply_l2: count mismatch");
    if (lambda == 0.0) return;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].is_weight) continue;
        grads[i].require_same_shape(params[i].value, "apply_l2");
        auto g = grads[i].data();
        auto th = params[i].value.data();
        for (std::size_t j = 0; j < g.size(); ++j)
            g[j] = static_cast<T>(static_cast<double>(g[j]) + 2.0 * lambda * static_cast<double>(th[j]));
    }
}

template <typename T>
void apply_l2(std::vector<Tensor<T>>& grads, const std::vector<Parameter<T>>& params, double lambda) {
    apply_l2(std::span<Tensor<T>>(grads), std::span<const Parameter<T>>(params), lambda);
}

/// lambda * sum of squared weights (biases excluded).
template <typename T>
double l2_penalty(std::span<const Parameter<T>> params, double lambda) {
    if (lambda == 0.0) return 0.0;
    double sum = 0.0;
    for (const auto& p : params)
        if (p.is_weight)
            for (auto v : p.value.data()) sum += static_cast<double>(v) * static_cast<double>(v);
    return lambda * sum;
}

template <typename T>
double l2_penalty(const std::vector<Parameter<T>>& params, double lambda) {
    return l2_penalty(std::span<const Parameter<T>>(params), lambda);
}

} // namespace wellqc
