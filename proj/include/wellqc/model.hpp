#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wellqc/architecture.hpp"
#include "wellqc/errors.hpp"
#include "wellqc/layers.hpp"
#include "wellqc/parallel.hpp"
#include "wellqc/rng.hpp"
#include "wellqc/tensor.hpp"

namespace wellqc {

template <typename T>
struct Parameter {
    std::string name;  // "layer<i>.W" or "layer<i>.b"
    Tensor<T> value;
    bool is_weight = true;  // false for biases

    friend bool operator==(const Parameter&, const Parameter&) = default;
};

template <typename T>
struct LayerCache {
    Tensor<T> input;
    std::vector<std::size_t> argmax;  // MaxPool2D
    Tensor<T> mask;                   // Dropout
};

template <typename T>
struct ForwardPass {
    Tensor<T> logits;         // input of the final softmax
    Tensor<T> probabilities;
    std::vector<LayerCache<T>> caches;
};

/// Sequential network assembled from an ArchitectureSpec. Forward and
/// backward are const; parameters change only through params().
template <typename T>
class Model {
public:
    /// He-uniform weights, zero biases.
    Model(ArchitectureSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
        validate(spec_);
        shapes_ = infer_shapes(spec_);
        Rng rng(init_seed);
        Shape in = spec_.input();
        for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
            const auto& l = spec_.layers[i];
            layer_param_.push_back(l.has_params() ? static_cast<int>(params_.size()) : -1);
            if (l.kind == LayerKind::Conv2D) {
                const std::size_t fan_in = l.kernel_size * l.kernel_size * in[2];
                add_params(i, {l.kernel_size, l.kernel_size, in[2], l.out_channels}, {l.out_channels}, fan_in, rng);
            } else if (l.kind == LayerKind::Dense) {
                add_params(i, {l.units, in[0]}, {l.units}, in[0], rng);
            }
            in = shapes_[i];
        }
    }

    Model(ArchitectureSpec spec, std::vector<Parameter<T>> params) : spec_(std::move(spec)) {
        validate(spec_);
        shapes_ = infer_shapes(spec_);
        Shape in = spec_.input();
        std::size_t next = 0;
        for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
            const auto& l = spec_.layers[i];
            layer_param_.push_back(l.has_params() ? static_cast<int>(next) : -1);
            if (l.has_params()) {
                const Shape w = l.kind == LayerKind::Conv2D
                                    ? Shape{l.kernel_size, l.kernel_size, in[2], l.out_channels}
                                    : Shape{l.units, in[0]};
                const Shape b = {l.kind == LayerKind::Conv2D ? l.out_channels : l.units};
                if (next + 2 > params.size() || params[next].value.shape() != w || params[next + 1].value.shape() != b)
                    throw ShapeError("parameters do not match layer " + std::to_string(i) + " of the architecture");
                next += 2;
            }
            in = shapes_[i];
        }
        if (next != params.size()) throw ShapeError("more parameters than the architecture declares");
        params_ = std::move(params);
    }

    const ArchitectureSpec& spec() const noexcept { return spec_; }
    const std::vector<Shape>& layer_shapes() const noexcept { return shapes_; }
    std::vector<Parameter<T>>& params() noexcept { return params_; }
    const std::vector<Parameter<T>>& params() const noexcept { return params_; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    /// Overrides the rate of every Dropout layer.
    void set_dropout_rate(double rate) {
        if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
        for (auto& l : spec_.layers)
            if (l.kind == LayerKind::Dropout) l.rate = rate;
    }

    /// `dropout_rng` may be null in Infer mode.
    ForwardPass<T> forward(const Tensor<T>& sample, Mode mode, Rng* dropout_rng = nullptr) const {
        if (sample.shape() != spec_.input())
            throw ShapeError("sample shape " + shape_string(sample.shape()) + " does not match model input " +
                             shape_string(spec_.input()));
        ForwardPass<T> pass;
        pass.caches.resize(spec_.layers.size());
        Tensor<T> x = sample;
        for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
            const auto& l = spec_.layers[i];
            auto& cache = pass.caches[i];
            switch (l.kind) {
            case LayerKind::Conv2D: {
                cache.input = std::move(x);
                x = conv2d_forward(cache.input, weight(i), bias(i), l.stride);
                break;
            }
            case LayerKind::ReLU:
                cache.input = std::move(x);
                x = relu_forward(cache.input);
                break;
            case LayerKind::MaxPool2D: {
                auto r = maxpool2d_forward(x, l.window, l.stride);
                cache.input = std::move(x);
                cache.argmax = std::move(r.argmax);
                x = std::move(r.output);
                break;
            }
            case LayerKind::Flatten:
                cache.input = x;
                x = flatten(x);
                break;
            case LayerKind::Dense:
                cache.input = std::move(x);
                x = dense_forward(cache.input, weight(i), bias(i));
                break;
            case LayerKind::Dropout: {
                if (mode == Mode::Train && l.rate > 0.0 && dropout_rng == nullptr)
                    throw ConfigError("train-mode dropout needs a generator");
                Rng unused(0);
                auto r = dropout_forward(x, l.rate, dropout_rng ? *dropout_rng : unused, mode);
                cache.mask = std::move(r.mask);
                x = std::move(r.output);
                break;
            }
            case LayerKind::Softmax:
                pass.logits = x;
                x = softmax(x);
                break;
            }
        }
        pass.probabilities = std::move(x);
        return pass;
    }

    /// Gradients of a scalar loss given d(loss)/d(logits). One tensor per
    /// parameter, in params() order.
    std::vector<Tensor<T>> backward(const ForwardPass<T>& pass, const Tensor<T>& grad_logits) const {
        if (grad_logits.shape() != pass.logits.shape()) throw ShapeError("grad_logits shape mismatch");
        std::vector<Tensor<T>> grads(params_.size());
        Tensor<T> g = grad_logits;
        for (std::size_t ii = spec_.layers.size(); ii-- > 0;) {
            const auto& l = spec_.layers[ii];
            const auto& cache = pass.caches[ii];
            switch (l.kind) {
            case LayerKind::Softmax: break;  // fused into grad_logits
            case LayerKind::Dense: {
                auto dg = dense_backward(g, cache.input, weight(ii));
                const auto p = static_cast<std::size_t>(layer_param_[ii]);
                grads[p] = std::move(dg.weights);
                grads[p + 1] = std::move(dg.bias);
                g = std::move(dg.input);
                break;
            }
            case LayerKind::Dropout: g = dropout_backward(g, cache.mask); break;
            case LayerKind::Flatten: g = g.reshaped(cache.input.shape()); break;
            case LayerKind::MaxPool2D: g = maxpool2d_backward(g, cache.argmax, cache.input.shape()); break;
            case LayerKind::ReLU: g = relu_backward(g, cache.input); break;
            case LayerKind::Conv2D: {
                auto cg = conv2d_backward(g, cache.input, weight(ii), l.stride, ii > 0);
                const auto p = static_cast<std::size_t>(layer_param_[ii]);
                grads[p] = std::move(cg.weights);
                grads[p + 1] = std::move(cg.bias);
                if (ii > 0) g = std::move(cg.input);
                break;
            }
            }
        }
        return grads;
    }

    Tensor<T> predict_proba(const Tensor<T>& sample) const { return forward(sample, Mode::Infer).probabilities; }

    template <typename U>
    Model<U> cast() const {
        std::vector<Parameter<U>> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back({p.name, p.value.template cast<U>(), p.is_weight});
        return Model<U>(spec_, std::move(out));
    }

private:
    const Tensor<T>& weight(std::size_t layer) const { return params_[static_cast<std::size_t>(layer_param_[layer])].value; }
    const Tensor<T>& bias(std::size_t layer) const { return params_[static_cast<std::size_t>(layer_param_[layer]) + 1].value; }

    void add_params(std::size_t layer, Shape w_shape, Shape b_shape, std::size_t fan_in, Rng& rng) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        Tensor<T> w(std::move(w_shape));
        for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-limit, limit));
        params_.push_back({"layer" + std::to_string(layer) + ".W", std::move(w), true});
        params_.push_back({"layer" + std::to_string(layer) + ".b", Tensor<T>(std::move(b_shape)), false});
    }

    ArchitectureSpec spec_;
    std::vector<Shape> shapes_;
    std::vector<int> layer_param_;
    std::vector<Parameter<T>> params_;
};

/// Class decision. Two-class models predict 1 iff p(class 1) >= threshold
/// (inclusive); wider models use the first argmax.
template <typename T>
int predicted_label(const Tensor<T>& probabilities, double threshold = 0.5) {
    if (probabilities.size() == 2) return static_cast<double>(probabilities[1]) >= threshold ? 1 : 0;
    const auto d = probabilities.data();
    return static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
}

// ------------------------------------------------------ batch operations

template <typename T>
struct BatchForward {
    Tensor<T> probabilities;  // (N, num_classes)
    std::vector<ForwardPass<T>> passes;
};

/// Splits a (N, H, W, C) batch into per-sample tensors.
template <typename T>
std::vector<Tensor<T>> unstack(const Tensor<T>& batch) {
    if (batch.rank() < 2) throw ShapeError("batch needs a leading batch dimension");
    Shape sample_shape(batch.shape().begin() + 1, batch.shape().end());
    const std::size_t n = batch.dim(0), stride = shape_size(sample_shape);
    std::vector<Tensor<T>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        out.emplace_back(sample_shape, std::vector<T>(batch.raw() + i * stride, batch.raw() + (i + 1) * stride));
    return out;
}

template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> samples) {
    if (samples.empty()) throw ShapeError("cannot stack an empty batch");
    Shape shape = samples[0].shape();
    shape.insert(shape.begin(), samples.size());
    std::vector<T> data;
    data.reserve(shape_size(shape));
    for (const auto& s : samples) {
        s.require_same_shape(samples[0], "stack");
        data.insert(data.end(), s.data().begin(), s.data().end());
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

/// Infer-mode forward over a batch with a leading batch dimension.
template <typename T>
BatchForward<T> model_forward(const Model<T>& model, const Tensor<T>& batch, int jobs = 1) {
    const auto samples = unstack(batch);
    BatchForward<T> r;
    r.passes.resize(samples.size());
    parallel_for(samples.size(), jobs, [&](std::size_t i) { r.passes[i] = model.forward(samples[i], Mode::Infer); });
    const std::size_t k = model.spec().num_classes;
    r.probabilities = Tensor<T>({samples.size(), k});
    for (std::size_t i = 0; i < samples.size(); ++i)
        std::copy_n(r.passes[i].probabilities.raw(), k, r.probabilities.raw() + i * k);
    return r;
}

template <typename T>
struct Gradients {
    std::vector<Tensor<T>> grads;  // mean over the batch, params() order
    double loss_sum = 0.0;         // sum of per-sample cross-entropy
    std::size_t correct = 0;
};

/// Mean sparse cross-entropy gradient over the batch. Per-sample gradients are
/// reduced in sample order, so the result is independent of `jobs`.
template <typename T>
Gradients<T> model_backward(const Model<T>& model, const std::vector<ForwardPass<T>>& passes,
                            std::span<const int> labels, int jobs = 1) {
    if (passes.size() != labels.size() || passes.empty())
        throw ShapeError("model_backward: need one label per forward pass");
    std::vector<std::vector<Tensor<T>>> per_sample(passes.size());
    std::vector<double> losses(passes.size());
    parallel_for(passes.size(), jobs, [&](std::size_t i) {
        const int label = labels[i];
        if (label < 0) throw LabelError("negative label");
        auto lg = sparse_ce_from_logits(passes[i].logits, static_cast<std::size_t>(label));
        losses[i] = lg.loss;
        per_sample[i] = model.backward(passes[i], lg.grad_logits);
    });
    Gradients<T> out;
    out.grads = std::move(per_sample[0]);
    for (std::size_t i = 1; i < per_sample.size(); ++i)
        for (std::size_t p = 0; p < out.grads.size(); ++p) out.grads[p] += per_sample[i][p];
    const T scale = T(1) / static_cast<T>(passes.size());
    for (auto& g : out.grads) g *= scale;
    for (std::size_t i = 0; i < passes.size(); ++i) {
        out.loss_sum += losses[i];
        if (predicted_label(passes[i].probabilities) == labels[i]) ++out.correct;
    }
    return out;
}

} // namespace wellqc
