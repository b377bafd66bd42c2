#pragma once

// Per-layer forward and backward kernels. All kernels are pure functions of
// their arguments; dropout takes the generator explicitly.
//
// Layouts: activations HWC, convolution weights (kh, kw, in_channels,
// out_channels), dense weights (units, inputs).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "wellqc/errors.hpp"
#include "wellqc/rng.hpp"
#include "wellqc/tensor.hpp"

namespace wellqc {

enum class Mode { Train, Infer };

namespace detail {
// Dot product with eight fixed interleaved partial sums. The summation order
// is fixed by the code, so results do not depend on compiler vectorization.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    T acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
    T tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}
} // namespace detail

// ---------------------------------------------------------------- conv2d

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                         std::size_t stride = 1) {
    if (input.rank() != 3 || weights.rank() != 4 || bias.rank() != 1)
        throw ShapeError("conv2d expects HWC input, (kh,kw,cin,cout) weights and (cout) bias");
    const std::size_t H = input.dim(0), W = input.dim(1), C = input.dim(2);
    const std::size_t KH = weights.dim(0), KW = weights.dim(1), O = weights.dim(3);
    if (weights.dim(2) != C)
        throw ShapeError("conv2d: input has " + std::to_string(C) + " channels, weights expect " +
                         std::to_string(weights.dim(2)));
    if (bias.dim(0) != O) throw ShapeError("conv2d: bias length does not match output channels");
    if (stride == 0 || KH > H || KW > W) throw ShapeError("conv2d: kernel larger than input " + shape_string(input.shape()));
    const std::size_t OH = (H - KH) / stride + 1, OW = (W - KW) / stride + 1;

    Tensor<T> out({OH, OW, O});
    const T* in = input.raw();
    const T* w = weights.raw();
    const T* b = bias.raw();
    T* o = out.raw();
    for (std::size_t y = 0; y < OH; ++y) {
        for (std::size_t x = 0; x < OW; ++x) {
            T* __restrict acc = o + (y * OW + x) * O;
            std::copy(b, b + O, acc);
            for (std::size_t dy = 0; dy < KH; ++dy) {
                for (std::size_t dx = 0; dx < KW; ++dx) {
                    const T* px = in + ((y * stride + dy) * W + (x * stride + dx)) * C;
                    const T* wk = w + (dy * KW + dx) * C * O;
                    for (std::size_t c = 0; c < C; ++c) {
                        const T v = px[c];
                        const T* __restrict wc = wk + c * O;
                        for (std::size_t k = 0; k < O; ++k) acc[k] += v * wc[k];
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
struct Conv2DGradients {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> bias;
};

/// Gradients of the forward contract. `need_input_grad = false` skips the
/// input gradient (first layer of a network) and leaves it empty.
template <typename T>
Conv2DGradients<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& cached_input,
                                   const Tensor<T>& weights, std::size_t stride = 1, bool need_input_grad = true) {
    if (cached_input.rank() != 3 || weights.rank() != 4 || grad_out.rank() != 3)
        throw ShapeError("conv2d_backward: rank mismatch");
    const std::size_t H = cached_input.dim(0), W = cached_input.dim(1), C = cached_input.dim(2);
    const std::size_t KH = weights.dim(0), KW = weights.dim(1), O = weights.dim(3);
    if (weights.dim(2) != C || stride == 0 || KH > H || KW > W)
        throw ShapeError("conv2d_backward: weights do not match cached input");
    const std::size_t OH = (H - KH) / stride + 1, OW = (W - KW) / stride + 1;
    if (grad_out.shape() != Shape{OH, OW, O})
        throw ShapeError("conv2d_backward: grad_out " + shape_string(grad_out.shape()) + " expected " +
                         shape_string({OH, OW, O}));

    Conv2DGradients<T> g{need_input_grad ? Tensor<T>(cached_input.shape()) : Tensor<T>(), Tensor<T>(weights.shape()),
                         Tensor<T>({O})};
    const T* in = cached_input.raw();
    const T* go = grad_out.raw();
    T* gw = g.weights.raw();
    T* gb = g.bias.raw();

    // Weights transposed to (kh, kw, cout, cin) so the input-gradient update
    // runs contiguously over input channels.
    std::vector<T> wt(weights.size());
    for (std::size_t t = 0; t < KH * KW; ++t)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t k = 0; k < O; ++k) wt[(t * O + k) * C + c] = weights[(t * C + c) * O + k];

    for (std::size_t y = 0; y < OH; ++y) {
        for (std::size_t x = 0; x < OW; ++x) {
            const T* gpix = go + (y * OW + x) * O;
            for (std::size_t k = 0; k < O; ++k) gb[k] += gpix[k];
            for (std::size_t dy = 0; dy < KH; ++dy) {
                for (std::size_t dx = 0; dx < KW; ++dx) {
                    const std::size_t in_off = ((y * stride + dy) * W + (x * stride + dx)) * C;
                    const std::size_t tap = dy * KW + dx;
                    const T* px = in + in_off;
                    T* gwt = gw + tap * C * O;
                    for (std::size_t c = 0; c < C; ++c) {
                        const T v = px[c];
                        T* __restrict gwc = gwt + c * O;
                        for (std::size_t k = 0; k < O; ++k) gwc[k] += v * gpix[k];
                    }
                    if (need_input_grad) {
                        T* __restrict gpx = g.input.raw() + in_off;
                        const T* wtap = wt.data() + tap * O * C;
                        for (std::size_t k = 0; k < O; ++k) {
                            const T gk = gpix[k];
                            const T* __restrict wk = wtap + k * C;
                            for (std::size_t c = 0; c < C; ++c) gpx[c] += wk[c] * gk;
                        }
                    }
                }
            }
        }
    }
    return g;
}

// ------------------------------------------------------------- maxpool2d

template <typename T>
struct PoolResult {
    Tensor<T> output;
    std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Ties resolve to the first maximum in row-major window order.
template <typename T>
PoolResult<T> maxpool2d_forward(const Tensor<T>& input, std::size_t window, std::size_t stride) {
    if (input.rank() != 3) throw ShapeError("maxpool2d expects an HWC input");
    const std::size_t H = input.dim(0), W = input.dim(1), C = input.dim(2);
    if (window == 0 || stride == 0 || window > H || window > W)
        throw ShapeError("maxpool2d: window " + std::to_string(window) + " does not fit input " +
                         shape_string(input.shape()));
    const std::size_t OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
    PoolResult<T> r{Tensor<T>({OH, OW, C}), std::vector<std::size_t>(OH * OW * C)};
    const T* in = input.raw();
    for (std::size_t y = 0; y < OH; ++y)
        for (std::size_t x = 0; x < OW; ++x)
            for (std::size_t c = 0; c < C; ++c) {
                std::size_t best = ((y * stride) * W + x * stride) * C + c;
                for (std::size_t dy = 0; dy < window; ++dy)
                    for (std::size_t dx = 0; dx < window; ++dx) {
                        const std::size_t idx = ((y * stride + dy) * W + (x * stride + dx)) * C + c;
                        if (in[idx] > in[best]) best = idx;
                    }
                const std::size_t o = (y * OW + x) * C + c;
                r.output[o] = in[best];
                r.argmax[o] = best;
            }
    return r;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                             const Shape& input_shape) {
    if (grad_out.size() != argmax.size()) throw ShapeError("maxpool2d_backward: argmax size mismatch");
    Tensor<T> gi(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) {
        if (argmax[i] >= gi.size()) throw ShapeError("maxpool2d_backward: argmax out of range");
        gi[argmax[i]] += grad_out[i];
    }
    return gi;
}

// ------------------------------------------------------------------ relu

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
    Tensor<T> out = input;
    for (auto& v : out.data()) v = v > T(0) ? v : T(0);
    return out;
}

/// Subgradient 0 at the kink.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& cached_input) {
    cached_input.require_same_shape(grad_out, "relu_backward");
    Tensor<T> gi = grad_out;
    for (std::size_t i = 0; i < gi.size(); ++i)
        if (!(cached_input[i] > T(0))) gi[i] = T(0);
    return gi;
}

// --------------------------------------------------------------- flatten

template <typename T>
Tensor<T> flatten(const Tensor<T>& input) {
    return input.reshaped({input.size()});
}

// ----------------------------------------------------------------- dense

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
    if (input.rank() != 1 || weights.rank() != 2 || bias.rank() != 1)
        throw ShapeError("dense expects a flat input, (units,inputs) weights and (units) bias");
    const std::size_t U = weights.dim(0), N = weights.dim(1);
    if (input.dim(0) != N)
        throw ShapeError("dense: input length " + std::to_string(input.dim(0)) + " but weights expect " +
                         std::to_string(N));
    if (bias.dim(0) != U) throw ShapeError("dense: bias length does not match units");
    Tensor<T> out({U});
    const T* x = input.raw();
    for (std::size_t u = 0; u < U; ++u)
        out[u] = detail::dot(weights.raw() + u * N, x, N) + bias[u];
    return out;
}

template <typename T>
struct DenseGradients {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> bias;
};

template <typename T>
DenseGradients<T> dense_backward(const Tensor<T>& grad_out, const Tensor<T>& cached_input,
                                 const Tensor<T>& weights) {
    if (weights.rank() != 2 || cached_input.rank() != 1 || grad_out.rank() != 1)
        throw ShapeError("dense_backward: rank mismatch");
    const std::size_t U = weights.dim(0), N = weights.dim(1);
    if (cached_input.dim(0) != N || grad_out.dim(0) != U) throw ShapeError("dense_backward: shape mismatch");
    DenseGradients<T> g{Tensor<T>({N}), Tensor<T>(weights.shape()), grad_out};
    const T* x = cached_input.raw();
    T* gi = g.input.raw();
    for (std::size_t u = 0; u < U; ++u) {
        const T gu = grad_out[u];
        const T* row = weights.raw() + u * N;
        T* grow = g.weights.raw() + u * N;
        for (std::size_t i = 0; i < N; ++i) {
            grow[i] = gu * x[i];
            gi[i] += gu * row[i];
        }
    }
    return g;
}

// --------------------------------------------------------------- dropout

template <typename T>
struct DropoutResult {
    Tensor<T> output;
    Tensor<T> mask;  // per-element scale: 0 or 1/(1-rate); all ones in Infer mode
};

/// Inverted dropout: survivors are scaled at train time so inference is the identity.
template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double rate, Rng& rng, Mode mode) {
    if (mode == Mode::Infer || rate == 0.0) return {input, Tensor<T>(input.shape(), T(1))};
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    DropoutResult<T> r{input, Tensor<T>(input.shape())};
    for (std::size_t i = 0; i < input.size(); ++i) {
        const T m = rng.uniform() < rate ? T(0) : keep_scale;
        r.mask[i] = m;
        r.output[i] = input[i] * m;
    }
    return r;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const Tensor<T>& mask) {
    mask.require_same_shape(grad_out, "dropout_backward");
    Tensor<T> gi = grad_out;
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] *= mask[i];
    return gi;
}

// ------------------------------------------------------- softmax / loss

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
    if (logits.rank() != 1) throw ShapeError("softmax expects a vector");
    const T m = *std::max_element(logits.data().begin(), logits.data().end());
    Tensor<T> p(logits.shape());
    T sum = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        sum += p[i];
    }
    for (auto& v : p.data()) v /= sum;
    return p;
}

/// -ln p[label] on already-normalized probabilities.
template <typename T>
double sparse_ce_loss(const Tensor<T>& probabilities, std::size_t label) {
    if (label >= probabilities.size())
        throw LabelError("label " + std::to_string(label) + " outside [0, " + std::to_string(probabilities.size()) + ")");
    const double p = static_cast<double>(probabilities[label]);
    return -std::log(std::max(p, std::numeric_limits<double>::min()));
}

template <typename T>
struct LossAndGradient {
    double loss;
    Tensor<T> grad_logits;  // softmax(z) - onehot(label)
    Tensor<T> probabilities;
};

/// Fused log-softmax cross-entropy: loss = logsumexp(z) - z[label].
template <typename T>
LossAndGradient<T> sparse_ce_from_logits(const Tensor<T>& logits, std::size_t label) {
    if (label >= logits.size())
        throw LabelError("label " + std::to_string(label) + " outside [0, " + std::to_string(logits.size()) + ")");
    const double m = static_cast<double>(*std::max_element(logits.data().begin(), logits.data().end()));
    double sum = 0.0;
    for (auto z : logits.data()) sum += std::exp(static_cast<double>(z) - m);
    const double lse = m + std::log(sum);
    LossAndGradient<T> r{lse - static_cast<double>(logits[label]), softmax(logits), Tensor<T>()};
    r.probabilities = r.grad_logits;
    r.grad_logits[label] -= T(1);
    return r;
}

} // namespace wellqc
