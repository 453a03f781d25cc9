#pragma once

#include <optional>
#include <string>
#include <vector>

#include "psta/ops.hpp"
#include "psta/rng.hpp"

namespace psta {

enum class Mode { train, eval };

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
struct BatchNormState {
    Tensor<T> gamma, beta;               // trainable scale and shift
    Tensor<T> running_mean, running_var;  // eval-mode statistics
    T momentum = T(0.1);
    T eps = T(1e-5);
};

/// One fully-connected layer: weight (out,in), bias (out), optional
/// batchnorm over the output features.
template <typename T>
struct LayerParams {
    Tensor<T> weight, bias;
    std::optional<BatchNormState<T>> bn;

    std::size_t out_features() const { return weight.dim(0); }
    std::size_t in_features() const { return weight.dim(1); }
};

enum class Init { he_uniform, glorot_uniform };

template <typename T>
LayerParams<T> make_layer(std::size_t in, std::size_t out, bool with_bn, Init init, Rng& rng) {
    LayerParams<T> p;
    p.weight = Tensor<T>({out, in});
    p.bias = Tensor<T>({out});
    const double limit = init == Init::he_uniform
                             ? std::sqrt(6.0 / static_cast<double>(in))
                             : std::sqrt(6.0 / static_cast<double>(in + out));
    for (std::size_t i = 0; i < p.weight.size(); ++i)
        p.weight.data()[i] = static_cast<T>(rng.uniform(-limit, limit));
    p.weight.set_requires_grad(true);
    p.bias.set_requires_grad(true);
    if (with_bn) {
        BatchNormState<T> bn;
        bn.gamma = Tensor<T>({out}, T(1));
        bn.beta = Tensor<T>({out});
        bn.running_mean = Tensor<T>({out});
        bn.running_var = Tensor<T>({out}, T(1));
        bn.gamma.set_requires_grad(true);
        bn.beta.set_requires_grad(true);
        p.bn = std::move(bn);
    }
    return p;
}

/// x (R,in) or (in) -> x W^T + b, broadcast over rows
template <typename T>
Tensor<T> linear(Tensor<T> x, const LayerParams<T>& p, Tape<T>* tape = nullptr) {
    detail::require(x.ndim() >= 1 && x.ndim() <= 2, "linear: expects 1-d or 2-d input");
    const bool vec_in = x.ndim() == 1;
    const std::size_t in = vec_in ? x.dim(0) : x.dim(1);
    const std::size_t rows = vec_in ? 1 : x.dim(0);
    detail::require(in == p.in_features(),
                    "linear: input dim " + std::to_string(in) + " does not match weight " +
                        shape_str(p.weight.shape()));
    const std::size_t out_f = p.out_features();
    Tensor<T> out(vec_in ? Shape{out_f} : Shape{rows, out_f});
    detail::gemm_nt(x.data(), p.weight.data(), out.data(), rows, in, out_f);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_f; ++j) out.data()[r * out_f + j] += p.bias.at(j);
    check_finite(out, "linear");
    Tensor<T> W = p.weight, b = p.bias;
    if (tape && (x.requires_grad() || W.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([x, W, b, out, rows, in, out_f]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            if (x.requires_grad())
                detail::gemm_nn(g, W.data(), x.grad(), rows, out_f, in, true);
            if (W.requires_grad())
                detail::gemm_tn(g, x.data(), W.grad(), rows, out_f, in, true);
            if (b.requires_grad()) {
                T* gb = b.grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < out_f; ++j) gb[j] += g[r * out_f + j];
            }
        });
    }
    return out;
}

/// Standard batchnorm over the row axis of a (R,F) matrix. Train mode uses
/// batch statistics (population variance inside the normalizer, unbiased
/// variance in the running estimate) and needs R >= 2; eval mode is a pure
/// per-row function of the frozen running statistics.
template <typename T>
Tensor<T> batchnorm(Tensor<T> x, LayerParams<T>& p, Mode mode, Tape<T>* tape = nullptr) {
    detail::require(p.bn.has_value(), "batchnorm: layer has no batchnorm state");
    detail::require(x.ndim() == 2, "batchnorm: expects 2-d input, got " + shape_str(x.shape()));
    auto& bn = *p.bn;
    const std::size_t R = x.dim(0), F = x.dim(1);
    detail::require(F == bn.gamma.dim(0), "batchnorm: feature dim " + std::to_string(F) +
                                              " does not match state " +
                                              shape_str(bn.gamma.shape()));
    Tensor<T> out({R, F});
    Tensor<T> gamma = bn.gamma, beta = bn.beta;

    if (mode == Mode::train) {
        if (R < 2)
            throw std::invalid_argument(
                "batchnorm: train mode needs a batch of at least 2 rows, got " +
                std::to_string(R));
        auto xhat = Tensor<T>({R, F});
        auto invstd = std::make_shared<std::vector<T>>(F);
        std::vector<double> mu(F, 0.0), var(F, 0.0);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t f = 0; f < F; ++f) mu[f] += static_cast<double>(x.at(r, f));
        for (std::size_t f = 0; f < F; ++f) mu[f] /= static_cast<double>(R);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t f = 0; f < F; ++f) {
                const double d = static_cast<double>(x.at(r, f)) - mu[f];
                var[f] += d * d;
            }
        for (std::size_t f = 0; f < F; ++f) {
            var[f] /= static_cast<double>(R);
            (*invstd)[f] = static_cast<T>(1.0 / std::sqrt(var[f] + static_cast<double>(bn.eps)));
        }
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t f = 0; f < F; ++f) {
                const T xh = (x.at(r, f) - static_cast<T>(mu[f])) * (*invstd)[f];
                xhat.at(r, f) = xh;
                out.at(r, f) = gamma.at(f) * xh + beta.at(f);
            }
        // running stats: unbiased variance, updated only in train mode
        const double unbias = static_cast<double>(R) / static_cast<double>(R - 1);
        for (std::size_t f = 0; f < F; ++f) {
            bn.running_mean.at(f) = (T(1) - bn.momentum) * bn.running_mean.at(f) +
                                    bn.momentum * static_cast<T>(mu[f]);
            bn.running_var.at(f) = (T(1) - bn.momentum) * bn.running_var.at(f) +
                                   bn.momentum * static_cast<T>(var[f] * unbias);
        }
        check_finite(out, "batchnorm");
        if (tape && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
            out.set_requires_grad(true);
            tape->record([x, gamma, beta, out, xhat, invstd, R, F]() mutable {
                if (!out.has_grad()) return;
                const T* g = out.grad_if();
                for (std::size_t f = 0; f < F; ++f) {
                    double sum_dy = 0.0, sum_dy_xh = 0.0;
                    for (std::size_t r = 0; r < R; ++r) {
                        sum_dy += static_cast<double>(g[r * F + f]);
                        sum_dy_xh += static_cast<double>(g[r * F + f]) * xhat.at(r, f);
                    }
                    if (beta.requires_grad()) beta.grad()[f] += static_cast<T>(sum_dy);
                    if (gamma.requires_grad()) gamma.grad()[f] += static_cast<T>(sum_dy_xh);
                    if (x.requires_grad()) {
                        const double gm = static_cast<double>(gamma.at(f));
                        const double is = static_cast<double>((*invstd)[f]);
                        const double n = static_cast<double>(R);
                        for (std::size_t r = 0; r < R; ++r) {
                            const double dxh = static_cast<double>(g[r * F + f]) * gm;
                            const double tot = n * dxh - sum_dy * gm -
                                               static_cast<double>(xhat.at(r, f)) * sum_dy_xh * gm;
                            x.grad()[r * F + f] += static_cast<T>(is / n * tot);
                        }
                    }
                }
            });
        }
        return out;
    }

    // eval
    Tensor<T> rm = bn.running_mean, rv = bn.running_var;
    auto invstd = std::make_shared<std::vector<T>>(F);
    for (std::size_t f = 0; f < F; ++f)
        (*invstd)[f] =
            static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv.at(f)) +
                                           static_cast<double>(bn.eps)));
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t f = 0; f < F; ++f)
            out.at(r, f) = gamma.at(f) * (x.at(r, f) - rm.at(f)) * (*invstd)[f] + beta.at(f);
    check_finite(out, "batchnorm");
    if (tape && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([x, gamma, beta, out, rm, invstd, R, F]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            for (std::size_t f = 0; f < F; ++f) {
                const T is = (*invstd)[f];
                for (std::size_t r = 0; r < R; ++r) {
                    const T dy = g[r * F + f];
                    if (beta.requires_grad()) beta.grad()[f] += dy;
                    if (gamma.requires_grad())
                        gamma.grad()[f] += dy * (x.at(r, f) - rm.at(f)) * is;
                    if (x.requires_grad()) x.grad()[r * F + f] += dy * gamma.at(f) * is;
                }
            }
        });
    }
    return out;
}

/// Stack of layers; every layer but optionally the last runs
/// linear -> batchnorm -> relu. The final layer of a decoder stays affine.
template <typename T>
struct Mlp {
    std::vector<LayerParams<T>> layers;
    bool activate_last = true;

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Tape<T>* tape = nullptr) {
        Tensor<T> h = x;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            h = linear(h, layers[i], tape);
            if (activate_last || i + 1 < layers.size()) {
                if (layers[i].bn) h = batchnorm(h, layers[i], mode, tape);
                h = relu(h, tape);
            }
        }
        return h;
    }
};

/// dims = {in, h1, ..., out}; activated layers get batchnorm + He init,
/// a non-activated final layer gets Glorot init and no batchnorm.
template <typename T>
Mlp<T> make_mlp(const std::vector<std::size_t>& dims, bool activate_last, Rng& rng) {
    detail::require(dims.size() >= 2, "make_mlp: need at least in/out dims");
    Mlp<T> mlp;
    mlp.activate_last = activate_last;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const bool activated = activate_last || i + 2 < dims.size();
        mlp.layers.push_back(make_layer<T>(dims[i], dims[i + 1], activated,
                                           activated ? Init::he_uniform : Init::glorot_uniform,
                                           rng));
    }
    return mlp;
}

template <typename T>
void collect_layer_params(LayerParams<T>& p, const std::string& prefix,
                          std::vector<NamedTensor<T>>& out) {
    out.push_back({prefix + ".weight", p.weight});
    out.push_back({prefix + ".bias", p.bias});
    if (p.bn) {
        out.push_back({prefix + ".bn.gamma", p.bn->gamma});
        out.push_back({prefix + ".bn.beta", p.bn->beta});
    }
}

template <typename T>
void collect_layer_buffers(LayerParams<T>& p, const std::string& prefix,
                           std::vector<NamedTensor<T>>& out) {
    if (p.bn) {
        out.push_back({prefix + ".bn.running_mean", p.bn->running_mean});
        out.push_back({prefix + ".bn.running_var", p.bn->running_var});
    }
}

template <typename T>
void collect_mlp_params(Mlp<T>& mlp, const std::string& prefix,
                        std::vector<NamedTensor<T>>& out) {
    for (std::size_t i = 0; i < mlp.layers.size(); ++i)
        collect_layer_params(mlp.layers[i], prefix + "." + std::to_string(i), out);
}

template <typename T>
void collect_mlp_buffers(Mlp<T>& mlp, const std::string& prefix,
                         std::vector<NamedTensor<T>>& out) {
    for (std::size_t i = 0; i < mlp.layers.size(); ++i)
        collect_layer_buffers(mlp.layers[i], prefix + "." + std::to_string(i), out);
}

}  // namespace psta
