#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "psta/layers.hpp"

namespace psta {

struct TAEConfig {
    enum class Master { mean, max, last };

    std::size_t d_e = 128;
    std::size_t d_k = 32;
    std::size_t heads = 4;
    double tau = 1000.0;
    Master master = Master::mean;
    bool positional_encoding = true;
    std::vector<std::size_t> mlp3_dims = {128, 128};  // hidden/output after H*d_e input

    std::size_t output_dim() const { return mlp3_dims.back(); }
};

/// Sinusoidal encoding of day offsets. Component i (1-based) of date t is
/// sin(day(t) / tau^(2i/d_e) + (pi/2) * (i mod 2)), so odd components are
/// cosines of the same phase. day(1) = 0 encodes as the alternating
/// {1, 0, 1, 0, ...} pattern (odd components 1, even 0).
template <typename T>
Tensor<T> positional_encoding(const std::vector<std::int32_t>& days, std::size_t d_e,
                              double tau) {
    if (tau <= 0.0) throw std::invalid_argument("positional_encoding: tau must be positive");
    Tensor<T> p({days.size(), d_e});
    for (std::size_t t = 0; t < days.size(); ++t)
        for (std::size_t i = 1; i <= d_e; ++i) {
            const double freq =
                std::pow(tau, 2.0 * static_cast<double>(i) / static_cast<double>(d_e));
            const double phase = static_cast<double>(days[t]) / freq +
                                 (std::numbers::pi / 2.0) * static_cast<double>(i % 2);
            p.at(t, i - 1) = static_cast<T>(std::sin(phase));
        }
    return p;
}

/// Per-head attention weights over the sequence, recorded at inference.
struct AttentionTrace {
    std::vector<std::vector<double>> head_weights;  // [head][t], each row sums to 1
};

template <typename T>
struct TaeParams {
    std::vector<LayerParams<T>> fc1;  // per head, d_e -> 2*d_k (keys ++ queries)
    std::vector<LayerParams<T>> fc2;  // per head, d_k -> d_k master-query projection
    Mlp<T> mlp3;                      // H*d_e -> ... -> output

    static TaeParams init(const TAEConfig& cfg, Rng& rng) {
        TaeParams p;
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            p.fc1.push_back(
                make_layer<T>(cfg.d_e, 2 * cfg.d_k, false, Init::glorot_uniform, rng));
            p.fc2.push_back(make_layer<T>(cfg.d_k, cfg.d_k, false, Init::glorot_uniform, rng));
        }
        std::vector<std::size_t> dims = {cfg.heads * cfg.d_e};
        dims.insert(dims.end(), cfg.mlp3_dims.begin(), cfg.mlp3_dims.end());
        p.mlp3 = make_mlp<T>(dims, /*activate_last=*/true, rng);
        return p;
    }

    void collect_params(std::vector<NamedTensor<T>>& out) {
        for (std::size_t h = 0; h < fc1.size(); ++h) {
            collect_layer_params(fc1[h], "tae.fc1." + std::to_string(h), out);
            collect_layer_params(fc2[h], "tae.fc2." + std::to_string(h), out);
        }
        collect_mlp_params(mlp3, "tae.mlp3", out);
    }
    void collect_buffers(std::vector<NamedTensor<T>>& out) {
        collect_mlp_buffers(mlp3, "tae.mlp3", out);
    }
};

/// key/query pairs for one head: a single shared affine map of e+p, split
/// into halves. There is no value projection; the inputs serve as values.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> keys_queries(Tensor<T> e_plus_p, const LayerParams<T>& fc1_h,
                                             std::size_t d_k, Tape<T>* tape = nullptr) {
    detail::require(fc1_h.out_features() == 2 * d_k,
                    "keys_queries: FC1 must produce 2*d_k features");
    auto kq = linear(e_plus_p, fc1_h, tape);
    auto k = slice_cols(kq, 0, d_k, tape);
    auto q = slice_cols(kq, d_k, 2 * d_k, tape);
    return {k, q};
}

/// master query for one head from the per-date queries (T, d_k). FC2 is
/// applied in every aggregation mode so the parameter count does not
/// depend on the ablation under test.
template <typename T>
Tensor<T> master_query(Tensor<T> queries, TAEConfig::Master mode, const LayerParams<T>& fc2_h,
                       Tape<T>* tape = nullptr) {
    detail::require(queries.ndim() == 2 && queries.dim(0) >= 1,
                    "master_query: need at least one date");
    const std::vector<std::size_t> offsets{0, queries.dim(0)};
    Tensor<T> agg;
    switch (mode) {
        case TAEConfig::Master::mean: agg = group_mean(queries, offsets, tape); break;
        case TAEConfig::Master::max: agg = group_max(queries, offsets, tape); break;
        case TAEConfig::Master::last: agg = group_last(queries, offsets, tape); break;
        default: throw std::invalid_argument("master_query: unknown mode");
    }
    auto projected = linear(agg, fc2_h, tape);  // (1, d_k)
    return reshape(projected, {projected.dim(1)}, tape);
}

/// scaled dot-product attention of one head for one sequence:
/// weights = softmax(q_hat . k_t / sqrt(d_k)), output = sum_t w_t * values_t
template <typename T>
std::pair<Tensor<T>, Tensor<T>> attention(Tensor<T> q_hat, Tensor<T> keys, Tensor<T> values,
                                          Tape<T>* tape = nullptr) {
    detail::require(q_hat.ndim() == 1 && keys.ndim() == 2 && keys.dim(1) == q_hat.dim(0),
                    "attention: key dim does not match query");
    detail::require(values.ndim() == 2 && values.dim(0) == keys.dim(0),
                    "attention: values must align with keys");
    const std::size_t d_k = q_hat.dim(0), t_len = keys.dim(0);
    const std::vector<std::size_t> offsets{0, t_len};
    auto q2 = reshape(q_hat, {1, d_k}, tape);
    auto logits = scale(group_rowdot(keys, q2, offsets, tape),
                        static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_k))), tape);
    auto weights = group_softmax(logits, offsets, tape);
    auto pooled = group_weighted_sum(values, weights, offsets, tape);  // (1, d_e)
    return {reshape(pooled, {pooled.dim(1)}, tape), weights};
}

/// Batched TAE: `e` stacks the date embeddings of all parcels
/// ((sum of T_b) rows, d_e), `parcel_offsets` delimits each parcel's rows,
/// `days` holds each row's day offset. Returns one output row per parcel.
template <typename T>
Tensor<T> tae_forward_rows(Tensor<T> e, const std::vector<std::size_t>& parcel_offsets,
                           const std::vector<std::int32_t>& days, TaeParams<T>& params,
                           const TAEConfig& cfg, Mode mode, Tape<T>* tape = nullptr,
                           std::vector<AttentionTrace>* traces = nullptr) {
    detail::require(e.ndim() == 2 && e.dim(1) == cfg.d_e,
                    "tae: embeddings " + shape_str(e.shape()) + " do not match d_e=" +
                        std::to_string(cfg.d_e));
    detail::require(days.size() == e.dim(0), "tae: day stamps must align with rows");
    const std::size_t parcels = parcel_offsets.size() - 1;

    Tensor<T> epp = e;
    if (cfg.positional_encoding) {
        auto p = positional_encoding<T>(days, cfg.d_e, cfg.tau);
        epp = add(e, p, tape);
    }

    if (traces) traces->assign(parcels, AttentionTrace{});
    const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.d_k)));
    std::vector<Tensor<T>> head_outputs;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        auto kq = linear(epp, params.fc1[h], tape);
        auto k = slice_cols(kq, 0, cfg.d_k, tape);
        auto q = slice_cols(kq, cfg.d_k, 2 * cfg.d_k, tape);
        Tensor<T> agg;
        switch (cfg.master) {
            case TAEConfig::Master::mean: agg = group_mean(q, parcel_offsets, tape); break;
            case TAEConfig::Master::max: agg = group_max(q, parcel_offsets, tape); break;
            case TAEConfig::Master::last: agg = group_last(q, parcel_offsets, tape); break;
            default: throw std::invalid_argument("tae: unknown master-query mode");
        }
        auto q_hat = linear(agg, params.fc2[h], tape);
        auto logits = scale(group_rowdot(k, q_hat, parcel_offsets, tape), inv_sqrt_dk, tape);
        auto weights = group_softmax(logits, parcel_offsets, tape);
        head_outputs.push_back(group_weighted_sum(epp, weights, parcel_offsets, tape));
        if (traces)
            for (std::size_t b = 0; b < parcels; ++b) {
                std::vector<double> w;
                for (std::size_t r = parcel_offsets[b]; r < parcel_offsets[b + 1]; ++r)
                    w.push_back(static_cast<double>(weights.at(r)));
                (*traces)[b].head_weights.push_back(std::move(w));
            }
    }
    auto merged = concat(head_outputs, 1, tape);  // (parcels, H*d_e)
    return params.mlp3.forward(merged, mode, tape);
}

/// Single-sequence TAE (one parcel): e is (T, d_e), days has length T.
template <typename T>
std::pair<Tensor<T>, AttentionTrace> tae_forward(Tensor<T> e,
                                                 const std::vector<std::int32_t>& days,
                                                 TaeParams<T>& params, const TAEConfig& cfg,
                                                 Mode mode, Tape<T>* tape = nullptr) {
    const std::vector<std::size_t> offsets{0, e.dim(0)};
    std::vector<AttentionTrace> traces;
    auto out = tae_forward_rows(e, offsets, days, params, cfg, mode, tape, &traces);
    return {reshape(out, {out.dim(1)}, tape), traces.at(0)};
}

}  // namespace psta
