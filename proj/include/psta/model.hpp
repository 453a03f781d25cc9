#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "psta/pse.hpp"
#include "psta/record.hpp"
#include "psta/tae.hpp"

namespace psta {

struct ModelConfig {
    enum class Variant { pse, ms };

    PSEConfig pse;
    TAEConfig tae;
    std::vector<std::size_t> decoder_hidden = {64, 32};
    std::size_t classes = 20;
    Variant variant = Variant::pse;
    double focal_gamma = 1.0;
    std::vector<std::size_t> ms_hidden = {32};  // hidden dims of the MS-variant encoder

    std::size_t channels() const { return pse.mlp1_dims.front(); }

    void validate() const {
        if (classes < 2) throw std::invalid_argument("model config: need at least 2 classes");
        if (pse.mlp2_out != tae.d_e)
            throw std::invalid_argument("model config: PSE output dim " +
                                        std::to_string(pse.mlp2_out) +
                                        " does not match TAE d_e " + std::to_string(tae.d_e));
        if (focal_gamma < 0)
            throw std::invalid_argument("model config: focal gamma must be >= 0");
    }
};

/// Focal loss over a batch of logits: mean over samples of
/// (1 - p_true)^gamma * (-log p_true). gamma = 0 is plain cross-entropy;
/// there is no class-weighting term.
template <typename T>
Tensor<T> focal_loss(Tensor<T> logits, const std::vector<std::uint32_t>& labels, double gamma,
                     Tape<T>* tape = nullptr) {
    detail::require(logits.ndim() == 2, "focal_loss: logits must be (batch, classes)");
    detail::require(labels.size() == logits.dim(0),
                    "focal_loss: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(logits.dim(0)) + " rows");
    if (gamma < 0) throw std::invalid_argument("focal_loss: gamma must be >= 0");
    const std::size_t B = logits.dim(0), K = logits.dim(1);
    for (auto y : labels)
        if (y >= K)
            throw std::invalid_argument("focal_loss: label " + std::to_string(y) +
                                        " out of range for " + std::to_string(K) + " classes");

    auto probs = std::make_shared<std::vector<double>>(B * K);
    auto logp_true = std::make_shared<std::vector<double>>(B);
    double total = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        double mx = static_cast<double>(logits.at(i, 0));
        for (std::size_t k = 1; k < K; ++k)
            mx = std::max(mx, static_cast<double>(logits.at(i, k)));
        double denom = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            const double e = std::exp(static_cast<double>(logits.at(i, k)) - mx);
            (*probs)[i * K + k] = e;
            denom += e;
        }
        for (std::size_t k = 0; k < K; ++k) (*probs)[i * K + k] /= denom;
        const double lp = static_cast<double>(logits.at(i, labels[i])) - mx - std::log(denom);
        (*logp_true)[i] = lp;
        const double one_minus_p = -std::expm1(lp);  // 1 - p without cancellation
        total += std::pow(one_minus_p, gamma) * (-lp);
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(B)));
    check_finite(out, "focal_loss");

    if (tape && logits.requires_grad()) {
        out.set_requires_grad(true);
        auto labels_held = std::make_shared<std::vector<std::uint32_t>>(labels);
        tape->record([logits, out, probs, logp_true, labels_held, gamma, B, K]() mutable {
            if (!out.has_grad()) return;
            const double gscale =
                static_cast<double>(out.grad_if()[0]) / static_cast<double>(B);
            T* gz = logits.grad();
            for (std::size_t i = 0; i < B; ++i) {
                const double lp = (*logp_true)[i];
                const double p = std::exp(lp);
                const double onemp = -std::expm1(lp);
                // d/dz_k [(1-p)^g (-ln p)] = A * (delta_k - p_k), with
                // A = g p ln(p) (1-p)^(g-1) - (1-p)^g
                double A;
                if (onemp <= 0.0)
                    A = gamma > 0.0 ? 0.0 : -1.0;
                else
                    A = gamma * p * lp * std::pow(onemp, gamma - 1.0) - std::pow(onemp, gamma);
                const std::uint32_t y = (*labels_held)[i];
                for (std::size_t k = 0; k < K; ++k) {
                    const double delta = k == y ? 1.0 : 0.0;
                    gz[i * K + k] +=
                        static_cast<T>(gscale * A * (delta - (*probs)[i * K + k]));
                }
            }
        });
    }
    return out;
}

/// argmax with ties broken toward the lowest class index
template <typename T>
std::size_t predict(const Tensor<T>& logits_row) {
    detail::require(logits_row.ndim() == 1 && logits_row.dim(0) >= 1,
                    "predict: expects a 1-d logit vector");
    check_finite(logits_row, "predict");
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits_row.dim(0); ++k)
        if (logits_row.at(k) > logits_row.at(best)) best = k;
    return best;
}

/// per-date channel statistics over the full pixel set: (T, 2C) rows of
/// mean ++ std, the input of the MS-variant encoder
template <typename T>
Tensor<T> ms_stats(const ParcelRecord& rec) {
    if (rec.pixel_count == 0) throw std::invalid_argument("ms_stats: empty parcel");
    const std::size_t C = rec.channels, N = rec.pixel_count;
    Tensor<T> out({rec.t_len, 2 * C});
    for (std::size_t t = 0; t < rec.t_len; ++t)
        for (std::size_t c = 0; c < C; ++c) {
            double acc = 0.0;
            bool all_equal = true;
            const float first = rec.pixel(t, c, 0);
            for (std::size_t n = 0; n < N; ++n) {
                all_equal = all_equal && rec.pixel(t, c, n) == first;
                acc += static_cast<double>(rec.pixel(t, c, n));
            }
            const double mu = acc / static_cast<double>(N);
            double ss = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const double d = static_cast<double>(rec.pixel(t, c, n)) - mu;
                ss += d * d;
            }
            out.at(t, c) = static_cast<T>(mu);
            out.at(t, C + c) =
                all_equal ? T(0) : static_cast<T>(std::sqrt(ss / static_cast<double>(N)));
        }
    return out;
}

/// MS ablation encoder: pre-computed channel means/stds -> small MLP -> e
template <typename T>
Tensor<T> ms_encoder_forward(const ParcelRecord& rec, Mlp<T>& encoder, Mode mode,
                             Tape<T>* tape = nullptr) {
    return encoder.forward(ms_stats<T>(rec), mode, tape);
}

/// PSE (or MS encoder) + TAE + decoder, assembled per the configuration.
/// The pixel sample is drawn once per parcel and shared by all dates;
/// train mode draws fresh samples from the provided stream, eval mode uses
/// a parcel-id-derived seed so that metrics are reproducible.
template <typename T>
class Classifier {
public:
    Classifier(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(derive_seed(seed, 0x6d6f64656cULL));
        if (cfg_.variant == ModelConfig::Variant::pse) {
            pse_ = PseParams<T>::init(cfg_.pse, rng);
        } else {
            std::vector<std::size_t> dims{2 * cfg_.channels()};
            dims.insert(dims.end(), cfg_.ms_hidden.begin(), cfg_.ms_hidden.end());
            dims.push_back(cfg_.tae.d_e);
            ms_encoder_ = make_mlp<T>(dims, /*activate_last=*/true, rng);
        }
        tae_ = TaeParams<T>::init(cfg_.tae, rng);
        std::vector<std::size_t> dec{cfg_.tae.output_dim()};
        dec.insert(dec.end(), cfg_.decoder_hidden.begin(), cfg_.decoder_hidden.end());
        dec.push_back(cfg_.classes);
        decoder_ = make_mlp<T>(dec, /*activate_last=*/false, rng);
    }

    const ModelConfig& config() const { return cfg_; }

    static std::uint64_t eval_sample_seed(std::uint64_t parcel_id) {
        return derive_seed(0x6576616c5f735fULL, parcel_id);
    }

    /// batch forward -> logits (B, K). `sample_rng` drives train-mode pixel
    /// sampling and is ignored in eval mode.
    Tensor<T> forward(const std::vector<const ParcelRecord*>& batch, Mode mode,
                      Tape<T>* tape = nullptr, Rng* sample_rng = nullptr,
                      std::vector<AttentionTrace>* traces = nullptr) {
        if (batch.empty()) throw std::invalid_argument("model forward: empty batch");
        const std::size_t B = batch.size(), C = cfg_.channels();
        std::vector<std::size_t> parcel_offsets(B + 1, 0);
        std::vector<std::int32_t> days;
        for (std::size_t b = 0; b < B; ++b) {
            const auto& rec = *batch[b];
            if (rec.channels != C)
                throw std::invalid_argument("model forward: parcel " + std::to_string(rec.id) +
                                            " has " + std::to_string(rec.channels) +
                                            " channels, model expects " + std::to_string(C));
            parcel_offsets[b + 1] = parcel_offsets[b] + rec.t_len;
            days.insert(days.end(), rec.days.begin(), rec.days.end());
        }

        Tensor<T> e_rows = cfg_.variant == ModelConfig::Variant::pse
                               ? pse_rows(batch, parcel_offsets.back(), mode, tape, sample_rng)
                               : ms_rows(batch, parcel_offsets.back(), mode, tape);
        auto encoded =
            tae_forward_rows(e_rows, parcel_offsets, days, tae_, cfg_.tae, mode, tape, traces);
        return decoder_.forward(encoded, mode, tape);
    }

    std::vector<NamedTensor<T>> trainable_params() {
        std::vector<NamedTensor<T>> out;
        if (cfg_.variant == ModelConfig::Variant::pse)
            pse_.collect_params(out);
        else
            collect_mlp_params(ms_encoder_, "ms", out);
        tae_.collect_params(out);
        collect_mlp_params(decoder_, "decoder", out);
        return out;
    }

    std::vector<NamedTensor<T>> buffers() {
        std::vector<NamedTensor<T>> out;
        if (cfg_.variant == ModelConfig::Variant::pse)
            pse_.collect_buffers(out);
        else
            collect_mlp_buffers(ms_encoder_, "ms", out);
        tae_.collect_buffers(out);
        collect_mlp_buffers(decoder_, "decoder", out);
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto& p : trainable_params()) n += p.tensor.size();
        return n;
    }

    void zero_grads() {
        for (auto& p : trainable_params()) p.tensor.zero_grad();
    }

    PseParams<T>& pse_params() { return pse_; }
    TaeParams<T>& tae_params() { return tae_; }
    Mlp<T>& decoder() { return decoder_; }
    Mlp<T>& ms_encoder() { return ms_encoder_; }

private:
    Tensor<T> pse_rows(const std::vector<const ParcelRecord*>& batch, std::size_t total_cells,
                       Mode mode, Tape<T>* tape, Rng* sample_rng) {
        const std::size_t C = cfg_.channels();
        std::vector<std::vector<std::uint32_t>> picked(batch.size());
        std::size_t total_rows = 0;
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const auto& rec = *batch[b];
            PixelSample sample;
            if (mode == Mode::train) {
                if (!sample_rng)
                    throw std::invalid_argument("model forward: train mode needs a sample rng");
                sample = sample_pixels(rec.pixel_count, cfg_.pse.sample_size, *sample_rng);
            } else {
                Rng eval_rng(eval_sample_seed(rec.id));
                sample = sample_pixels(rec.pixel_count, cfg_.pse.sample_size, eval_rng);
            }
            picked[b] = distinct_pixels(sample, rec.pixel_count);
            total_rows += picked[b].size() * rec.t_len;
        }

        Tensor<T> rows({total_rows, C});
        Tensor<T> geo_rows({total_cells, 4});
        std::vector<std::size_t> cell_offsets;
        cell_offsets.reserve(total_cells + 1);
        cell_offsets.push_back(0);
        std::size_t row = 0, cell = 0;
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const auto& rec = *batch[b];
            const auto& ids = picked[b];
            const auto geo = rec.geo.as_array();
            for (std::size_t t = 0; t < rec.t_len; ++t) {
                for (auto idx : ids) {
                    for (std::size_t c = 0; c < C; ++c)
                        rows.at(row, c) = static_cast<T>(rec.pixel(t, c, idx));
                    ++row;
                }
                cell_offsets.push_back(row);
                for (std::size_t i = 0; i < 4; ++i)
                    geo_rows.at(cell, i) = static_cast<T>(geo[i]);
                ++cell;
            }
        }
        check_finite(rows, "model input");
        return pse_forward_rows(rows, cell_offsets, geo_rows, pse_, cfg_.pse, mode, tape);
    }

    Tensor<T> ms_rows(const std::vector<const ParcelRecord*>& batch, std::size_t total_cells,
                      Mode mode, Tape<T>* tape) {
        const std::size_t C = cfg_.channels();
        Tensor<T> stats({total_cells, 2 * C});
        std::size_t cell = 0;
        for (const auto* rec : batch) {
            auto s = ms_stats<T>(*rec);
            for (std::size_t t = 0; t < rec->t_len; ++t, ++cell)
                for (std::size_t c = 0; c < 2 * C; ++c) stats.at(cell, c) = s.at(t, c);
        }
        check_finite(stats, "model input");
        return ms_encoder_.forward(stats, mode, tape);
    }

    ModelConfig cfg_;
    PseParams<T> pse_;
    Mlp<T> ms_encoder_;
    TaeParams<T> tae_;
    Mlp<T> decoder_;
};

}  // namespace psta
