#pragma once

#include <cstdint>
#include <vector>

#include "psta/geometry.hpp"
#include "psta/layers.hpp"
#include "psta/rng.hpp"

namespace psta {

/// Fixed-size draw from a parcel's pixels. The same sample is reused for
/// every date of the parcel. When the parcel has fewer than `size` pixels
/// the draw cycles through a random permutation, so the first valid_count
/// entries are always pairwise distinct.
struct PixelSample {
    std::vector<std::uint32_t> indices;  // length S, 0-based pixel ids
    std::uint32_t valid_count = 0;       // number of distinct source pixels
};

inline PixelSample sample_pixels(std::size_t n_pixels, std::size_t sample_size, Rng& rng) {
    if (n_pixels == 0) throw std::invalid_argument("sample_pixels: empty parcel");
    if (sample_size == 0) throw std::invalid_argument("sample_pixels: sample size must be >= 1");
    PixelSample s;
    s.indices.resize(sample_size);
    if (n_pixels >= sample_size) {
        auto draw = rng.sample_without_replacement(n_pixels, sample_size);
        for (std::size_t i = 0; i < sample_size; ++i)
            s.indices[i] = static_cast<std::uint32_t>(draw[i]);
        s.valid_count = static_cast<std::uint32_t>(sample_size);
    } else {
        auto perm = rng.sample_without_replacement(n_pixels, n_pixels);
        for (std::size_t i = 0; i < sample_size; ++i)
            s.indices[i] = static_cast<std::uint32_t>(perm[i % n_pixels]);
        s.valid_count = static_cast<std::uint32_t>(n_pixels);
    }
    return s;
}

/// the sample's distinct pixel ids in order of first occurrence
inline std::vector<std::uint32_t> distinct_pixels(const PixelSample& sample,
                                                  std::size_t n_pixels) {
    std::vector<std::uint32_t> out;
    std::vector<bool> seen(n_pixels, false);
    for (auto idx : sample.indices) {
        if (idx >= n_pixels)
            throw std::invalid_argument("pixel sample index " + std::to_string(idx) +
                                        " out of range for parcel of " +
                                        std::to_string(n_pixels) + " pixels");
        if (!seen[idx]) {
            seen[idx] = true;
            out.push_back(idx);
        }
    }
    return out;
}

struct PSEConfig {
    enum class Pooling { mean_std, mean };

    std::size_t sample_size = 64;
    std::vector<std::size_t> mlp1_dims = {10, 32, 64};
    Pooling pooling = Pooling::mean_std;
    std::size_t mlp2_out = 128;
    bool include_geometric = true;

    std::size_t channels() const { return mlp1_dims.front(); }
    std::size_t pooled_dim() const {
        return mlp1_dims.back() * (pooling == Pooling::mean_std ? 2 : 1);
    }
    std::size_t mlp2_in() const { return pooled_dim() + (include_geometric ? 4 : 0); }
};

template <typename T>
struct PseParams {
    Mlp<T> mlp1;  // shared per-pixel embedding
    Mlp<T> mlp2;  // post-pooling projection to d_e

    static PseParams init(const PSEConfig& cfg, Rng& rng) {
        PseParams p;
        p.mlp1 = make_mlp<T>(cfg.mlp1_dims, /*activate_last=*/true, rng);
        p.mlp2 = make_mlp<T>({cfg.mlp2_in(), cfg.mlp2_out}, /*activate_last=*/true, rng);
        return p;
    }

    void collect_params(std::vector<NamedTensor<T>>& out) {
        collect_mlp_params(mlp1, "pse.mlp1", out);
        collect_mlp_params(mlp2, "pse.mlp2", out);
    }
    void collect_buffers(std::vector<NamedTensor<T>>& out) {
        collect_mlp_buffers(mlp1, "pse.mlp1", out);
        collect_mlp_buffers(mlp2, "pse.mlp2", out);
    }
};

/// Batched PSE over pre-gathered pixel rows. `pixel_rows` stacks the
/// distinct sampled pixels of every (parcel, date) cell; `cell_offsets`
/// delimits those cells; `geo_rows` carries the (standardized) geometric
/// features per cell when enabled. Returns one embedding row per cell.
template <typename T>
Tensor<T> pse_forward_rows(Tensor<T> pixel_rows, const std::vector<std::size_t>& cell_offsets,
                           Tensor<T> geo_rows, PseParams<T>& params, const PSEConfig& cfg,
                           Mode mode, Tape<T>* tape = nullptr) {
    detail::require(pixel_rows.ndim() == 2 && pixel_rows.dim(1) == cfg.channels(),
                    "pse: pixel rows " + shape_str(pixel_rows.shape()) + " do not carry " +
                        std::to_string(cfg.channels()) + " channels");
    auto embedded = params.mlp1.forward(pixel_rows, mode, tape);
    Tensor<T> pooled = cfg.pooling == PSEConfig::Pooling::mean_std
                           ? segment_mean_std(embedded, cell_offsets, tape)
                           : group_mean(embedded, cell_offsets, tape);
    if (cfg.include_geometric) {
        detail::require(geo_rows.ndim() == 2 && geo_rows.dim(0) == pooled.dim(0) &&
                            geo_rows.dim(1) == 4,
                        "pse: geometric feature rows must be (cells,4)");
        pooled = concat<T>({pooled, geo_rows}, 1, tape);
    }
    return params.mlp2.forward(pooled, mode, tape);
}

/// Single-parcel encoder: embeds a T x C x N pixel tensor (flat, (t,c,n)
/// order) into one d_e vector per date. Repeated sample entries are
/// dropped before pooling, so parcels smaller than S pool over exactly
/// their own pixels.
template <typename T>
Tensor<T> pse_forward(const std::vector<T>& pixels, std::size_t t_len, std::size_t n_pixels,
                      const PixelSample& sample, const GeometricFeatures& geo,
                      PseParams<T>& params, const PSEConfig& cfg, Mode mode,
                      Tape<T>* tape = nullptr) {
    const std::size_t C = cfg.channels();
    if (pixels.size() != t_len * C * n_pixels)
        throw ShapeError("pse_forward: pixel buffer does not match T*C*N");
    const auto distinct = distinct_pixels(sample, n_pixels);
    const std::size_t V = distinct.size();

    Tensor<T> rows({t_len * V, C});
    std::vector<std::size_t> offsets(t_len + 1);
    for (std::size_t t = 0; t < t_len; ++t) {
        offsets[t] = t * V;
        for (std::size_t j = 0; j < V; ++j)
            for (std::size_t c = 0; c < C; ++c)
                rows.at(t * V + j, c) = pixels[(t * C + c) * n_pixels + distinct[j]];
    }
    offsets[t_len] = t_len * V;

    Tensor<T> geo_rows({t_len, 4});
    const auto g = geo.as_array();
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t i = 0; i < 4; ++i) geo_rows.at(t, i) = static_cast<T>(g[i]);

    return pse_forward_rows(rows, offsets, geo_rows, params, cfg, mode, tape);
}

}  // namespace psta
