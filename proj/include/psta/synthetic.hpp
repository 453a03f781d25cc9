#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "psta/data.hpp"
#include "psta/geometry.hpp"

namespace psta {

/// Double-logistic growth curve: A * (sigma(k1 (d - d1)) - sigma(k2 (d - d2))),
/// the usual parametric shape of a vegetation season. `time_reversed`
/// classes evaluate the curve on the reversed date sequence, which keeps
/// the per-date value multiset identical to the paired class while moving
/// every value to a different position in time.
struct ClassPhenology {
    double amplitude = 0.6;
    double onset_day = 90;    // d1
    double offset_day = 210;  // d2
    double slope_on = 0.08;   // k1
    double slope_off = 0.08;  // k2
    bool time_reversed = false;
    std::vector<double> mixing;  // per-channel projection of the scalar signal

    double value_at(double day) const {
        auto sigma = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
        return amplitude *
               (sigma(slope_on * (day - onset_day)) - sigma(slope_off * (day - offset_day)));
    }
};

struct SyntheticConfig {
    std::uint32_t classes = 6;
    std::uint32_t parcels_per_class = 500;
    std::uint32_t t_len = 24;
    std::uint32_t channels = 10;
    std::uint32_t min_pixels = 4;
    std::uint32_t max_pixels = 1000;  // parcel sizes drawn log-uniformly
    double noise_std = 0.02;          // per-pixel i.i.d. Gaussian noise
    double offset_std = 0.03;         // per-parcel per-channel brightness offset
    std::int32_t day_spacing = 15;
    std::int32_t day_jitter = 3;      // uniform +-jitter around the grid
    std::uint32_t day_groups = 1;     // parcels in a group share acquisition dates
    double imbalance_decay = 1.0;     // class c holds parcels_per_class * decay^c parcels
    std::uint32_t folds = 5;
    std::uint64_t seed = 1;
    std::vector<ClassPhenology> phenology;  // default_phenology(...) when empty

    void validate() const {
        if (classes < 2) throw std::invalid_argument("synthetic: need at least 2 classes");
        if (parcels_per_class < 1)
            throw std::invalid_argument("synthetic: need at least one parcel per class");
        if (t_len < 2) throw std::invalid_argument("synthetic: need at least 2 dates");
        if (min_pixels < 1 || max_pixels < min_pixels)
            throw std::invalid_argument("synthetic: bad parcel-size range");
        if (noise_std < 0 || offset_std < 0)
            throw std::invalid_argument("synthetic: noise levels must be >= 0");
        if (imbalance_decay <= 0 || imbalance_decay > 1)
            throw std::invalid_argument("synthetic: imbalance decay must be in (0,1]");
        if (day_spacing < 1 || day_jitter < 0 || 2 * day_jitter >= day_spacing)
            throw std::invalid_argument("synthetic: day jitter must be below half the spacing");
        for (const auto& ph : phenology) {
            if (!(ph.onset_day < ph.offset_day))
                throw std::invalid_argument(
                    "synthetic: onset day must precede offset day (d1 < d2)");
            if (ph.amplitude <= 0 || ph.slope_on <= 0 || ph.slope_off <= 0)
                throw std::invalid_argument("synthetic: phenology parameters must be positive");
        }
    }
};

/// Per-class curve parameters. Classes 0 and 1 are the designated
/// phase-swapped pair: identical parameters and channel mixing, class 1
/// time-reversed, so only temporal position separates them.
inline std::vector<ClassPhenology> default_phenology(std::uint32_t classes,
                                                     std::uint32_t channels,
                                                     std::uint32_t t_len,
                                                     std::int32_t day_spacing,
                                                     std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x7068656e6fULL));
    const double horizon = static_cast<double>(day_spacing) * (t_len - 1);
    std::vector<ClassPhenology> out;
    for (std::uint32_t c = 0; c < classes; ++c) {
        ClassPhenology ph;
        if (c == 1) {
            ph = out[0];
            ph.time_reversed = true;
            out.push_back(ph);
            continue;
        }
        ph.amplitude = rng.uniform(0.45, 0.85);
        ph.onset_day = rng.uniform(0.10, 0.35) * horizon;
        ph.offset_day = ph.onset_day + rng.uniform(0.25, 0.45) * horizon;
        ph.slope_on = rng.uniform(0.06, 0.14);
        ph.slope_off = rng.uniform(0.06, 0.14);
        ph.mixing.resize(channels);
        for (auto& m : ph.mixing) m = rng.uniform(0.2, 1.0);
        out.push_back(ph);
    }
    return out;
}

/// Rectangle with a ragged last row holding exactly `n` pixels; the aspect
/// ratio varies so geometric features spread across parcels.
inline Mask synthetic_mask(std::size_t n, Rng& rng) {
    const double aspect = rng.uniform(0.6, 1.7);
    auto w = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n) * aspect)));
    w = std::clamp<std::size_t>(w, 1, n);
    const std::size_t h = (n + w - 1) / w;
    Mask m{h, w, std::vector<std::uint8_t>(h * w, 0)};
    for (std::size_t i = 0; i < n; ++i) m.cells[i] = 1;
    return m;
}

/// Builds the whole dataset in memory. Every per-parcel quantity is drawn
/// from a seed derived from (seed, parcel id), so generation is
/// order-independent and reproducible parcel by parcel.
inline Dataset generate_synthetic(SyntheticConfig cfg) {
    cfg.validate();
    if (cfg.phenology.empty())
        cfg.phenology =
            default_phenology(cfg.classes, cfg.channels, cfg.t_len, cfg.day_spacing, cfg.seed);
    if (cfg.phenology.size() != cfg.classes)
        throw std::invalid_argument("synthetic: phenology table does not cover all classes");
    for (auto& ph : cfg.phenology)
        if (ph.mixing.size() != cfg.channels)
            throw std::invalid_argument("synthetic: mixing vector does not match channels");
    cfg.validate();

    // per-group acquisition calendars (jittered grid re-anchored at day 0)
    std::vector<std::vector<std::int32_t>> group_days(cfg.day_groups);
    for (std::uint32_t g = 0; g < cfg.day_groups; ++g) {
        Rng rng(derive_seed(cfg.seed, 0x64617973ULL, g));
        auto& days = group_days[g];
        days.resize(cfg.t_len);
        for (std::uint32_t t = 0; t < cfg.t_len; ++t)
            days[t] = static_cast<std::int32_t>(t) * cfg.day_spacing +
                      static_cast<std::int32_t>(rng.int_range(-cfg.day_jitter, cfg.day_jitter));
        const std::int32_t first = days[0];
        for (auto& d : days) d -= first;
    }

    std::vector<std::uint32_t> class_counts(cfg.classes);
    std::size_t total = 0;
    for (std::uint32_t c = 0; c < cfg.classes; ++c) {
        const double raw = static_cast<double>(cfg.parcels_per_class) *
                           std::pow(cfg.imbalance_decay, static_cast<double>(c));
        class_counts[c] = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(std::lround(raw)));
        total += class_counts[c];
    }

    constexpr double kBaseline = 0.2;
    Dataset ds;
    ds.manifest.classes = cfg.classes;
    ds.manifest.t_len = cfg.t_len;
    ds.manifest.channels = cfg.channels;
    ds.manifest.folds = cfg.folds;
    const auto fold_of = assign_folds(total, cfg.folds, cfg.seed);

    std::uint64_t id = 0;
    const double log_lo = std::log(static_cast<double>(cfg.min_pixels));
    const double log_hi = std::log(static_cast<double>(cfg.max_pixels));
    for (std::uint32_t c = 0; c < cfg.classes; ++c) {
        const auto& ph = cfg.phenology[c];
        for (std::uint32_t p = 0; p < class_counts[c]; ++p, ++id) {
            Rng rng(derive_seed(cfg.seed, 0x70617263656cULL, id));
            ParcelRecord rec;
            rec.id = id;
            rec.label = c;
            rec.t_len = cfg.t_len;
            rec.channels = cfg.channels;
            const auto n = static_cast<std::uint32_t>(std::clamp<double>(
                std::lround(std::exp(rng.uniform(log_lo, log_hi))),
                static_cast<double>(cfg.min_pixels), static_cast<double>(cfg.max_pixels)));
            rec.pixel_count = n;
            rec.days = group_days[id % cfg.day_groups];
            rec.geo = compute_geometric_features(synthetic_mask(n, rng));

            std::vector<double> offset(cfg.channels, 0.0);
            if (cfg.offset_std > 0)
                for (auto& o : offset) o = rng.normal(0.0, cfg.offset_std);

            std::vector<double> signal(cfg.t_len);
            for (std::uint32_t t = 0; t < cfg.t_len; ++t) {
                const auto day = rec.days[ph.time_reversed ? cfg.t_len - 1 - t : t];
                signal[t] = ph.value_at(static_cast<double>(day));
            }

            rec.pixels.resize(static_cast<std::size_t>(cfg.t_len) * cfg.channels * n);
            for (std::uint32_t t = 0; t < cfg.t_len; ++t)
                for (std::uint32_t ch = 0; ch < cfg.channels; ++ch) {
                    const double base = kBaseline + signal[t] * ph.mixing[ch] + offset[ch];
                    for (std::uint32_t px = 0; px < n; ++px) {
                        const double noise =
                            cfg.noise_std > 0 ? rng.normal(0.0, cfg.noise_std) : 0.0;
                        rec.pixel(t, ch, px) = static_cast<float>(base + noise);
                    }
                }

            ManifestEntry entry;
            entry.id = id;
            entry.label = c;
            entry.pixel_count = n;
            entry.fold = fold_of[id];
            ds.manifest.entries.push_back(entry);
            ds.records.push_back(std::move(rec));
        }
    }
    return ds;
}

}  // namespace psta
