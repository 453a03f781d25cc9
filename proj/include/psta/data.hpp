#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "psta/record.hpp"
#include "psta/rng.hpp"
#include "psta/serialize.hpp"

namespace psta {

inline constexpr char kDatasetMagic[4] = {'P', 'S', 'E', 'T'};
inline constexpr std::uint32_t kDatasetVersion = 1;

struct ManifestEntry {
    std::uint64_t id = 0;
    std::uint32_t label = 0;
    std::uint32_t pixel_count = 0;
    std::uint64_t offset = 0;  // byte offset of the record in the blob
    std::uint32_t fold = 0;
};

struct DatasetManifest {
    std::uint32_t version = kDatasetVersion;
    std::uint32_t classes = 0;
    std::uint32_t t_len = 0;
    std::uint32_t channels = 0;
    std::string blob;                   // blob filename, relative to the manifest
    std::string normalization = "none";  // reference to external stats, if any
    std::uint32_t folds = 5;
    std::vector<ManifestEntry> entries;

    void validate() const {
        for (std::size_t i = 1; i < entries.size(); ++i)
            if (entries[i].offset <= entries[i - 1].offset)
                throw io::FormatError("manifest: offsets are not strictly increasing");
        for (const auto& e : entries) {
            if (e.fold >= folds)
                throw io::FormatError("manifest: parcel " + std::to_string(e.id) +
                                      " assigned to fold " + std::to_string(e.fold) +
                                      " of " + std::to_string(folds));
            if (e.label >= classes)
                throw io::FormatError("manifest: parcel " + std::to_string(e.id) +
                                      " has label " + std::to_string(e.label) +
                                      " outside " + std::to_string(classes) + " classes");
        }
    }
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<ParcelRecord> records;  // aligned with manifest.entries
};

// ---------------------------------------------------------------------------
// on-disk format
// ---------------------------------------------------------------------------

namespace detail_io {

inline void write_record(std::ostream& os, const ParcelRecord& rec) {
    io::put_u64(os, rec.id);
    io::put_u32(os, rec.label);
    io::put_u32(os, rec.t_len);
    io::put_u32(os, rec.channels);
    io::put_u32(os, rec.pixel_count);
    const auto geo = rec.geo.as_array();
    for (double g : geo) io::put_f64(os, g);
    for (auto d : rec.days) io::put_i32(os, d);
    io::put_f32_array(os, rec.pixels.data(), rec.pixels.size());
}

inline ParcelRecord read_record_header(std::istream& is) {
    ParcelRecord rec;
    rec.id = io::get_u64(is);
    rec.label = io::get_u32(is);
    rec.t_len = io::get_u32(is);
    rec.channels = io::get_u32(is);
    rec.pixel_count = io::get_u32(is);
    std::array<double, 4> geo{};
    for (auto& g : geo) g = io::get_f64(is);
    rec.geo = {geo[0], geo[1], geo[2], geo[3]};
    rec.days.resize(rec.t_len);
    for (auto& d : rec.days) d = io::get_i32(is);
    return rec;
}

inline void check_blob_header(std::istream& is, const std::string& path) {
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || !std::equal(magic, magic + 4, kDatasetMagic))
        throw io::FormatError("'" + path + "' is not a pixel-set dataset blob (bad magic)");
    const auto version = io::get_u32(is);
    if (version != kDatasetVersion)
        throw io::FormatError("'" + path + "': unsupported blob version " +
                              std::to_string(version));
}

}  // namespace detail_io

/// Writes the blob next to the manifest and the manifest itself.
/// Offsets in `ds.manifest.entries` are (re)computed here.
inline void write_dataset(const std::filesystem::path& manifest_path, Dataset& ds) {
    if (ds.records.size() != ds.manifest.entries.size())
        throw std::invalid_argument("write_dataset: manifest entries do not match records");
    if (ds.manifest.blob.empty())
        ds.manifest.blob = manifest_path.stem().string() + ".pset";
    const auto blob_path = manifest_path.parent_path() / ds.manifest.blob;

    {
        std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
        if (!blob) throw io::FormatError("cannot write '" + blob_path.string() + "'");
        blob.write(kDatasetMagic, 4);
        io::put_u32(blob, ds.manifest.version);
        for (std::size_t i = 0; i < ds.records.size(); ++i) {
            const auto& rec = ds.records[i];
            rec.validate();
            auto& entry = ds.manifest.entries[i];
            entry.id = rec.id;
            entry.label = rec.label;
            entry.pixel_count = rec.pixel_count;
            entry.offset = static_cast<std::uint64_t>(blob.tellp());
            detail_io::write_record(blob, rec);
        }
        if (!blob) throw io::FormatError("write error on '" + blob_path.string() + "'");
    }
    ds.manifest.validate();

    std::ofstream mf(manifest_path, std::ios::trunc);
    if (!mf) throw io::FormatError("cannot write '" + manifest_path.string() + "'");
    mf << "psta-dataset-manifest\n";
    mf << "format-version = " << ds.manifest.version << "\n";
    mf << "classes = " << ds.manifest.classes << "\n";
    mf << "sequence-length = " << ds.manifest.t_len << "\n";
    mf << "channels = " << ds.manifest.channels << "\n";
    mf << "parcels = " << ds.manifest.entries.size() << "\n";
    mf << "blob = " << ds.manifest.blob << "\n";
    mf << "normalization = " << ds.manifest.normalization << "\n";
    mf << "folds = " << ds.manifest.folds << "\n";
    mf << "[parcels]\n";
    mf << "# id label pixels offset fold\n";
    for (const auto& e : ds.manifest.entries)
        mf << e.id << " " << e.label << " " << e.pixel_count << " " << e.offset << " "
           << e.fold << "\n";
    if (!mf) throw io::FormatError("write error on '" + manifest_path.string() + "'");
}

inline DatasetManifest read_manifest(const std::filesystem::path& manifest_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw io::FormatError("cannot open '" + manifest_path.string() + "'");
    std::string line;
    if (!std::getline(mf, line) || line != "psta-dataset-manifest")
        throw io::FormatError("'" + manifest_path.string() +
                              "' is not a dataset manifest (bad header line)");
    DatasetManifest m;
    std::size_t declared_parcels = 0;
    bool in_table = false;
    while (std::getline(mf, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line == "[parcels]") {
            in_table = true;
            continue;
        }
        if (!in_table) {
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw io::FormatError("manifest: malformed line '" + line + "'");
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t");
                const auto e = s.find_last_not_of(" \t");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
            if (key == "format-version") m.version = static_cast<std::uint32_t>(std::stoul(val));
            else if (key == "classes") m.classes = static_cast<std::uint32_t>(std::stoul(val));
            else if (key == "sequence-length") m.t_len = static_cast<std::uint32_t>(std::stoul(val));
            else if (key == "channels") m.channels = static_cast<std::uint32_t>(std::stoul(val));
            else if (key == "parcels") declared_parcels = std::stoul(val);
            else if (key == "blob") m.blob = val;
            else if (key == "normalization") m.normalization = val;
            else if (key == "folds") m.folds = static_cast<std::uint32_t>(std::stoul(val));
            else throw io::FormatError("manifest: unknown key '" + key + "'");
        } else {
            std::istringstream row(line);
            ManifestEntry e;
            if (!(row >> e.id >> e.label >> e.pixel_count >> e.offset >> e.fold))
                throw io::FormatError("manifest: malformed parcel row '" + line + "'");
            m.entries.push_back(e);
        }
    }
    if (m.version != kDatasetVersion)
        throw io::FormatError("manifest: unsupported version " + std::to_string(m.version));
    if (m.entries.size() != declared_parcels)
        throw io::FormatError("manifest: declares " + std::to_string(declared_parcels) +
                              " parcels but lists " + std::to_string(m.entries.size()));
    m.validate();
    return m;
}

inline Dataset read_dataset(const std::filesystem::path& manifest_path) {
    Dataset ds;
    ds.manifest = read_manifest(manifest_path);
    const auto blob_path = manifest_path.parent_path() / ds.manifest.blob;
    std::ifstream blob(blob_path, std::ios::binary);
    if (!blob) throw io::FormatError("cannot open '" + blob_path.string() + "'");
    detail_io::check_blob_header(blob, blob_path.string());
    ds.records.reserve(ds.manifest.entries.size());
    for (const auto& entry : ds.manifest.entries) {
        blob.seekg(static_cast<std::streamoff>(entry.offset));
        auto rec = detail_io::read_record_header(blob);
        if (rec.id != entry.id || rec.label != entry.label ||
            rec.pixel_count != entry.pixel_count)
            throw io::FormatError("blob record at offset " + std::to_string(entry.offset) +
                                  " does not match the manifest entry for parcel " +
                                  std::to_string(entry.id));
        if (rec.t_len != ds.manifest.t_len || rec.channels != ds.manifest.channels)
            throw io::FormatError("parcel " + std::to_string(rec.id) +
                                  ": dimensions differ from the manifest");
        rec.pixels.resize(static_cast<std::size_t>(rec.t_len) * rec.channels *
                          rec.pixel_count);
        io::get_f32_array(blob, rec.pixels.data(), rec.pixels.size());
        rec.validate();
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

struct FormatCheckReport {
    std::size_t parcels = 0;
    std::uint64_t blob_bytes = 0;
};

/// Structural validation that skips over pixel payloads instead of loading
/// them: manifest consistency, blob magic/version, per-record headers, and
/// exact end-of-file alignment.
inline FormatCheckReport format_check(const std::filesystem::path& manifest_path) {
    const auto manifest = read_manifest(manifest_path);
    const auto blob_path = manifest_path.parent_path() / manifest.blob;
    std::ifstream blob(blob_path, std::ios::binary);
    if (!blob) throw io::FormatError("cannot open '" + blob_path.string() + "'");
    detail_io::check_blob_header(blob, blob_path.string());
    std::uint64_t expected_offset = 8;  // magic + version
    for (const auto& entry : manifest.entries) {
        if (entry.offset != expected_offset)
            throw io::FormatError("parcel " + std::to_string(entry.id) +
                                  ": manifest offset " + std::to_string(entry.offset) +
                                  " does not match blob layout (" +
                                  std::to_string(expected_offset) + ")");
        blob.seekg(static_cast<std::streamoff>(entry.offset));
        auto rec = detail_io::read_record_header(blob);
        if (rec.id != entry.id || rec.label != entry.label ||
            rec.pixel_count != entry.pixel_count)
            throw io::FormatError("blob record at offset " + std::to_string(entry.offset) +
                                  " does not match the manifest entry for parcel " +
                                  std::to_string(entry.id));
        if (rec.t_len != manifest.t_len || rec.channels != manifest.channels)
            throw io::FormatError("parcel " + std::to_string(rec.id) +
                                  ": dimensions differ from the manifest");
        const std::uint64_t payload =
            static_cast<std::uint64_t>(rec.t_len) * rec.channels * rec.pixel_count * 4;
        expected_offset = static_cast<std::uint64_t>(blob.tellg()) + payload;
        blob.seekg(static_cast<std::streamoff>(expected_offset));
        if (!blob) throw io::FormatError("blob truncated inside parcel " +
                                         std::to_string(rec.id));
    }
    blob.seekg(0, std::ios::end);
    const auto file_size = static_cast<std::uint64_t>(blob.tellg());
    if (file_size != expected_offset)
        throw io::FormatError("blob has " + std::to_string(file_size) + " bytes, expected " +
                              std::to_string(expected_offset));
    return {manifest.entries.size(), file_size};
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

/// Channel-and-date-wise statistics over a training fold, plus the
/// geometric-feature statistics used to standardize f before MLP2.
struct NormalizationStats {
    std::uint32_t t_len = 0, channels = 0;
    std::vector<double> mean, stddev;  // (t, c) row-major
    std::array<double, 4> geo_mean{}, geo_std{};
    double eps = 1e-8;

    double& mean_at(std::size_t t, std::size_t c) { return mean[t * channels + c]; }
    double& std_at(std::size_t t, std::size_t c) { return stddev[t * channels + c]; }
    double mean_at(std::size_t t, std::size_t c) const { return mean[t * channels + c]; }
    double std_at(std::size_t t, std::size_t c) const { return stddev[t * channels + c]; }
};

inline NormalizationStats compute_normalization(const Dataset& ds,
                                                const std::vector<std::size_t>& train_idx) {
    if (train_idx.empty())
        throw std::invalid_argument("compute_normalization: empty training fold");
    NormalizationStats st;
    st.t_len = ds.manifest.t_len;
    st.channels = ds.manifest.channels;
    const std::size_t cells = static_cast<std::size_t>(st.t_len) * st.channels;
    st.mean.assign(cells, 0.0);
    st.stddev.assign(cells, 0.0);

    std::vector<double> count(cells, 0.0);
    for (auto i : train_idx) {
        const auto& rec = ds.records.at(i);
        for (std::size_t t = 0; t < rec.t_len; ++t)
            for (std::size_t c = 0; c < rec.channels; ++c) {
                double acc = 0;
                for (std::size_t n = 0; n < rec.pixel_count; ++n)
                    acc += static_cast<double>(rec.pixel(t, c, n));
                st.mean[t * st.channels + c] += acc;
                count[t * st.channels + c] += static_cast<double>(rec.pixel_count);
            }
    }
    for (std::size_t i = 0; i < cells; ++i) st.mean[i] /= count[i];
    for (auto i : train_idx) {
        const auto& rec = ds.records.at(i);
        for (std::size_t t = 0; t < rec.t_len; ++t)
            for (std::size_t c = 0; c < rec.channels; ++c) {
                double acc = 0;
                const double mu = st.mean[t * st.channels + c];
                for (std::size_t n = 0; n < rec.pixel_count; ++n) {
                    const double d = static_cast<double>(rec.pixel(t, c, n)) - mu;
                    acc += d * d;
                }
                st.stddev[t * st.channels + c] += acc;
            }
    }
    for (std::size_t i = 0; i < cells; ++i) st.stddev[i] = std::sqrt(st.stddev[i] / count[i]);

    std::array<double, 4> gsum{}, gss{};
    for (auto i : train_idx) {
        const auto g = ds.records.at(i).geo.as_array();
        for (int k = 0; k < 4; ++k) gsum[k] += g[k];
    }
    for (int k = 0; k < 4; ++k) st.geo_mean[k] = gsum[k] / static_cast<double>(train_idx.size());
    for (auto i : train_idx) {
        const auto g = ds.records.at(i).geo.as_array();
        for (int k = 0; k < 4; ++k) {
            const double d = g[k] - st.geo_mean[k];
            gss[k] += d * d;
        }
    }
    for (int k = 0; k < 4; ++k)
        st.geo_std[k] = std::sqrt(gss[k] / static_cast<double>(train_idx.size()));
    return st;
}

inline void apply_normalization(ParcelRecord& rec, const NormalizationStats& st) {
    if (rec.t_len != st.t_len || rec.channels != st.channels)
        throw std::invalid_argument("apply_normalization: parcel " + std::to_string(rec.id) +
                                    " has " + std::to_string(rec.t_len) + "x" +
                                    std::to_string(rec.channels) +
                                    " dates/channels, stats expect " +
                                    std::to_string(st.t_len) + "x" +
                                    std::to_string(st.channels));
    for (std::size_t t = 0; t < rec.t_len; ++t)
        for (std::size_t c = 0; c < rec.channels; ++c) {
            const double mu = st.mean_at(t, c), denom = st.std_at(t, c) + st.eps;
            for (std::size_t n = 0; n < rec.pixel_count; ++n) {
                auto& v = rec.pixel(t, c, n);
                v = static_cast<float>((static_cast<double>(v) - mu) / denom);
            }
        }
    auto g = rec.geo.as_array();
    for (int k = 0; k < 4; ++k) g[k] = (g[k] - st.geo_mean[k]) / (st.geo_std[k] + st.eps);
    rec.geo = {g[0], g[1], g[2], g[3]};
}

inline void invert_normalization(ParcelRecord& rec, const NormalizationStats& st) {
    for (std::size_t t = 0; t < rec.t_len; ++t)
        for (std::size_t c = 0; c < rec.channels; ++c) {
            const double mu = st.mean_at(t, c), denom = st.std_at(t, c) + st.eps;
            for (std::size_t n = 0; n < rec.pixel_count; ++n) {
                auto& v = rec.pixel(t, c, n);
                v = static_cast<float>(static_cast<double>(v) * denom + mu);
            }
        }
    auto g = rec.geo.as_array();
    for (int k = 0; k < 4; ++k) g[k] = g[k] * (st.geo_std[k] + st.eps) + st.geo_mean[k];
    rec.geo = {g[0], g[1], g[2], g[3]};
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

/// Training-time augmentation on normalized values: i.i.d. Gaussian noise
/// with each draw clamped, so no value moves by more than `clip`.
inline void augment(ParcelRecord& rec, Rng& rng, double noise_std = 1e-2,
                    double clip = 5e-2) {
    for (auto& v : rec.pixels) {
        double n = rng.normal(0.0, noise_std);
        n = std::clamp(n, -clip, clip);
        v = static_cast<float>(static_cast<double>(v) + n);
    }
}

// ---------------------------------------------------------------------------
// fold assignment
// ---------------------------------------------------------------------------

/// One shuffle, then a block partition: parcel -> fold id in [0, folds).
inline std::vector<std::uint32_t> assign_folds(std::size_t count, std::uint32_t folds,
                                               std::uint64_t seed) {
    if (folds < 3)
        throw std::invalid_argument("assign_folds: need at least 3 folds for a 3:1:1 split");
    if (count < folds)
        throw std::invalid_argument("assign_folds: " + std::to_string(count) +
                                    " parcels cannot fill " + std::to_string(folds) +
                                    " folds");
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    Rng rng(derive_seed(seed, 0x666f6c6473ULL));
    rng.shuffle(order);

    std::vector<std::uint32_t> fold_of(count);
    const std::size_t base = count / folds, extra = count % folds;
    std::size_t pos = 0;
    for (std::uint32_t f = 0; f < folds; ++f) {
        const std::size_t size = base + (f < extra ? 1 : 0);
        for (std::size_t i = 0; i < size; ++i) fold_of[order[pos++]] = f;
    }
    return fold_of;
}

struct FoldSplit {
    std::vector<std::size_t> train, val, test;
};

/// fold i: block i is test, block i+1 (mod folds) is validation, the rest
/// train. Across the `folds` rotations every parcel is tested exactly once.
inline FoldSplit fold_split(const std::vector<std::uint32_t>& fold_of, std::uint32_t fold,
                            std::uint32_t folds) {
    if (fold >= folds) throw std::invalid_argument("fold_split: fold index out of range");
    FoldSplit s;
    const std::uint32_t val_fold = (fold + 1) % folds;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
        if (fold_of[i] == fold)
            s.test.push_back(i);
        else if (fold_of[i] == val_fold)
            s.val.push_back(i);
        else
            s.train.push_back(i);
    }
    return s;
}

/// Convenience wrapper: per-fold (train, val, test) index lists.
inline std::vector<FoldSplit> kfold_split(std::size_t count, std::uint32_t folds,
                                          std::uint64_t seed) {
    const auto fold_of = assign_folds(count, folds, seed);
    std::vector<FoldSplit> out;
    for (std::uint32_t f = 0; f < folds; ++f) out.push_back(fold_split(fold_of, f, folds));
    return out;
}

inline std::vector<std::uint32_t> manifest_fold_assignment(const DatasetManifest& m) {
    std::vector<std::uint32_t> fold_of(m.entries.size());
    for (std::size_t i = 0; i < m.entries.size(); ++i) fold_of[i] = m.entries[i].fold;
    return fold_of;
}

}  // namespace psta
