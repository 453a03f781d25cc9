#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "psta/serialize.hpp"
#include "psta/tensor.hpp"

namespace psta {

inline constexpr char kCheckpointMagic[4] = {'P', 'S', 'T', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// On-disk entry layout, after the header: name length (u16) + name bytes,
/// dtype tag (u8: 0 = f32, 1 = f64), ndim (u8), dims (u32 each), raw
/// little-endian values. The header is magic "PSTA", version (u32), and an
/// embedded flat key=value config block (u32 length + text).
struct CheckpointEntry {
    enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };
    Dtype dtype = Dtype::f32;
    Shape shape;
    std::vector<double> values;  // widest type; f32 round-trips exactly

    template <typename T>
    Tensor<T> as_tensor() const {
        Tensor<T> t(shape);
        for (std::size_t i = 0; i < values.size(); ++i)
            t.data()[i] = static_cast<T>(values[i]);
        return t;
    }
};

class CheckpointWriter {
public:
    explicit CheckpointWriter(const std::filesystem::path& path, const std::string& config_text)
        : os_(path, std::ios::binary | std::ios::trunc), path_(path.string()) {
        if (!os_) throw io::FormatError("cannot write checkpoint '" + path_ + "'");
        os_.write(kCheckpointMagic, 4);
        io::put_u32(os_, kCheckpointVersion);
        io::put_u32(os_, static_cast<std::uint32_t>(config_text.size()));
        os_.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
    }

    void add_f32(const std::string& name, const Shape& shape, const float* data) {
        write_entry_header(name, 0, shape);
        io::put_f32_array(os_, data, shape_numel(shape));
    }

    void add_f64(const std::string& name, const Shape& shape, const double* data) {
        write_entry_header(name, 1, shape);
        io::put_f64_array(os_, data, shape_numel(shape));
    }

    template <typename T>
    void add_tensor(const std::string& name, const Tensor<T>& t) {
        if constexpr (std::is_same_v<T, float>)
            add_f32(name, t.shape(), t.data());
        else
            add_f64(name, t.shape(), t.data());
    }

    void add_scalar_f64(const std::string& name, double v) { add_f64(name, {1}, &v); }

    void finish() {
        os_.flush();
        if (!os_) throw io::FormatError("write error on checkpoint '" + path_ + "'");
        os_.close();
    }

private:
    void write_entry_header(const std::string& name, std::uint8_t dtype, const Shape& shape) {
        if (name.size() > 0xffff)
            throw std::invalid_argument("checkpoint: entry name too long");
        io::put_u16(os_, static_cast<std::uint16_t>(name.size()));
        os_.write(name.data(), static_cast<std::streamsize>(name.size()));
        io::put_u8(os_, dtype);
        io::put_u8(os_, static_cast<std::uint8_t>(shape.size()));
        for (auto d : shape) io::put_u32(os_, static_cast<std::uint32_t>(d));
    }

    std::ofstream os_;
    std::string path_;
};

struct Checkpoint {
    std::string config_text;
    std::map<std::string, CheckpointEntry> entries;

    const CheckpointEntry& require(const std::string& name) const {
        auto it = entries.find(name);
        if (it == entries.end())
            throw io::FormatError("checkpoint is missing entry '" + name + "'");
        return it->second;
    }
    bool has(const std::string& name) const { return entries.count(name) > 0; }
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io::FormatError("cannot open checkpoint '" + path.string() + "'");
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || !std::equal(magic, magic + 4, kCheckpointMagic))
        throw io::FormatError("'" + path.string() + "' is not a checkpoint (bad magic)");
    const auto version = io::get_u32(is);
    if (version != kCheckpointVersion)
        throw io::FormatError("'" + path.string() + "': unsupported checkpoint version " +
                              std::to_string(version));
    Checkpoint ckpt;
    const auto config_len = io::get_u32(is);
    ckpt.config_text.resize(config_len);
    is.read(ckpt.config_text.data(), config_len);
    if (static_cast<std::uint32_t>(is.gcount()) != config_len)
        throw io::FormatError("checkpoint truncated in config block");

    while (is.peek() != std::istream::traits_type::eof()) {
        const auto name_len = io::get_u16(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (static_cast<std::uint16_t>(is.gcount()) != name_len)
            throw io::FormatError("checkpoint truncated in entry name");
        CheckpointEntry e;
        const auto dtype = io::get_u8(is);
        if (dtype > 1) throw io::FormatError("checkpoint entry '" + name + "': bad dtype tag");
        e.dtype = static_cast<CheckpointEntry::Dtype>(dtype);
        const auto ndim = io::get_u8(is);
        e.shape.resize(ndim);
        for (auto& d : e.shape) d = io::get_u32(is);
        const std::size_t count = shape_numel(e.shape);
        e.values.resize(count);
        if (e.dtype == CheckpointEntry::Dtype::f32) {
            std::vector<float> raw(count);
            io::get_f32_array(is, raw.data(), count);
            for (std::size_t i = 0; i < count; ++i) e.values[i] = raw[i];
        } else {
            io::get_f64_array(is, e.values.data(), count);
        }
        if (!ckpt.entries.emplace(std::move(name), std::move(e)).second)
            throw io::FormatError("checkpoint has a duplicate entry");
    }
    return ckpt;
}

}  // namespace psta
