#pragma once

#include "occsplat/image.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace occsplat {

/// Binary PPM (3 channels) or PGM (1 channel), 8 bits per sample, values
/// quantized as round(255·clamp(x, 0, 1)). Throws InvalidInput on other
/// channel counts and std::runtime_error with the path on IO failure.
void write_image(const std::filesystem::path& path, const Image& img);
Image read_image(const std::filesystem::path& path);

/// Maps a one-channel image onto a five-stop ramp (navy, blue, cyan, yellow,
/// red) with `lo` at the bottom and `hi` at the top. hi ≤ lo maps everything
/// to the bottom stop.
Image heatmap(const Image& scalar, double lo, double hi);

/// Hex SHA-256 of a byte string / a file's contents.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
/// Writes to `path.tmp` and renames over `path`.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

enum class DType : std::uint8_t { F64 = 1, I64 = 2, U8 = 3 };

/// A named little-endian tensor. Payload bytes are stored raw.
struct Tensor {
    DType dtype = DType::F64;
    std::vector<std::int64_t> shape;
    std::string bytes;

    std::int64_t numel() const;
    static Tensor f64(const std::vector<double>& v, std::vector<std::int64_t> shape = {});
    static Tensor i64(const std::vector<std::int64_t>& v, std::vector<std::int64_t> shape = {});
    static Tensor u8(const std::string& v);
    std::vector<double> as_f64() const;
    std::vector<std::int64_t> as_i64() const;
    std::string as_u8() const { return bytes; }
};

/// Versioned tensor container: magic, version, config hash, then tensors in
/// name order.
struct TensorFile {
    static constexpr std::uint32_t kVersion = 1;
    std::string config_hash;
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return tensors.count(name) > 0; }

    std::string serialize() const;
    static TensorFile deserialize(const std::string& bytes);
    void save(const std::filesystem::path& path) const;
    static TensorFile load(const std::filesystem::path& path);
};

} // namespace occsplat
