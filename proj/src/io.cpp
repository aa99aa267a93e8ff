#include "occsplat/io.hpp"

#include "occsplat/errors.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace occsplat {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'O', 'C', 'S', 'P', 'C', 'K', 'P', 'T'};

std::runtime_error io_error(const std::filesystem::path& path, const std::string& what) {
    return std::runtime_error(what + ": " + path.string());
}

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

struct Reader {
    const std::string& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) {
            throw InvalidInput("tensor file truncated");
        }
    }
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    }
};

std::size_t dtype_size(DType d) {
    switch (d) {
    case DType::F64:
    case DType::I64:
        return 8;
    case DType::U8:
        return 1;
    }
    throw InvalidInput("unknown tensor dtype");
}

// Skips whitespace and '#' comments in a PNM header, then reads one integer.
int pnm_int(std::istream& in, const std::filesystem::path& path) {
    int c;
    while ((c = in.peek()) != EOF) {
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v = -1;
    if (!(in >> v) || v < 0) {
        throw io_error(path, "malformed image header");
    }
    return v;
}

} // namespace

void write_image(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw InvalidInput("only 1- or 3-channel images can be written");
    }
    std::string out = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.width) + " " +
                      std::to_string(img.height) + "\n255\n";
    out.reserve(out.size() + img.data.size());
    for (double v : img.data) {
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)))));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f || !f.write(out.data(), static_cast<std::streamsize>(out.size()))) {
        throw io_error(path, "cannot write image");
    }
}

Image read_image(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw io_error(path, "cannot open image");
    }
    std::string magic(2, '\0');
    f.read(magic.data(), 2);
    int channels = magic == "P6" ? 3 : magic == "P5" ? 1 : 0;
    if (channels == 0) {
        throw io_error(path, "not a binary PPM/PGM file");
    }
    const int w = pnm_int(f, path);
    const int h = pnm_int(f, path);
    const int maxval = pnm_int(f, path);
    if (maxval != 255 || w == 0 || h == 0) {
        throw io_error(path, "unsupported image header");
    }
    f.get();
    Image img(h, w, channels);
    std::string raw(img.data.size(), '\0');
    if (!f.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
        throw io_error(path, "image data truncated");
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
        img.data[i] = static_cast<unsigned char>(raw[i]) / 255.0;
    }
    return img;
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Fault("SHA-256 digest failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex.push_back(kHex[digest[i] >> 4]);
        hex.push_back(kHex[digest[i] & 15]);
    }
    return hex;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text(path)); }

std::string read_text(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw io_error(path, "cannot open file");
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f || !f.write(text.data(), static_cast<std::streamsize>(text.size())) || !f.flush()) {
            throw io_error(tmp, "cannot write file");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw io_error(path, "cannot rename into place (" + ec.message() + ")");
    }
}

std::int64_t Tensor::numel() const {
    std::int64_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

Tensor Tensor::f64(const std::vector<double>& v, std::vector<std::int64_t> shape) {
    Tensor t;
    t.dtype = DType::F64;
    t.shape = shape.empty() ? std::vector<std::int64_t>{static_cast<std::int64_t>(v.size())} : std::move(shape);
    t.bytes.assign(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    if (t.numel() != static_cast<std::int64_t>(v.size())) {
        throw InvalidInput("tensor shape does not match value count");
    }
    return t;
}

Tensor Tensor::i64(const std::vector<std::int64_t>& v, std::vector<std::int64_t> shape) {
    Tensor t;
    t.dtype = DType::I64;
    t.shape = shape.empty() ? std::vector<std::int64_t>{static_cast<std::int64_t>(v.size())} : std::move(shape);
    t.bytes.assign(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(std::int64_t));
    if (t.numel() != static_cast<std::int64_t>(v.size())) {
        throw InvalidInput("tensor shape does not match value count");
    }
    return t;
}

Tensor Tensor::u8(const std::string& v) {
    Tensor t;
    t.dtype = DType::U8;
    t.shape = {static_cast<std::int64_t>(v.size())};
    t.bytes = v;
    return t;
}

std::vector<double> Tensor::as_f64() const {
    if (dtype != DType::F64) {
        throw InvalidInput("tensor is not f64");
    }
    std::vector<double> v(bytes.size() / sizeof(double));
    std::memcpy(v.data(), bytes.data(), bytes.size());
    return v;
}

std::vector<std::int64_t> Tensor::as_i64() const {
    if (dtype != DType::I64) {
        throw InvalidInput("tensor is not i64");
    }
    std::vector<std::int64_t> v(bytes.size() / sizeof(std::int64_t));
    std::memcpy(v.data(), bytes.data(), bytes.size());
    return v;
}

const Tensor& TensorFile::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw InvalidInput("tensor '" + name + "' missing from file");
    }
    return it->second;
}

std::string TensorFile::serialize() const {
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(config_hash.size()));
    out += config_hash;
    put<std::uint64_t>(out, tensors.size());
    for (const auto& [name, t] : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) {
            put<std::int64_t>(out, d);
        }
        put<std::uint64_t>(out, t.bytes.size());
        out += t.bytes;
    }
    return out;
}

TensorFile TensorFile::deserialize(const std::string& bytes) {
    Reader r{bytes};
    if (r.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
        throw InvalidInput("not a checkpoint file (bad magic)");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) {
        throw InvalidInput("unsupported checkpoint version " + std::to_string(version));
    }
    TensorFile tf;
    tf.config_hash = r.take(r.get<std::uint32_t>());
    const auto count = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = r.take(r.get<std::uint32_t>());
        Tensor t;
        t.dtype = static_cast<DType>(r.get<std::uint8_t>());
        const auto rank = r.get<std::uint32_t>();
        for (std::uint32_t k = 0; k < rank; ++k) {
            t.shape.push_back(r.get<std::int64_t>());
        }
        const auto nbytes = r.get<std::uint64_t>();
        if (nbytes != static_cast<std::uint64_t>(t.numel()) * dtype_size(t.dtype)) {
            throw InvalidInput("tensor '" + name + "' payload size does not match its shape");
        }
        t.bytes = r.take(nbytes);
        tf.tensors.emplace(name, std::move(t));
    }
    if (r.pos != bytes.size()) {
        throw InvalidInput("trailing bytes after checkpoint tensors");
    }
    return tf;
}

void TensorFile::save(const std::filesystem::path& path) const { write_text_atomic(path, serialize()); }

TensorFile TensorFile::load(const std::filesystem::path& path) { return deserialize(read_text(path)); }

} // namespace occsplat

namespace occsplat {

Image heatmap(const Image& scalar, double lo, double hi) {
    if (scalar.channels != 1) {
        throw InvalidInput("heatmap needs a one-channel image");
    }
    static const double stops[5][3] = {{0.0, 0.0, 0.5}, {0.0, 0.0, 1.0}, {0.0, 1.0, 1.0}, {1.0, 1.0, 0.0}, {1.0, 0.0, 0.0}};
    Image out(scalar.height, scalar.width, 3);
    const double span = hi - lo;
    for (std::size_t p = 0; p < scalar.pixels(); ++p) {
        const double v = span > 0.0 ? std::clamp((scalar.data[p] - lo) / span, 0.0, 1.0) : 0.0;
        const double x = v * 4.0;
        const int k = std::min(static_cast<int>(x), 3);
        const double f = x - k;
        for (int c = 0; c < 3; ++c) {
            out.data[3 * p + c] = (1.0 - f) * stops[k][c] + f * stops[k + 1][c];
        }
    }
    return out;
}

} // namespace occsplat
