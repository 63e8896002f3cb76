#include "geoformer/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

namespace geoformer {

namespace {

constexpr char kMagic[4] = {'G', 'F', 'T', '1'};

void put_u32_le(std::string& buf, uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

} // namespace

size_t gft1_size_bytes(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t e : shape) n *= e;
    return 4 + 4 + 4 * shape.size() + 4 * n;
}

void save_gft1(const Tensor& t, const std::string& path) {
    std::string buf;
    buf.reserve(gft1_size_bytes(t.shape()));
    buf.append(kMagic, 4);
    put_u32_le(buf, static_cast<uint32_t>(t.rank()));
    for (size_t e : t.shape()) {
        if (e > std::numeric_limits<uint32_t>::max()) throw IoError("gft1: extent exceeds u32");
        put_u32_le(buf, static_cast<uint32_t>(e));
    }
    for (size_t i = 0; i < t.numel(); ++i) {
        const float f = static_cast<float>(t[i]);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32_le(buf, bits);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("gft1: cannot open for write: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("gft1: short write: " + path);
}

Tensor load_gft1(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("gft1: cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    if (buf.size() < 8 || std::memcmp(p, kMagic, 4) != 0)
        throw IoError("gft1: bad magic in " + path);
    const uint32_t rank = get_u32_le(p + 4);
    if (buf.size() < 8 + 4ull * rank) throw IoError("gft1: truncated header in " + path);
    std::vector<size_t> shape(rank);
    size_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        shape[i] = get_u32_le(p + 8 + 4ull * i);
        n *= shape[i];
    }
    const size_t payload_off = 8 + 4ull * rank;
    if (buf.size() != payload_off + 4 * n)
        throw IoError("gft1: payload size mismatch in " + path);
    std::vector<double> data(n);
    for (size_t i = 0; i < n; ++i) {
        const uint32_t bits = get_u32_le(p + payload_off + 4 * i);
        float f;
        std::memcpy(&f, &bits, 4);
        data[i] = static_cast<double>(f);
    }
    return Tensor::from_data(std::move(shape), std::move(data));
}

} // namespace geoformer
