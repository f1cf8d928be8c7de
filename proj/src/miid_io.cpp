#include "miiad/miid_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace miiad {

namespace {

constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t x) {
    unsigned char b[4] = {static_cast<unsigned char>(x & 0xff),
                          static_cast<unsigned char>((x >> 8) & 0xff),
                          static_cast<unsigned char>((x >> 16) & 0xff),
                          static_cast<unsigned char>((x >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("miid: truncated header");
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

}  // namespace

void write_miid(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("miid: cannot open for write: " + path);
    os.write("MIID", 4);
    put_u32(os, kVersion);
    put_u32(os, uint32_t(t.shape.size()));
    for (int d : t.shape) put_u32(os, uint32_t(d));
    std::vector<float> buf(t.v.size());
    for (size_t i = 0; i < t.v.size(); ++i) buf[i] = float(t.v[i]);
    static_assert(sizeof(float) == 4);
    // float32 bit pattern is already little-endian on every supported target
    os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * 4));
    if (!os) throw std::runtime_error("miid: write failed: " + path);
}

Tensor read_miid(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("miid: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MIID", 4) != 0) throw std::runtime_error("miid: bad magic in " + path);
    const uint32_t version = get_u32(is);
    if (version != kVersion) throw std::runtime_error("miid: unsupported version in " + path);
    const uint32_t rank = get_u32(is);
    if (rank > 8) throw std::runtime_error("miid: implausible rank in " + path);
    std::vector<int> shape(rank);
    long long numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        shape[i] = int(get_u32(is));
        numel *= shape[i];
    }
    std::vector<float> buf(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 4));
    if (!is) throw std::runtime_error("miid: truncated payload in " + path);
    Tensor t(shape);
    for (size_t i = 0; i < buf.size(); ++i) t.v[i] = double(buf[i]);
    return t;
}

}  // namespace miiad
