#include "locinv/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "locinv/errors.hpp"

namespace locinv {

static constexpr char kMagic[4] = {'L', 'I', 'T', 'B'};
static constexpr uint32_t kVersion = 1;

static void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

static uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError("tensor file truncated");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_tensor_file(const std::string& path, const std::map<std::string, Tensor>& tensors,
                       TensorDType dtype) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for write: " + path);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<uint32_t>(dtype));
    write_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(t.ndim()));
        for (int d : t.shape) write_u32(os, static_cast<uint32_t>(d));
        if (dtype == TensorDType::f32) {
            std::vector<float> buf(t.data.begin(), t.data.end());
            os.write(reinterpret_cast<const char*>(buf.data()),
                     static_cast<std::streamsize>(buf.size() * sizeof(float)));
        } else {
            os.write(reinterpret_cast<const char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        }
    }
    if (!os) throw DataError("write failed: " + path);
}

std::map<std::string, Tensor> read_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open tensor file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("bad tensor file magic in " + path);
    uint32_t version = read_u32(is);
    if (version != kVersion)
        throw DataError("unsupported tensor file version " + std::to_string(version) + " in " + path);
    uint32_t dtype_raw = read_u32(is);
    if (dtype_raw > 1) throw DataError("unknown dtype in " + path);
    auto dtype = static_cast<TensorDType>(dtype_raw);
    uint32_t count = read_u32(is);
    std::map<std::string, Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint32_t ndim = read_u32(is);
        std::vector<int> shape(ndim);
        int64_t n = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            shape[d] = static_cast<int>(read_u32(is));
            n *= shape[d];
        }
        Tensor t;
        t.shape = shape;
        t.data.resize(static_cast<size_t>(n));
        if (dtype == TensorDType::f32) {
            std::vector<float> buf(static_cast<size_t>(n));
            is.read(reinterpret_cast<char*>(buf.data()),
                    static_cast<std::streamsize>(buf.size() * sizeof(float)));
            for (size_t j = 0; j < buf.size(); ++j) t.data[j] = static_cast<double>(buf[j]);
        } else {
            is.read(reinterpret_cast<char*>(t.data.data()),
                    static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        }
        if (!is) throw DataError("tensor file truncated: " + path);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

void write_tensor_list(const std::string& path, const std::vector<Tensor>& tensors, TensorDType dtype) {
    std::map<std::string, Tensor> named;
    char key[16];
    for (size_t i = 0; i < tensors.size(); ++i) {
        std::snprintf(key, sizeof(key), "%06zu", i);
        named.emplace(key, tensors[i]);
    }
    write_tensor_file(path, named, dtype);
}

std::vector<Tensor> read_tensor_list(const std::string& path) {
    auto named = read_tensor_file(path);
    std::vector<Tensor> out;
    out.reserve(named.size());
    for (auto& [k, t] : named) out.push_back(std::move(t));  // map iterates in key order
    return out;
}

uint64_t fnv1a64(const void* bytes, size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    uint64_t h = 1469598103934665603ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t file_checksum(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open for checksum: " + path);
    uint64_t h = 1469598103934665603ull;
    char buf[65536];
    while (is) {
        is.read(buf, sizeof(buf));
        std::streamsize got = is.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    return h;
}

std::string checksum_hex(uint64_t checksum) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(checksum));
    return buf;
}

}  // namespace locinv
