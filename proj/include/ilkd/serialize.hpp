#ifndef ILKD_SERIALIZE_HPP
#define ILKD_SERIALIZE_HPP

#include "ilkd/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

// Little binary framing used by checkpoints and the centroid store.
// Values are written in the host's native byte order (little-endian on
// every supported target).

namespace ilkd::io {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("serialize: truncated stream");
    return v;
}

inline void write_u32(std::ostream& os, uint32_t v) { write_pod(os, v); }
inline void write_i32(std::ostream& os, int32_t v) { write_pod(os, v); }
inline void write_u64(std::ostream& os, uint64_t v) { write_pod(os, v); }
inline void write_i64(std::ostream& os, int64_t v) { write_pod(os, v); }
inline void write_f32(std::ostream& os, float v) { write_pod(os, v); }
inline void write_f64(std::ostream& os, double v) { write_pod(os, v); }

inline uint32_t read_u32(std::istream& is) { return read_pod<uint32_t>(is); }
inline int32_t read_i32(std::istream& is) { return read_pod<int32_t>(is); }
inline uint64_t read_u64(std::istream& is) { return read_pod<uint64_t>(is); }
inline int64_t read_i64(std::istream& is) { return read_pod<int64_t>(is); }
inline float read_f32(std::istream& is) { return read_pod<float>(is); }
inline double read_f64(std::istream& is) { return read_pod<double>(is); }

inline void write_string(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    uint64_t n = read_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw std::runtime_error("serialize: truncated string");
    return s;
}

template <typename T>
void write_scalar_vec(std::ostream& os, const std::vector<T>& v) {
    write_u64(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
std::vector<T> read_scalar_vec(std::istream& is) {
    uint64_t n = read_u64(is);
    std::vector<T> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!is) throw std::runtime_error("serialize: truncated vector");
    return v;
}

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
    write_u32(os, static_cast<uint32_t>(t.ndims()));
    for (int i = 0; i < t.ndims(); ++i) write_i32(os, t.dim(i));
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
    uint32_t nd = read_u32(is);
    Shape shape(nd);
    for (uint32_t i = 0; i < nd; ++i) shape[i] = read_i32(is);
    Tensor<T> t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
    if (!is) throw std::runtime_error("serialize: truncated tensor");
    return t;
}

/// FNV-1a over raw bytes; used for parameter checksums.
inline uint64_t hash_bytes(const void* p, size_t n, uint64_t h = 1469598103934665603ull) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace ilkd::io

#endif
