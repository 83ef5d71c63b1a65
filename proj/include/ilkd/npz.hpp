#ifndef ILKD_NPZ_HPP
#define ILKD_NPZ_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ilkd {

/// One array out of an .npy member: raw little-endian buffer plus enough
/// dtype information to widen it.
struct NpyArray {
    std::vector<int64_t> shape;
    char type = 0;      // 'u', 'i', 'f'
    int word_size = 0;  // bytes per element
    std::vector<uint8_t> data;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
    std::vector<double> as_doubles() const;
    std::vector<int64_t> as_ints() const;
};

/// Reads every member of an .npz archive (zip of .npy files; stored and
/// deflate entries supported). Keys are member names without the .npy
/// suffix.
std::map<std::string, NpyArray> load_npz(const std::string& path);

/// Single .npy parse, exposed for fixtures.
NpyArray parse_npy(const std::vector<uint8_t>& bytes, const std::string& what);

}  // namespace ilkd

#endif
