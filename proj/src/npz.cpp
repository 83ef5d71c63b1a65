#include "ilkd/npz.hpp"

#include "ilkd/tensor.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace ilkd {

namespace {

uint16_t le16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }
uint32_t le32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) | (static_cast<uint32_t>(p[2]) << 16) |
           (static_cast<uint32_t>(p[3]) << 24);
}

std::vector<uint8_t> inflate_raw(const uint8_t* src, size_t src_len, size_t dst_len, const std::string& what) {
    std::vector<uint8_t> out(dst_len);
    z_stream strm{};
    ILKD_CHECK(inflateInit2(&strm, -MAX_WBITS) == Z_OK, "zlib init failed");
    strm.next_in = const_cast<Bytef*>(src);
    strm.avail_in = static_cast<uInt>(src_len);
    strm.next_out = out.data();
    strm.avail_out = static_cast<uInt>(dst_len);
    const int rc = inflate(&strm, Z_FINISH);
    inflateEnd(&strm);
    ILKD_CHECK(rc == Z_STREAM_END && strm.total_out == dst_len, "deflate stream corrupt in " + what);
    return out;
}

int64_t parse_int(const std::string& s, size_t& pos) {
    size_t end = pos;
    while (end < s.size() && (std::isdigit(static_cast<unsigned char>(s[end])) || s[end] == '-')) ++end;
    ILKD_CHECK(end > pos, "expected integer in npy header");
    const int64_t v = std::stoll(s.substr(pos, end - pos));
    pos = end;
    return v;
}

}  // namespace

NpyArray parse_npy(const std::vector<uint8_t>& bytes, const std::string& what) {
    ILKD_CHECK(bytes.size() >= 10 && std::memcmp(bytes.data(), "\x93NUMPY", 6) == 0, "bad npy magic in " + what);
    const int major = bytes[6];
    size_t header_len, header_off;
    if (major == 1) {
        header_len = le16(bytes.data() + 8);
        header_off = 10;
    } else {
        ILKD_CHECK(bytes.size() >= 12, "truncated npy header in " + what);
        header_len = le32(bytes.data() + 8);
        header_off = 12;
    }
    ILKD_CHECK(bytes.size() >= header_off + header_len, "truncated npy header in " + what);
    const std::string header(reinterpret_cast<const char*>(bytes.data()) + header_off, header_len);

    NpyArray arr;

    size_t dp = header.find("'descr'");
    ILKD_CHECK(dp != std::string::npos, "npy header missing descr in " + what);
    dp = header.find('\'', dp + 7);
    ILKD_CHECK(dp != std::string::npos, "malformed descr in " + what);
    const size_t de = header.find('\'', dp + 1);
    const std::string descr = header.substr(dp + 1, de - dp - 1);
    size_t ti = 0;
    if (descr[ti] == '<' || descr[ti] == '|' || descr[ti] == '=') ++ti;
    ILKD_CHECK(ti < descr.size() && descr[0] != '>', "unsupported (big-endian?) dtype " + descr + " in " + what);
    arr.type = descr[ti];
    arr.word_size = std::stoi(descr.substr(ti + 1));
    ILKD_CHECK((arr.type == 'u' || arr.type == 'i' || arr.type == 'f' || arr.type == 'b') &&
                   (arr.word_size == 1 || arr.word_size == 2 || arr.word_size == 4 || arr.word_size == 8),
               "unsupported dtype " + descr + " in " + what);
    if (arr.type == 'b') arr.type = 'u';

    const size_t fo = header.find("'fortran_order'");
    ILKD_CHECK(fo != std::string::npos, "npy header missing fortran_order in " + what);
    ILKD_CHECK(header.find("True", fo) == std::string::npos || header.find("True", fo) > header.find(',', fo),
               "fortran_order arrays unsupported in " + what);

    size_t sp = header.find("'shape'");
    ILKD_CHECK(sp != std::string::npos, "npy header missing shape in " + what);
    sp = header.find('(', sp);
    const size_t se = header.find(')', sp);
    ILKD_CHECK(sp != std::string::npos && se != std::string::npos, "malformed shape in " + what);
    size_t pos = sp + 1;
    while (pos < se) {
        while (pos < se && (header[pos] == ' ' || header[pos] == ',')) ++pos;
        if (pos >= se) break;
        arr.shape.push_back(parse_int(header, pos));
    }
    if (arr.shape.empty()) arr.shape.push_back(1);  // 0-d scalar

    const size_t want = static_cast<size_t>(arr.numel()) * static_cast<size_t>(arr.word_size);
    ILKD_CHECK(bytes.size() >= header_off + header_len + want, "npy payload truncated in " + what);
    arr.data.assign(bytes.begin() + static_cast<int64_t>(header_off + header_len),
                    bytes.begin() + static_cast<int64_t>(header_off + header_len + want));
    return arr;
}

std::vector<double> NpyArray::as_doubles() const {
    std::vector<double> out(static_cast<size_t>(numel()));
    const uint8_t* p = data.data();
    for (size_t i = 0; i < out.size(); ++i, p += word_size) {
        switch (type) {
            case 'u':
                out[i] = word_size == 1   ? static_cast<double>(*p)
                         : word_size == 2 ? static_cast<double>(le16(p))
                         : word_size == 4 ? static_cast<double>(le32(p))
                                          : static_cast<double>(le32(p) | (static_cast<uint64_t>(le32(p + 4)) << 32));
                break;
            case 'i': {
                int64_t v = 0;
                if (word_size == 1) v = static_cast<int8_t>(*p);
                else if (word_size == 2) v = static_cast<int16_t>(le16(p));
                else if (word_size == 4) v = static_cast<int32_t>(le32(p));
                else v = static_cast<int64_t>(le32(p) | (static_cast<uint64_t>(le32(p + 4)) << 32));
                out[i] = static_cast<double>(v);
                break;
            }
            case 'f': {
                if (word_size == 4) {
                    float f;
                    std::memcpy(&f, p, 4);
                    out[i] = f;
                } else {
                    double d;
                    std::memcpy(&d, p, 8);
                    out[i] = d;
                }
                break;
            }
            default:
                fail("unreachable dtype");
        }
    }
    return out;
}

std::vector<int64_t> NpyArray::as_ints() const {
    std::vector<double> d = as_doubles();
    std::vector<int64_t> out(d.size());
    for (size_t i = 0; i < d.size(); ++i) out[i] = static_cast<int64_t>(d[i]);
    return out;
}

std::map<std::string, NpyArray> load_npz(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    ILKD_CHECK(is.good(), "cannot open " + path);
    std::vector<uint8_t> file((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    ILKD_CHECK(file.size() >= 22, "not a zip archive: " + path);

    // locate the end-of-central-directory record (scan back over comment)
    size_t eocd = std::string::npos;
    const size_t scan_from = file.size() >= 22 + 65536 ? file.size() - 22 - 65536 : 0;
    for (size_t i = file.size() - 22 + 1; i-- > scan_from;) {
        if (le32(file.data() + i) == 0x06054b50) {
            eocd = i;
            break;
        }
    }
    ILKD_CHECK(eocd != std::string::npos, "zip end record not found: " + path);
    const uint16_t entries = le16(file.data() + eocd + 10);
    uint32_t cd_off = le32(file.data() + eocd + 16);

    std::map<std::string, NpyArray> out;
    for (uint16_t e = 0; e < entries; ++e) {
        ILKD_CHECK(cd_off + 46 <= file.size() && le32(file.data() + cd_off) == 0x02014b50,
                   "zip central directory corrupt: " + path);
        const uint8_t* cd = file.data() + cd_off;
        const uint16_t method = le16(cd + 10);
        const uint32_t csize = le32(cd + 20);
        const uint32_t usize = le32(cd + 24);
        const uint16_t name_len = le16(cd + 28);
        const uint16_t extra_len = le16(cd + 30);
        const uint16_t comment_len = le16(cd + 32);
        const uint32_t local_off = le32(cd + 42);
        std::string name(reinterpret_cast<const char*>(cd + 46), name_len);
        cd_off += 46u + name_len + extra_len + comment_len;

        ILKD_CHECK(local_off + 30 <= file.size() && le32(file.data() + local_off) == 0x04034b50,
                   "zip local header corrupt: " + path);
        const uint8_t* lh = file.data() + local_off;
        const uint16_t lh_name = le16(lh + 26);
        const uint16_t lh_extra = le16(lh + 28);
        const uint8_t* payload = lh + 30 + lh_name + lh_extra;
        ILKD_CHECK(payload + csize <= file.data() + file.size(), "zip member out of bounds: " + name);

        std::vector<uint8_t> raw;
        if (method == 0) {
            raw.assign(payload, payload + usize);
        } else if (method == 8) {
            raw = inflate_raw(payload, csize, usize, name);
        } else {
            fail("unsupported zip compression method in " + name);
        }
        if (name.size() > 4 && name.substr(name.size() - 4) == ".npy") name.resize(name.size() - 4);
        out[name] = parse_npy(raw, name);
    }
    return out;
}

}  // namespace ilkd
