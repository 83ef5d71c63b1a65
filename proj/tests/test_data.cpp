#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ilkd/dataset.hpp"
#include "ilkd/npz.hpp"
#include "ilkd/sampler.hpp"
#include "ilkd/serialize.hpp"
#include "ilkd/task_stream.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace ilkd;

namespace {

// ---------------------------------------------------------------- fixtures

fs::path fresh_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("ilkd-data-" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& p, const std::vector<uint8_t>& bytes) {
    std::ofstream os(p, std::ios::binary);
    REQUIRE(os.good());
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    REQUIRE(os.good());
    os << text;
}

void push16(std::vector<uint8_t>& v, uint16_t x) {
    v.push_back(static_cast<uint8_t>(x & 0xff));
    v.push_back(static_cast<uint8_t>(x >> 8));
}

void push32(std::vector<uint8_t>& v, uint32_t x) {
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<uint8_t>((x >> (8 * i)) & 0xff));
}

// .npy member: magic, version, padded dict header, raw payload
std::vector<uint8_t> make_npy(const std::string& descr, const std::vector<int64_t>& shape,
                              const std::vector<uint8_t>& payload, bool v2 = false, bool fortran = false) {
    std::ostringstream dict;
    dict << "{'descr': '" << descr << "', 'fortran_order': " << (fortran ? "True" : "False") << ", 'shape': (";
    for (size_t i = 0; i < shape.size(); ++i) dict << shape[i] << (shape.size() == 1 || i + 1 < shape.size() ? ", " : "");
    dict << "), }";
    std::string header = dict.str();
    const size_t base = v2 ? 12 : 10;
    const size_t padded = ((base + header.size() + 1 + 63) / 64) * 64;
    header.resize(padded - base - 1, ' ');
    header += '\n';

    std::vector<uint8_t> out = {0x93, 'N', 'U', 'M', 'P', 'Y'};
    if (v2) {
        out.push_back(2);
        out.push_back(0);
        push32(out, static_cast<uint32_t>(header.size()));
    } else {
        out.push_back(1);
        out.push_back(0);
        push16(out, static_cast<uint16_t>(header.size()));
    }
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

std::vector<uint8_t> raw_deflate(const std::vector<uint8_t>& in) {
    z_stream strm{};
    REQUIRE(deflateInit2(&strm, Z_DEFAULT_COMPRESSION, Z_DEFLATED, -MAX_WBITS, 8, Z_DEFAULT_STRATEGY) == Z_OK);
    std::vector<uint8_t> out(deflateBound(&strm, static_cast<uLong>(in.size())));
    strm.next_in = const_cast<Bytef*>(in.data());
    strm.avail_in = static_cast<uInt>(in.size());
    strm.next_out = out.data();
    strm.avail_out = static_cast<uInt>(out.size());
    REQUIRE(deflate(&strm, Z_FINISH) == Z_STREAM_END);
    out.resize(out.size() - strm.avail_out);
    deflateEnd(&strm);
    return out;
}

struct ZipMember {
    std::string name;
    std::vector<uint8_t> bytes;
    bool deflated = false;
};

void write_zip(const fs::path& path, const std::vector<ZipMember>& members) {
    std::vector<uint8_t> file, cdir;
    for (const auto& m : members) {
        const uint32_t crc = static_cast<uint32_t>(
            crc32(crc32(0L, Z_NULL, 0), m.bytes.data(), static_cast<uInt>(m.bytes.size())));
        const std::vector<uint8_t> stored = m.deflated ? raw_deflate(m.bytes) : m.bytes;
        const uint32_t offset = static_cast<uint32_t>(file.size());
        const uint16_t method = m.deflated ? 8 : 0;

        push32(file, 0x04034b50);
        push16(file, 20);
        push16(file, 0);
        push16(file, method);
        push16(file, 0);
        push16(file, 0);
        push32(file, crc);
        push32(file, static_cast<uint32_t>(stored.size()));
        push32(file, static_cast<uint32_t>(m.bytes.size()));
        push16(file, static_cast<uint16_t>(m.name.size()));
        push16(file, 0);
        file.insert(file.end(), m.name.begin(), m.name.end());
        file.insert(file.end(), stored.begin(), stored.end());

        push32(cdir, 0x02014b50);
        push16(cdir, 20);
        push16(cdir, 20);
        push16(cdir, 0);
        push16(cdir, method);
        push16(cdir, 0);
        push16(cdir, 0);
        push32(cdir, crc);
        push32(cdir, static_cast<uint32_t>(stored.size()));
        push32(cdir, static_cast<uint32_t>(m.bytes.size()));
        push16(cdir, static_cast<uint16_t>(m.name.size()));
        push16(cdir, 0);
        push16(cdir, 0);
        push16(cdir, 0);
        push16(cdir, 0);
        push32(cdir, 0);
        push32(cdir, offset);
        cdir.insert(cdir.end(), m.name.begin(), m.name.end());
    }
    const uint32_t cd_off = static_cast<uint32_t>(file.size());
    file.insert(file.end(), cdir.begin(), cdir.end());
    push32(file, 0x06054b50);
    push16(file, 0);
    push16(file, 0);
    push16(file, static_cast<uint16_t>(members.size()));
    push16(file, static_cast<uint16_t>(members.size()));
    push32(file, static_cast<uint32_t>(cdir.size()));
    push32(file, cd_off);
    push16(file, 0);
    write_file(path, file);
}

// cifar batch file: n records of [label, 3072 pixel bytes]
std::vector<uint8_t> cifar_records(const std::vector<int>& labels, uint8_t salt) {
    std::vector<uint8_t> out;
    for (size_t r = 0; r < labels.size(); ++r) {
        out.push_back(static_cast<uint8_t>(labels[r]));
        for (int i = 0; i < 3072; ++i) out.push_back(static_cast<uint8_t>((r * 31 + i * 7 + salt) & 0xff));
    }
    return out;
}

uint64_t image_hash(const Tensor<float>& images, int64_t i) {
    const int64_t plane = images.numel() / images.shape()[0];
    return io::hash_bytes(images.data() + i * plane, static_cast<size_t>(plane) * sizeof(float));
}

std::multiset<uint64_t> split_hashes(TaskStream& stream, const TaskSpec& task, bool train) {
    LabeledBatch b = stream.full_split(task, train, task.task_index);
    std::multiset<uint64_t> out;
    for (int i = 0; i < b.size(); ++i) out.insert(image_hash(b.images, i));
    return out;
}

std::vector<int> label_counts(const std::vector<int>& labels, int num_classes) {
    std::vector<int> counts(static_cast<size_t>(num_classes), 0);
    for (int l : labels) counts[static_cast<size_t>(l)]++;
    return counts;
}

// medmnist-style fixture: constant-valued images, value tied to the label
void write_medmnist_fixture(const fs::path& path, bool deflate_some) {
    const std::vector<int> train_labels = {0, 0, 1, 1, 2, 2, 3, 3};
    const std::vector<int> test_labels = {0, 1, 2, 3};
    auto images = [](const std::vector<int>& labels) {
        std::vector<uint8_t> px;
        for (int l : labels) px.insert(px.end(), 28 * 28, static_cast<uint8_t>(40 * l + 10));
        return px;
    };
    auto labels64 = [](const std::vector<int>& labels) {
        std::vector<uint8_t> out;
        for (int l : labels)
            for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((static_cast<uint64_t>(l) >> (8 * i)) & 0xff));
        return out;
    };
    write_zip(path, {
                        {"train_images.npy",
                         make_npy("|u1", {static_cast<int64_t>(train_labels.size()), 28, 28}, images(train_labels)),
                         deflate_some},
                        {"train_labels.npy",
                         make_npy("<i8", {static_cast<int64_t>(train_labels.size()), 1}, labels64(train_labels)), false},
                        {"test_images.npy",
                         make_npy("|u1", {static_cast<int64_t>(test_labels.size()), 28, 28}, images(test_labels)), false},
                        {"test_labels.npy",
                         make_npy("<i8", {static_cast<int64_t>(test_labels.size()), 1}, labels64(test_labels)),
                         deflate_some},
                    });
}

}  // namespace

// ------------------------------------------------------------------- blobs

TEST_CASE("synthetic blobs: shapes, normalization, determinism") {
    Dataset a = load_synthetic_blobs(4, 150, 50, 16, 1);
    CHECK(a.name == "synthetic-blobs");
    CHECK(a.num_classes() == 4);
    CHECK(a.train_size() == 600);
    CHECK(a.test_size() == 200);
    CHECK(a.train_images.shape() == std::vector<int>{600, 3, 16, 16});
    CHECK(label_counts(a.train_labels, 4) == std::vector<int>{150, 150, 150, 150});
    CHECK(label_counts(a.test_labels, 4) == std::vector<int>{50, 50, 50, 50});

    // train split is normalized per channel
    const int64_t hw = 16 * 16;
    for (int c = 0; c < 3; ++c) {
        double s = 0, s2 = 0;
        for (int64_t i = 0; i < 600; ++i) {
            const float* p = a.train_images.data() + (i * 3 + c) * hw;
            for (int64_t j = 0; j < hw; ++j) {
                s += p[j];
                s2 += static_cast<double>(p[j]) * p[j];
            }
        }
        const double n = 600.0 * hw;
        CHECK(std::abs(s / n) < 1e-4);
        CHECK(std::abs(s2 / n - 1.0) < 1e-3);
    }

    // the generator range is the image of [0,1]
    auto lo = a.range_lo(), hi = a.range_hi();
    for (int c = 0; c < 3; ++c) {
        CHECK(lo[c] == doctest::Approx((0.f - a.mean[c]) / a.stddev[c]));
        CHECK(hi[c] == doctest::Approx((1.f - a.mean[c]) / a.stddev[c]));
        CHECK(lo[c] < hi[c]);
    }

    Dataset b = load_synthetic_blobs(4, 150, 50, 16, 1);
    REQUIRE(b.train_images.numel() == a.train_images.numel());
    bool same = std::equal(a.train_images.data(), a.train_images.data() + a.train_images.numel(),
                           b.train_images.data());
    CHECK(same);

    Dataset c = load_synthetic_blobs(4, 150, 50, 16, 2);
    bool differs = !std::equal(a.train_images.data(), a.train_images.data() + a.train_images.numel(),
                               c.train_images.data());
    CHECK(differs);
}

// --------------------------------------------------------------- npy / npz

TEST_CASE("npz: stored and deflated members parse back") {
    const fs::path dir = fresh_dir("npz");
    std::vector<uint8_t> u8_payload = {0, 1, 2, 3, 4, 5};
    std::vector<uint8_t> f4_payload;
    for (float v : {1.5f, -2.0f, 0.25f, 8.0f}) {
        const uint8_t* p = reinterpret_cast<const uint8_t*>(&v);
        f4_payload.insert(f4_payload.end(), p, p + 4);
    }
    std::vector<uint8_t> i4_payload;
    for (int32_t v : {-7, 0, 7}) {
        const uint8_t* p = reinterpret_cast<const uint8_t*>(&v);
        i4_payload.insert(i4_payload.end(), p, p + 4);
    }
    write_zip(dir / "mix.npz", {
                                   {"a.npy", make_npy("|u1", {2, 3}, u8_payload), false},
                                   {"b.npy", make_npy("<f4", {4}, f4_payload), true},
                                   {"c.npy", make_npy("<i4", {3}, i4_payload, /*v2=*/true), true},
                               });
    auto arrays = load_npz((dir / "mix.npz").string());
    REQUIRE(arrays.count("a"));
    REQUIRE(arrays.count("b"));
    REQUIRE(arrays.count("c"));
    CHECK(arrays["a"].shape == std::vector<int64_t>{2, 3});
    CHECK(arrays["a"].as_doubles() == std::vector<double>{0, 1, 2, 3, 4, 5});
    CHECK(arrays["b"].as_doubles() == std::vector<double>{1.5, -2.0, 0.25, 8.0});
    CHECK(arrays["c"].as_ints() == std::vector<int64_t>{-7, 0, 7});
}

TEST_CASE("npz: rejects what it cannot represent") {
    CHECK_THROWS(parse_npy(make_npy(">u2", {2}, {0, 1, 0, 2}), "be"));
    CHECK_THROWS(parse_npy(make_npy("|u1", {4}, {1, 2, 3, 4}, false, /*fortran=*/true), "fortran"));
    CHECK_THROWS(parse_npy(make_npy("|u1", {9}, {1, 2, 3}), "short payload"));
    CHECK_THROWS(load_npz("/nonexistent/archive.npz"));
}

TEST_CASE("medmnist loader: bilinear resize to 32x32 keeps constant images constant") {
    const fs::path dir = fresh_dir("medmnist");
    write_medmnist_fixture(dir / "octmnist.npz", true);
    Dataset ds = load_medmnist_npz((dir / "octmnist.npz").string(), "oct", {"CNV", "DME", "Drusen", "Normal"});
    CHECK(ds.channels == 1);
    CHECK(ds.height == 32);
    CHECK(ds.width == 32);
    CHECK(ds.train_size() == 8);
    CHECK(ds.test_size() == 4);
    CHECK(ds.class_names == std::vector<std::string>{"CNV", "DME", "Drusen", "Normal"});
    CHECK(ds.train_labels == std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3});

    // each image was constant; after resize + normalization, undoing the
    // normalization must recover value/255 at every pixel
    for (int64_t i = 0; i < 8; ++i) {
        const double raw = (40.0 * ds.train_labels[static_cast<size_t>(i)] + 10.0) / 255.0;
        const float* p = ds.train_images.data() + i * 32 * 32;
        for (int j = 0; j < 32 * 32; ++j)
            CHECK(std::abs(p[j] * ds.stddev[0] + ds.mean[0] - raw) < 1e-5);
    }
}

// ------------------------------------------------------------------- cifar

TEST_CASE("cifar reader: records, values, and malformed files") {
    const fs::path dir = fresh_dir("cifar");
    const std::vector<int> train_labels = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 1};
    const std::vector<int> test_labels = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    write_file(dir / "data_batch_1.bin", cifar_records(train_labels, 3));
    write_file(dir / "test_batch.bin", cifar_records(test_labels, 11));

    Dataset ds = load_cifar10(dir.string());
    CHECK(ds.train_size() == 12);
    CHECK(ds.test_size() == 10);
    CHECK(ds.train_labels == train_labels);
    CHECK(ds.num_classes() == 10);

    // undo normalization and compare to the raw byte pattern
    for (int64_t r : {int64_t{0}, int64_t{7}}) {
        const float* p = ds.train_images.data() + r * 3072;
        for (int i = 0; i < 3072; ++i) {
            const double raw = ((r * 31 + i * 7 + 3) & 0xff) / 255.0;
            const int c = i / 1024;
            CHECK(std::abs(p[i] * ds.stddev[static_cast<size_t>(c)] + ds.mean[static_cast<size_t>(c)] - raw) < 1e-5);
        }
    }

    const fs::path bad1 = fresh_dir("cifar-bad-size");
    write_file(bad1 / "data_batch_1.bin", std::vector<uint8_t>(3072, 0));
    write_file(bad1 / "test_batch.bin", cifar_records({0}, 1));
    CHECK_THROWS(load_cifar10(bad1.string()));

    const fs::path bad2 = fresh_dir("cifar-bad-label");
    auto rec = cifar_records({0}, 1);
    rec[0] = 10;
    write_file(bad2 / "data_batch_1.bin", rec);
    write_file(bad2 / "test_batch.bin", cifar_records({0}, 1));
    CHECK_THROWS(load_cifar10(bad2.string()));

    CHECK_THROWS(load_cifar10((dir / "nowhere").string()));
}

// ----------------------------------------------------------- image folders

namespace {

std::string pgm_binary(int w, int h, uint8_t value) {
    std::string s = "P5\n# fixture\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    s.append(static_cast<size_t>(w) * h, static_cast<char>(value));
    return s;
}

std::string ppm_binary(int w, int h, uint8_t r, uint8_t g, uint8_t b) {
    std::string s = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (int i = 0; i < w * h; ++i) {
        s.push_back(static_cast<char>(r));
        s.push_back(static_cast<char>(g));
        s.push_back(static_cast<char>(b));
    }
    return s;
}

std::string pgm_ascii(int w, int h, int value, int maxval) {
    std::string s = "P2\n" + std::to_string(w) + " " + std::to_string(h) + "\n" + std::to_string(maxval) + "\n";
    for (int i = 0; i < w * h; ++i) s += std::to_string(value) + "\n";
    return s;
}

fs::path build_folder_fixture(const std::string& tag, int per_class) {
    const fs::path root = fresh_dir(tag);
    const std::vector<std::string> dirs = {"ISUP0", "ISUP1", "ISUP2", "ISUP3"};
    for (size_t c = 0; c < dirs.size(); ++c) {
        fs::create_directories(root / dirs[c]);
        for (int i = 0; i < per_class; ++i) {
            const uint8_t v = static_cast<uint8_t>(30 + 50 * c + i);
            const fs::path p = root / dirs[c] / ("img" + std::to_string(i));
            if (i % 3 == 0)
                write_text(p.string() + ".ppm", ppm_binary(5 + static_cast<int>(c), 6, v, v / 2, v / 3));
            else if (i % 3 == 1)
                write_text(p.string() + ".pgm", pgm_binary(8, 6, v));
            else
                write_text(p.string() + ".pgm", pgm_ascii(4, 4, v / 2, 127));
        }
    }
    return root;
}

}  // namespace

TEST_CASE("image folder adapter: netpbm forms, stratified split, skip counting") {
    const fs::path root = build_folder_fixture("folder", 6);
    write_text(root / "ISUP0" / "junk.txt", "not an image at all");

    Dataset ds = image_folder_adapter(root.string(), {"ISUP0", "ISUP1", "ISUP2", "ISUP3"}, 0.2, 16, 1);
    CHECK(ds.skipped_files == 1);
    CHECK(ds.channels == 3);  // color members force expansion
    CHECK(ds.num_classes() == 4);
    CHECK(ds.train_size() == 4 * 5);  // floor(0.2*6)=1 held out per class
    CHECK(ds.test_size() == 4 * 1);
    CHECK(label_counts(ds.train_labels, 4) == std::vector<int>{5, 5, 5, 5});
    CHECK(label_counts(ds.test_labels, 4) == std::vector<int>{1, 1, 1, 1});

    // determinism: identical call -> identical split and pixels
    Dataset ds2 = image_folder_adapter(root.string(), {"ISUP0", "ISUP1", "ISUP2", "ISUP3"}, 0.2, 16, 1);
    CHECK(ds2.train_labels == ds.train_labels);
    CHECK(std::equal(ds.train_images.data(), ds.train_images.data() + ds.train_images.numel(), ds2.train_images.data()));

    // grayscale images replicate across the 3 channels (compare after
    // undoing the per-channel normalization)
    bool found_gray = false;
    for (int64_t i = 0; i < ds.train_size() && !found_gray; ++i) {
        const int64_t hw = 16 * 16;
        const float* p = ds.train_images.data() + i * 3 * hw;
        double denorm[3];
        for (int c = 0; c < 3; ++c) denorm[c] = static_cast<double>(p[c * hw]) * ds.stddev[static_cast<size_t>(c)] + ds.mean[static_cast<size_t>(c)];
        if (std::abs(denorm[0] - denorm[1]) < 5e-6 && std::abs(denorm[1] - denorm[2]) < 5e-6) {
            found_gray = true;
            bool all_match = true;
            for (int64_t j = 0; j < hw; ++j) {
                const double a = static_cast<double>(p[j]) * ds.stddev[0] + ds.mean[0];
                const double b = static_cast<double>(p[hw + j]) * ds.stddev[1] + ds.mean[1];
                const double c2 = static_cast<double>(p[2 * hw + j]) * ds.stddev[2] + ds.mean[2];
                all_match = all_match && std::abs(a - b) < 1e-5 && std::abs(b - c2) < 1e-5;
            }
            CHECK(all_match);
        }
    }
    CHECK(found_gray);

    // maxval rescaling: P2 with maxval 127 and value v/2 -> (v/2)*255/127
    // is spot-checked through the reconstruction above; here just confirm
    // every pixel sits in the normalized image of [0,1]
    auto lo = ds.range_lo(), hi = ds.range_hi();
    for (int64_t i = 0; i < ds.train_images.numel(); ++i) {
        const int c = static_cast<int>((i / (16 * 16)) % 3);
        CHECK(ds.train_images.data()[i] >= lo[static_cast<size_t>(c)] - 1e-4);
        CHECK(ds.train_images.data()[i] <= hi[static_cast<size_t>(c)] + 1e-4);
    }

    const fs::path empty_root = fresh_dir("folder-empty");
    fs::create_directories(empty_root / "a");
    fs::create_directories(empty_root / "b");
    write_text(empty_root / "a" / "x.pgm", pgm_binary(4, 4, 9));
    CHECK_THROWS(image_folder_adapter(empty_root.string(), {"a", "b"}, 0.2, 16, 1));
    CHECK_THROWS(image_folder_adapter(empty_root.string(), {"a", "missing"}, 0.2, 16, 1));
    CHECK_THROWS(image_folder_adapter("/nonexistent-root", {"a"}, 0.2, 16, 1));
}

TEST_CASE("image folder adapter: 4x25 images make a 100-sample two-task stream") {
    const fs::path root = build_folder_fixture("folder-100", 25);
    Dataset ds = image_folder_adapter(root.string(), {"ISUP0", "ISUP1", "ISUP2", "ISUP3"}, 0.2, 16, 1);
    CHECK(ds.train_size() + ds.test_size() == 100);

    TaskStream stream = build_task_stream(std::move(ds), SplitProtocol{"paper", {}, false}, 0);
    CHECK(stream.total_tasks() == 2);
    CHECK(stream.task(1).class_ids == std::vector<int>{0, 3});
    CHECK(stream.task(2).class_ids == std::vector<int>{1, 2});
}

// ------------------------------------------------------------ task streams

TEST_CASE("task stream: paper split invariants on blobs") {
    TaskStream s1 = build_task_stream(load_synthetic_blobs(), SplitProtocol{"paper", {}, false}, 0);
    REQUIRE(s1.total_tasks() == 2);
    CHECK(s1.task(1).class_ids == std::vector<int>{0, 1});
    CHECK(s1.task(2).class_ids == std::vector<int>{2, 3});
    CHECK(s1.dataset_name() == "synthetic-blobs");
    CHECK(s1.channels() == 3);

    // disjointness + coverage
    std::set<int> all;
    for (const auto& t : s1.tasks())
        for (int c : t.class_ids) CHECK(all.insert(c).second);
    CHECK(all == std::set<int>{0, 1, 2, 3});

    // membership: every split label belongs to the task
    for (const auto& t : s1.tasks()) {
        std::set<int> members(t.class_ids.begin(), t.class_ids.end());
        for (int l : s1.split_labels(t, true)) CHECK(members.count(l));
        for (int l : s1.split_labels(t, false)) CHECK(members.count(l));
        CHECK(t.train_indices.size() == 300);
        CHECK(t.test_indices.size() == 100);
    }

    // determinism across builds
    TaskStream s2 = build_task_stream(load_synthetic_blobs(), SplitProtocol{"paper", {}, false}, 0);
    for (int k = 1; k <= 2; ++k) {
        CHECK(s1.task(k).train_indices == s2.task(k).train_indices);
        CHECK(s1.task(k).test_indices == s2.task(k).test_indices);
    }

    // no train/test leakage by sample identity
    for (const auto& t : s1.tasks()) {
        auto train_h = split_hashes(s1, t, true);
        auto test_h = split_hashes(s1, t, false);
        for (uint64_t h : test_h) CHECK(train_h.count(h) == 0);
    }

    CHECK(s1.classes_up_to(1) == std::vector<int>{0, 1});
    CHECK(s1.classes_up_to(2) == std::vector<int>{0, 1, 2, 3});

    TaskSpec pooled = s1.pooled_task();
    CHECK(pooled.class_ids == std::vector<int>{0, 1, 2, 3});
    CHECK(pooled.train_indices.size() == 600);
    CHECK(pooled.test_indices.size() == 200);
}

TEST_CASE("task stream: custom partitions, single-class tasks, errors") {
    Dataset ds = load_synthetic_blobs();
    SplitProtocol oct_like{"custom", {{3, 0}, {1}, {2}}, false};
    TaskStream s = build_task_stream(load_synthetic_blobs(), oct_like, 0);
    REQUIRE(s.total_tasks() == 3);
    CHECK(s.task(1).class_ids == std::vector<int>{3, 0});
    CHECK(s.task(2).class_ids == std::vector<int>{1});
    CHECK(s.task(3).class_ids == std::vector<int>{2});
    CHECK(s.task(2).train_indices.size() == 150);

    CHECK_THROWS(build_task_stream(load_synthetic_blobs(), SplitProtocol{"custom", {{0, 1}, {1, 2}}, false}, 0));
    CHECK_THROWS(build_task_stream(load_synthetic_blobs(), SplitProtocol{"custom", {{0, 9}}, false}, 0));
    CHECK_THROWS(build_task_stream(load_synthetic_blobs(), SplitProtocol{"custom", {{0}, {}}, false}, 0));
    CHECK_THROWS(build_task_stream(load_synthetic_blobs(), SplitProtocol{"bogus", {}, false}, 0));
}

TEST_CASE("task stream: permuted class order keeps shape, varies with seed") {
    std::set<std::string> descs;
    for (uint64_t seed : {1, 2, 3, 4, 5}) {
        TaskStream s = build_task_stream(load_synthetic_blobs(), SplitProtocol{"paper", {}, true}, seed);
        REQUIRE(s.total_tasks() == 2);
        CHECK(s.task(1).class_ids.size() == 2);
        CHECK(s.task(2).class_ids.size() == 2);
        std::set<int> all;
        for (const auto& t : s.tasks())
            for (int c : t.class_ids) all.insert(c);
        CHECK(all.size() == 4);
        descs.insert(s.protocol_desc());

        TaskStream again = build_task_stream(load_synthetic_blobs(), SplitProtocol{"paper", {}, true}, seed);
        CHECK(again.protocol_desc() == s.protocol_desc());
    }
    CHECK(descs.size() >= 2);
}

TEST_CASE("task stream: paper partitions for the named datasets") {
    const fs::path dir = fresh_dir("cifar-split");
    std::vector<int> train_labels, test_labels;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 10; ++c) train_labels.push_back(c);
    for (int c = 0; c < 10; ++c) test_labels.push_back(c);
    write_file(dir / "data_batch_1.bin", cifar_records(train_labels, 5));
    write_file(dir / "test_batch.bin", cifar_records(test_labels, 9));
    TaskStream cifar = build_task_stream(load_cifar10(dir.string()), SplitProtocol{"paper", {}, false}, 0);
    REQUIRE(cifar.total_tasks() == 3);
    CHECK(cifar.task(1).class_ids.size() == 4);
    CHECK(cifar.task(2).class_ids.size() == 3);
    CHECK(cifar.task(3).class_ids.size() == 3);

    const fs::path mdir = fresh_dir("oct-split");
    write_medmnist_fixture(mdir / "octmnist.npz", false);
    Dataset oct = load_medmnist_npz((mdir / "octmnist.npz").string(), "oct", {"CNV", "DME", "Drusen", "Normal"});
    TaskStream s = build_task_stream(std::move(oct), SplitProtocol{"paper", {}, false}, 0);
    REQUIRE(s.total_tasks() == 3);
    CHECK(s.task(1).class_ids == std::vector<int>{3, 0});  // Normal + CNV first
    CHECK(s.task(2).class_ids == std::vector<int>{1});     // DME alone
    CHECK(s.task(3).class_ids == std::vector<int>{2});     // Drusen alone

    CHECK(paper_partition("pathmnist", 9) ==
          std::vector<std::vector<int>>{{0, 1, 2}, {3, 4, 5}, {6, 7, 8}});
    CHECK_THROWS(paper_partition("mystery-data", 10));
}

// ------------------------------------------------------------------- audit

TEST_CASE("access audit: flags only past-task train reads") {
    TaskStream s = build_task_stream(load_synthetic_blobs(), SplitProtocol{"paper", {}, false}, 0);
    CHECK(s.audit().past_task_train_reads() == 0);

    s.full_split(s.task(1), true, 1);  // own-task read
    CHECK(s.audit().past_task_train_reads() == 0);

    s.full_split(s.task(1), false, 2);  // test reads are evaluation, never flagged
    CHECK(s.audit().past_task_train_reads() == 0);

    s.gather(s.task(2), true, {0, 1, 2}, 2);  // current-task read
    CHECK(s.audit().past_task_train_reads() == 0);

    s.gather(s.task(1), true, {0, 1}, 2);  // the forbidden access
    CHECK(s.audit().past_task_train_reads() == 2);

    std::string summary = s.audit().summary();
    CHECK(summary.find("\"past_task_train_reads\":2") != std::string::npos);
    CHECK(summary.find("\"split\":\"train\"") != std::string::npos);

    std::stringstream buf;
    s.audit().save(buf);
    AccessAudit copy;
    copy.load(buf);
    CHECK(copy.past_task_train_reads() == 2);
    CHECK(copy.summary() == summary);
    REQUIRE(copy.entries().size() == s.audit().entries().size());
}

// ----------------------------------------------------------------- sampler

TEST_CASE("sampler: balanced batches, both classes present") {
    TaskStream s = build_task_stream(load_synthetic_blobs(), SplitProtocol{"paper", {}, false}, 0);
    TaskSampler smp(&s, s.task(1), 64, 7);
    for (int it = 0; it < 5; ++it) {
        LabeledBatch b = smp.next_batch();
        REQUIRE(b.size() == 64);
        CHECK(b.images.shape() == std::vector<int>{64, 3, 16, 16});
        auto counts = label_counts(b.labels, 4);
        CHECK(counts[0] == 32);
        CHECK(counts[1] == 32);
        CHECK(counts[2] == 0);
        CHECK(counts[3] == 0);
    }
    CHECK(s.audit().past_task_train_reads() == 0);
}

TEST_CASE("sampler: deterministic under a fixed seed") {
    TaskStream s1 = build_task_stream(load_synthetic_blobs(), SplitProtocol{"paper", {}, false}, 0);
    TaskStream s2 = build_task_stream(load_synthetic_blobs(), SplitProtocol{"paper", {}, false}, 0);
    TaskSampler a(&s1, s1.task(1), 16, 3);
    TaskSampler b(&s2, s2.task(1), 16, 3);
    bool all_equal = true;
    for (int it = 0; it < 6; ++it) {
        LabeledBatch ba = a.next_batch(), bb = b.next_batch();
        all_equal = all_equal && ba.labels == bb.labels &&
                    std::equal(ba.images.data(), ba.images.data() + ba.images.numel(), bb.images.data());
    }
    CHECK(all_equal);

    TaskStream s3 = build_task_stream(load_synthetic_blobs(), SplitProtocol{"paper", {}, false}, 0);
    TaskSampler c(&s3, s3.task(1), 16, 4);
    bool any_diff = false;
    for (int it = 0; it < 6 && !any_diff; ++it) {
        LabeledBatch ba = a.next_batch(), bc = c.next_batch();
        any_diff = !std::equal(ba.images.data(), ba.images.data() + ba.images.numel(), bc.images.data());
    }
    CHECK(any_diff);
}

TEST_CASE("sampler: triplet-viable batches across many seeds") {
    TaskStream s = build_task_stream(load_synthetic_blobs(), SplitProtocol{"paper", {}, false}, 0);
    for (uint64_t seed = 1; seed <= 40; ++seed) {
        TaskSampler smp(&s, s.task(1), 16, seed);
        for (int it = 0; it < 3; ++it) {
            LabeledBatch b = smp.next_batch();
            auto counts = label_counts(b.labels, 4);
            int distinct = 0, most = 0;
            for (int c : counts) {
                distinct += c > 0 ? 1 : 0;
                most = std::max(most, c);
            }
            CHECK(distinct >= 2);
            CHECK(most >= 2);
        }
    }
}

TEST_CASE("sampler: single-class tasks and no-replacement mode") {
    SplitProtocol oct_like{"custom", {{3, 0}, {1}, {2}}, false};
    TaskStream s = build_task_stream(load_synthetic_blobs(), oct_like, 0);

    TaskSampler solo(&s, s.task(2), 8, 5);
    LabeledBatch b = solo.next_batch();
    for (int l : b.labels) CHECK(l == 1);

    CHECK_THROWS(TaskSampler(&s, s.task(2), 0, 5));
    TaskSampler tiny(&s, s.task(1), 1, 5);
    CHECK(tiny.next_batch().size() == 1);

    // a no-replacement batch the size of the split is a permutation of it
    TaskSampler full(&s, s.task(1), 300, 5, /*no_replacement=*/true);
    LabeledBatch whole = full.next_batch();
    auto counts = label_counts(whole.labels, 4);
    CHECK(counts[0] == 150);
    CHECK(counts[3] == 150);
    std::multiset<uint64_t> seen;
    for (int i = 0; i < whole.size(); ++i) seen.insert(image_hash(whole.images, i));
    CHECK(seen.size() == 300);
    auto expect = split_hashes(s, s.task(1), true);
    CHECK(seen == expect);

    TaskSampler over(&s, s.task(2), 151, 5, /*no_replacement=*/true);
    CHECK_THROWS(over.next_batch());
}
