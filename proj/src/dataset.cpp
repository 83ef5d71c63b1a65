#include "ilkd/dataset.hpp"

#include "ilkd/npz.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace ilkd {

std::vector<float> Dataset::range_lo() const {
    ILKD_CHECK(normalized, "dataset not finalized");
    std::vector<float> lo(mean.size());
    for (size_t c = 0; c < mean.size(); ++c) lo[c] = (0.f - mean[c]) / stddev[c];
    return lo;
}

std::vector<float> Dataset::range_hi() const {
    ILKD_CHECK(normalized, "dataset not finalized");
    std::vector<float> hi(mean.size());
    for (size_t c = 0; c < mean.size(); ++c) hi[c] = (1.f - mean[c]) / stddev[c];
    return hi;
}

void Dataset::finalize() {
    ILKD_CHECK(!normalized, "finalize called twice");
    validate();
    const int64_t n = train_size(), hw = static_cast<int64_t>(height) * width;
    mean.assign(static_cast<size_t>(channels), 0.f);
    stddev.assign(static_cast<size_t>(channels), 0.f);
    for (int c = 0; c < channels; ++c) {
        double s = 0, s2 = 0;
        for (int64_t i = 0; i < n; ++i) {
            const float* p = train_images.data() + (i * channels + c) * hw;
            for (int64_t j = 0; j < hw; ++j) {
                s += p[j];
                s2 += static_cast<double>(p[j]) * p[j];
            }
        }
        const double cnt = static_cast<double>(n * hw);
        const double m = s / cnt;
        const double var = std::max(s2 / cnt - m * m, 1e-8);
        mean[static_cast<size_t>(c)] = static_cast<float>(m);
        stddev[static_cast<size_t>(c)] = static_cast<float>(std::sqrt(var));
    }
    auto apply = [&](Tensor<float>& imgs) {
        const int64_t cnt = imgs.numel() / (channels * hw);
        for (int64_t i = 0; i < cnt; ++i)
            for (int c = 0; c < channels; ++c) {
                float* p = imgs.data() + (i * channels + c) * hw;
                for (int64_t j = 0; j < hw; ++j)
                    p[j] = (p[j] - mean[static_cast<size_t>(c)]) / stddev[static_cast<size_t>(c)];
            }
    };
    apply(train_images);
    apply(test_images);
    normalized = true;
}

void Dataset::validate() const {
    ILKD_CHECK(channels > 0 && height > 0 && width > 0, "bad image shape");
    ILKD_CHECK(train_images.numel() == train_size() * channels * height * width, "train image/label count mismatch");
    ILKD_CHECK(test_images.numel() == test_size() * channels * height * width, "test image/label count mismatch");
    ILKD_CHECK(train_size() > 0, "empty train split");
    for (int l : train_labels) ILKD_CHECK(l >= 0 && l < num_classes(), "train label out of range");
    for (int l : test_labels) ILKD_CHECK(l >= 0 && l < num_classes(), "test label out of range");
    ILKD_CHECK(train_images.all_finite() && test_images.all_finite(), "non-finite pixels");
}

// ---------------------------------------------------------------------------

Dataset load_synthetic_blobs(int classes, int train_per_class, int test_per_class, int image_size, uint64_t seed) {
    ILKD_CHECK(classes >= 2 && classes <= 8, "blob fixture supports 2..8 classes");
    Dataset ds;
    ds.name = "synthetic-blobs";
    ds.channels = 3;
    ds.height = image_size;
    ds.width = image_size;
    for (int c = 0; c < classes; ++c) ds.class_names.push_back("blob" + std::to_string(c));

    // class anchors: position on a circle, distinct hue
    const float colors[8][3] = {{0.9f, 0.2f, 0.2f}, {0.2f, 0.9f, 0.2f}, {0.2f, 0.3f, 0.9f}, {0.9f, 0.9f, 0.2f},
                                {0.9f, 0.2f, 0.9f}, {0.2f, 0.9f, 0.9f}, {0.9f, 0.6f, 0.2f}, {0.6f, 0.6f, 0.6f}};
    Rng rng = Rng::child(seed, "blobs");

    auto render = [&](Tensor<float>& out, std::vector<int>& labels, int per_class) {
        const int64_t n = static_cast<int64_t>(classes) * per_class;
        out = Tensor<float>({static_cast<int>(n), 3, image_size, image_size});
        labels.clear();
        int64_t idx = 0;
        for (int c = 0; c < classes; ++c) {
            const double angle = 2.0 * 3.14159265358979 * c / classes;
            const double cx0 = image_size / 2.0 + 0.30 * image_size * std::cos(angle);
            const double cy0 = image_size / 2.0 + 0.30 * image_size * std::sin(angle);
            for (int s = 0; s < per_class; ++s, ++idx) {
                const double cx = cx0 + rng.uniform(-1.2, 1.2);
                const double cy = cy0 + rng.uniform(-1.2, 1.2);
                const double sigma = image_size * rng.uniform(0.10, 0.14);
                const double amp = rng.uniform(0.7, 1.0);
                for (int ch = 0; ch < 3; ++ch) {
                    float* p = out.data() + (idx * 3 + ch) * image_size * image_size;
                    for (int y = 0; y < image_size; ++y)
                        for (int x = 0; x < image_size; ++x) {
                            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                            double v = amp * colors[c][ch] * std::exp(-d2 / (2 * sigma * sigma));
                            v += 0.08 + rng.uniform(0.0, 0.06);
                            p[y * image_size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                        }
                }
                labels.push_back(c);
            }
        }
    };
    render(ds.train_images, ds.train_labels, train_per_class);
    render(ds.test_images, ds.test_labels, test_per_class);
    ds.finalize();
    return ds;
}

// ---------------------------------------------------------------------------

namespace {

void read_cifar_file(const std::string& path, Tensor<float>& images, std::vector<int>& labels, int64_t& cursor) {
    std::ifstream is(path, std::ios::binary);
    ILKD_CHECK(is.good(), "cannot open " + path);
    std::vector<uint8_t> rec(3073);
    while (is.read(reinterpret_cast<char*>(rec.data()), 3073)) {
        ILKD_CHECK(rec[0] < 10, "bad label in " + path);
        labels.push_back(rec[0]);
        float* dst = images.data() + cursor * 3072;
        for (int i = 0; i < 3072; ++i) dst[i] = static_cast<float>(rec[static_cast<size_t>(i) + 1]) / 255.f;
        ++cursor;
    }
    ILKD_CHECK(is.gcount() == 0, "truncated record in " + path);
}

int64_t cifar_records(const std::string& path) {
    std::error_code ec;
    const auto sz = fs::file_size(path, ec);
    ILKD_CHECK(!ec, "cannot stat " + path);
    ILKD_CHECK(sz % 3073 == 0, "not a cifar batch file: " + path);
    return static_cast<int64_t>(sz / 3073);
}

}  // namespace

Dataset load_cifar10(const std::string& root) {
    Dataset ds;
    ds.name = "cifar10";
    ds.channels = 3;
    ds.height = 32;
    ds.width = 32;
    ds.class_names = {"airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"};

    std::vector<std::string> train_files;
    for (int i = 1; i <= 5; ++i) {
        const std::string p = root + "/data_batch_" + std::to_string(i) + ".bin";
        if (fs::exists(p)) train_files.push_back(p);
    }
    ILKD_CHECK(!train_files.empty(), "no cifar train batches under " + root);
    const std::string test_file = root + "/test_batch.bin";
    ILKD_CHECK(fs::exists(test_file), "missing " + test_file);

    int64_t train_n = 0;
    for (const auto& f : train_files) train_n += cifar_records(f);
    ds.train_images = Tensor<float>({static_cast<int>(train_n), 3, 32, 32});
    int64_t cursor = 0;
    for (const auto& f : train_files) read_cifar_file(f, ds.train_images, ds.train_labels, cursor);

    const int64_t test_n = cifar_records(test_file);
    ds.test_images = Tensor<float>({static_cast<int>(test_n), 3, 32, 32});
    cursor = 0;
    read_cifar_file(test_file, ds.test_images, ds.test_labels, cursor);

    ds.finalize();
    return ds;
}

// ---------------------------------------------------------------------------

namespace {

/// (n, h, w, c) or (n, h, w) uint8-ish doubles -> (n, c, H, W) bilinear.
Tensor<float> resize_stack(const std::vector<double>& src, int64_t n, int h, int w, int c, int out_hw) {
    Tensor<float> out({static_cast<int>(n), c, out_hw, out_hw});
    const double sy = static_cast<double>(h) / out_hw, sx = static_cast<double>(w) / out_hw;
    for (int64_t i = 0; i < n; ++i)
        for (int oy = 0; oy < out_hw; ++oy)
            for (int ox = 0; ox < out_hw; ++ox) {
                const double fy = std::min((oy + 0.5) * sy - 0.5, h - 1.0);
                const double fx = std::min((ox + 0.5) * sx - 0.5, w - 1.0);
                const int y0 = std::max(0, static_cast<int>(std::floor(fy)));
                const int x0 = std::max(0, static_cast<int>(std::floor(fx)));
                const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
                const double wy = std::clamp(fy - y0, 0.0, 1.0), wx = std::clamp(fx - x0, 0.0, 1.0);
                for (int ch = 0; ch < c; ++ch) {
                    auto at = [&](int y, int x) { return src[((i * h + y) * w + x) * c + ch]; };
                    const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                                     wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
                    out(static_cast<int>(i), ch, oy, ox) = static_cast<float>(v / 255.0);
                }
            }
    return out;
}

}  // namespace

Dataset load_medmnist_npz(const std::string& npz_path, const std::string& name,
                          const std::vector<std::string>& class_names_hint) {
    auto arrays = load_npz(npz_path);
    for (const char* key : {"train_images", "train_labels", "test_images", "test_labels"})
        ILKD_CHECK(arrays.count(key), std::string("missing key ") + key + " in " + npz_path);

    Dataset ds;
    ds.name = name;

    auto load_split = [&](const char* ikey, const char* lkey, Tensor<float>& images, std::vector<int>& labels) {
        const NpyArray& ia = arrays[ikey];
        ILKD_CHECK(ia.shape.size() == 3 || ia.shape.size() == 4, std::string(ikey) + ": expected (n,h,w[,c])");
        const int64_t n = ia.shape[0];
        const int h = static_cast<int>(ia.shape[1]), w = static_cast<int>(ia.shape[2]);
        const int c = ia.shape.size() == 4 ? static_cast<int>(ia.shape[3]) : 1;
        images = resize_stack(ia.as_doubles(), n, h, w, c, 32);
        for (int64_t v : arrays[lkey].as_ints()) labels.push_back(static_cast<int>(v));
        ILKD_CHECK(static_cast<int64_t>(labels.size()) == n, std::string(lkey) + ": label count mismatch");
        ds.channels = c;
    };
    load_split("train_images", "train_labels", ds.train_images, ds.train_labels);
    load_split("test_images", "test_labels", ds.test_images, ds.test_labels);
    ds.height = 32;
    ds.width = 32;

    int max_label = 0;
    for (int l : ds.train_labels) max_label = std::max(max_label, l);
    for (int l : ds.test_labels) max_label = std::max(max_label, l);
    if (!class_names_hint.empty()) {
        ILKD_CHECK(static_cast<int>(class_names_hint.size()) > max_label, "class name hint too short");
        ds.class_names = class_names_hint;
    } else {
        for (int c = 0; c <= max_label; ++c) ds.class_names.push_back("class" + std::to_string(c));
    }
    ds.finalize();
    return ds;
}

// ---------------------------------------------------------------------------

namespace {

/// Minimal netpbm reader: P2/P5 grayscale, P3/P6 color, maxval <= 255.
/// Returns false on anything unparsable.
bool read_netpbm(const std::string& path, std::vector<uint8_t>& pix, int& h, int& w, int& ch) {
    std::ifstream is(path, std::ios::binary);
    if (!is.good()) return false;
    std::string magic;
    is >> magic;
    const bool ascii = magic == "P2" || magic == "P3";
    const bool binary = magic == "P5" || magic == "P6";
    if (!ascii && !binary) return false;
    ch = (magic == "P3" || magic == "P6") ? 3 : 1;

    auto next_int = [&](int& v) -> bool {
        while (true) {
            int c = is.peek();
            if (c == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(c)) {
                is.get();
            } else {
                break;
            }
            if (!is.good()) return false;
        }
        is >> v;
        return static_cast<bool>(is);
    };
    int maxval = 0;
    if (!next_int(w) || !next_int(h) || !next_int(maxval)) return false;
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) return false;

    const int64_t n = static_cast<int64_t>(w) * h * ch;
    pix.resize(static_cast<size_t>(n));
    if (binary) {
        is.get();  // single whitespace after maxval
        is.read(reinterpret_cast<char*>(pix.data()), n);
        if (is.gcount() != n) return false;
    } else {
        for (int64_t i = 0; i < n; ++i) {
            int v;
            if (!next_int(v) || v < 0 || v > maxval) return false;
            pix[static_cast<size_t>(i)] = static_cast<uint8_t>(v);
        }
    }
    if (maxval != 255)
        for (auto& v : pix) v = static_cast<uint8_t>(v * 255 / maxval);
    return true;
}

}  // namespace

Dataset image_folder_adapter(const std::string& root, const std::vector<std::string>& class_dirs,
                             double test_fraction, int image_size, uint64_t seed) {
    ILKD_CHECK(fs::exists(root), "missing folder " + root);
    ILKD_CHECK(!class_dirs.empty(), "no class directories given");
    ILKD_CHECK(test_fraction > 0 && test_fraction < 1, "test_fraction must be in (0,1)");

    Dataset ds;
    ds.name = "folder:" + fs::path(root).filename().string();
    ds.height = image_size;
    ds.width = image_size;
    ds.class_names = class_dirs;

    struct Img {
        std::vector<uint8_t> pix;
        int h, w, ch;
    };
    std::vector<std::vector<Img>> per_class(class_dirs.size());
    int channels = 0;
    for (size_t c = 0; c < class_dirs.size(); ++c) {
        const fs::path dir = fs::path(root) / class_dirs[c];
        ILKD_CHECK(fs::is_directory(dir), "missing class directory " + dir.string());
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file()) files.push_back(entry.path().string());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            Img img;
            if (!read_netpbm(f, img.pix, img.h, img.w, img.ch)) {
                ++ds.skipped_files;
                continue;
            }
            channels = std::max(channels, img.ch);
            per_class[c].push_back(std::move(img));
        }
        ILKD_CHECK(!per_class[c].empty(), "no readable images in " + dir.string());
    }
    ds.channels = channels;

    // nearest-neighbor resize into (C,H,W), expanding grayscale if mixed
    auto to_chw = [&](const Img& img, float* dst) {
        for (int ch = 0; ch < channels; ++ch) {
            const int src_ch = img.ch == channels ? ch : 0;
            for (int y = 0; y < image_size; ++y)
                for (int x = 0; x < image_size; ++x) {
                    const int sy = std::min(img.h - 1, y * img.h / image_size);
                    const int sx = std::min(img.w - 1, x * img.w / image_size);
                    dst[(ch * image_size + y) * image_size + x] =
                        img.pix[static_cast<size_t>((sy * img.w + sx) * img.ch + src_ch)] / 255.f;
                }
        }
    };

    // deterministic stratified split
    Rng rng = Rng::child(seed, "folder-split");
    std::vector<std::pair<int, const Img*>> train, test;
    for (size_t c = 0; c < per_class.size(); ++c) {
        std::vector<int> idx(per_class[c].size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        rng.shuffle(idx);
        int n_test = static_cast<int>(std::floor(test_fraction * static_cast<double>(idx.size())));
        n_test = std::clamp(n_test, 1, static_cast<int>(idx.size()) - 1);
        for (size_t i = 0; i < idx.size(); ++i) {
            auto& bucket = static_cast<int>(i) < n_test ? test : train;
            bucket.emplace_back(static_cast<int>(c), &per_class[c][static_cast<size_t>(idx[i])]);
        }
    }

    auto fill = [&](const std::vector<std::pair<int, const Img*>>& rows, Tensor<float>& images,
                    std::vector<int>& labels) {
        images = Tensor<float>({static_cast<int>(rows.size()), channels, image_size, image_size});
        for (size_t i = 0; i < rows.size(); ++i) {
            labels.push_back(rows[i].first);
            to_chw(*rows[i].second, images.data() + static_cast<int64_t>(i) * channels * image_size * image_size);
        }
    };
    fill(train, ds.train_images, ds.train_labels);
    fill(test, ds.test_images, ds.test_labels);
    ds.finalize();
    return ds;
}

// ---------------------------------------------------------------------------

Dataset load_dataset(const std::string& name, const std::string& data_root) {
    if (name == "synthetic-blobs") return load_synthetic_blobs();
    if (name == "cifar10") return load_cifar10(data_root + "/cifar10");
    if (name == "oct" || name == "octmnist")
        return load_medmnist_npz(data_root + "/octmnist.npz", "oct", {"CNV", "DME", "Drusen", "Normal"});
    if (name == "pathmnist") return load_medmnist_npz(data_root + "/pathmnist.npz", "pathmnist");
    if (name.rfind("folder:", 0) == 0) {
        const std::string rest = name.substr(7);
        const size_t colon = rest.find(':');
        ILKD_CHECK(colon != std::string::npos, "folder dataset needs folder:<root>:<dir0,dir1,...>");
        const std::string root = rest.substr(0, colon);
        std::vector<std::string> dirs;
        std::stringstream ss(rest.substr(colon + 1));
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) dirs.push_back(item);
        return image_folder_adapter(root, dirs);
    }
    fail("unknown dataset: " + name);
}

}  // namespace ilkd
