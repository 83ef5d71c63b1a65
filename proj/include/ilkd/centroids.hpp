#ifndef ILKD_CENTROIDS_HPP
#define ILKD_CENTROIDS_HPP

#include "ilkd/serialize.hpp"
#include "ilkd/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace ilkd {

/// Append-only store of frozen class centroids. A class's centroid is
/// written once, at the task where its data was last available, and never
/// recomputed as the backbone drifts.
class CentroidStore {
public:
    struct Record {
        int32_t class_id = -1;
        int32_t task_index = -1;
        std::vector<float> mu;
    };

    void append(int class_id, int task_index, std::vector<float> mu) {
        ILKD_CHECK(!contains(class_id), "centroid for class " + std::to_string(class_id) + " already stored");
        ILKD_CHECK(!mu.empty(), "empty centroid");
        if (!records_.empty())
            ILKD_CHECK(mu.size() == records_.front().mu.size(), "centroid dimension mismatch");
        records_.push_back({static_cast<int32_t>(class_id), static_cast<int32_t>(task_index), std::move(mu)});
    }

    bool contains(int class_id) const {
        for (const Record& r : records_)
            if (r.class_id == class_id) return true;
        return false;
    }

    const Record& at(int class_id) const {
        for (const Record& r : records_)
            if (r.class_id == class_id) return r;
        fail("no centroid for class " + std::to_string(class_id));
    }

    const std::vector<Record>& records() const { return records_; }
    size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    int dim() const { return records_.empty() ? 0 : static_cast<int>(records_.front().mu.size()); }

    /// Flat binary layout: magic, record count, dim, then per record
    /// (class_id: i32, task_index: i32, dim little-endian f32 values).
    void save(std::ostream& os) const {
        os.write(kMagic, 8);
        io::write_u32(os, static_cast<uint32_t>(records_.size()));
        io::write_u32(os, static_cast<uint32_t>(dim()));
        for (const Record& r : records_) {
            io::write_i32(os, r.class_id);
            io::write_i32(os, r.task_index);
            for (float f : r.mu) io::write_f32(os, f);
        }
    }

    static CentroidStore load(std::istream& is) {
        char magic[8];
        is.read(magic, 8);
        ILKD_CHECK(is.good() && std::string(magic, 8) == kMagic, "bad centroid file magic");
        const uint32_t count = io::read_u32(is);
        const uint32_t d = io::read_u32(is);
        CentroidStore store;
        for (uint32_t i = 0; i < count; ++i) {
            Record r;
            r.class_id = io::read_i32(is);
            r.task_index = io::read_i32(is);
            r.mu.resize(d);
            for (uint32_t j = 0; j < d; ++j) r.mu[j] = io::read_f32(is);
            store.records_.push_back(std::move(r));
        }
        return store;
    }

    void save_file(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        ILKD_CHECK(os.good(), "cannot write " + path);
        save(os);
    }

    static CentroidStore load_file(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        ILKD_CHECK(is.good(), "cannot read " + path);
        return load(is);
    }

    uint64_t checksum() const {
        uint64_t h = 1469598103934665603ull;
        for (const Record& r : records_) {
            h = io::hash_bytes(&r.class_id, sizeof r.class_id, h);
            h = io::hash_bytes(&r.task_index, sizeof r.task_index, h);
            h = io::hash_bytes(r.mu.data(), r.mu.size() * sizeof(float), h);
        }
        return h;
    }

private:
    static constexpr const char* kMagic = "ILKDCTR1";
    std::vector<Record> records_;
};

/// Per-class embedding means, accumulated in double. Keys come out sorted.
template <typename T>
std::map<int, std::vector<double>> class_means(const Tensor<T>& z, const std::vector<int>& labels) {
    const int n = z.dim(0), d = z.dim(1);
    ILKD_CHECK(static_cast<int>(labels.size()) == n, "labels/batch size mismatch");
    std::map<int, std::vector<double>> sums;
    std::map<int, int> counts;
    for (int i = 0; i < n; ++i) {
        auto& s = sums[labels[i]];
        if (s.empty()) s.assign(static_cast<size_t>(d), 0.0);
        const T* row = z.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j) s[static_cast<size_t>(j)] += static_cast<double>(row[j]);
        ++counts[labels[i]];
    }
    for (auto& [cls, s] : sums)
        for (double& v : s) v /= counts[cls];
    return sums;
}

/// Nearest-centroid prediction per row, Euclidean distance, ties to the
/// lowest class id. Scanning every record with the id tie-break makes the
/// result independent of store insertion order.
template <typename T>
std::vector<int> ncm_classify(const Tensor<T>& z, const CentroidStore& store) {
    ILKD_CHECK(!store.empty(), "empty centroid store");
    const int n = z.dim(0), d = z.dim(1);
    ILKD_CHECK(d == store.dim(), "embedding/centroid dimension mismatch");
    std::vector<int> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const T* row = z.data() + static_cast<int64_t>(i) * d;
        double best = std::numeric_limits<double>::infinity();
        int best_id = -1;
        for (const auto& r : store.records()) {
            double s = 0;
            for (int j = 0; j < d; ++j) {
                const double u = static_cast<double>(row[j]) - static_cast<double>(r.mu[static_cast<size_t>(j)]);
                s += u * u;
            }
            if (s < best || (s == best && r.class_id < best_id)) {
                best = s;
                best_id = r.class_id;
            }
        }
        out[static_cast<size_t>(i)] = best_id;
    }
    return out;
}

struct Separability {
    double mean_intra = 0;
    double mean_inter = 0;
    double ratio = 0;  // +inf sentinel when intra collapses to zero
};

inline bool separability_defined(const std::vector<int>& labels) {
    std::map<int, int> counts;
    for (int l : labels) ++counts[l];
    if (counts.size() < 2) return false;
    for (const auto& [cls, c] : counts)
        if (c < 2) return false;
    return true;
}

/// Mean pairwise Euclidean distance within and across classes. A tight
/// embedding of well-spread classes has ratio >> 1; ratio near or below 1
/// is the task-confusion regime.
template <typename T>
Separability separability_report(const Tensor<T>& z, const std::vector<int>& labels) {
    const int n = z.dim(0), d = z.dim(1);
    ILKD_CHECK(static_cast<int>(labels.size()) == n, "labels/batch size mismatch");
    ILKD_CHECK(separability_defined(labels), "separability needs >= 2 classes with >= 2 samples each");
    double intra = 0, inter = 0;
    int64_t n_intra = 0, n_inter = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double s = 0;
            const T* a = z.data() + static_cast<int64_t>(i) * d;
            const T* b = z.data() + static_cast<int64_t>(j) * d;
            for (int c = 0; c < d; ++c) {
                const double u = static_cast<double>(a[c]) - static_cast<double>(b[c]);
                s += u * u;
            }
            const double dist = std::sqrt(s);
            if (labels[i] == labels[j]) {
                intra += dist;
                ++n_intra;
            } else {
                inter += dist;
                ++n_inter;
            }
        }
    Separability out;
    out.mean_intra = intra / static_cast<double>(n_intra);
    out.mean_inter = inter / static_cast<double>(n_inter);
    out.ratio = out.mean_intra > 0 ? out.mean_inter / out.mean_intra : std::numeric_limits<double>::infinity();
    return out;
}

}  // namespace ilkd

#endif
