#ifndef ILKD_EVAL_HPP
#define ILKD_EVAL_HPP

#include "ilkd/backbone.hpp"
#include "ilkd/centroids.hpp"
#include "ilkd/serialize.hpp"
#include "ilkd/task_stream.hpp"

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace ilkd {

/// a_{i,j}: test accuracy on task j after training through task i, plus
/// the sample count behind each entry. Incremental runs grow one row per
/// task (row i has i entries); a joint run stores a single row over all
/// tasks.
struct AccuracyMatrix {
    std::vector<std::vector<double>> rows;
    std::vector<std::vector<int>> counts;

    int num_rows() const { return static_cast<int>(rows.size()); }

    void append_row(std::vector<double> accs, std::vector<int> n) {
        ILKD_CHECK(!accs.empty() && accs.size() == n.size(), "malformed accuracy row");
        for (double a : accs) ILKD_CHECK(a >= 0.0 && a <= 1.0, "accuracy outside [0,1]");
        rows.push_back(std::move(accs));
        counts.push_back(std::move(n));
    }

    double at(int i, int j) const {  // 1-based, j <= i
        ILKD_CHECK(i >= 1 && i <= num_rows(), "row out of range");
        const auto& r = rows[static_cast<size_t>(i - 1)];
        ILKD_CHECK(j >= 1 && j <= static_cast<int>(r.size()), "column out of range");
        return r[static_cast<size_t>(j - 1)];
    }

    void save(std::ostream& os) const {
        io::write_u64(os, rows.size());
        for (size_t i = 0; i < rows.size(); ++i) {
            io::write_u64(os, rows[i].size());
            for (size_t j = 0; j < rows[i].size(); ++j) {
                io::write_f64(os, rows[i][j]);
                io::write_i32(os, counts[i][j]);
            }
        }
    }

    void load(std::istream& is) {
        rows.clear();
        counts.clear();
        const uint64_t n = io::read_u64(is);
        for (uint64_t i = 0; i < n; ++i) {
            const uint64_t m = io::read_u64(is);
            std::vector<double> r(m);
            std::vector<int> c(m);
            for (uint64_t j = 0; j < m; ++j) {
                r[j] = io::read_f64(is);
                c[j] = io::read_i32(is);
            }
            rows.push_back(std::move(r));
            counts.push_back(std::move(c));
        }
    }
};

/// A_K: unweighted mean of the final row.
inline double average_accuracy(const AccuracyMatrix& m) {
    ILKD_CHECK(!m.rows.empty(), "accuracy matrix is empty");
    const auto& last = m.rows.back();
    ILKD_CHECK(!last.empty(), "final row is empty");
    double s = 0;
    for (double a : last) s += a;
    return s / static_cast<double>(last.size());
}

/// Chunked inference embedding to bound peak memory.
template <typename T>
Tensor<T> embed_batches(const EmbeddingBackbone<T>& model, const Tensor<T>& images, int chunk = 128) {
    const int n = static_cast<int>(images.dim(0));
    const int64_t plane = images.numel() / std::max(n, 1);
    Tensor<T> z({n, model.embedding_dim()});
    for (int at = 0; at < n; at += chunk) {
        const int take = std::min(chunk, n - at);
        Tensor<T> part({take, static_cast<int>(images.dim(1)), static_cast<int>(images.dim(2)),
                        static_cast<int>(images.dim(3))});
        std::copy_n(images.data() + at * plane, take * plane, part.data());
        Tensor<T> pz = model.embed(part);
        std::copy_n(pz.data(), pz.numel(), z.data() + static_cast<int64_t>(at) * model.embedding_dim());
    }
    return z;
}

/// Accuracy of NCM classification over the full centroid store (every
/// class seen so far competes) on one task's test split.
inline std::pair<double, int> evaluate_split(const EmbeddingBackbone<float>& model, TaskStream& stream,
                                             const TaskSpec& task, const CentroidStore& store, int during_task) {
    LabeledBatch b = stream.full_split(task, false, during_task);
    ILKD_CHECK(b.size() > 0, "empty test split");
    Tensor<float> z = embed_batches(model, b.images);
    std::vector<int> pred = ncm_classify(z, store);
    int hits = 0;
    for (int i = 0; i < b.size(); ++i) hits += pred[static_cast<size_t>(i)] == b.labels[static_cast<size_t>(i)];
    return {static_cast<double>(hits) / b.size(), b.size()};
}

/// Row i of the accuracy matrix: a_{i,j} for every j <= i, classifying
/// over the union of all classes seen so far.
inline std::vector<double> evaluate_after_task(const EmbeddingBackbone<float>& model, TaskStream& stream,
                                               const CentroidStore& store, int upto, AccuracyMatrix& matrix) {
    ILKD_CHECK(upto >= 1 && upto <= stream.total_tasks(), "task index out of range");
    // the candidate set must be exactly the classes of tasks 1..upto
    std::vector<int> seen = stream.classes_up_to(upto);
    std::set<int> stored;
    for (const auto& r : store.records()) stored.insert(r.class_id);
    ILKD_CHECK(stored == std::set<int>(seen.begin(), seen.end()),
               "centroid store does not match the classes seen so far");

    std::vector<double> accs;
    std::vector<int> ns;
    for (int j = 1; j <= upto; ++j) {
        auto [acc, n] = evaluate_split(model, stream, stream.task(j), store, upto);
        accs.push_back(acc);
        ns.push_back(n);
    }
    matrix.append_row(accs, ns);
    return accs;
}

/// Render a fraction as the tables do: percent, two decimals.
inline std::string percent2(double fraction) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << fraction * 100.0;
    return os.str();
}

}  // namespace ilkd

#endif
