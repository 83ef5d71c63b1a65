#ifndef ILKD_TRAINER_HPP
#define ILKD_TRAINER_HPP

#include "ilkd/backbone.hpp"
#include "ilkd/centroids.hpp"
#include "ilkd/config.hpp"
#include "ilkd/distill.hpp"
#include "ilkd/eval.hpp"
#include "ilkd/generator.hpp"
#include "ilkd/nn/adam.hpp"
#include "ilkd/sampler.hpp"
#include "ilkd/task_stream.hpp"
#include "ilkd/triplet.hpp"

#include <array>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ilkd {

/// Raised when a loss turns non-finite; the message names the last saved
/// checkpoint so the run can restart from known-good state.
struct TrainingDiverged : std::runtime_error {
    explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename T>
struct StudentStepOpts {
    T lambda = T(0.8);
    T margin = T(0.2);
    bool fam_active = true;  // attention term contributes gradient + total
    bool cov_active = true;  // decorrelation term contributes gradient + total
    bool channel_attention = false;
    // pull target per class for batches without minable triplets; detached
    const std::map<int, std::vector<T>>* pull_centroids = nullptr;
};

template <typename T>
struct StudentLossParts {
    T tri = T(0);
    T fam = T(0);
    T cov = T(0);          // both sides, logged even when gated out
    T cov_teacher = T(0);  // constant part, zero gradient
    T d_e = T(0);
    T kd = T(0);     // the active part entering the total
    T total = T(0);  // tri + lambda*kd + d_e
    bool used_pull = false;
    bool finite() const {
        auto ok = [](T v) { return std::isfinite(static_cast<double>(v)); };
        return ok(tri) && ok(fam) && ok(cov) && ok(d_e) && ok(total);
    }
};

/// Mean squared distance to fixed class targets; the fallback current-task
/// loss when a batch has no valid triplets. Classes absent from the map
/// contribute nothing.
template <typename T>
T centroid_pull_loss(const Tensor<T>& z, const std::vector<int>& labels,
                     const std::map<int, std::vector<T>>& targets, Tensor<T>* dz) {
    const int n = static_cast<int>(z.dim(0)), d = static_cast<int>(z.dim(1));
    if (dz) *dz = Tensor<T>(z.shape(), T(0));
    T total = T(0);
    for (int i = 0; i < n; ++i) {
        auto it = targets.find(labels[static_cast<size_t>(i)]);
        if (it == targets.end()) continue;
        ILKD_CHECK(static_cast<int>(it->second.size()) == d, "pull centroid dimension mismatch");
        for (int c = 0; c < d; ++c) {
            const T diff = z(i, c) - it->second[static_cast<size_t>(c)];
            total += diff * diff / T(n);
            if (dz) (*dz)(i, c) = T(2) * diff / T(n);
        }
    }
    return total;
}

/// One evaluation of Eq.-style total loss with its full backward pass into
/// the student's parameter gradients (accumulated; caller zeroes first).
///
/// The current-task term is batch-hard triplet loss on the real batch.
/// When synthetic images are supplied (every task after the first), the KD
/// terms and the embedding-distance anchor are added on them, against
/// teacher feature maps and embeddings precomputed on the same frozen
/// synthetic batch. Synthetic samples never enter the triplet term.
template <typename T>
StudentLossParts<T> student_loss_and_backward(EmbeddingBackbone<T>& student, const Tensor<T>& real_images,
                                              const std::vector<int>& labels, const Tensor<T>& synth_images,
                                              const std::vector<Tensor<T>>& teacher_maps, const Tensor<T>& teacher_z,
                                              const StudentStepOpts<T>& opts, Tensor<T>* out_real_z = nullptr) {
    StudentLossParts<T> parts;

    nn::Tape<T> tape_real;
    Tensor<T> z_real = student.forward(real_images, &tape_real);
    std::vector<Triplet> trips = mine_triplets(z_real, labels);
    Tensor<T> dz_real;
    if (!trips.empty()) {
        parts.tri = triplet_loss(z_real, trips, opts.margin, &dz_real);
    } else if (opts.pull_centroids) {
        parts.tri = centroid_pull_loss(z_real, labels, *opts.pull_centroids, &dz_real);
        parts.used_pull = true;
    } else {
        dz_real = Tensor<T>(z_real.shape(), T(0));
    }
    student.backward(dz_real, {}, tape_real, false, true);
    if (out_real_z) *out_real_z = z_real;

    parts.total = parts.tri;
    if (!synth_images.empty()) {
        nn::Tape<T> tape_synth;
        std::vector<Tensor<T>> student_maps;
        Tensor<T> z_synth = student.forward(synth_images, &tape_synth, &student_maps);

        std::vector<Tensor<T>> dmaps;
        Tensor<T> dz_kd;
        KdLoss<T> kd = kd_loss(teacher_maps, student_maps, z_synth, teacher_z, &dmaps, &dz_kd, opts.fam_active,
                               opts.cov_active, opts.channel_attention);
        Tensor<T> dz_de;
        parts.d_e = embedding_distance(z_synth, teacher_z, &dz_de, static_cast<Tensor<T>*>(nullptr));

        parts.fam = kd.fam;
        parts.cov = kd.cov;
        parts.cov_teacher = kd.cov_teacher;
        parts.kd = (opts.fam_active ? kd.fam : T(0)) + (opts.cov_active ? kd.cov : T(0));

        Tensor<T> dz_total(z_synth.shape(), T(0));
        for (int64_t i = 0; i < dz_total.numel(); ++i) dz_total[i] = opts.lambda * dz_kd[i] + dz_de[i];
        for (auto& m : dmaps)
            for (int64_t i = 0; i < m.numel(); ++i) m[i] *= opts.lambda;
        student.backward(dz_total, dmaps, tape_synth, false, true);

        parts.total = parts.tri + opts.lambda * parts.kd + parts.d_e;
    }
    return parts;
}

/// Orchestrates the per-task loop: per epoch one latent draw, n_g
/// adversarial generator steps, then n_s student steps on fresh real
/// batches against the frozen synthetic batch. Emits a deterministic
/// metrics log and epoch-boundary checkpoints.
class Trainer {
public:
    explicit Trainer(const RunConfig& config);

    /// Continue from a checkpoint written by this config's run directory.
    /// With attach_logs=false the run directory is left untouched (no
    /// metrics truncation); such an instance can evaluate but not run().
    static Trainer resume(const std::string& checkpoint_path, bool attach_logs = true);

    /// Trains remaining tasks; a non-negative budget stops after that many
    /// training epochs (at a checkpoint boundary), leaving the run resumable.
    void run(int epoch_budget = -1);

    // introspection (used by evaluation and tests)
    const RunConfig& config() const { return cfg_; }
    TaskStream& stream() { return *stream_; }
    const AccuracyMatrix& matrix() const { return matrix_; }
    const CentroidStore& centroids() const { return centroids_; }
    EmbeddingBackbone<float>& student() { return *student_; }
    const EmbeddingBackbone<float>* teacher() const { return teacher_.get(); }
    uint64_t teacher_checksum() const { return teacher_ ? teacher_->checksum() : 0; }
    int next_task() const { return next_task_; }
    int next_epoch() const { return next_epoch_; }
    double final_average() const { return average_accuracy(matrix_); }
    std::string checkpoint_dir() const;
    std::string run_dir() const { return cfg_.out_dir; }

    void save_checkpoint(const std::string& path) const;

private:
    Trainer(const RunConfig& config, bool fresh);

    void boot_fresh();
    bool train_one_task(int k);  // false when the epoch budget ran out
    void finish_task(int k, const TaskSpec& task);
    StudentLossParts<float> student_step(int k, const LabeledBatch& real, const Tensor<float>& synth,
                                         const std::vector<Tensor<float>>& teacher_maps,
                                         const Tensor<float>& teacher_z);
    void update_pull_centroids(const Tensor<float>& z, const std::vector<int>& labels);
    void init_generator(int k);
    TaskSpec active_task(int k) const;
    int total_tasks() const;

    void open_metrics(bool truncate);
    void log_line(const std::string& line);
    int64_t metrics_bytes() const;
    void load_state(std::istream& is, bool attach_logs);
    void write_results_json() const;
    void dump_synthetic_grid(int k, int epoch, const Tensor<float>& synth) const;

    RunConfig cfg_;
    std::unique_ptr<TaskStream> stream_;
    std::unique_ptr<EmbeddingBackbone<float>> student_;
    std::unique_ptr<EmbeddingBackbone<float>> teacher_;
    std::unique_ptr<nn::Adam<float>> student_opt_;
    std::unique_ptr<ReplayGenerator<float>> generator_;
    std::unique_ptr<nn::Adam<float>> generator_opt_;
    CentroidStore centroids_;
    AccuracyMatrix matrix_;
    std::vector<std::array<double, 3>> sep_history_;  // intra, inter, ratio per task
    std::map<int, std::vector<float>> pull_centroids_;
    uint64_t teacher_checksum_ = 0;
    int next_task_ = 1;   // 1-based task to train next
    int next_epoch_ = 0;  // 0-based epoch within next_task_
    int budget_ = -1;     // transient; not checkpointed
    std::ofstream metrics_;
    std::string metrics_path_;
};

}  // namespace ilkd

#endif
