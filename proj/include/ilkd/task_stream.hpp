#ifndef ILKD_TASK_STREAM_HPP
#define ILKD_TASK_STREAM_HPP

#include "ilkd/dataset.hpp"
#include "ilkd/serialize.hpp"

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace ilkd {

struct TaskSpec {
    int task_index = 0;  // 1-based
    std::vector<int> class_ids;
    std::vector<int> train_indices;  // rows into the dataset arrays
    std::vector<int> test_indices;
};

struct LabeledBatch {
    Tensor<float> images;
    std::vector<int> labels;
    int size() const { return static_cast<int>(labels.size()); }
};

/// Aggregated log of dataset reads: who read which task's split while
/// training which task. The zero-shot contract is "no train-split read
/// from a task earlier than the one being trained".
class AccessAudit {
public:
    struct Entry {
        int during_task = 0;
        int accessed_task = 0;
        bool train_split = false;
        int64_t count = 0;
    };

    void note(int during_task, int accessed_task, bool train_split, int64_t count);
    const std::vector<Entry>& entries() const { return entries_; }
    int64_t past_task_train_reads() const;
    void save(std::ostream& os) const;
    void load(std::istream& is);
    std::string summary() const;

private:
    std::vector<Entry> entries_;
};

struct SplitProtocol {
    std::string kind = "paper";                // "paper" or "custom"
    std::vector<std::vector<int>> partition;   // used when kind == "custom"
    bool permute_class_order = false;          // multi-trial class-order shuffling
};

/// The incremental stream: an ordered task list over one normalized
/// dataset, with every image fetch funneled through the access audit.
class TaskStream {
public:
    TaskStream(Dataset dataset, std::vector<TaskSpec> tasks, std::string protocol_desc);

    const std::string& dataset_name() const { return data_->name; }
    const std::string& protocol_desc() const { return protocol_desc_; }
    int channels() const { return data_->channels; }
    int height() const { return data_->height; }
    int width() const { return data_->width; }
    int total_tasks() const { return static_cast<int>(tasks_.size()); }
    const std::vector<TaskSpec>& tasks() const { return tasks_; }
    const TaskSpec& task(int k) const;  // 1-based
    const std::vector<std::string>& class_names() const { return data_->class_names; }
    const std::vector<float>& pixel_mean() const { return data_->mean; }
    const std::vector<float>& pixel_std() const { return data_->stddev; }
    std::vector<float> range_lo() const { return data_->range_lo(); }
    std::vector<float> range_hi() const { return data_->range_hi(); }

    /// All class ids seen in tasks 1..k, ascending.
    std::vector<int> classes_up_to(int k) const;

    /// Copy the given positions (offsets into the task's split) into a
    /// batch. Every call is recorded against `during_task`.
    LabeledBatch gather(const TaskSpec& task, bool train_split, const std::vector<int>& positions, int during_task);

    /// Whole split of one task, audited.
    LabeledBatch full_split(const TaskSpec& task, bool train_split, int during_task);

    /// Labels only, aligned with the split's positions. Metadata — not
    /// counted as a sample read.
    std::vector<int> split_labels(const TaskSpec& task, bool train_split) const;

    /// A pooled pseudo-task covering every class and sample (the joint
    /// upper bound). Carries task_index 1.
    TaskSpec pooled_task() const;

    AccessAudit& audit() { return audit_; }
    const AccessAudit& audit() const { return audit_; }

private:
    std::shared_ptr<const Dataset> data_;
    std::vector<TaskSpec> tasks_;
    std::string protocol_desc_;
    AccessAudit audit_;
};

/// Builds the stream for a dataset: the paper's split for built-ins, or an
/// explicit partition. With permute_class_order set, the class universe is
/// permuted by `seed` before the partition shape is applied (the
/// multi-trial protocol); otherwise the split is used as written.
TaskStream build_task_stream(Dataset dataset, const SplitProtocol& protocol, uint64_t seed);

/// The paper's partition for a named dataset.
std::vector<std::vector<int>> paper_partition(const std::string& dataset_name, int num_classes);

}  // namespace ilkd

#endif
