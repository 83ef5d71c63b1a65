#include "ilkd/task_stream.hpp"

#include "ilkd/random.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace ilkd {

void AccessAudit::note(int during_task, int accessed_task, bool train_split, int64_t count) {
    if (count <= 0) return;
    for (auto& e : entries_) {
        if (e.during_task == during_task && e.accessed_task == accessed_task && e.train_split == train_split) {
            e.count += count;
            return;
        }
    }
    entries_.push_back({during_task, accessed_task, train_split, count});
}

int64_t AccessAudit::past_task_train_reads() const {
    int64_t total = 0;
    for (const auto& e : entries_)
        if (e.train_split && e.accessed_task < e.during_task) total += e.count;
    return total;
}

void AccessAudit::save(std::ostream& os) const {
    io::write_u64(os, entries_.size());
    for (const auto& e : entries_) {
        io::write_i32(os, e.during_task);
        io::write_i32(os, e.accessed_task);
        io::write_i32(os, e.train_split ? 1 : 0);
        io::write_i64(os, e.count);
    }
}

void AccessAudit::load(std::istream& is) {
    entries_.clear();
    uint64_t n = io::read_u64(is);
    entries_.reserve(n);
    for (uint64_t i = 0; i < n; ++i) {
        Entry e;
        e.during_task = io::read_i32(is);
        e.accessed_task = io::read_i32(is);
        e.train_split = io::read_i32(is) != 0;
        e.count = io::read_i64(is);
        entries_.push_back(e);
    }
}

std::string AccessAudit::summary() const {
    std::ostringstream os;
    os << "{\"past_task_train_reads\":" << past_task_train_reads() << ",\"entries\":[";
    for (size_t i = 0; i < entries_.size(); ++i) {
        const auto& e = entries_[i];
        if (i) os << ",";
        os << "{\"during_task\":" << e.during_task << ",\"accessed_task\":" << e.accessed_task << ",\"split\":\""
           << (e.train_split ? "train" : "test") << "\",\"samples\":" << e.count << "}";
    }
    os << "]}";
    return os.str();
}

TaskStream::TaskStream(Dataset dataset, std::vector<TaskSpec> tasks, std::string protocol_desc)
    : data_(std::make_shared<const Dataset>(std::move(dataset))),
      tasks_(std::move(tasks)),
      protocol_desc_(std::move(protocol_desc)) {
    if (tasks_.empty()) fail("task stream has no tasks");
}

const TaskSpec& TaskStream::task(int k) const {
    if (k < 1 || k > total_tasks()) fail("task index out of range: " + std::to_string(k));
    return tasks_[static_cast<size_t>(k - 1)];
}

std::vector<int> TaskStream::classes_up_to(int k) const {
    if (k < 1 || k > total_tasks()) fail("task index out of range: " + std::to_string(k));
    std::vector<int> ids;
    for (int i = 0; i < k; ++i)
        ids.insert(ids.end(), tasks_[static_cast<size_t>(i)].class_ids.begin(), tasks_[static_cast<size_t>(i)].class_ids.end());
    std::sort(ids.begin(), ids.end());
    return ids;
}

LabeledBatch TaskStream::gather(const TaskSpec& task, bool train_split, const std::vector<int>& positions,
                                int during_task) {
    const auto& rows = train_split ? task.train_indices : task.test_indices;
    const Tensor<float>& images = train_split ? data_->train_images : data_->test_images;
    const auto& labels = train_split ? data_->train_labels : data_->test_labels;

    LabeledBatch batch;
    const int n = static_cast<int>(positions.size());
    batch.images = Tensor<float>({n, data_->channels, data_->height, data_->width});
    batch.labels.resize(static_cast<size_t>(n));
    const int64_t plane = static_cast<int64_t>(data_->channels) * data_->height * data_->width;
    for (int i = 0; i < n; ++i) {
        const int pos = positions[static_cast<size_t>(i)];
        if (pos < 0 || pos >= static_cast<int>(rows.size())) fail("gather position out of range");
        const int row = rows[static_cast<size_t>(pos)];
        std::copy_n(images.data() + row * plane, plane, batch.images.data() + i * plane);
        batch.labels[static_cast<size_t>(i)] = labels[static_cast<size_t>(row)];
    }
    audit_.note(during_task, task.task_index, train_split, n);
    return batch;
}

LabeledBatch TaskStream::full_split(const TaskSpec& task, bool train_split, int during_task) {
    const auto& rows = train_split ? task.train_indices : task.test_indices;
    std::vector<int> positions(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) positions[i] = static_cast<int>(i);
    return gather(task, train_split, positions, during_task);
}

std::vector<int> TaskStream::split_labels(const TaskSpec& task, bool train_split) const {
    const auto& rows = train_split ? task.train_indices : task.test_indices;
    const auto& labels = train_split ? data_->train_labels : data_->test_labels;
    std::vector<int> out(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) out[i] = labels[static_cast<size_t>(rows[i])];
    return out;
}

TaskSpec TaskStream::pooled_task() const {
    TaskSpec pooled;
    pooled.task_index = 1;
    for (const auto& t : tasks_) {
        pooled.class_ids.insert(pooled.class_ids.end(), t.class_ids.begin(), t.class_ids.end());
        pooled.train_indices.insert(pooled.train_indices.end(), t.train_indices.begin(), t.train_indices.end());
        pooled.test_indices.insert(pooled.test_indices.end(), t.test_indices.begin(), t.test_indices.end());
    }
    std::sort(pooled.class_ids.begin(), pooled.class_ids.end());
    std::sort(pooled.train_indices.begin(), pooled.train_indices.end());
    std::sort(pooled.test_indices.begin(), pooled.test_indices.end());
    return pooled;
}

std::vector<std::vector<int>> paper_partition(const std::string& dataset_name, int num_classes) {
    if (dataset_name == "cifar10") {
        if (num_classes != 10) fail("cifar10 partition expects 10 classes");
        return {{0, 1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
    }
    if (dataset_name == "oct" || dataset_name == "octmnist") {
        // labels: 0=CNV 1=DME 2=Drusen 3=Normal; first task is {Normal, CNV}
        if (num_classes != 4) fail("oct partition expects 4 classes");
        return {{3, 0}, {1}, {2}};
    }
    if (dataset_name == "pathmnist") {
        if (num_classes != 9) fail("pathmnist partition expects 9 classes");
        return {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}};
    }
    if (dataset_name == "synthetic-blobs") {
        if (num_classes != 4) fail("synthetic-blobs partition expects 4 classes");
        return {{0, 1}, {2, 3}};
    }
    if (dataset_name.rfind("folder:", 0) == 0) {
        if (num_classes == 4) return {{0, 3}, {1, 2}};
        // generic fallback: two halves in label order
        std::vector<std::vector<int>> parts(2);
        for (int c = 0; c < num_classes; ++c) parts[static_cast<size_t>(c * 2 / num_classes)].push_back(c);
        if (parts[1].empty()) fail("folder dataset needs at least 2 classes for the default split");
        return parts;
    }
    fail("no built-in split for dataset: " + dataset_name);
}

namespace {

void validate_partition(const std::vector<std::vector<int>>& partition, int num_classes, bool require_coverage) {
    if (partition.empty()) fail("empty class partition");
    std::set<int> seen;
    for (const auto& task : partition) {
        if (task.empty()) fail("partition contains an empty task");
        for (int c : task) {
            if (c < 0 || c >= num_classes) fail("partition references nonexistent class id " + std::to_string(c));
            if (!seen.insert(c).second) fail("class id " + std::to_string(c) + " appears in more than one task");
        }
    }
    if (require_coverage && static_cast<int>(seen.size()) != num_classes)
        fail("built-in split must cover every class exactly once");
}

}  // namespace

TaskStream build_task_stream(Dataset dataset, const SplitProtocol& protocol, uint64_t seed) {
    dataset.validate();
    const int num_classes = dataset.num_classes();

    std::vector<std::vector<int>> partition;
    bool require_coverage = false;
    if (protocol.kind == "paper") {
        partition = paper_partition(dataset.name, num_classes);
        require_coverage = true;
    } else if (protocol.kind == "custom") {
        partition = protocol.partition;
    } else {
        fail("unknown split protocol: " + protocol.kind);
    }

    if (protocol.permute_class_order) {
        // redistribute the class universe over the same task shape
        std::vector<int> order;
        for (const auto& task : partition) order.insert(order.end(), task.begin(), task.end());
        Rng rng = Rng::child(seed, "class-order");
        rng.shuffle(order);
        size_t at = 0;
        for (auto& task : partition)
            for (auto& c : task) c = order[at++];
    }
    validate_partition(partition, num_classes, require_coverage);

    std::vector<TaskSpec> tasks;
    tasks.reserve(partition.size());
    for (size_t k = 0; k < partition.size(); ++k) {
        TaskSpec t;
        t.task_index = static_cast<int>(k + 1);
        t.class_ids = partition[k];
        std::set<int> members(t.class_ids.begin(), t.class_ids.end());
        for (size_t i = 0; i < dataset.train_labels.size(); ++i)
            if (members.count(dataset.train_labels[i])) t.train_indices.push_back(static_cast<int>(i));
        for (size_t i = 0; i < dataset.test_labels.size(); ++i)
            if (members.count(dataset.test_labels[i])) t.test_indices.push_back(static_cast<int>(i));
        if (t.train_indices.empty()) fail("task " + std::to_string(t.task_index) + " has an empty train split");
        if (t.test_indices.empty()) fail("task " + std::to_string(t.task_index) + " has an empty test split");
        tasks.push_back(std::move(t));
    }

    std::ostringstream desc;
    desc << protocol.kind << ":[";
    for (size_t k = 0; k < partition.size(); ++k) {
        if (k) desc << ",";
        desc << "[";
        for (size_t i = 0; i < partition[k].size(); ++i) {
            if (i) desc << ",";
            desc << partition[k][i];
        }
        desc << "]";
    }
    desc << "]";
    return TaskStream(std::move(dataset), std::move(tasks), desc.str());
}

}  // namespace ilkd
