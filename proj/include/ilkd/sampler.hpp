#ifndef ILKD_SAMPLER_HPP
#define ILKD_SAMPLER_HPP

#include "ilkd/random.hpp"
#include "ilkd/task_stream.hpp"

#include <algorithm>
#include <map>
#include <vector>

namespace ilkd {

/// Class-balanced train-split sampler. Each batch spreads its slots over
/// P classes (P·Q ≈ batch) so batch-hard triplet mining always sees at
/// least two classes, and some class twice, whenever the task and batch
/// size permit. Per-class queues reshuffle on exhaustion; with
/// no_replacement set each call is instead a fresh draw without repeats.
class TaskSampler {
public:
    TaskSampler(TaskStream* stream, const TaskSpec& task, int batch_size, uint64_t seed, bool no_replacement = false)
        : stream_(stream), task_(task), batch_(batch_size), no_replacement_(no_replacement),
          rng_(Rng::child(seed, "sampler-task-" + std::to_string(task.task_index))) {
        if (batch_ < 1) fail("batch size must be >= 1");
        if (task_.train_indices.empty()) fail("cannot sample from an empty train split");
        std::map<int, std::vector<int>> by_class;
        const auto& labels = train_labels();
        for (size_t pos = 0; pos < task_.train_indices.size(); ++pos)
            by_class[labels[pos]].push_back(static_cast<int>(pos));
        for (auto& [cls, positions] : by_class) {
            classes_.push_back(cls);
            queues_.push_back({positions, {}, 0});
        }
        reshuffle_class_cycle();
        for (auto& q : queues_) reshuffle_queue(q);
    }

    int batch_size() const { return batch_; }
    int num_classes() const { return static_cast<int>(classes_.size()); }

    LabeledBatch next_batch() {
        const int c = num_classes();
        if (no_replacement_) {
            if (batch_ > static_cast<int>(task_.train_indices.size()))
                fail("batch size exceeds split size in no-replacement mode");
            for (auto& q : queues_) reshuffle_queue(q);
        }

        int p = std::min(c, std::max(1, batch_ / 2));
        if (c >= 2 && batch_ >= 2) p = std::max(p, 2);
        p = std::min(p, batch_);

        // pick the next p classes off the rotating cycle
        std::vector<int> chosen;
        chosen.reserve(static_cast<size_t>(p));
        for (int i = 0; i < p; ++i) chosen.push_back(next_class());

        std::vector<int> counts(static_cast<size_t>(p), batch_ / p);
        for (int i = 0; i < batch_ % p; ++i) counts[static_cast<size_t>(i)]++;
        if (no_replacement_) cap_counts(chosen, counts);

        std::vector<int> positions;
        positions.reserve(static_cast<size_t>(batch_));
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < counts[static_cast<size_t>(i)]; ++j)
                positions.push_back(draw(chosen[static_cast<size_t>(i)]));
        rng_.shuffle(positions);
        return stream_->gather(task_, true, positions, task_.task_index);
    }

private:
    struct Queue {
        std::vector<int> positions;
        std::vector<int> order;
        size_t cursor = 0;
    };

    const std::vector<int>& train_labels() {
        // labels aligned with task_.train_indices positions
        if (labels_cache_.empty()) labels_cache_ = stream_->split_labels(task_, true);
        return labels_cache_;
    }

    void reshuffle_queue(Queue& q) {
        q.order = q.positions;
        rng_.shuffle(q.order);
        q.cursor = 0;
    }

    void reshuffle_class_cycle() {
        cycle_.resize(queues_.size());
        for (size_t i = 0; i < cycle_.size(); ++i) cycle_[i] = static_cast<int>(i);
        rng_.shuffle(cycle_);
        cycle_cursor_ = 0;
    }

    int next_class() {
        if (cycle_cursor_ >= cycle_.size()) reshuffle_class_cycle();
        return cycle_[cycle_cursor_++];
    }

    int draw(int class_slot) {
        Queue& q = queues_[static_cast<size_t>(class_slot)];
        if (q.cursor >= q.order.size()) reshuffle_queue(q);
        return q.order[q.cursor++];
    }

    void cap_counts(const std::vector<int>& chosen, std::vector<int>& counts) {
        int overflow = 0;
        for (size_t i = 0; i < counts.size(); ++i) {
            const int avail = static_cast<int>(queues_[static_cast<size_t>(chosen[i])].positions.size());
            if (counts[i] > avail) {
                overflow += counts[i] - avail;
                counts[i] = avail;
            }
        }
        // hand surplus to classes with spare capacity, then to classes
        // outside the chosen set
        for (size_t i = 0; i < counts.size() && overflow > 0; ++i) {
            const int avail = static_cast<int>(queues_[static_cast<size_t>(chosen[i])].positions.size());
            const int take = std::min(overflow, avail - counts[i]);
            counts[i] += take;
            overflow -= take;
        }
        if (overflow > 0) fail("batch size exceeds split size in no-replacement mode");
    }

    TaskStream* stream_;
    TaskSpec task_;
    int batch_;
    bool no_replacement_;
    Rng rng_;
    std::vector<int> classes_;
    std::vector<Queue> queues_;
    std::vector<int> cycle_;
    size_t cycle_cursor_ = 0;
    std::vector<int> labels_cache_;
};

}  // namespace ilkd

#endif
