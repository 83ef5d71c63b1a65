#ifndef ILKD_DATASET_HPP
#define ILKD_DATASET_HPP

#include "ilkd/random.hpp"
#include "ilkd/tensor.hpp"

#include <string>
#include <vector>

namespace ilkd {

/// In-memory labeled image dataset with a fixed train/test split. Images
/// are loaded as raw [0,1] floats; finalize() computes per-channel
/// statistics over the training split and normalizes both splits in place.
struct Dataset {
    std::string name;
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<std::string> class_names;

    Tensor<float> train_images;  // (N, C, H, W)
    std::vector<int> train_labels;
    Tensor<float> test_images;
    std::vector<int> test_labels;

    std::vector<float> mean;  // per channel, from the train split
    std::vector<float> stddev;
    bool normalized = false;
    int skipped_files = 0;  // unreadable inputs skipped by adapters

    int num_classes() const { return static_cast<int>(class_names.size()); }
    int64_t train_size() const { return static_cast<int64_t>(train_labels.size()); }
    int64_t test_size() const { return static_cast<int64_t>(test_labels.size()); }

    /// Normalized pixel range per channel: image of [0,1] under
    /// (x - mean) / std.
    std::vector<float> range_lo() const;
    std::vector<float> range_hi() const;

    void finalize();
    void validate() const;
};

/// Procedural four-blob fixture: one colored Gaussian bump per class at a
/// class-specific position, over low noise. Small enough to train in
/// seconds, structured enough that an embedding must actually learn it.
Dataset load_synthetic_blobs(int classes = 4, int train_per_class = 150, int test_per_class = 50, int image_size = 16,
                             uint64_t seed = 1);

/// CIFAR-10 binary batches (data_batch_1..5.bin + test_batch.bin) under
/// `root`.
Dataset load_cifar10(const std::string& root);

/// MedMNIST-style .npz with train_images/train_labels/test_images/
/// test_labels, resized bilinearly to 32x32.
Dataset load_medmnist_npz(const std::string& npz_path, const std::string& name,
                          const std::vector<std::string>& class_names_hint = {});

/// Directory-per-class adapter over netpbm images (P2/P3/P5/P6), resized
/// (nearest neighbor) to `image_size`. Files that fail to parse are
/// skipped and counted. A deterministic stratified split holds out
/// `test_fraction` of each class.
Dataset image_folder_adapter(const std::string& root, const std::vector<std::string>& class_dirs,
                             double test_fraction = 0.2, int image_size = 32, uint64_t seed = 1);

/// Dispatch by name: "synthetic-blobs", "cifar10", "oct"/"octmnist",
/// "pathmnist", or "folder:<root>:<dir0,dir1,...>". `data_root` is
/// consulted for file-backed datasets.
Dataset load_dataset(const std::string& name, const std::string& data_root);

}  // namespace ilkd

#endif
