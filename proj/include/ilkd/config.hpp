#ifndef ILKD_CONFIG_HPP
#define ILKD_CONFIG_HPP

#include "ilkd/task_stream.hpp"

#include <cstdint>
#include <string>

namespace ilkd {

/// Everything a run needs, loadable from a JSON file. Defaults follow the
/// training recipe; desk-scale runs override dataset/backbone/epochs.
struct RunConfig {
    std::string dataset = "synthetic-blobs";
    std::string data_root;  // empty -> $ILKD_DATA_ROOT, then "data"
    SplitProtocol protocol;
    std::string backbone = "resnet18";
    std::string mode = "full";  // full | fam_only | cov_only | finetune | joint
    int epochs = 20;
    double lambda = 0.8;
    double lr_student = 1e-5;
    double lr_generator = 1e-3;
    double weight_decay = 1e-4;
    int batch_real = 64;     // b
    int batch_synth = 16;    // n
    int gen_steps = 3;       // n_g
    int student_steps = 20;  // n_s
    double margin = 0.2;
    uint64_t seed = 0;
    std::string out_dir = "runs/latest";
    int latent_dim = 100;
    int generator_width = 16;
    bool persist_generator = false;   // keep G across tasks instead of reinit
    bool channel_attention = false;   // attention over channels not pixels
    bool dump_synthetic = false;      // per-epoch synthetic grids

    void validate() const;
    std::string resolved_data_root() const;
    bool kd_mode() const { return mode == "full" || mode == "fam_only" || mode == "cov_only"; }

    /// Canonical JSON (stable key order); two equal configs serialize
    /// byte-identically.
    std::string to_json() const;
    static RunConfig from_json(const std::string& text);
    static RunConfig from_file(const std::string& path);
};

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace ilkd

#endif
