#include "ilkd/trainer.hpp"

#include "ilkd/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <sstream>

namespace fs = std::filesystem;

namespace ilkd {

namespace {

constexpr char kCkptMagic[8] = {'I', 'L', 'K', 'D', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(9) << v;
    return os.str();
}

std::string num_or_null(double v) { return std::isfinite(v) ? num(v) : "null"; }

std::string int_list(const std::vector<int>& xs) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
    os << "]";
    return os.str();
}

uint64_t derived_seed(uint64_t base, const std::string& tag) { return Rng::child(base, tag).next_u64(); }

void atomic_write(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        ILKD_CHECK(os.good(), "cannot write " + tmp);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        ILKD_CHECK(os.good(), "short write to " + tmp);
    }
    fs::rename(tmp, path);
}

}  // namespace

Trainer::Trainer(const RunConfig& config) : Trainer(config, true) {}

Trainer::Trainer(const RunConfig& config, bool fresh) : cfg_(config) {
    cfg_.validate();
    Dataset ds = load_dataset(cfg_.dataset, cfg_.resolved_data_root());
    stream_ = std::make_unique<TaskStream>(build_task_stream(std::move(ds), cfg_.protocol, cfg_.seed));
    const BackboneSpec spec = backbone_preset(cfg_.backbone, stream_->channels());
    student_ = std::make_unique<EmbeddingBackbone<float>>(spec, cfg_.seed);
    student_opt_ = std::make_unique<nn::Adam<float>>(student_->params(), static_cast<float>(cfg_.lr_student),
                                                     static_cast<float>(cfg_.weight_decay));
    if (fresh) boot_fresh();
}

int Trainer::total_tasks() const { return cfg_.mode == "joint" ? 1 : stream_->total_tasks(); }

TaskSpec Trainer::active_task(int k) const {
    if (cfg_.mode == "joint") {
        ILKD_CHECK(k == 1, "joint mode has a single pooled task");
        return stream_->pooled_task();
    }
    return stream_->task(k);
}

std::string Trainer::checkpoint_dir() const { return cfg_.out_dir + "/checkpoints"; }

void Trainer::boot_fresh() {
    fs::create_directories(cfg_.out_dir);
    fs::create_directories(checkpoint_dir());
    fs::create_directories(cfg_.out_dir + "/report");
    atomic_write(cfg_.out_dir + "/config.snapshot", cfg_.to_json());
    open_metrics(true);
    std::ostringstream os;
    os << "{\"event\":\"run_start\",\"dataset\":\"" << stream_->dataset_name() << "\",\"protocol\":\""
       << stream_->protocol_desc() << "\",\"mode\":\"" << cfg_.mode << "\",\"seed\":" << cfg_.seed
       << ",\"backbone\":\"" << cfg_.backbone << "\",\"epochs\":" << cfg_.epochs << ",\"lambda\":" << num(cfg_.lambda)
       << ",\"lr_student\":" << num(cfg_.lr_student) << ",\"lr_generator\":" << num(cfg_.lr_generator)
       << ",\"weight_decay\":" << num(cfg_.weight_decay) << ",\"batch_real\":" << cfg_.batch_real
       << ",\"batch_synth\":" << cfg_.batch_synth << ",\"gen_steps\":" << cfg_.gen_steps
       << ",\"student_steps\":" << cfg_.student_steps << ",\"margin\":" << num(cfg_.margin)
       << ",\"tasks\":" << stream_->total_tasks() << "}";
    log_line(os.str());
}

void Trainer::open_metrics(bool truncate) {
    metrics_path_ = cfg_.out_dir + "/metrics.log";
    metrics_.open(metrics_path_, truncate ? std::ios::trunc : std::ios::app);
    ILKD_CHECK(metrics_.good(), "cannot open " + metrics_path_);
}

void Trainer::log_line(const std::string& line) {
    metrics_ << line << '\n';
    metrics_.flush();
    ILKD_CHECK(metrics_.good(), "metrics write failed");
}

int64_t Trainer::metrics_bytes() const {
    std::error_code ec;
    const auto sz = fs::file_size(metrics_path_, ec);
    ILKD_CHECK(!ec, "cannot stat " + metrics_path_);
    return static_cast<int64_t>(sz);
}

void Trainer::init_generator(int k) {
    if (cfg_.persist_generator && generator_) return;  // carried across tasks
    GeneratorSpec gs;
    gs.latent_dim = cfg_.latent_dim;
    gs.out_channels = stream_->channels();
    gs.height = stream_->height();
    gs.width = stream_->width();
    gs.base_width = cfg_.generator_width;
    gs.range_lo = stream_->range_lo();
    gs.range_hi = stream_->range_hi();
    generator_ = std::make_unique<ReplayGenerator<float>>(gs, derived_seed(cfg_.seed, "generator-task-" + std::to_string(k)));
    generator_opt_ = std::make_unique<nn::Adam<float>>(generator_->params(), static_cast<float>(cfg_.lr_generator),
                                                       static_cast<float>(cfg_.weight_decay));
}

void Trainer::run(int epoch_budget) {
    const auto t0 = std::chrono::steady_clock::now();
    budget_ = epoch_budget;
    const int K = total_tasks();
    for (int k = next_task_; k <= K; ++k)
        if (!train_one_task(k)) break;
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    atomic_write(cfg_.out_dir + "/report/timing.json",
                 "{\"wall_clock_seconds\":" + num(elapsed) + "}\n");
}

bool Trainer::train_one_task(int k) {
    const TaskSpec task = active_task(k);
    const bool kd = k >= 2 && cfg_.kd_mode();
    if (kd) ILKD_CHECK(teacher_ != nullptr, "missing teacher for task " + std::to_string(k));

    if (next_epoch_ == 0) {
        std::ostringstream os;
        os << "{\"event\":\"task_start\",\"task\":" << k << ",\"classes\":" << int_list(task.class_ids)
           << ",\"train_size\":" << task.train_indices.size();
        if (kd)
            os << ",\"synth_real_ratio\":\"" << cfg_.batch_synth << ":" << cfg_.batch_real << "\"";
        os << "}";
        log_line(os.str());
        if (kd) init_generator(k);
    }

    for (int e = next_epoch_; e < cfg_.epochs; ++e) {
        if (budget_ == 0) return false;
        const std::string ke = std::to_string(k) + "-" + std::to_string(e);
        TaskSampler sampler(stream_.get(), task, cfg_.batch_real, derived_seed(cfg_.seed, "sampler-" + ke));

        Tensor<float> synth;
        std::vector<Tensor<float>> teacher_maps;
        Tensor<float> teacher_z;
        if (kd) {
            Rng zrng = Rng::child(cfg_.seed, "latent-" + ke);
            const Tensor<float> z = sample_latent<float>(cfg_.batch_synth, cfg_.latent_dim, zrng);
            for (int g = 0; g < cfg_.gen_steps; ++g) {
                GeneratorStepOut<float> out;
                try {
                    out = generator_step(*generator_, *student_, *teacher_, z, *generator_opt_);
                } catch (const std::runtime_error& err) {
                    throw TrainingDiverged(std::string(err.what()) + " (task " + std::to_string(k) + ", epoch " +
                                           std::to_string(e) + "); restart from " + checkpoint_dir() + "/latest.ckpt");
                }
                std::ostringstream os;
                os << "{\"event\":\"gen_step\",\"task\":" << k << ",\"epoch\":" << e << ",\"step\":" << g
                   << ",\"loss_g\":" << num(out.loss_g) << ",\"d_e\":" << num(out.d_e) << "}";
                log_line(os.str());
            }
            synth = generator_->generate(z);  // frozen for the student phase
            teacher_z = teacher_->forward(synth, nullptr, &teacher_maps);
            if (cfg_.dump_synthetic) dump_synthetic_grid(k, e, synth);
        }

        for (int s = 0; s < cfg_.student_steps; ++s) {
            LabeledBatch real = sampler.next_batch();
            StudentLossParts<float> parts = student_step(k, real, synth, teacher_maps, teacher_z);
            std::ostringstream os;
            os << "{\"event\":\"student_step\",\"task\":" << k << ",\"epoch\":" << e << ",\"step\":" << s
               << ",\"tri\":" << num(parts.tri) << ",\"fam\":" << num(parts.fam) << ",\"cov\":" << num(parts.cov)
               << ",\"cov_teacher\":" << num(parts.cov_teacher) << ",\"d_e\":" << num(parts.d_e)
               << ",\"kd\":" << num(parts.kd) << ",\"total\":" << num(parts.total)
               << ",\"pull\":" << (parts.used_pull ? "true" : "false") << "}";
            log_line(os.str());
        }

        std::ostringstream os;
        os << "{\"event\":\"epoch_end\",\"task\":" << k << ",\"epoch\":" << e
           << ",\"gen_steps\":" << (kd ? cfg_.gen_steps : 0) << ",\"student_steps\":" << cfg_.student_steps
           << ",\"teacher_checksum\":" << teacher_checksum() << ",\"student_checksum\":" << student_->checksum()
           << "}";
        log_line(os.str());

        next_epoch_ = e + 1;
        save_checkpoint(checkpoint_dir() + "/latest.ckpt");
        if (budget_ > 0) --budget_;
    }

    finish_task(k, task);
    return true;
}

StudentLossParts<float> Trainer::student_step(int k, const LabeledBatch& real, const Tensor<float>& synth,
                                              const std::vector<Tensor<float>>& teacher_maps,
                                              const Tensor<float>& teacher_z) {
    student_->zero_grad();
    StudentStepOpts<float> opts;
    opts.lambda = static_cast<float>(cfg_.lambda);
    opts.margin = static_cast<float>(cfg_.margin);
    opts.fam_active = cfg_.mode == "full" || cfg_.mode == "fam_only";
    opts.cov_active = cfg_.mode == "full" || cfg_.mode == "cov_only";
    opts.channel_attention = cfg_.channel_attention;
    opts.pull_centroids = &pull_centroids_;

    Tensor<float> z_real;
    StudentLossParts<float> parts = student_loss_and_backward(*student_, real.images, real.labels, synth,
                                                              teacher_maps, teacher_z, opts, &z_real);
    if (!parts.finite())
        throw TrainingDiverged("non-finite loss during task " + std::to_string(k) + "; restart from " +
                               checkpoint_dir() + "/latest.ckpt");
    student_opt_->step();
    update_pull_centroids(z_real, real.labels);
    return parts;
}

void Trainer::update_pull_centroids(const Tensor<float>& z, const std::vector<int>& labels) {
    const int d = static_cast<int>(z.dim(1));
    std::map<int, std::pair<std::vector<double>, int>> sums;
    for (size_t i = 0; i < labels.size(); ++i) {
        auto& [vec, cnt] = sums[labels[i]];
        vec.resize(static_cast<size_t>(d), 0.0);
        for (int c = 0; c < d; ++c) vec[static_cast<size_t>(c)] += z(static_cast<int>(i), c);
        ++cnt;
    }
    for (auto& [cls, acc] : sums) {
        auto& [vec, cnt] = acc;
        auto it = pull_centroids_.find(cls);
        if (it == pull_centroids_.end()) {
            std::vector<float> mean(static_cast<size_t>(d));
            for (int c = 0; c < d; ++c) mean[static_cast<size_t>(c)] = static_cast<float>(vec[static_cast<size_t>(c)] / cnt);
            pull_centroids_.emplace(cls, std::move(mean));
        } else {
            for (int c = 0; c < d; ++c) {
                const float mean = static_cast<float>(vec[static_cast<size_t>(c)] / cnt);
                it->second[static_cast<size_t>(c)] = 0.9f * it->second[static_cast<size_t>(c)] + 0.1f * mean;
            }
        }
    }
}

void Trainer::finish_task(int k, const TaskSpec& task) {
    // freeze this task's class centroids from its train split
    LabeledBatch train = stream_->full_split(task, true, k);
    Tensor<float> z = embed_batches(*student_, train.images);
    for (const auto& [cls, mu] : class_means(z, train.labels))
        centroids_.append(cls, task.task_index, std::vector<float>(mu.begin(), mu.end()));
    centroids_.save_file(cfg_.out_dir + "/centroids.bin");

    std::vector<double> row;
    if (cfg_.mode == "joint") {
        std::vector<double> accs;
        std::vector<int> ns;
        for (int j = 1; j <= stream_->total_tasks(); ++j) {
            auto [acc, n] = evaluate_split(*student_, *stream_, stream_->task(j), centroids_, k);
            accs.push_back(acc);
            ns.push_back(n);
        }
        matrix_.append_row(accs, ns);
        row = matrix_.rows.back();
    } else {
        row = evaluate_after_task(*student_, *stream_, centroids_, k, matrix_);
    }
    double row_mean = 0;
    for (double a : row) row_mean += a;
    row_mean /= static_cast<double>(row.size());

    // separability of everything seen so far, on test data (stride-capped)
    const int seen_tasks = cfg_.mode == "joint" ? stream_->total_tasks() : k;
    std::vector<float> flat;
    std::vector<int> flat_labels;
    const int dim = student_->embedding_dim();
    for (int j = 1; j <= seen_tasks; ++j) {
        LabeledBatch b = stream_->full_split(stream_->task(j), false, k);
        Tensor<float> zj = embed_batches(*student_, b.images);
        for (int i = 0; i < b.size(); ++i) {
            for (int c = 0; c < dim; ++c) flat.push_back(zj(i, c));
            flat_labels.push_back(b.labels[static_cast<size_t>(i)]);
        }
    }
    const int total = static_cast<int>(flat_labels.size());
    const int stride = (total + 999) / 1000;
    std::vector<int> kept_labels;
    std::vector<float> kept;
    for (int i = 0; i < total; i += stride) {
        kept.insert(kept.end(), flat.begin() + static_cast<int64_t>(i) * dim,
                    flat.begin() + static_cast<int64_t>(i + 1) * dim);
        kept_labels.push_back(flat_labels[static_cast<size_t>(i)]);
    }
    Tensor<float> zall({static_cast<int>(kept_labels.size()), dim});
    std::copy(kept.begin(), kept.end(), zall.data());
    Separability sep;
    const double undef = std::numeric_limits<double>::quiet_NaN();
    sep = {undef, undef, undef};
    if (separability_defined(kept_labels)) sep = separability_report(zall, kept_labels);
    sep_history_.push_back({sep.mean_intra, sep.mean_inter, sep.ratio});

    {
        std::ostringstream os;
        os << "{\"event\":\"task_end\",\"task\":" << k << ",\"row\":[";
        for (size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << num(row[j]);
        os << "],\"row_mean\":" << num(row_mean) << ",\"sep_intra\":" << num_or_null(sep.mean_intra)
           << ",\"sep_inter\":" << num_or_null(sep.mean_inter) << ",\"sep_ratio\":" << num_or_null(sep.ratio) << "}";
        log_line(os.str());
    }

    if (cfg_.mode != "joint") {
        if (!teacher_) teacher_ = std::make_unique<EmbeddingBackbone<float>>(student_->spec(), cfg_.seed);
        teacher_->copy_params_from(*student_);
        teacher_checksum_ = teacher_->checksum();
    }
    if (generator_) {
        std::ostringstream buf;
        generator_->save(buf);
        atomic_write(checkpoint_dir() + "/generator_task" + std::to_string(k) + ".bin", buf.str());
    }

    next_task_ = k + 1;
    next_epoch_ = 0;

    if (k == total_tasks()) {
        std::ostringstream os;
        os << "{\"event\":\"run_end\",\"a_final\":" << num(average_accuracy(matrix_))
           << ",\"audit_past_train_reads\":" << stream_->audit().past_task_train_reads() << "}";
        log_line(os.str());
        write_results_json();
        atomic_write(cfg_.out_dir + "/report/audit.json", stream_->audit().summary() + "\n");
    }

    save_checkpoint(checkpoint_dir() + "/task_" + std::to_string(k) + ".ckpt");
    save_checkpoint(checkpoint_dir() + "/latest.ckpt");
}

void Trainer::write_results_json() const {
    nlohmann::json j;
    j["A_K"] = average_accuracy(matrix_);
    j["dataset"] = stream_->dataset_name();
    j["protocol"] = stream_->protocol_desc();
    j["mode"] = cfg_.mode;
    j["seed"] = cfg_.seed;
    j["matrix"] = matrix_.rows;
    j["counts"] = matrix_.counts;
    std::vector<std::vector<int>> classes;
    for (const auto& t : stream_->tasks()) classes.push_back(t.class_ids);
    j["classes_per_task"] = classes;
    nlohmann::json sep = nlohmann::json::array();
    for (const auto& s : sep_history_) {
        nlohmann::json one;
        one["intra"] = std::isfinite(s[0]) ? nlohmann::json(s[0]) : nlohmann::json(nullptr);
        one["inter"] = std::isfinite(s[1]) ? nlohmann::json(s[1]) : nlohmann::json(nullptr);
        one["ratio"] = std::isfinite(s[2]) ? nlohmann::json(s[2]) : nlohmann::json(nullptr);
        sep.push_back(one);
    }
    j["separability"] = sep;
    j["audit_past_train_reads"] = stream_->audit().past_task_train_reads();
    atomic_write(cfg_.out_dir + "/results.json", j.dump(2) + "\n");
}

void Trainer::dump_synthetic_grid(int k, int epoch, const Tensor<float>& synth) const {
    // denormalize into bytes and tile into one PPM row-major grid
    const int n = static_cast<int>(synth.dim(0)), ch = static_cast<int>(synth.dim(1));
    const int h = static_cast<int>(synth.dim(2)), w = static_cast<int>(synth.dim(3));
    const int cols = 4, rows = (n + cols - 1) / cols;
    const auto& mean = stream_->pixel_mean();
    const auto& stddev = stream_->pixel_std();
    std::vector<uint8_t> rgb(static_cast<size_t>(rows * h) * (cols * w) * 3, 0);
    for (int i = 0; i < n; ++i) {
        const int gy = i / cols, gx = i % cols;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) {
                    const int sc = ch == 3 ? c : 0;
                    const float v = synth(i, sc, y, x) * stddev[static_cast<size_t>(sc)] + mean[static_cast<size_t>(sc)];
                    const int px = ((gy * h + y) * cols * w + gx * w + x) * 3 + c;
                    rgb[static_cast<size_t>(px)] = static_cast<uint8_t>(std::clamp(v, 0.f, 1.f) * 255.f);
                }
    }
    std::ostringstream os;
    os << "P6\n" << cols * w << " " << rows * h << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    atomic_write(cfg_.out_dir + "/report/synth_task" + std::to_string(k) + "_epoch" + std::to_string(epoch) + ".ppm",
                 os.str());
}

void Trainer::save_checkpoint(const std::string& path) const {
    std::ostringstream os(std::ios::binary);
    os.write(kCkptMagic, 8);
    io::write_u32(os, kCkptVersion);
    io::write_string(os, cfg_.to_json());
    io::write_i32(os, next_task_);
    io::write_i32(os, next_epoch_);

    student_->save(os);
    student_opt_->save(os);

    io::write_i32(os, teacher_ ? 1 : 0);
    if (teacher_) {
        teacher_->save(os);
        io::write_u64(os, teacher_checksum_);
    }

    io::write_i32(os, generator_ ? 1 : 0);
    if (generator_) {
        generator_->save(os);
        generator_opt_->save(os);
    }

    centroids_.save(os);
    matrix_.save(os);
    stream_->audit().save(os);

    io::write_u64(os, pull_centroids_.size());
    for (const auto& [cls, mu] : pull_centroids_) {
        io::write_i32(os, cls);
        io::write_u64(os, mu.size());
        for (float v : mu) io::write_f32(os, v);
    }

    io::write_u64(os, sep_history_.size());
    for (const auto& s : sep_history_) {
        io::write_f64(os, s[0]);
        io::write_f64(os, s[1]);
        io::write_f64(os, s[2]);
    }

    io::write_i64(os, metrics_bytes());
    atomic_write(path, os.str());
}

void Trainer::load_state(std::istream& is, bool attach_logs) {
    // caller verified magic/version and consumed the config
    next_task_ = io::read_i32(is);
    next_epoch_ = io::read_i32(is);

    student_->load(is);
    student_opt_->load(is);

    if (io::read_i32(is)) {
        teacher_ = std::make_unique<EmbeddingBackbone<float>>(student_->spec(), cfg_.seed);
        teacher_->load(is);
        teacher_checksum_ = io::read_u64(is);
        ILKD_CHECK(teacher_->checksum() == teacher_checksum_, "teacher checksum mismatch in checkpoint");
    }

    if (io::read_i32(is)) {
        init_generator(next_task_);  // geometry from config + stream; params overwritten
        generator_->load(is);
        generator_opt_->load(is);
    }

    centroids_ = CentroidStore::load(is);
    matrix_.load(is);
    stream_->audit().load(is);

    pull_centroids_.clear();
    const uint64_t npull = io::read_u64(is);
    for (uint64_t i = 0; i < npull; ++i) {
        const int cls = io::read_i32(is);
        const uint64_t d = io::read_u64(is);
        std::vector<float> mu(d);
        for (auto& v : mu) v = io::read_f32(is);
        pull_centroids_.emplace(cls, std::move(mu));
    }

    sep_history_.clear();
    const uint64_t nsep = io::read_u64(is);
    for (uint64_t i = 0; i < nsep; ++i) {
        std::array<double, 3> s{io::read_f64(is), io::read_f64(is), io::read_f64(is)};
        sep_history_.push_back(s);
    }

    const int64_t metrics_size = io::read_i64(is);
    metrics_path_ = cfg_.out_dir + "/metrics.log";
    if (!attach_logs) return;
    std::error_code ec;
    const auto current = fs::file_size(metrics_path_, ec);
    ILKD_CHECK(!ec, "run directory is missing its metrics log: " + metrics_path_);
    ILKD_CHECK(static_cast<int64_t>(current) >= metrics_size, "metrics log shorter than the checkpoint recorded");
    fs::resize_file(metrics_path_, static_cast<uintmax_t>(metrics_size));
    open_metrics(false);
}

Trainer Trainer::resume(const std::string& checkpoint_path, bool attach_logs) {
    std::ifstream is(checkpoint_path, std::ios::binary);
    ILKD_CHECK(is.good(), "cannot open checkpoint " + checkpoint_path);
    char magic[8];
    is.read(magic, 8);
    ILKD_CHECK(is.good() && std::memcmp(magic, kCkptMagic, 8) == 0, "not a checkpoint file: " + checkpoint_path);
    const uint32_t version = io::read_u32(is);
    ILKD_CHECK(version == kCkptVersion, "checkpoint schema version " + std::to_string(version) + " unsupported (want " +
                                            std::to_string(kCkptVersion) + ")");
    RunConfig cfg = RunConfig::from_json(io::read_string(is));
    Trainer t(cfg, /*fresh=*/false);
    t.load_state(is, attach_logs);
    ILKD_CHECK(is.good(), "truncated checkpoint " + checkpoint_path);
    return t;
}

}  // namespace ilkd
