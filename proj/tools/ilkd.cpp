#include <CLI11.hpp>
#include <json.hpp>

#include "ilkd/eval.hpp"
#include "ilkd/report.hpp"
#include "ilkd/trainer.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

using namespace ilkd;
namespace fs = std::filesystem;

namespace {

void print_matrix(const AccuracyMatrix& m) {
    std::cout << "accuracy matrix a_{i,j} (%):\n";
    for (size_t i = 0; i < m.rows.size(); ++i) {
        std::cout << "  after task " << i + 1 << ":";
        for (double a : m.rows[i]) std::cout << "  " << percent2(a);
        std::cout << "\n";
    }
}

int cmd_train(const std::string& config_path, const std::string& resume_path, const std::string& mode,
              uint64_t seed, bool seed_set) {
    if (!resume_path.empty()) {
        if (!mode.empty() || seed_set)
            throw std::runtime_error("--mode/--seed cannot be overridden on resume; the checkpoint's config applies");
        Trainer t = Trainer::resume(resume_path);
        if (!config_path.empty()) {
            const RunConfig given = RunConfig::from_file(config_path);
            if (!(given == t.config()))
                throw std::runtime_error("--config disagrees with the checkpoint; resume uses the checkpoint's config");
        }
        std::cout << "resuming " << t.run_dir() << " at task " << t.next_task() << ", epoch " << t.next_epoch()
                  << "\n";
        t.run();
        print_matrix(t.matrix());
        std::cout << "A_K = " << percent2(t.final_average()) << "%  (" << t.run_dir() << "/results.json)\n";
        return 0;
    }

    if (config_path.empty()) throw std::runtime_error("train needs --config (or --resume)");
    RunConfig cfg = RunConfig::from_file(config_path);
    if (!mode.empty()) cfg.mode = mode;
    if (seed_set) cfg.seed = seed;
    cfg.validate();

    Trainer t(cfg);
    t.run();
    print_matrix(t.matrix());
    std::cout << "A_K = " << percent2(t.final_average()) << "%  (" << cfg.out_dir << "/results.json)\n";
    return 0;
}

int cmd_evaluate(const std::string& run_dir) {
    const std::string ckpt = run_dir + "/checkpoints/latest.ckpt";
    Trainer t = Trainer::resume(ckpt, /*attach_logs=*/false);
    const int done = static_cast<int>(t.matrix().rows.size());
    if (done == 0) {
        std::cout << "no completed task yet (next: task " << t.next_task() << ", epoch " << t.next_epoch() << ")\n";
        return 0;
    }

    std::vector<double> fresh;
    const bool joint = t.config().mode == "joint";
    const int splits = joint ? t.stream().total_tasks() : done;
    for (int j = 1; j <= splits; ++j) {
        auto [acc, n] = evaluate_split(t.student(), t.stream(), t.stream().task(j), t.centroids(),
                                       joint ? 1 : done);
        (void)n;
        fresh.push_back(acc);
    }
    const std::vector<double>& stored = t.matrix().rows.back();
    bool match = stored.size() == fresh.size();
    for (size_t j = 0; match && j < fresh.size(); ++j) match = std::abs(fresh[j] - stored[j]) < 1e-12;

    print_matrix(t.matrix());
    std::cout << "re-evaluated row " << done << ":";
    for (double a : fresh) std::cout << "  " << percent2(a);
    std::cout << "\n";
    std::cout << "stored row " << (match ? "reproduced" : "MISMATCH") << "\n";
    std::cout << "A_K = " << percent2(t.final_average()) << "%  over " << done << " task(s), mode "
              << t.config().mode << ", seed " << t.config().seed << "\n";

    fs::create_directories(run_dir + "/report");
    nlohmann::json j;
    j["checkpoint"] = ckpt;
    j["tasks_done"] = done;
    j["A_K"] = t.final_average();
    j["stored_last_row"] = stored;
    j["recomputed_last_row"] = fresh;
    j["reproduced"] = match;
    std::ofstream os(run_dir + "/report/evaluate.json", std::ios::trunc);
    os << j.dump(2) << "\n";
    if (!os.good()) throw std::runtime_error("cannot write " + run_dir + "/report/evaluate.json");
    std::cout << "wrote " << run_dir << "/report/evaluate.json\n";
    return match ? 0 : 1;
}

int cmd_suite(const std::string& glob, int seeds, const std::string& out) {
    const auto paths = expand_glob(glob);
    if (paths.empty()) throw std::runtime_error("no config files match " + glob);
    std::vector<std::pair<std::string, RunConfig>> named;
    for (const auto& p : paths) named.emplace_back(fs::path(p).stem().string(), RunConfig::from_file(p));

    const SuiteOutcome outcome = run_suite(named, seeds, out);
    std::cout << outcome.table << "\n" << render_citations();
    std::cout << "wrote " << out << "/suite.json and " << out << "/suite.txt\n";
    for (const auto& r : outcome.runs)
        if (!r.ok()) std::cout << "failed: " << r.run_dir << ": " << r.error << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out) {
    std::vector<std::string> dirs;
    for (const auto& r : runs) {
        auto hits = expand_glob(r);
        if (hits.empty()) throw std::runtime_error("no run directory matches " + r);
        dirs.insert(dirs.end(), hits.begin(), hits.end());
    }
    emit_report(dirs, out);
    std::cout << "wrote " << out << "/report.json plus accuracy_per_task.svg, loss_curves.svg, separability.svg\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"incremental metric learning with data-free distillation"};
    app.require_subcommand(1);

    std::string config_path, resume_path, mode;
    uint64_t seed = 0;
    auto* train = app.add_subcommand("train", "train a run from a config file, or continue a checkpoint");
    train->add_option("--config", config_path, "run configuration (JSON)");
    train->add_option("--resume", resume_path, "checkpoint to continue from");
    train->add_option("--mode", mode, "override: full|fam_only|cov_only|finetune|joint");
    auto* seed_opt = train->add_option("--seed", seed, "override the config seed");

    std::string run_dir;
    auto* evaluate = app.add_subcommand("evaluate", "re-evaluate a run directory from its latest checkpoint");
    evaluate->add_option("--run", run_dir, "run directory")->required();

    std::string glob, suite_out = "runs/suite";
    int seeds = 1;
    auto* suite = app.add_subcommand("suite", "run a set of configs across seeds and tabulate A_K by mode");
    suite->add_option("--configs", glob, "config files (glob in the final component)")->required();
    suite->add_option("--seeds", seeds, "number of seeds (1..N)")->required();
    suite->add_option("--out", suite_out, "output root");

    std::vector<std::string> report_runs;
    std::string report_out;
    auto* report = app.add_subcommand("report", "aggregate finished runs into a report with charts");
    report->add_option("--runs", report_runs, "run directories (globs allowed)")->required();
    report->add_option("--out", report_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path, resume_path, mode, seed, seed_opt->count() > 0);
        if (evaluate->parsed()) return cmd_evaluate(run_dir);
        if (suite->parsed()) return cmd_suite(glob, seeds, suite_out);
        if (report->parsed()) return cmd_report(report_runs, report_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
