#ifndef ILKD_REPORT_HPP
#define ILKD_REPORT_HPP

#include "ilkd/config.hpp"

#include <string>
#include <vector>

namespace ilkd {

/// Everything a finished run directory tells us, parsed from its results
/// file. `error` is set instead when a run failed or never finished.
struct RunSummary {
    std::string run_dir;
    std::string dataset;
    std::string protocol;
    std::string mode;
    uint64_t seed = 0;
    double a_final = 0;
    std::vector<std::vector<double>> matrix;
    std::vector<double> sep_ratio;  // per task; NaN when undefined
    std::string error;

    bool ok() const { return error.empty(); }
};

RunSummary load_run_summary(const std::string& run_dir);

/// One line of the mode-comparison table: A_K across seeds.
struct SuiteRow {
    std::string mode;
    std::vector<double> a_finals;
    std::vector<std::string> failures;

    double mean() const;
    double stddev() const;  // sample standard deviation; 0 below two runs
};

/// Groups run summaries by mode, in the canonical order
/// {finetune, fam_only, cov_only, full, joint}, then any others.
std::vector<SuiteRow> aggregate_suite(const std::vector<RunSummary>& runs);

std::string render_suite_table(const std::vector<SuiteRow>& rows, const std::string& heading);

/// The reference tables, rendered as fixed-width text.
std::string render_citations();

/// Executes base configs across seeds 1..seeds (sequentially), each into
/// <out_root>/<config name>/seed<k>. Constituent failures become failure
/// rows instead of aborting the suite. Base configs may differ only in
/// mode and seed.
struct SuiteOutcome {
    std::vector<RunSummary> runs;
    std::vector<SuiteRow> rows;
    std::string table;
};
SuiteOutcome run_suite(const std::vector<std::pair<std::string, RunConfig>>& named_configs, int seeds,
                       const std::string& out_root);

/// Writes report.json plus accuracy, loss-curve, and separability charts
/// for the given run directories.
void emit_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

/// '*' and '?' wildcards in the final path component.
std::vector<std::string> expand_glob(const std::string& pattern);

}  // namespace ilkd

#endif
