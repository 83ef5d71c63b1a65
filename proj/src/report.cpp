#include "ilkd/report.hpp"

#include "ilkd/eval.hpp"
#include "ilkd/paper_constants.hpp"
#include "ilkd/tensor.hpp"
#include "ilkd/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <regex>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace ilkd {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

json parse_file(const std::string& path) {
    std::ifstream is(path);
    ILKD_CHECK(is.good(), "cannot read " + path);
    return json::parse(is);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    ILKD_CHECK(os.good(), "cannot write " + path);
    os << text;
    ILKD_CHECK(os.good(), "short write to " + path);
}

std::string fmt(double v, int prec = 2) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

// -------------------------------------------------------------- svg charts

struct Series {
    std::string label;
    std::vector<std::array<double, 2>> pts;
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

std::string line_chart(const std::string& title, const std::string& xlab, const std::string& ylab,
                       const std::vector<Series>& series) {
    const double W = 760, H = 440, L = 64, R = 150, T = 40, B = 48;
    const double pw = W - L - R, ph = H - T - B;

    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool any = false;
    for (const auto& s : series)
        for (const auto& p : s.pts) {
            if (!std::isfinite(p[0]) || !std::isfinite(p[1])) continue;
            if (!any) {
                xmin = xmax = p[0];
                ymin = ymax = p[1];
                any = true;
            }
            xmin = std::min(xmin, p[0]);
            xmax = std::max(xmax, p[0]);
            ymin = std::min(ymin, p[1]);
            ymax = std::max(ymax, p[1]);
        }
    if (xmax - xmin < 1e-12) { xmin -= 0.5; xmax += 0.5; }
    if (ymax - ymin < 1e-12) { ymin -= 1.0; ymax += 1.0; }
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return T + ph - (y - ymin) / (ymax - ymin) * ph; };

    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
       << svg_escape(title) << "</text>\n";

    for (int i = 0; i <= 5; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 5, yv = ymin + (ymax - ymin) * i / 5;
        os << "<line x1=\"" << px(xv) << "\" y1=\"" << T << "\" x2=\"" << px(xv) << "\" y2=\"" << T + ph
           << "\" stroke=\"#e0e0e0\"/>\n";
        os << "<line x1=\"" << L << "\" y1=\"" << py(yv) << "\" x2=\"" << L + pw << "\" y2=\"" << py(yv)
           << "\" stroke=\"#e0e0e0\"/>\n";
        os << "<text x=\"" << px(xv) << "\" y=\"" << T + ph + 18
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(xv, 1) << "</text>\n";
        os << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(yv, 1) << "</text>\n";
    }
    os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << svg_escape(xlab)
       << "</text>\n";
    os << "<text x=\"16\" y=\"" << T + ph / 2
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
       << T + ph / 2 << ")\">" << svg_escape(ylab) << "</text>\n";

    if (!any)
        os << "<text x=\"" << L + pw / 2 << "\" y=\"" << T + ph / 2
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" fill=\"#888\">no data</text>\n";

    int ci = 0;
    double ly = T + 8;
    for (const auto& s : series) {
        const char* color = kPalette[ci++ % 10];
        std::ostringstream pl;
        bool open = false;
        int finite = 0;
        for (const auto& p : s.pts) {
            if (!std::isfinite(p[0]) || !std::isfinite(p[1])) {
                if (open) { os << "<polyline points=\"" << pl.str() << "\" fill=\"none\" stroke=\"" << color
                               << "\" stroke-width=\"1.6\"/>\n"; pl.str(""); open = false; }
                continue;
            }
            pl << px(p[0]) << "," << py(p[1]) << " ";
            open = true;
            ++finite;
        }
        if (open)
            os << "<polyline points=\"" << pl.str() << "\" fill=\"none\" stroke=\"" << color
               << "\" stroke-width=\"1.6\"/>\n";
        if (finite <= 64)
            for (const auto& p : s.pts)
                if (std::isfinite(p[0]) && std::isfinite(p[1]))
                    os << "<circle cx=\"" << px(p[0]) << "\" cy=\"" << py(p[1]) << "\" r=\"3\" fill=\"" << color
                       << "\"/>\n";
        os << "<rect x=\"" << L + pw + 10 << "\" y=\"" << ly << "\" width=\"12\" height=\"12\" fill=\"" << color
           << "\"/>\n";
        os << "<text x=\"" << L + pw + 26 << "\" y=\"" << ly + 10
           << "\" font-family=\"sans-serif\" font-size=\"11\">" << svg_escape(s.label) << "</text>\n";
        ly += 18;
    }
    os << "</svg>\n";
    return os.str();
}

// -------------------------------------------------------------- aggregation

int mode_rank(const std::string& mode) {
    const std::vector<std::string> order = {"finetune", "fam_only", "cov_only", "full", "joint"};
    for (size_t i = 0; i < order.size(); ++i)
        if (mode == order[i]) return static_cast<int>(i);
    return static_cast<int>(order.size());
}

std::vector<json> read_metric_events(const std::string& path) {
    std::vector<json> out;
    std::ifstream is(path);
    if (!is.good()) return out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (!j.is_discarded()) out.push_back(std::move(j));
    }
    return out;
}

json summary_to_json(const RunSummary& r) {
    json j;
    j["run_dir"] = r.run_dir;
    if (!r.ok()) {
        j["error"] = r.error;
        j["mode"] = r.mode;
        j["seed"] = r.seed;
        return j;
    }
    j["dataset"] = r.dataset;
    j["protocol"] = r.protocol;
    j["mode"] = r.mode;
    j["seed"] = r.seed;
    j["A_K"] = r.a_final;
    j["matrix"] = r.matrix;
    json sep = json::array();
    for (double v : r.sep_ratio) sep.push_back(std::isfinite(v) ? json(v) : json(nullptr));
    j["sep_ratio"] = sep;
    return j;
}

json cited_to_json(const cited::CitedTable& t) {
    json j;
    j["title"] = t.title;
    j["columns"] = t.columns;
    j["rows"] = t.rows;
    j["provenance"] = "paper-reported";
    return j;
}

}  // namespace

RunSummary load_run_summary(const std::string& run_dir) {
    RunSummary r;
    r.run_dir = run_dir;
    const json j = parse_file(run_dir + "/results.json");
    r.dataset = j.at("dataset").get<std::string>();
    r.protocol = j.at("protocol").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.a_final = j.at("A_K").get<double>();
    r.matrix = j.at("matrix").get<std::vector<std::vector<double>>>();
    for (const auto& s : j.at("separability"))
        r.sep_ratio.push_back(s.at("ratio").is_null() ? kNaN : s.at("ratio").get<double>());

    ILKD_CHECK(!r.matrix.empty(), "empty accuracy matrix in " + run_dir);
    double mean = 0;
    for (double a : r.matrix.back()) mean += a;
    mean /= static_cast<double>(r.matrix.back().size());
    ILKD_CHECK(std::abs(mean - r.a_final) < 1e-12, "stored accuracy disagrees with its matrix in " + run_dir);
    return r;
}

double SuiteRow::mean() const {
    if (a_finals.empty()) return kNaN;
    double s = 0;
    for (double a : a_finals) s += a;
    return s / static_cast<double>(a_finals.size());
}

double SuiteRow::stddev() const {
    if (a_finals.size() < 2) return 0;
    const double m = mean();
    double s = 0;
    for (double a : a_finals) s += (a - m) * (a - m);
    return std::sqrt(s / static_cast<double>(a_finals.size() - 1));
}

std::vector<SuiteRow> aggregate_suite(const std::vector<RunSummary>& runs) {
    std::vector<SuiteRow> rows;
    auto row_for = [&](const std::string& mode) -> SuiteRow& {
        for (auto& r : rows)
            if (r.mode == mode) return r;
        rows.push_back(SuiteRow{mode, {}, {}});
        return rows.back();
    };
    for (const auto& r : runs) {
        SuiteRow& row = row_for(r.mode);
        if (r.ok()) row.a_finals.push_back(r.a_final);
        else row.failures.push_back(r.error);
    }
    std::stable_sort(rows.begin(), rows.end(), [](const SuiteRow& a, const SuiteRow& b) {
        const int ra = mode_rank(a.mode), rb = mode_rank(b.mode);
        return ra != rb ? ra < rb : a.mode < b.mode;
    });
    return rows;
}

std::string render_suite_table(const std::vector<SuiteRow>& rows, const std::string& heading) {
    std::ostringstream os;
    os << heading << "\n";
    os << std::left << std::setw(12) << "mode" << std::right << std::setw(6) << "runs" << std::setw(15)
       << "A_K mean (%)" << std::setw(15) << "A_K std (pts)" << "  notes\n";
    os << std::string(12 + 6 + 15 + 15 + 7, '-') << "\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(12) << r.mode << std::right << std::setw(6) << r.a_finals.size();
        if (r.a_finals.empty()) os << std::setw(15) << "-" << std::setw(15) << "-";
        else os << std::setw(15) << percent2(r.mean()) << std::setw(15) << fmt(100.0 * r.stddev());
        if (!r.failures.empty()) os << "  " << r.failures.size() << " failed: " << r.failures.front();
        os << "\n";
    }
    return os.str();
}

std::string render_citations() {
    std::ostringstream os;
    for (const cited::CitedTable* t : cited::all_reference_tables()) {
        os << t->title << "\n";
        std::vector<size_t> width(t->columns.size());
        for (size_t c = 0; c < t->columns.size(); ++c) {
            width[c] = t->columns[c].size();
            for (const auto& row : t->rows) width[c] = std::max(width[c], row[c].size());
        }
        auto line = [&](const std::vector<std::string>& cells) {
            for (size_t c = 0; c < cells.size(); ++c) {
                if (c == 0) os << std::left << std::setw(static_cast<int>(width[c]) + 2) << cells[c];
                else os << std::right << std::setw(static_cast<int>(width[c]) + 2) << cells[c];
            }
            os << "\n";
        };
        line(t->columns);
        size_t total = 0;
        for (size_t w : width) total += w + 2;
        os << std::string(total, '-') << "\n";
        for (const auto& row : t->rows) line(row);
        os << "\n";
    }
    return os.str();
}

SuiteOutcome run_suite(const std::vector<std::pair<std::string, RunConfig>>& named_configs, int seeds,
                       const std::string& out_root) {
    ILKD_CHECK(!named_configs.empty(), "suite needs at least one config");
    ILKD_CHECK(seeds >= 1, "suite needs at least one seed");
    auto normalized = [](RunConfig c) {
        c.mode = "full";
        c.seed = 0;
        c.out_dir = "normalized";
        return c.to_json();
    };
    const std::string base = normalized(named_configs.front().second);
    for (const auto& [name, cfg] : named_configs)
        ILKD_CHECK(normalized(cfg) == base, "suite configs may differ only in mode and seed (" + name + " diverges)");

    SuiteOutcome out;
    for (const auto& [name, base_cfg] : named_configs) {
        for (int s = 1; s <= seeds; ++s) {
            RunConfig cfg = base_cfg;
            cfg.seed = static_cast<uint64_t>(s);
            cfg.out_dir = out_root + "/" + name + "/seed" + std::to_string(s);
            RunSummary summary;
            try {
                Trainer trainer(cfg);
                trainer.run();
                summary = load_run_summary(cfg.out_dir);
            } catch (const std::exception& e) {
                summary = RunSummary{};
                summary.run_dir = cfg.out_dir;
                summary.mode = cfg.mode;
                summary.seed = cfg.seed;
                summary.error = e.what();
            }
            out.runs.push_back(std::move(summary));
        }
    }
    out.rows = aggregate_suite(out.runs);
    const std::string dataset = named_configs.front().second.dataset;
    out.table = render_suite_table(out.rows, "A_K by mode on " + dataset + " (" + std::to_string(seeds) + " seeds)");

    fs::create_directories(out_root);
    json j;
    j["seeds"] = seeds;
    j["dataset"] = dataset;
    json runs = json::array();
    for (const auto& r : out.runs) runs.push_back(summary_to_json(r));
    j["runs"] = runs;
    json rows = json::array();
    for (const auto& r : out.rows) {
        json row;
        row["mode"] = r.mode;
        row["a_finals"] = r.a_finals;
        row["mean"] = r.a_finals.empty() ? json(nullptr) : json(r.mean());
        row["stddev"] = r.a_finals.empty() ? json(nullptr) : json(r.stddev());
        row["failures"] = r.failures;
        rows.push_back(row);
    }
    j["table"] = rows;
    json cites = json::array();
    for (const cited::CitedTable* t : cited::all_reference_tables()) cites.push_back(cited_to_json(*t));
    j["citations"] = cites;
    write_text(out_root + "/suite.json", j.dump(2) + "\n");
    write_text(out_root + "/suite.txt", out.table + "\n" + render_citations());
    return out;
}

void emit_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    ILKD_CHECK(!run_dirs.empty(), "report needs at least one run directory");
    fs::create_directories(out_dir);

    std::vector<RunSummary> runs;
    for (const auto& dir : run_dirs) {
        try {
            runs.push_back(load_run_summary(dir));
        } catch (const std::exception& e) {
            RunSummary r;
            r.run_dir = dir;
            r.error = e.what();
            runs.push_back(std::move(r));
        }
    }

    json j;
    json jr = json::array();
    for (const auto& r : runs) jr.push_back(summary_to_json(r));
    j["runs"] = jr;
    json rows = json::array();
    for (const auto& r : aggregate_suite(runs)) {
        json row;
        row["mode"] = r.mode;
        row["a_finals"] = r.a_finals;
        row["failures"] = r.failures;
        rows.push_back(row);
    }
    j["by_mode"] = rows;
    json cites = json::array();
    for (const cited::CitedTable* t : cited::all_reference_tables()) cites.push_back(cited_to_json(*t));
    j["citations"] = cites;
    write_text(out_dir + "/report.json", j.dump(2) + "\n");

    // task-wise average accuracy, one series per run
    std::vector<Series> acc;
    for (const auto& r : runs) {
        if (!r.ok()) continue;
        Series s;
        s.label = r.mode + " seed " + std::to_string(r.seed);
        for (size_t i = 0; i < r.matrix.size(); ++i) {
            double m = 0;
            for (double a : r.matrix[i]) m += a;
            m /= static_cast<double>(r.matrix[i].size());
            s.pts.push_back({static_cast<double>(i + 1), 100.0 * m});
        }
        acc.push_back(std::move(s));
    }
    write_text(out_dir + "/accuracy_per_task.svg",
               line_chart("Average accuracy after each task", "task", "A_k (%)", acc));

    // loss components from the first readable metrics log
    std::vector<Series> loss;
    for (const auto& r : runs) {
        if (!r.ok()) continue;
        const auto events = read_metric_events(r.run_dir + "/metrics.log");
        std::vector<std::string> keys = {"tri", "fam", "cov", "d_e", "total"};
        std::vector<std::vector<std::array<double, 2>>> pts(keys.size());
        int step = 0;
        for (const auto& e : events) {
            if (e.value("event", "") != "student_step") continue;
            for (size_t i = 0; i < keys.size(); ++i)
                pts[i].push_back({static_cast<double>(step), e.at(keys[i]).get<double>()});
            ++step;
        }
        if (step == 0) continue;
        const int stride = std::max(1, step / 300);
        for (size_t i = 0; i < keys.size(); ++i) {
            Series s;
            s.label = keys[i];
            for (size_t p = 0; p < pts[i].size(); p += static_cast<size_t>(stride)) s.pts.push_back(pts[i][p]);
            loss.push_back(std::move(s));
        }
        loss.push_back(Series{"(run: " + r.mode + " seed " + std::to_string(r.seed) + ")", {}});
        break;
    }
    write_text(out_dir + "/loss_curves.svg", line_chart("Loss components per student step", "step", "loss", loss));

    std::vector<Series> sep;
    for (const auto& r : runs) {
        if (!r.ok()) continue;
        Series s;
        s.label = r.mode + " seed " + std::to_string(r.seed);
        for (size_t i = 0; i < r.sep_ratio.size(); ++i)
            s.pts.push_back({static_cast<double>(i + 1), r.sep_ratio[i]});
        sep.push_back(std::move(s));
    }
    write_text(out_dir + "/separability.svg",
               line_chart("Inter/intra class distance ratio", "task", "ratio", sep));
}

std::vector<std::string> expand_glob(const std::string& pattern) {
    const fs::path p(pattern);
    const std::string name = p.filename().string();
    if (name.find('*') == std::string::npos && name.find('?') == std::string::npos)
        return fs::exists(p) ? std::vector<std::string>{pattern} : std::vector<std::string>{};

    std::string rx;
    for (char c : name) {
        if (c == '*') rx += ".*";
        else if (c == '?') rx += ".";
        else if (std::string("\\^$.|()[]{}+").find(c) != std::string::npos) { rx += '\\'; rx += c; }
        else rx += c;
    }
    const fs::path dir = p.parent_path().empty() ? fs::path(".") : p.parent_path();
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) return out;
    const std::regex re(rx);
    for (const auto& entry : fs::directory_iterator(dir))
        if ((entry.is_regular_file() || entry.is_directory()) &&
            std::regex_match(entry.path().filename().string(), re))
            out.push_back(entry.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace ilkd
