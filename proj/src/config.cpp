#include "ilkd/config.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace ilkd {

using nlohmann::json;

void RunConfig::validate() const {
    ILKD_CHECK(lr_student > 0 && lr_generator > 0, "learning rates must be > 0");
    ILKD_CHECK(weight_decay >= 0, "weight decay must be >= 0");
    ILKD_CHECK(lambda >= 0, "lambda must be >= 0");
    ILKD_CHECK(margin > 0, "margin must be > 0");
    ILKD_CHECK(epochs >= 1, "epochs must be >= 1");
    ILKD_CHECK(batch_real >= 1 && batch_synth >= 1, "batch sizes must be >= 1");
    ILKD_CHECK(gen_steps >= 1 && student_steps >= 1, "step counts must be >= 1");
    ILKD_CHECK(student_steps > gen_steps, "student steps must exceed generator steps");
    ILKD_CHECK(latent_dim >= 1 && generator_width >= 2, "bad generator geometry");
    static const std::set<std::string> modes = {"full", "fam_only", "cov_only", "finetune", "joint"};
    ILKD_CHECK(modes.count(mode), "unrecognized mode: " + mode);
    ILKD_CHECK(protocol.kind == "paper" || protocol.kind == "custom", "unrecognized protocol kind: " + protocol.kind);
    ILKD_CHECK(protocol.kind != "custom" || !protocol.partition.empty(), "custom protocol needs a partition");
    ILKD_CHECK(!dataset.empty() && !out_dir.empty(), "dataset and out_dir are required");
}

std::string RunConfig::resolved_data_root() const {
    if (!data_root.empty()) return data_root;
    if (const char* env = std::getenv("ILKD_DATA_ROOT"); env && *env) return env;
    return "data";
}

std::string RunConfig::to_json() const {
    json j;
    j["backbone"] = backbone;
    j["batch_real"] = batch_real;
    j["batch_synth"] = batch_synth;
    j["channel_attention"] = channel_attention;
    j["data_root"] = data_root;
    j["dataset"] = dataset;
    j["dump_synthetic"] = dump_synthetic;
    j["epochs"] = epochs;
    j["gen_steps"] = gen_steps;
    j["generator_width"] = generator_width;
    j["lambda"] = lambda;
    j["latent_dim"] = latent_dim;
    j["lr_generator"] = lr_generator;
    j["lr_student"] = lr_student;
    j["margin"] = margin;
    j["mode"] = mode;
    j["out_dir"] = out_dir;
    j["persist_generator"] = persist_generator;
    j["protocol"] = {{"kind", protocol.kind},
                     {"partition", protocol.partition},
                     {"permute_class_order", protocol.permute_class_order}};
    j["seed"] = seed;
    j["student_steps"] = student_steps;
    j["weight_decay"] = weight_decay;
    return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        fail(std::string("config is not valid JSON: ") + e.what());
    }
    ILKD_CHECK(j.is_object(), "config root must be a JSON object");

    static const std::set<std::string> known = {
        "backbone",     "batch_real",        "batch_synth",  "channel_attention", "data_root",
        "dataset",      "dump_synthetic",    "epochs",       "gen_steps",         "generator_width",
        "lambda",       "latent_dim",        "lr_generator", "lr_student",        "margin",
        "mode",         "out_dir",           "persist_generator", "protocol",     "seed",
        "student_steps", "weight_decay"};
    for (auto it = j.begin(); it != j.end(); ++it)
        ILKD_CHECK(known.count(it.key()), "unknown config key: " + it.key());

    RunConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("backbone", c.backbone);
    get("batch_real", c.batch_real);
    get("batch_synth", c.batch_synth);
    get("channel_attention", c.channel_attention);
    get("data_root", c.data_root);
    get("dataset", c.dataset);
    get("dump_synthetic", c.dump_synthetic);
    get("epochs", c.epochs);
    get("gen_steps", c.gen_steps);
    get("generator_width", c.generator_width);
    get("lambda", c.lambda);
    get("latent_dim", c.latent_dim);
    get("lr_generator", c.lr_generator);
    get("lr_student", c.lr_student);
    get("margin", c.margin);
    get("mode", c.mode);
    get("out_dir", c.out_dir);
    get("persist_generator", c.persist_generator);
    get("seed", c.seed);
    get("student_steps", c.student_steps);
    get("weight_decay", c.weight_decay);
    if (j.contains("protocol")) {
        const json& p = j.at("protocol");
        ILKD_CHECK(p.is_object(), "protocol must be an object");
        for (auto it = p.begin(); it != p.end(); ++it)
            ILKD_CHECK(it.key() == "kind" || it.key() == "partition" || it.key() == "permute_class_order",
                       "unknown protocol key: " + it.key());
        if (p.contains("kind")) c.protocol.kind = p.at("kind").get<std::string>();
        if (p.contains("partition")) c.protocol.partition = p.at("partition").get<std::vector<std::vector<int>>>();
        if (p.contains("permute_class_order")) c.protocol.permute_class_order = p.at("permute_class_order").get<bool>();
    }
    c.validate();
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    ILKD_CHECK(is.good(), "cannot open config file " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return from_json(buf.str());
}

bool operator==(const RunConfig& a, const RunConfig& b) { return a.to_json() == b.to_json(); }

}  // namespace ilkd
