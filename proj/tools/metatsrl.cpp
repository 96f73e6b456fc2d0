#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "metatsrl/errors.hpp"
#include "metatsrl/harness.hpp"

namespace {

using nlohmann::json;
using namespace metatsrl;

int default_jobs() {
    if (const char* env = std::getenv("METATSRL_JOBS")) {
        try {
            const int v = std::stoi(env);
            if (v >= 1) return v;
        } catch (const std::exception&) {
        }
        std::cerr << "ignoring invalid METATSRL_JOBS='" << env << "'\n";
    }
    return 1;
}

json read_document(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("--config", "cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
    }
}

struct CommonFlags {
    std::string config;
    std::string out;
    std::vector<std::string> sets;
    std::string algos;
    long long seed = -1;
};

ExperimentConfig build_config(const CommonFlags& f) {
    json doc = read_document(f.config);
    for (const auto& s : f.sets) apply_override(doc, s);
    if (f.seed >= 0) doc["seed"] = static_cast<std::uint64_t>(f.seed);
    if (!f.out.empty()) doc["output_dir"] = f.out;
    if (!f.algos.empty()) {
        json list = json::array();
        std::string cur;
        for (char ch : f.algos + ",") {
            if (ch == ',') {
                if (!cur.empty()) list.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        doc["algorithms"] = list;
    }
    return parse_config(doc);
}

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "Experiment config (JSON)")->required();
    cmd->add_option("--set", f.sets, "Override a field: path.to.field=value")->take_all();
    cmd->add_option("--algos", f.algos, "Comma-separated algorithm list");
    cmd->add_option("--seed", f.seed, "Base seed")->check(CLI::NonNegativeNumber);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Meta Thompson-sampling RL benchmark harness"};
    app.require_subcommand(1);

    CommonFlags run_flags;
    bool quiet = false;
    int jobs = default_jobs();
    auto* run = app.add_subcommand("run", "Execute an experiment config");
    add_common(run, run_flags);
    run->add_option("--out", run_flags.out, "Output directory");
    run->add_flag("--quiet", quiet, "No progress output");
    run->add_option("--jobs", jobs, "Concurrent cells (default: METATSRL_JOBS or 1)")->check(CLI::PositiveNumber);

    CommonFlags val_flags;
    auto* validate = app.add_subcommand("validate", "Check a config without running it");
    add_common(validate, val_flags);

    std::string raw_path, curves_out;
    std::vector<std::string> curve_algos;
    auto* curves = app.add_subcommand("curves", "Compute regret curves from raw.csv");
    curves->add_option("raw", raw_path, "raw.csv path")->required();
    curves->add_option("--out", curves_out, "Output directory (default: alongside raw.csv)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const ExperimentConfig cfg = build_config(run_flags);
            RunOptions opt;
            opt.jobs = jobs;
            opt.quiet = quiet;
            opt.progress = &std::cerr;
            const ExperimentResult res = run_experiment(cfg, opt);
            json out = {{"status", "ok"},
                        {"output_dir", cfg.output_dir},
                        {"rows", res.rows.size()},
                        {"algorithms", res.summary["algorithms"]},
                        {"failures", res.summary["failures"].size()}};
            std::cout << out.dump(2) << std::endl;
        } else if (*validate) {
            const ExperimentConfig cfg = build_config(val_flags);
            std::cout << json{{"status", "ok"}, {"config", config_to_json(cfg)}}.dump(2) << std::endl;
        } else if (*curves) {
            namespace fs = std::filesystem;
            const auto rows = read_raw_csv(raw_path);
            std::vector<std::string> algos;
            for (const auto& r : rows)
                if (std::find(algos.begin(), algos.end(), r.algorithm) == algos.end()) algos.push_back(r.algorithm);
            const std::string dir = curves_out.empty() ? fs::path(raw_path).parent_path().string() : curves_out;
            std::vector<CurvePoint> bayes, meta;
            const bool have_oracle = std::find(algos.begin(), algos.end(), "meta_oracle") != algos.end();
            for (const auto& a : algos) {
                auto b = bayes_regret_curve(rows, a);
                bayes.insert(bayes.end(), b.begin(), b.end());
                if (have_oracle) {
                    auto m = meta_regret_curve(rows, a);
                    meta.insert(meta.end(), m.begin(), m.end());
                }
            }
            const fs::path base = dir.empty() ? fs::path(".") : fs::path(dir);
            write_curves_csv((base / "curves_bayes_regret.csv").string(), bayes);
            if (have_oracle) write_curves_csv((base / "curves_meta_regret.csv").string(), meta);
            json out = {{"status", "ok"}, {"rows", rows.size()}, {"summary", summarize(rows, algos)}};
            if (!have_oracle) out["warning"] = "no meta_oracle rows; meta-regret curves not written";
            std::cout << out.dump(2) << std::endl;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
