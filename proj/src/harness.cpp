#include "metatsrl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "metatsrl/errors.hpp"

namespace metatsrl {

using nlohmann::json;

// ------------------------------------------------------------------ config

namespace {

// Reads fields of one JSON object, remembering which keys were consumed so
// that leftovers can be reported as unknown.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }
    const json& sub(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    template <class T>
    T get(const std::string& key, T fallback) {
        if (!has(key)) return fallback;
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(field(key), "has the wrong type");
        }
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown field");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

int get_count(ObjectReader& r, const std::string& key, int fallback, int min_value = 1) {
    const json probe = r.has(key) ? r.sub(key) : json(fallback);
    if (!probe.is_number_integer()) throw ConfigError(r.field(key), "must be an integer");
    const long long v = probe.get<long long>();
    if (v < min_value || v > 100000000) throw ConfigError(r.field(key), "must be at least " + std::to_string(min_value));
    return static_cast<int>(v);
}

double get_real(ObjectReader& r, const std::string& key, double fallback) {
    const double v = r.get<double>(key, fallback);
    if (!std::isfinite(v)) throw ConfigError(r.field(key), "must be finite");
    return v;
}

std::optional<int> get_auto_count(ObjectReader& r, const std::string& key) {
    if (!r.has(key)) return std::nullopt;
    const json& v = r.sub(key);
    if (v.is_string() && v.get<std::string>() == "auto") return std::nullopt;
    if (!v.is_number_integer()) throw ConfigError(r.field(key), "must be an integer or \"auto\"");
    return v.get<int>();
}

BetaSchedule parse_beta(const json& j, const std::string& path) {
    ObjectReader r(j, path);
    const std::string kind = r.get<std::string>("kind", "constant");
    BetaSchedule b;
    if (kind == "constant") {
        b = BetaSchedule::constant(get_real(r, "value", 1.0));
    } else if (kind == "linear") {
        b = BetaSchedule::linear(get_real(r, "c0", 1e-3));
    } else if (kind == "theory") {
        b = BetaSchedule::theory(get_real(r, "nu_bar", 1.0));
    } else {
        throw ConfigError(path + ".kind", "must be constant, linear or theory");
    }
    if (b.kind != BetaSchedule::Kind::Theory && !(b.param > 0.0))
        throw ConfigError(path, "schedule must produce beta_n > 0");
    r.finish();
    return b;
}

json beta_to_json(const BetaSchedule& b) {
    switch (b.kind) {
        case BetaSchedule::Kind::Constant:
            return {{"kind", "constant"}, {"value", b.param}};
        case BetaSchedule::Kind::Linear:
            return {{"kind", "linear"}, {"c0", b.param}};
        case BetaSchedule::Kind::Theory:
            return {{"kind", "theory"}, {"nu_bar", b.param}};
    }
    return {};
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
    ExperimentConfig cfg;
    ObjectReader root(doc, "");

    if (!root.has("environment")) throw ConfigError("environment", "is required");
    {
        ObjectReader env(root.sub("environment"), "environment");
        cfg.env_kind = env.get<std::string>("kind", "synthetic");
        if (cfg.env_kind == "synthetic") {
            auto& p = cfg.synthetic;
            p.num_states = get_count(env, "num_states", p.num_states);
            p.num_actions = get_count(env, "num_actions", p.num_actions);
            p.horizon = get_count(env, "horizon", p.horizon);
            p.reward_low = get_real(env, "reward_low", p.reward_low);
            p.reward_high = get_real(env, "reward_high", p.reward_high);
            p.sigma = get_real(env, "sigma", p.sigma);
            p.transition_mix = get_real(env, "transition_mix", p.transition_mix);
            if (!(p.transition_mix >= 0.0 && p.transition_mix <= 1.0))
                throw ConfigError("environment.transition_mix", "must lie in [0, 1]");
            if (!(p.reward_low >= 0.0 && p.reward_low <= p.reward_high && p.reward_high <= 1.0))
                throw ConfigError("environment.reward_low", "reward range must satisfy 0 <= low <= high <= 1");
            if (!(p.sigma > 0.0)) throw ConfigError("environment.sigma", "must be positive");
        } else if (cfg.env_kind == "recommendation") {
            auto& p = cfg.recommendation;
            p.products = get_count(env, "products", p.products);
            p.horizon = get_count(env, "horizon", p.horizon);
            p.c = get_real(env, "c", p.c);
            p.prior_samples = get_count(env, "prior_samples", p.prior_samples, 2);
            p.budget = env.get<long long>("budget", p.budget);
            if (env.has("lambda0_bound")) cfg.lambda0_bound = get_real(env, "lambda0_bound", 0.0);
            if (p.horizon > p.products) throw ConfigError("environment.horizon", "cannot exceed products");
            if (!(p.c > 0.0)) throw ConfigError("environment.c", "must be positive");
            const long long count = recommendation_state_count(p.products, p.horizon);
            if (count > p.budget)
                throw ConfigError("environment.budget",
                                  "state count " + std::to_string(count) + " exceeds the budget");
        } else {
            throw ConfigError("environment.kind", "must be synthetic or recommendation");
        }
        env.finish();
    }

    if (!root.has("algorithms")) throw ConfigError("algorithms", "is required");
    const json& algos = root.sub("algorithms");
    if (!algos.is_array() || algos.empty()) throw ConfigError("algorithms", "must be a nonempty list");
    for (std::size_t i = 0; i < algos.size(); ++i) {
        const std::string field = "algorithms[" + std::to_string(i) + "]";
        if (!algos[i].is_string()) throw ConfigError(field, "must be a string");
        const std::string name = algos[i].get<std::string>();
        const auto& known = known_algorithms();
        if (std::find(known.begin(), known.end(), name) == known.end())
            throw ConfigError(field, "unknown algorithm '" + name + "'");
        if (std::find(cfg.algorithms.begin(), cfg.algorithms.end(), name) == cfg.algorithms.end())
            cfg.algorithms.push_back(name);
    }

    MetaConfig& m = cfg.meta;
    m.K = get_count(root, "K", 10);
    m.N = get_count(root, "N", 10);
    cfg.instances = get_count(root, "instances", 1);
    cfg.runs_per_instance = get_count(root, "runs_per_instance", 1);
    if (root.has("seed")) {
        const json& s = root.sub("seed");
        if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() && s.get<long long>() < 0))
            throw ConfigError("seed", "must be a nonnegative integer");
        cfg.seed = s.get<std::uint64_t>();
    }
    cfg.output_dir = root.get<std::string>("output_dir", cfg.output_dir);
    cfg.write_meta_runs = root.get<bool>("write_meta_runs", cfg.write_meta_runs);

    AgentConfig& a = m.agent;
    a.lambda = 1.0;
    a.lambda_e = 1.0;
    if (root.has("agent")) {
        ObjectReader ar(root.sub("agent"), "agent");
        a.lambda = get_real(ar, "lambda", a.lambda);
        a.lambda_e = get_real(ar, "lambda_e", a.lambda_e);
        if (ar.has("beta")) a.beta = parse_beta(ar.sub("beta"), "agent.beta");
        if (ar.has("max_init_episodes")) a.max_init_episodes = get_count(ar, "max_init_episodes", 0, 0);
        a.target_noise = ar.get<bool>("target_noise", false);
        ar.finish();
    }
    if (!(a.lambda > 0.0)) throw ConfigError("agent.lambda", "must be positive");
    if (!(a.lambda_e >= 0.0)) throw ConfigError("agent.lambda_e", "must be nonnegative");

    if (root.has("meta")) {
        ObjectReader mr(root.sub("meta"), "meta");
        m.w = get_real(mr, "w", m.w);
        m.K0 = get_auto_count(mr, "K0");
        m.K1 = get_auto_count(mr, "K1");
        if (mr.has("theory")) {
            ObjectReader tr(mr.sub("theory"), "meta.theory");
            TheoryConstants t;
            t.c1 = get_real(tr, "c1", t.c1);
            t.c2 = get_real(tr, "c2", t.c2);
            t.c3 = get_real(tr, "c3", t.c3);
            t.lambda0 = get_real(tr, "lambda0", t.lambda0);
            if (!(t.lambda0 > 0.0)) throw ConfigError("meta.theory.lambda0", "must be positive");
            tr.finish();
            m.theory = t;
        }
        m.paired_oracle_seeds = mr.get<bool>("paired_oracle_seeds", m.paired_oracle_seeds);
        m.cov_includes_exploration = mr.get<bool>("cov_includes_exploration", m.cov_includes_exploration);
        const std::string rank = mr.get<std::string>("ols_rank", "min_norm");
        if (rank == "min_norm")
            m.ols_rank = RankPolicy::MinNorm;
        else if (rank == "strict")
            m.ols_rank = RankPolicy::Strict;
        else
            throw ConfigError("meta.ols_rank", "must be min_norm or strict");
        if (mr.has("N1")) m.n1 = get_count(mr, "N1", 1, 0);
        mr.finish();
    }
    if (!(m.w >= 0.0)) throw ConfigError("meta.w", "must be nonnegative");
    root.finish();

    const int H = cfg.env_kind == "synthetic" ? cfg.synthetic.horizon : cfg.recommendation.horizon;
    const int M = cfg.env_kind == "synthetic" ? cfg.synthetic.num_states * cfg.synthetic.num_actions
                                              : cfg.recommendation.products * (cfg.recommendation.products + 1);
    int k1 = 0;
    try {
        resolve_k0(m, H, M);
        k1 = resolve_k1(m, H, M);
    } catch (const ConfigError& e) {
        throw ConfigError("meta." + e.field(), "must lie in [1, K]");
    }
    const bool uses_cov = std::find(cfg.algorithms.begin(), cfg.algorithms.end(), "mtsrl_plus") !=
                              cfg.algorithms.end() ||
                          std::find(cfg.algorithms.begin(), cfg.algorithms.end(), "tsbd-meta") != cfg.algorithms.end();
    if (uses_cov && k1 < 3 && m.K > k1)
        throw ConfigError("meta.K1", "must be at least 3 when K exceeds it (covariance estimate)");
    return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
    json env;
    if (cfg.env_kind == "synthetic") {
        const auto& p = cfg.synthetic;
        env = {{"kind", "synthetic"},         {"num_states", p.num_states}, {"num_actions", p.num_actions},
               {"horizon", p.horizon},        {"reward_low", p.reward_low}, {"reward_high", p.reward_high},
               {"sigma", p.sigma},            {"transition_mix", p.transition_mix}};
    } else {
        const auto& p = cfg.recommendation;
        env = {{"kind", "recommendation"}, {"products", p.products},
               {"horizon", p.horizon},     {"c", p.c},
               {"prior_samples", p.prior_samples}, {"budget", p.budget}};
        if (cfg.lambda0_bound) env["lambda0_bound"] = *cfg.lambda0_bound;
    }
    const MetaConfig& m = cfg.meta;
    const AgentConfig& a = m.agent;
    json agent = {{"lambda", a.lambda}, {"lambda_e", a.lambda_e}, {"beta", beta_to_json(a.beta)},
                  {"target_noise", a.target_noise}};
    agent["max_init_episodes"] = a.max_init_episodes ? json(*a.max_init_episodes) : json(nullptr);
    json meta = {{"w", m.w},
                 {"K0", m.K0 ? json(*m.K0) : json("auto")},
                 {"K1", m.K1 ? json(*m.K1) : json("auto")},
                 {"paired_oracle_seeds", m.paired_oracle_seeds},
                 {"cov_includes_exploration", m.cov_includes_exploration},
                 {"ols_rank", m.ols_rank == RankPolicy::MinNorm ? "min_norm" : "strict"}};
    meta["theory"] = m.theory ? json{{"c1", m.theory->c1}, {"c2", m.theory->c2}, {"c3", m.theory->c3},
                                     {"lambda0", m.theory->lambda0}}
                              : json(nullptr);
    meta["N1"] = m.n1 ? json(*m.n1) : json(nullptr);
    return {{"environment", env},
            {"algorithms", cfg.algorithms},
            {"K", m.K},
            {"N", m.N},
            {"agent", agent},
            {"meta", meta},
            {"instances", cfg.instances},
            {"runs_per_instance", cfg.runs_per_instance},
            {"seed", cfg.seed},
            {"output_dir", cfg.output_dir},
            {"write_meta_runs", cfg.write_meta_runs}};
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("--config", "cannot open " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
    }
    return parse_config(doc);
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like path=value");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    std::string pointer;
    std::stringstream ss(path);
    for (std::string part; std::getline(ss, part, '.');) {
        if (part.empty()) throw ConfigError(path, "empty path component");
        pointer += "/" + part;
    }
    doc[json::json_pointer(pointer)] = value;
}

// ----------------------------------------------------------------- curves

namespace {

struct Cell {
    int instance, run;
    bool operator<(const Cell& o) const { return std::tie(instance, run) < std::tie(o.instance, o.run); }
};

// task -> (reward total, regret total) per cell for one algorithm
using TaskTotals = std::map<Cell, std::map<int, std::pair<double, double>>>;

TaskTotals task_totals(const std::vector<RawRow>& rows, const std::string& algorithm) {
    TaskTotals out;
    for (const auto& r : rows) {
        if (r.algorithm != algorithm) continue;
        auto& t = out[{r.instance, r.run}][r.task];
        t.first += r.reward_sum;
        t.second += r.oracle_value - r.reward_sum;
    }
    return out;
}

std::pair<double, double> mean_stderr(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= xs.size();
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (xs.size() - 1) / xs.size())};
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::vector<CurvePoint> meta_regret_curve(const std::vector<RawRow>& rows, const std::string& algorithm) {
    const TaskTotals oracle = task_totals(rows, "meta_oracle");
    const TaskTotals algo = task_totals(rows, algorithm);
    if (oracle.empty()) throw MissingOracle();
    std::set<int> tasks;
    for (const auto& [cell, m] : algo)
        for (const auto& [k, v] : m) tasks.insert(k);
    std::map<Cell, double> running;
    for (const auto& [cell, m] : algo) {
        if (!oracle.count(cell)) throw MissingOracle();
        running[cell] = 0.0;
    }
    std::vector<CurvePoint> out;
    for (int k : tasks) {
        std::vector<double> xs;
        for (auto& [cell, total] : running) {
            const auto& mine = algo.at(cell);
            const auto& theirs = oracle.at(cell);
            auto a = mine.find(k);
            auto o = theirs.find(k);
            if (a != mine.end() && o != theirs.end()) total += o->second.first - a->second.first;
            xs.push_back(total);
        }
        auto [mean, se] = mean_stderr(xs);
        out.push_back({algorithm, k, mean, se});
    }
    return out;
}

std::vector<CurvePoint> bayes_regret_curve(const std::vector<RawRow>& rows, const std::string& algorithm) {
    const TaskTotals algo = task_totals(rows, algorithm);
    std::map<int, std::vector<double>> per_task;
    for (const auto& [cell, m] : algo)
        for (const auto& [k, v] : m) per_task[k].push_back(v.second);
    std::vector<CurvePoint> out;
    for (const auto& [k, xs] : per_task) {
        auto [mean, se] = mean_stderr(xs);
        out.push_back({algorithm, k, mean, se});
    }
    return out;
}

void write_file_atomic(const std::string& path, const std::string& text) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << text;
        if (!out) throw Error("write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

void write_raw_csv(const std::string& path, const std::vector<RawRow>& rows) {
    std::string text = "algorithm,instance,run,task,episode,reward_sum,oracle_value\n";
    for (const auto& r : rows) {
        text += r.algorithm + ',' + std::to_string(r.instance) + ',' + std::to_string(r.run) + ',' +
                std::to_string(r.task) + ',' + std::to_string(r.episode) + ',' + fmt(r.reward_sum) + ',' +
                fmt(r.oracle_value) + '\n';
    }
    write_file_atomic(path, text);
}

std::vector<RawRow> read_raw_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "algorithm,instance,run,task,episode,reward_sum,oracle_value")
        throw Error(path + ": unexpected header");
    std::vector<RawRow> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string part; std::getline(ss, part, ',');) f.push_back(part);
        if (f.size() != 7) throw Error(path + ":" + std::to_string(line_no) + ": expected 7 fields");
        try {
            rows.push_back({f[0], std::stoi(f[1]), std::stoi(f[2]), std::stoi(f[3]), std::stoi(f[4]),
                            std::stod(f[5]), std::stod(f[6])});
        } catch (const std::exception&) {
            throw Error(path + ":" + std::to_string(line_no) + ": malformed number");
        }
    }
    return rows;
}

void write_curves_csv(const std::string& path, const std::vector<CurvePoint>& points) {
    std::string text = "algorithm,task,mean,stderr\n";
    for (const auto& p : points)
        text += p.algorithm + ',' + std::to_string(p.task) + ',' + fmt(p.mean) + ',' + fmt(p.stderr_) + '\n';
    write_file_atomic(path, text);
}

// -------------------------------------------------------------- execution

std::shared_ptr<TaskSource> make_source(const ExperimentConfig& cfg, int instance,
                                        std::shared_ptr<const RecommendationSpace> space) {
    const RngStream root(cfg.seed, fold_stream_id({1, static_cast<std::uint64_t>(instance)}));
    if (cfg.env_kind == "synthetic") {
        RngStream fam = root.child(0);
        auto family = std::make_shared<const SyntheticFamily>(SyntheticFamily::sample(cfg.synthetic, fam));
        return std::make_shared<SyntheticSource>(std::move(family), root.child(1));
    }
    const auto& p = cfg.recommendation;
    if (!space) space = std::make_shared<const RecommendationSpace>(p.products, p.horizon, p.budget, cfg.lambda0_bound);
    return std::make_shared<RecommendationSource>(std::move(space), p.c, p.prior_samples, root.child(1));
}

RngStream run_stream(const ExperimentConfig& cfg, int instance, int run) {
    return RngStream(cfg.seed,
                     fold_stream_id({2, static_cast<std::uint64_t>(instance), static_cast<std::uint64_t>(run)}));
}

MetaRunReport run_algorithm(const std::string& algorithm, const MetaConfig& meta, const TaskSource& source,
                            const RngStream& rng) {
    if (algorithm == "rlsvi") return run_rlsvi_meta(meta, source, rng);
    if (algorithm == "tsbd-meta") return run_tsbd_meta(meta, source, rng);
    if (algorithm == "mtsrl") return run_mtsrl(meta, source.true_prior().covs, source, rng);
    if (algorithm == "mtsrl_plus") return run_mtsrl_plus(meta, source, rng);
    if (algorithm == "meta_oracle") return run_meta_oracle(meta, source.true_prior(), source, rng);
    if (algorithm == "tsrl_true_prior") return run_tsrl_true_prior(meta, source.true_prior(), source, rng);
    throw ConfigError("algorithms", "unknown algorithm '" + algorithm + "'");
}

json summarize(const std::vector<RawRow>& rows, const std::vector<std::string>& algorithms) {
    json algos = json::object();
    const bool have_oracle = std::any_of(rows.begin(), rows.end(), [](const RawRow& r) { return r.algorithm == "meta_oracle"; });
    for (const auto& name : algorithms) {
        const auto bayes = bayes_regret_curve(rows, name);
        json a;
        a["tasks"] = bayes.size();
        if (!bayes.empty()) {
            double total = 0.0, tail = 0.0;
            int tail_n = 0;
            const int K = bayes.back().task;
            for (const auto& p : bayes) {
                total += p.mean;
                if (p.task > K - K / 3) {
                    tail += p.mean;
                    ++tail_n;
                }
            }
            a["mean_bayes_regret"] = total / bayes.size();
            a["final_third_bayes_regret"] = tail_n ? tail / tail_n : 0.0;
        }
        if (have_oracle) {
            const auto meta = meta_regret_curve(rows, name);
            if (!meta.empty()) {
                a["final_meta_regret"] = meta.back().mean;
                a["final_meta_regret_stderr"] = meta.back().stderr_;
            }
        }
        algos[name] = std::move(a);
    }
    return {{"algorithms", algos}, {"rows", rows.size()}, {"meta_oracle_present", have_oracle}};
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
    std::shared_ptr<const RecommendationSpace> space;
    if (cfg.env_kind == "recommendation") {
        const auto& p = cfg.recommendation;
        space = std::make_shared<const RecommendationSpace>(p.products, p.horizon, p.budget, cfg.lambda0_bound);
    }
    std::vector<std::shared_ptr<TaskSource>> sources;
    for (int i = 0; i < cfg.instances; ++i) sources.push_back(make_source(cfg, i, space));

    ExperimentResult result;
    for (const auto& algo : cfg.algorithms)
        for (int i = 0; i < cfg.instances; ++i)
            for (int r = 0; r < cfg.runs_per_instance; ++r) result.cells.push_back({algo, i, r, {}});

    std::vector<std::string> cell_errors(result.cells.size());
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> finished{0};
    std::mutex log_mutex;
    const std::string meta_dir = (std::filesystem::path(cfg.output_dir) / "meta_runs").string();
    auto worker = [&]() {
        for (std::size_t c = next++; c < result.cells.size(); c = next++) {
            CellResult& cell = result.cells[c];
            try {
                cell.report = run_algorithm(cell.algorithm, cfg.meta, *sources[cell.instance],
                                            run_stream(cfg, cell.instance, cell.run));
                if (options.write_files && cfg.write_meta_runs) {
                    const std::string name = cell.algorithm + "_i" + std::to_string(cell.instance) + "_r" +
                                             std::to_string(cell.run) + ".json";
                    write_file_atomic((std::filesystem::path(meta_dir) / name).string(),
                                      report_to_json(cell.report).dump() + "\n");
                }
            } catch (const std::exception& e) {
                cell_errors[c] = e.what();
            }
            const std::size_t done = ++finished;
            if (!options.quiet && options.progress) {
                std::lock_guard<std::mutex> lock(log_mutex);
                *options.progress << "[" << done << "/" << result.cells.size() << "] " << cell.algorithm
                                  << " instance " << cell.instance << " run " << cell.run
                                  << (cell_errors[c].empty() ? "" : " FAILED: " + cell_errors[c]) << '\n';
            }
        }
    };
    const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(result.cells.size())));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    json failures = json::array();
    std::map<std::string, json> per_algo;
    for (std::size_t c = 0; c < result.cells.size(); ++c) {
        const CellResult& cell = result.cells[c];
        json& info = per_algo[cell.algorithm];
        if (info.is_null())
            info = {{"failed_tasks", 0}, {"init_incomplete_tasks", 0}, {"cov_floored_tasks", 0},
                    {"rank_deficient_estimates", 0}, {"failed_cells", 0}};
        if (!cell_errors[c].empty()) {
            info["failed_cells"] = info["failed_cells"].get<int>() + 1;
            failures.push_back({{"algorithm", cell.algorithm}, {"instance", cell.instance}, {"run", cell.run},
                                {"error", cell_errors[c]}});
            continue;
        }
        for (const auto& t : cell.report.tasks) {
            if (!t.error.empty()) {
                info["failed_tasks"] = info["failed_tasks"].get<int>() + 1;
                if (failures.size() < 50)
                    failures.push_back({{"algorithm", cell.algorithm}, {"instance", cell.instance},
                                        {"run", cell.run}, {"task", t.task}, {"error", t.error}});
                continue;
            }
            if (!t.init_completed) info["init_incomplete_tasks"] = info["init_incomplete_tasks"].get<int>() + 1;
            if (t.cov_floored) info["cov_floored_tasks"] = info["cov_floored_tasks"].get<int>() + 1;
            if (!t.deficient_stages.empty())
                info["rank_deficient_estimates"] = info["rank_deficient_estimates"].get<int>() + 1;
            for (std::size_t n = 0; n < t.rewards.size(); ++n)
                result.rows.push_back({cell.algorithm, cell.instance, cell.run, t.task, static_cast<int>(n) + 1,
                                       t.rewards[n], t.oracle_values[n]});
        }
    }

    result.summary = summarize(result.rows, cfg.algorithms);
    result.summary["schema"] = "metatsrl.summary/1";
    result.summary["config"] = config_to_json(cfg);
    for (auto& [name, info] : per_algo)
        for (auto it = info.begin(); it != info.end(); ++it) result.summary["algorithms"][name][it.key()] = it.value();
    result.summary["failures"] = failures;
    result.summary["cells"] = result.cells.size();
    if (options.write_files) write_outputs(result, cfg.output_dir);
    return result;
}

void write_outputs(const ExperimentResult& result, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_raw_csv((fs::path(dir) / "raw.csv").string(), result.rows);
    std::vector<std::string> algorithms;
    for (const auto& c : result.cells)
        if (std::find(algorithms.begin(), algorithms.end(), c.algorithm) == algorithms.end())
            algorithms.push_back(c.algorithm);
    std::vector<CurvePoint> bayes, meta;
    const bool have_oracle = result.summary.value("meta_oracle_present", false);
    for (const auto& a : algorithms) {
        auto b = bayes_regret_curve(result.rows, a);
        bayes.insert(bayes.end(), b.begin(), b.end());
        if (have_oracle) {
            auto m = meta_regret_curve(result.rows, a);
            meta.insert(meta.end(), m.begin(), m.end());
        }
    }
    write_curves_csv((fs::path(dir) / "curves_bayes_regret.csv").string(), bayes);
    write_curves_csv((fs::path(dir) / "curves_meta_regret.csv").string(), meta);
    write_file_atomic((fs::path(dir) / "summary.json").string(), result.summary.dump(2) + "\n");
}

}  // namespace metatsrl
