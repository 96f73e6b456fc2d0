#include "metatsrl/meta.hpp"

#include <algorithm>
#include <cmath>

#include "metatsrl/errors.hpp"

namespace metatsrl {

namespace {

// Coordinates with a nonzero diagonal; the rest carry no data at all.
std::vector<int> active_coordinates(const SymMatrix& V) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < V.dim(); ++i)
        if (V(i, i) > 0.0) idx.push_back(static_cast<int>(i));
    return idx;
}

SymMatrix restrict(const SymMatrix& V, const std::vector<int>& idx) {
    SymMatrix out(idx.size());
    for (std::size_t a = 0; a < idx.size(); ++a)
        for (std::size_t b = 0; b < idx.size(); ++b) out(a, b) = V(idx[a], idx[b]);
    return out;
}

bool positive_definite(const SymMatrix& m) {
    try {
        cholesky(m);
        return true;
    } catch (const NotPositiveDefinite&) {
        return false;
    }
}

}  // namespace

TaskEstimate ols_task_estimate(const std::vector<Trajectory>& log, int init_length, const MdpSpec& env,
                               const FeatureMap& fmap, const OlsOptions& options) {
    const int H = env.horizon(), M = fmap.dim();
    if (init_length < 0 || init_length > static_cast<int>(log.size()))
        throw Error("init_length exceeds the logged episodes");
    TaskEstimate est;
    est.episodes_used = options.scope == OlsScope::Full ? static_cast<int>(log.size()) : init_length;
    const int used = est.episodes_used;
    est.theta.assign(H, Vec(M, 0.0));
    if (options.scope == OlsScope::InitOnly) est.sigma.assign(H, SymMatrix(M));

    std::vector<std::vector<int>> next_actions;
    for (int h = H - 1; h >= 0; --h) {
        SymMatrix V(M);
        Vec g(M, 0.0);
        for (int i = 0; i < used; ++i) {
            const auto& steps = log[i].steps;
            if (static_cast<int>(steps.size()) != H) throw DimensionMismatch("trajectory length differs from horizon");
            const Step& st = steps[h];
            double b = st.reward;
            if (!options.bandit_targets && h + 1 < H) {
                const int s2 = steps[h + 1].state;
                b += max_value(fmap, est.theta[h + 1], h + 1, s2, env.allowed_actions(h + 1, s2));
            }
            const auto& e = fmap.row(h, st.state, st.action).entries;
            for (const auto& [j, x] : e) {
                g[j] += x * b;
                for (const auto& [l, y] : e) V(j, l) += x * y;
            }
        }

        const auto idx = active_coordinates(V);
        const bool full_support = static_cast<int>(idx.size()) == M;
        SymMatrix sub = restrict(V, idx);
        double scale = 1.0;
        for (std::size_t a = 0; a < sub.dim(); ++a) scale = std::max(scale, sub(a, a));
        SymMatrix shifted = sub;
        shifted.add_diagonal(-options.rank_tol * scale);
        const bool deficient = !full_support || idx.empty() || !positive_definite(shifted);
        if (deficient) {
            if (options.rank == RankPolicy::Strict) throw RankDeficient(h);
            est.deficient_stages.push_back(h);
        }

        Vec gsub(idx.size());
        for (std::size_t a = 0; a < idx.size(); ++a) gsub[a] = g[idx[a]];
        Vec tsub;
        SymMatrix inv;
        if (idx.empty()) {
        } else if (positive_definite(shifted)) {
            tsub = spd_solve(sub, gsub);
            if (options.scope == OlsScope::InitOnly) inv = spd_inverse(sub);
        } else {
            inv = pseudo_inverse(sub);
            tsub = inv * gsub;
        }
        for (std::size_t a = 0; a < idx.size(); ++a) est.theta[h][idx[a]] = tsub[a];
        if (options.scope == OlsScope::InitOnly && !idx.empty())
            for (std::size_t a = 0; a < idx.size(); ++a)
                for (std::size_t b = 0; b < idx.size(); ++b) est.sigma[h](idx[a], idx[b]) = options.beta * inv(a, b);
    }
    std::reverse(est.deficient_stages.begin(), est.deficient_stages.end());
    return est;
}

Vec prior_mean_estimate(const std::vector<Vec>& estimates) {
    if (estimates.empty()) throw EmptyList();
    Vec mean(estimates.front().size(), 0.0);
    for (const auto& e : estimates) {
        if (e.size() != mean.size()) throw DimensionMismatch("estimates differ in dimension");
        for (std::size_t i = 0; i < e.size(); ++i) mean[i] += e[i];
    }
    for (double& v : mean) v /= static_cast<double>(estimates.size());
    return mean;
}

SymMatrix prior_cov_estimate(const std::vector<Vec>& theta_ddots, const std::vector<SymMatrix>& sigma_ddots) {
    const int n = static_cast<int>(theta_ddots.size());
    if (n < 3) throw TooFewTasks(n);
    if (sigma_ddots.size() != theta_ddots.size()) throw DimensionMismatch("one sigma_ddot per estimate required");
    const Vec mean = prior_mean_estimate(theta_ddots);
    const std::size_t M = mean.size();
    SymMatrix out(M);
    Vec d(M);
    for (const auto& t : theta_ddots) {
        for (std::size_t i = 0; i < M; ++i) d[i] = t[i] - mean[i];
        out.add_outer(d, 1.0 / (n - 1));
    }
    for (const auto& s : sigma_ddots) {
        if (s.dim() != M) throw DimensionMismatch("sigma_ddot has the wrong dimension");
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < M; ++j) out(i, j) -= s(i, j) / n;
    }
    out.symmetrize();
    return out;
}

WidenResult widen(const SymMatrix& cov, double w, double eps) {
    if (w < 0.0) throw Error("widening parameter must be nonnegative");
    WidenResult r{cov, false};
    r.cov.symmetrize();
    r.cov.add_diagonal(w);
    SymMatrix shifted = r.cov;
    shifted.add_diagonal(-eps);
    if (positive_definite(shifted)) return r;
    auto [floored, changed] = eigenvalue_floor(r.cov, eps);
    r.cov = std::move(floored);
    r.floored = changed;
    return r;
}

int auto_k0(int horizon, int K) {
    const int k0 = std::max(2, (horizon * horizon + 3) / 4);
    return std::clamp(k0, 1, std::max(1, K));
}

int auto_k1(int k0, int K) { return std::clamp(std::max(3, k0), 1, std::max(1, K)); }

double theory_k0(const TheoryConstants& c, int H, int M, int K, int N, double lambda_e) {
    const double Ne = lambda_e / c.lambda0;
    const double Kd = K, Nd = N;
    return 4.0 * c.c1 * c.c1 * H * H * M * Ne * Ne * std::log(2.0 * M * Kd * Kd * Nd) * std::log(2.0 * Kd * Nd);
}

double theory_k1(const TheoryConstants& c, int H, int M, int K, int N, double lambda_e) {
    const double Ne = lambda_e / c.lambda0;
    const double Kd = K, Nd = N;
    const double l1 = std::log(2.0 * M * Kd * Kd * Nd);
    const double l2 = std::log(2.0 * Kd * Kd * Nd);
    const double a = 64.0 * c.c2 * c.c2 * H * H * Ne * Ne * l1 * l1 * l1;
    const double b = c.c3 * c.c3 * Nd * Nd * H * H * l2 * l2 * l2;
    return std::max({theory_k0(c, H, M, K, N, lambda_e), a, b});
}

namespace {

int clamp_count(double v, int K) {
    if (!(v < static_cast<double>(K))) return K;
    return std::clamp(static_cast<int>(std::ceil(v)), 1, K);
}

void check_explicit(const std::optional<int>& v, int K, const char* name) {
    if (v && (*v < 1 || *v > K)) throw ConfigError(name, "must lie in [1, K]");
}

}  // namespace

int resolve_k0(const MetaConfig& cfg, int H, int M) {
    check_explicit(cfg.K0, cfg.K, "K0");
    if (cfg.K0) return *cfg.K0;
    if (cfg.theory) return clamp_count(theory_k0(*cfg.theory, H, M, cfg.K, cfg.N, cfg.agent.lambda_e), cfg.K);
    return auto_k0(H, cfg.K);
}

int resolve_k1(const MetaConfig& cfg, int H, int M) {
    check_explicit(cfg.K1, cfg.K, "K1");
    if (cfg.K1) return *cfg.K1;
    if (cfg.theory) return clamp_count(theory_k1(*cfg.theory, H, M, cfg.K, cfg.N, cfg.agent.lambda_e), cfg.K);
    return auto_k1(resolve_k0(cfg, H, M), cfg.K);
}

// ------------------------------------------------------------------ drivers

namespace {

struct TaskRun {
    TaskRecord record;
    std::optional<TaskRunResult> result;
    Task task;
};

TaskRun execute_task(const MetaConfig& cfg, const TaskSource& source, int k, const GaussianPrior* prior,
                     bool bandit, bool warm_start, const RngStream& task_rng, std::string mode) {
    TaskRun out;
    out.record.task = k;
    out.record.mode = std::move(mode);
    try {
        out.task = source.task(k);
        out.record.oracle_value = out.task.expected_value();
        AgentConfig agent = cfg.agent;
        agent.bandit_targets = bandit;
        agent.record_samples = false;
        if (!warm_start) agent.lambda_e = 0.0;
        agent.prior = prior ? *prior
                            : GaussianPrior::conservative(source.horizon(), source.features().dim(), agent.lambda);
        TaskRunResult res = run_tsrl_plus(out.task.mdp, source.features(), agent, cfg.N, task_rng);
        for (const auto& e : res.episodes) {
            out.record.rewards.push_back(e.trajectory.total_reward());
            out.record.oracle_values.push_back(out.task.oracle.V[0][e.trajectory.first_state()]);
        }
        out.record.init_length = res.init_length;
        out.record.init_completed = res.init_completed;
        out.record.warnings = res.warnings;
        if (cfg.record_trajectories) out.record.run = res;
        out.result = std::move(res);
    } catch (const Error& e) {
        out.record.error = e.what();
    }
    return out;
}

MetaRunReport new_report(const MetaConfig& cfg, const TaskSource& source, std::string name) {
    if (cfg.K < 1 || cfg.N < 1) throw ConfigError("K/N", "task and episode counts must be positive");
    MetaRunReport r;
    r.algorithm = std::move(name);
    r.K = cfg.K;
    r.N = cfg.N;
    r.H = source.horizon();
    return r;
}

RngStream task_stream(const RngStream& rng, int k) { return rng.child(static_cast<std::uint64_t>(k)); }

// MTSRL+ and MTSBD share the structure and differ only in the targets.
MetaRunReport run_plus_family(const MetaConfig& cfg, const TaskSource& source, const RngStream& rng,
                              const PriorOverride& override_prior, bool bandit, std::string name) {
    MetaRunReport report = new_report(cfg, source, std::move(name));
    const int H = source.horizon(), M = source.features().dim();
    report.K0 = resolve_k0(cfg, H, M);
    report.K1 = resolve_k1(cfg, H, M);
    if (report.K1 < 3 && cfg.K > report.K1) throw TooFewTasks(report.K1);

    struct Source {
        std::vector<Vec> theta;
        std::vector<SymMatrix> sigma;
        bool exploration;
    };
    std::vector<Source> sources;
    for (int k = 1; k <= cfg.K; ++k) {
        std::optional<GaussianPrior> forced;
        if (override_prior) forced = override_prior(k);
        const bool learn = k > report.K1;
        LearnedPrior learned;
        TaskRun run;
        if (forced) {
            run = execute_task(cfg, source, k, &*forced, bandit, true, task_stream(rng, k), "forced");
        } else if (!learn) {
            run = execute_task(cfg, source, k, nullptr, bandit, true, task_stream(rng, k), "exploration");
        } else {
            std::vector<const Source*> cov_sources;
            for (const auto& s : sources)
                if (cfg.cov_includes_exploration || !s.exploration) cov_sources.push_back(&s);
            // Too few non-exploration tasks yet: fall back to all of them.
            if (cov_sources.size() < 3) {
                cov_sources.clear();
                for (const auto& s : sources) cov_sources.push_back(&s);
            }
            learned.k_used = static_cast<int>(sources.size());
            try {
                for (int h = 0; h < H; ++h) {
                    std::vector<Vec> means;
                    for (const auto& s : sources) means.push_back(s.theta[h]);
                    std::vector<Vec> ts;
                    std::vector<SymMatrix> ss;
                    for (const Source* s : cov_sources) {
                        ts.push_back(s->theta[h]);
                        ss.push_back(s->sigma[h]);
                    }
                    learned.prior.means.push_back(prior_mean_estimate(means));
                    SymMatrix cov = prior_cov_estimate(ts, ss);
                    WidenResult wr = widen(cov, cfg.w);
                    learned.floored = learned.floored || wr.floored;
                    learned.cov.push_back(std::move(cov));
                    learned.prior.covs.push_back(std::move(wr.cov));
                }
            } catch (const Error& e) {
                TaskRecord rec;
                rec.task = k;
                rec.mode = "learned";
                rec.error = e.what();
                report.tasks.push_back(std::move(rec));
                continue;
            }
            run = execute_task(cfg, source, k, &learned.prior, bandit, true, task_stream(rng, k), "learned");
            run.record.k_used = learned.k_used;
            run.record.cov_floored = learned.floored;
            run.record.prior_mean = learned.prior.means;
        }
        if (run.result) {
            try {
                OlsOptions opt;
                opt.scope = OlsScope::InitOnly;
                opt.bandit_targets = bandit;
                opt.rank = cfg.ols_rank;
                opt.beta = beta_n(cfg.agent, std::max(run.result->init_length, 1), run.task.mdp.num_states(),
                                  run.task.mdp.num_actions(), H);
                TaskEstimate est = ols_task_estimate(run.result->trajectories(), run.result->init_length,
                                                     run.task.mdp, source.features(), opt);
                run.record.estimate = est.theta;
                run.record.deficient_stages = est.deficient_stages;
                sources.push_back({std::move(est.theta), std::move(est.sigma), !learn && !forced});
            } catch (const Error& e) {
                run.record.warnings.push_back(std::string("estimate skipped: ") + e.what());
            }
        }
        report.tasks.push_back(std::move(run.record));
    }
    return report;
}

}  // namespace

MetaRunReport run_mtsrl(const MetaConfig& cfg, const std::vector<SymMatrix>& true_prior_cov,
                        const TaskSource& source, const RngStream& rng) {
    MetaRunReport report = new_report(cfg, source, "mtsrl");
    const int H = source.horizon(), M = source.features().dim();
    if (static_cast<int>(true_prior_cov.size()) != H) throw DimensionMismatch("one prior covariance per stage");
    report.K0 = resolve_k0(cfg, H, M);
    report.K1 = report.K0;
    std::vector<std::vector<Vec>> estimates;
    for (int k = 1; k <= cfg.K; ++k) {
        TaskRun run;
        if (k <= report.K0 || estimates.empty()) {
            run = execute_task(cfg, source, k, nullptr, false, true, task_stream(rng, k), "exploration");
        } else {
            GaussianPrior prior;
            prior.covs = true_prior_cov;
            for (int h = 0; h < H; ++h) {
                std::vector<Vec> means;
                for (const auto& e : estimates) means.push_back(e[h]);
                prior.means.push_back(prior_mean_estimate(means));
            }
            run = execute_task(cfg, source, k, &prior, false, true, task_stream(rng, k), "learned");
            run.record.k_used = static_cast<int>(estimates.size());
            run.record.prior_mean = prior.means;
        }
        if (run.result) {
            try {
                OlsOptions opt;
                opt.scope = OlsScope::Full;
                opt.rank = cfg.ols_rank;
                TaskEstimate est = ols_task_estimate(run.result->trajectories(), run.result->init_length,
                                                     run.task.mdp, source.features(), opt);
                run.record.estimate = est.theta;
                run.record.deficient_stages = est.deficient_stages;
                estimates.push_back(std::move(est.theta));
            } catch (const Error& e) {
                run.record.warnings.push_back(std::string("estimate skipped: ") + e.what());
            }
        }
        report.tasks.push_back(std::move(run.record));
    }
    return report;
}

MetaRunReport run_mtsrl_plus(const MetaConfig& cfg, const TaskSource& source, const RngStream& rng,
                             const PriorOverride& override_prior) {
    return run_plus_family(cfg, source, rng, override_prior, false, "mtsrl_plus");
}

MetaRunReport run_tsbd_meta(const MetaConfig& cfg, const TaskSource& source, const RngStream& rng) {
    return run_plus_family(cfg, source, rng, {}, true, "tsbd-meta");
}

MetaRunReport run_meta_oracle(const MetaConfig& cfg, const GaussianPrior& true_prior, const TaskSource& source,
                              const RngStream& rng) {
    MetaRunReport report = new_report(cfg, source, "meta_oracle");
    for (int k = 1; k <= cfg.K; ++k) {
        const RngStream r = cfg.paired_oracle_seeds ? task_stream(rng, k)
                                                    : rng.child({static_cast<std::uint64_t>(k), 0x6f7261636c65ULL});
        report.tasks.push_back(execute_task(cfg, source, k, &true_prior, false, true, r, "oracle").record);
    }
    return report;
}

MetaRunReport run_rlsvi_meta(const MetaConfig& cfg, const TaskSource& source, const RngStream& rng) {
    MetaRunReport report = new_report(cfg, source, "rlsvi");
    report.K0 = report.K1 = cfg.K;
    for (int k = 1; k <= cfg.K; ++k)
        report.tasks.push_back(execute_task(cfg, source, k, nullptr, false, true, task_stream(rng, k), "exploration").record);
    return report;
}

MetaRunReport run_tsrl_true_prior(const MetaConfig& cfg, const GaussianPrior& true_prior, const TaskSource& source,
                                  const RngStream& rng) {
    MetaRunReport report = new_report(cfg, source, "tsrl_true_prior");
    for (int k = 1; k <= cfg.K; ++k)
        report.tasks.push_back(execute_task(cfg, source, k, &true_prior, false, false, task_stream(rng, k), "oracle").record);
    return report;
}

nlohmann::json report_to_json(const MetaRunReport& report) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : report.tasks) {
        nlohmann::json j = {{"task", t.task},
                            {"mode", t.mode},
                            {"rewards", t.rewards},
                            {"oracle_values", t.oracle_values},
                            {"oracle_value", t.oracle_value},
                            {"init_length", t.init_length},
                            {"init_completed", t.init_completed},
                            {"warnings", t.warnings},
                            {"k_used", t.k_used},
                            {"cov_floored", t.cov_floored},
                            {"deficient_stages", t.deficient_stages}};
        if (!t.error.empty()) j["error"] = t.error;
        if (t.run) j["run"] = task_run_to_json(*t.run);
        tasks.push_back(std::move(j));
    }
    return {{"schema", "metatsrl.meta_run/1"},
            {"algorithm", report.algorithm},
            {"K", report.K},
            {"N", report.N},
            {"H", report.H},
            {"K0", report.K0},
            {"K1", report.K1},
            {"tasks", std::move(tasks)}};
}

}  // namespace metatsrl
