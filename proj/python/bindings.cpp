#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "metatsrl/errors.hpp"
#include "metatsrl/harness.hpp"

namespace py = pybind11;
using namespace metatsrl;
using nlohmann::json;

namespace {

using Rows = std::vector<std::vector<double>>;

SymMatrix to_sym(const Rows& rows) { return SymMatrix::from_rows(rows); }

Rows from_sym(const SymMatrix& m) {
    Rows out(m.dim(), Vec(m.dim()));
    for (std::size_t i = 0; i < m.dim(); ++i)
        for (std::size_t j = 0; j < m.dim(); ++j) out[i][j] = m(i, j);
    return out;
}

Rows from_lower(const LowerTriangular& l) {
    Rows out(l.dim(), Vec(l.dim()));
    for (std::size_t i = 0; i < l.dim(); ++i)
        for (std::size_t j = 0; j <= i; ++j) out[i][j] = l(i, j);
    return out;
}

using RowTuple = std::tuple<std::string, int, int, int, int, double, double>;

std::vector<RawRow> to_rows(const std::vector<RowTuple>& in) {
    std::vector<RawRow> out;
    out.reserve(in.size());
    for (const auto& [a, i, r, k, n, reward, oracle] : in) out.push_back({a, i, r, k, n, reward, oracle});
    return out;
}

std::vector<RowTuple> from_rows(const std::vector<RawRow>& in) {
    std::vector<RowTuple> out;
    out.reserve(in.size());
    for (const auto& r : in)
        out.emplace_back(r.algorithm, r.instance, r.run, r.task, r.episode, r.reward_sum, r.oracle_value);
    return out;
}

std::vector<std::tuple<std::string, int, double, double>> curve(const std::vector<CurvePoint>& c) {
    std::vector<std::tuple<std::string, int, double, double>> out;
    for (const auto& p : c) out.emplace_back(p.algorithm, p.task, p.mean, p.stderr_);
    return out;
}

}  // namespace

PYBIND11_MODULE(_metatsrl, m) {
    m.doc() = "Meta Thompson-sampling RL core";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<NotPositiveDefinite>(m, "NotPositiveDefinite", base.ptr());
    py::register_exception<DimensionMismatch>(m, "DimensionMismatch", base.ptr());
    py::register_exception<InvalidMdp>(m, "InvalidMdp", base.ptr());
    py::register_exception<RankDeficient>(m, "RankDeficient", base.ptr());
    py::register_exception<EmptyList>(m, "EmptyList", base.ptr());
    py::register_exception<TooFewTasks>(m, "TooFewTasks", base.ptr());
    py::register_exception<BudgetExceeded>(m, "BudgetExceeded", base.ptr());
    py::register_exception<MissingOracle>(m, "MissingOracle", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

    py::class_<RngStream>(m, "RngStream")
        .def(py::init<std::uint64_t, std::uint64_t>(), py::arg("seed"), py::arg("stream_id") = 0)
        .def_property_readonly("seed", &RngStream::seed)
        .def_property_readonly("stream_id", &RngStream::stream_id)
        .def("child", py::overload_cast<std::uint64_t>(&RngStream::child, py::const_), py::arg("tag"))
        .def("next_u64", &RngStream::next_u64)
        .def("uniform", &RngStream::uniform)
        .def("normal", &RngStream::normal);

    m.def("cholesky", [](const Rows& a) { return from_lower(cholesky(to_sym(a))); });
    m.def("spd_solve", [](const Rows& a, const Vec& b) { return spd_solve(to_sym(a), b); });
    m.def("min_eigenvalue", [](const Rows& a) { return min_eigenvalue(to_sym(a)); });
    m.def(
        "posterior_update",
        [](const Vec& mean, const Rows& cov, const std::vector<Vec>& design, const Vec& targets, double beta) {
            auto [mu, s] = posterior_update(mean, to_sym(cov), design, targets, beta);
            return std::make_pair(mu, from_sym(s));
        },
        py::arg("prior_mean"), py::arg("prior_cov"), py::arg("design"), py::arg("targets"), py::arg("beta"));
    m.def("sample_gaussian", [](const Vec& mean, const Rows& cov, RngStream& rng) {
        return sample_gaussian(mean, to_sym(cov), rng);
    });

    m.def("_solve_optimal", [](const std::string& mdp_json) {
        const MdpSpec mdp = json::parse(mdp_json).get<MdpSpec>();
        mdp.validate();
        const auto v = solve_optimal(mdp);
        return std::make_pair(v.V, v.Q);
    });

    m.def("prior_mean_estimate", &prior_mean_estimate, py::arg("estimates"));
    m.def(
        "prior_cov_estimate",
        [](const std::vector<Vec>& ddots, const std::vector<Rows>& sigmas) {
            std::vector<SymMatrix> s;
            for (const auto& r : sigmas) s.push_back(to_sym(r));
            return from_sym(prior_cov_estimate(ddots, s));
        },
        py::arg("theta_ddots"), py::arg("sigma_ddots"));
    m.def(
        "widen",
        [](const Rows& cov, double w, double eps) {
            const auto r = widen(to_sym(cov), w, eps);
            return std::make_pair(from_sym(r.cov), r.floored);
        },
        py::arg("cov"), py::arg("w"), py::arg("eps") = 1e-9);

    m.def("recommendation_state_count", &recommendation_state_count, py::arg("products"), py::arg("horizon"));

    m.def("_validate_config", [](const std::string& doc) { return config_to_json(parse_config(json::parse(doc))).dump(); });
    m.def(
        "_run_experiment",
        [](const std::string& doc, int jobs, bool write_files) {
            const auto cfg = parse_config(json::parse(doc));
            RunOptions opt;
            opt.jobs = jobs;
            opt.write_files = write_files;
            ExperimentResult res;
            {
                py::gil_scoped_release release;
                res = run_experiment(cfg, opt);
            }
            return std::make_pair(from_rows(res.rows), res.summary.dump());
        },
        py::arg("config"), py::arg("jobs") = 1, py::arg("write_files") = false);
    m.def("read_raw_csv", [](const std::string& path) { return from_rows(read_raw_csv(path)); });
    m.def("write_raw_csv", [](const std::string& path, const std::vector<RowTuple>& rows) {
        write_raw_csv(path, to_rows(rows));
    });
    m.def("meta_regret_curve", [](const std::vector<RowTuple>& rows, const std::string& algorithm) {
        return curve(meta_regret_curve(to_rows(rows), algorithm));
    });
    m.def("bayes_regret_curve", [](const std::vector<RowTuple>& rows, const std::string& algorithm) {
        return curve(bayes_regret_curve(to_rows(rows), algorithm));
    });
}
