"""Python access to the metatsrl core: linear algebra, exact MDP solving,
prior estimation and the experiment harness."""

import json

from ._metatsrl import (
    BudgetExceeded,
    ConfigError,
    DimensionMismatch,
    EmptyList,
    Error,
    InvalidMdp,
    MissingOracle,
    NotPositiveDefinite,
    RankDeficient,
    RngStream,
    TooFewTasks,
    bayes_regret_curve,
    cholesky,
    meta_regret_curve,
    min_eigenvalue,
    posterior_update,
    prior_cov_estimate,
    prior_mean_estimate,
    read_raw_csv,
    recommendation_state_count,
    sample_gaussian,
    spd_solve,
    widen,
    write_raw_csv,
)
from . import _metatsrl


def solve_optimal(mdp):
    """Optimal values of an MDP given in the JSON document format.

    Returns (V, Q) with V[h][s] and Q[h][s * A + a]."""
    return _metatsrl._solve_optimal(json.dumps(mdp))


def validate_config(config):
    """Normalized experiment config; raises ConfigError naming the field."""
    return json.loads(_metatsrl._validate_config(json.dumps(config)))


def run_experiment(config, jobs=1, write_files=False):
    """Runs an experiment config. Returns (rows, summary) where rows are
    (algorithm, instance, run, task, episode, reward_sum, oracle_value)."""
    rows, summary = _metatsrl._run_experiment(json.dumps(config), jobs, write_files)
    return rows, json.loads(summary)
