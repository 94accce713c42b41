"""Deterministic simulator for networked TD(0) policy evaluation.

Multiple agents share one environment trajectory, hold private reward
signals, and fit a common linear value model by mixing parameters over a
directed graph (row-stochastic pull), tracking corrected update directions
over its reverse (column-stochastic push). Everything is reproducible:
counter-based randomness, exact oracles for the attractor and the
convergence-theory constants, and byte-stable artifacts.
"""

from .algorithm import (
    ProjectionConfig,
    PushSaState,
    StepSchedule,
    SwarmState,
    init_push_sa,
    init_swarm,
    ppdtd_step,
    project_ball,
    push_sa_step,
    schedule_value,
    semigradient,
)
from .config import ExperimentConfig, GridSpec, load_config, parse_config
from .errors import (
    AssumptionViolation,
    CapExceeded,
    ConfigError,
    IoFailure,
    NoConvergence,
    NonFiniteIterate,
    PpdtdError,
    PreconditionViolated,
    RankDeficient,
    ReducibleChain,
    SingularSystem,
    StateSpaceTooLarge,
    WeightUnderflow,
)
from .experiment import (
    ProblemBundle,
    RunUnit,
    build_bundle,
    execute_run,
    oracle_report,
    run_experiment,
    run_sweep,
)
from .features import FeatureMap, rbf_features, validate_features
from .mdp import (
    JointPolicy,
    PolicyChain,
    TabularMdp,
    build_cooperative_navigation,
    build_cooperative_navigation_factored,
    induce_chain,
    stationary_distribution,
)
from .metrics import (
    CSV_COLUMNS,
    MetricsRow,
    RunRecord,
    aggregate_rows,
    config_digest,
    consensus_error,
    load_csv,
    optimality_gap,
    td_error_mean_abs,
    write_csv,
)
from .network import (
    Digraph,
    MixingMatrices,
    SpectralProfile,
    build_weights,
    load_edge_list,
    ring_plus_random,
    save_edge_list,
    spectral_profile,
)
from .oracle import (
    ConstantsTable,
    ExactSolution,
    LyapunovWeights,
    constants_table,
    expected_semigradient,
    lyapunov,
    lyapunov_parts,
    lyapunov_weights,
    solve_fixed_point,
)
from .sampling import (
    ChainSampler,
    MixingTimeResult,
    Sample,
    TrajectoryState,
    iid_sample,
    iid_samples_per_agent,
    markov_step,
    mixing_time,
    start_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolation",
    "CapExceeded",
    "ChainSampler",
    "ConfigError",
    "ConstantsTable",
    "CSV_COLUMNS",
    "Digraph",
    "ExactSolution",
    "ExperimentConfig",
    "FeatureMap",
    "GridSpec",
    "IoFailure",
    "JointPolicy",
    "LyapunovWeights",
    "MetricsRow",
    "MixingMatrices",
    "MixingTimeResult",
    "NoConvergence",
    "NonFiniteIterate",
    "PolicyChain",
    "PpdtdError",
    "PreconditionViolated",
    "ProblemBundle",
    "ProjectionConfig",
    "PushSaState",
    "RankDeficient",
    "ReducibleChain",
    "RunRecord",
    "RunUnit",
    "Sample",
    "SingularSystem",
    "SpectralProfile",
    "StateSpaceTooLarge",
    "StepSchedule",
    "SwarmState",
    "TabularMdp",
    "TrajectoryState",
    "WeightUnderflow",
    "aggregate_rows",
    "build_bundle",
    "build_cooperative_navigation",
    "build_cooperative_navigation_factored",
    "build_weights",
    "config_digest",
    "consensus_error",
    "constants_table",
    "execute_run",
    "expected_semigradient",
    "iid_sample",
    "iid_samples_per_agent",
    "induce_chain",
    "init_push_sa",
    "init_swarm",
    "load_config",
    "load_csv",
    "load_edge_list",
    "lyapunov",
    "lyapunov_parts",
    "lyapunov_weights",
    "markov_step",
    "mixing_time",
    "optimality_gap",
    "oracle_report",
    "parse_config",
    "ppdtd_step",
    "project_ball",
    "push_sa_step",
    "rbf_features",
    "ring_plus_random",
    "run_experiment",
    "run_sweep",
    "save_edge_list",
    "schedule_value",
    "semigradient",
    "solve_fixed_point",
    "spectral_profile",
    "start_trajectory",
    "stationary_distribution",
    "td_error_mean_abs",
    "validate_features",
    "write_csv",
]
