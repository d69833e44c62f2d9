"""Hyper-gradient estimators and a fully single-loop solver for bilevel problems."""
from .errors import (
    BilevelError,
    DegenerateInstance,
    Diverged,
    InnerNotConverged,
    InvalidConfig,
    InvalidSchedule,
    NonFiniteValue,
)
from .hypergrad import (
    HyperGradSequenceSpec,
    Mode,
    bp_hypergrad,
    cg_hypergrad,
    exact_hypergrad,
    general_hypergrad_naive,
    general_hypergrad_recursive,
    iter_v_recursion,
    ns_hypergrad,
    v_update,
)
from .kernels import BACKEND
from .linalg import CGResult, LinearOperator, cg_solve, finite_diff_grad
from .problem import (
    FULL_BATCH,
    BilevelOracle,
    CountingOracle,
    SampleKey,
    check_oracle_consistency,
    solve_inner,
)
from .solvers import BaselineConfig, FslaState, RunTrace, Schedule, baseline_run, fsla_run, fsla_step

__version__ = "0.1.0"
