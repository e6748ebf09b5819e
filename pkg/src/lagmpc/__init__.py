"""Lag-L one-Newton-step-per-horizon online MPC with structural diagnostics."""

from .model import (
    BenchmarkParams,
    DerivativeCheckReport,
    Dimensions,
    DualTrajectory,
    ProblemModel,
    Trajectory,
    check_derivatives,
    eval_lagrangian_blocks,
    make_benchmark,
    make_lq_benchmark,
    make_quadratic_model,
)
from .kkt import (
    DecayFitReport,
    HorizonWindow,
    KKTSingularError,
    KKTSystem,
    SubproblemSpec,
    WindowIterate,
    assemble_kkt,
    controllability_matrix,
    kkt_inverse_decay_probe,
    mu_sosc_threshold,
    reduced_hessian_min_eig,
    solve_saddle,
)
from .oracle import (
    AssumptionCertificates,
    OracleSolution,
    full_horizon_spec,
    solve_full,
    verify_solution_assumptions,
)
from .online import (
    GroupErrors,
    MpcConfig,
    MpcRunRecord,
    Schedule,
    build_schedule,
    compute_group_errors,
    make_subproblem,
    one_newton_step,
    run_mpc,
    transfer_iterates,
)
from .harness import (
    CaseResult,
    ExperimentConfig,
    FigureDataset,
    certify_case,
    emit_csv,
    load_config,
    probe_case_decay,
    run_case,
)

__version__ = "0.1.0"
