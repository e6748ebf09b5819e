"""Experiment harness: JSON configs in, CSV figure datasets out.

A case runs the lag-L strategy for each configured window length M against a
freshly solved full-horizon reference, then emits four dataset kinds:

    trajectory   first-100-stage comparison of the emitted and reference
                 trajectories (one file per M)
    group_trend  log max output error per group of L stages vs group index
    end_zoom     head/tail slices of the group trend (exponential ramps)
    error_vs_M   log Omega_{S-1} vs M with a least-squares fit

plus a certificate report (derivative check, SOSC and controllability at the
reference solution) and a run manifest recording the config hash and the
numerical policy knobs.  Outputs are deterministic for a fixed config+seed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kkt as _kkt
from .kkt import WindowIterate, assemble_kkt, kkt_inverse_decay_probe
from .model import (
    BenchmarkParams,
    Dimensions,
    DualTrajectory,
    Trajectory,
    check_derivatives,
    make_benchmark,
)
from .online import MpcConfig, run_mpc
from .oracle import (
    full_horizon_spec,
    solve_full,
    verify_solution_assumptions,
)

__all__ = [
    "ExperimentConfig",
    "FigureDataset",
    "CaseResult",
    "load_config",
    "run_case",
    "certify_case",
    "probe_case_decay",
    "emit_csv",
]

# Shipped benchmark cases: d profile, amplitude, full-scale N, window
# lengths, (L, C1, C2, mu).  Named configs cap N at the desk scale.
CASE_TABLE = {
    "case1": dict(d_profile="constant", d_amplitude=1.0, N=5000,
                  M_list=[10, 20, 30, 40], L=5, C1=8.0, C2=1.0, mu=10.0),
    "case2": dict(d_profile="sine", d_amplitude=5.0, N=10000,
                  M_list=[30, 40, 50, 60], L=10, C1=12.0, C2=2.0, mu=10.0),
    "case3": dict(d_profile="sine_squared", d_amplitude=10.0, N=40000,
                  M_list=[50, 60, 70, 80], L=10, C1=40.0, C2=5.0, mu=10.0),
}

DESK_N_CAP = 2000

SCHEMAS = {
    "trajectory": ["k", "x_hat", "u_hat", "lambda_hat", "x_star", "u_star", "lambda_star"],
    "group_trend": ["group", "k_start", "log_max_psi"],
    "end_zoom": ["end", "group", "log_max_psi"],
    "error_vs_M": ["M", "S", "log_omega"],
}

LOG_FLOOR = 1e-300


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """Validated experiment description (see load_config for the JSON form)."""

    case: dict
    N: int
    L: int
    mu: float
    M_list: list
    oracle_tol: float
    out_dir: Path
    seed: int
    raw: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        for M in self.M_list:
            if M % self.L != 0 or M // self.L < 2 or M > self.N:
                raise ConfigError(
                    f"M={M} must be S*L with S >= 2 and M <= N (L={self.L}, N={self.N})"
                )
        if self.oracle_tol <= 0:
            raise ConfigError("oracle_tol must be positive")

    def benchmark_params(self) -> BenchmarkParams:
        return BenchmarkParams(
            C1=self.case["C1"],
            C2=self.case["C2"],
            d_profile=self.case["d_profile"],
            d_amplitude=self.case["d_amplitude"],
            N=self.N,
        )

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


_ALLOWED_KEYS = {"case", "N", "L", "mu", "M_list", "oracle_tol", "out_dir", "seed"}


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON config.

    Top-level keys: case (a shipped case name or an inline parameter object
    with C1, C2, d_profile, d_amplitude), N, L, mu, M_list, oracle_tol,
    out_dir, seed.  Unknown keys are rejected; omitted numeric keys default
    from the named case (N capped at the desk scale).
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(raw) - _ALLOWED_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    if "case" not in raw:
        raise ConfigError(f"{path}: missing required key 'case'")

    case_spec = raw["case"]
    if isinstance(case_spec, str):
        if case_spec not in CASE_TABLE:
            raise ConfigError(
                f"unknown case {case_spec!r}; shipped cases: {sorted(CASE_TABLE)}"
            )
        base = dict(CASE_TABLE[case_spec])
        case = {k: base[k] for k in ("C1", "C2", "d_profile", "d_amplitude")}
        defaults = dict(
            N=min(base["N"], DESK_N_CAP), L=base["L"], mu=base["mu"],
            M_list=base["M_list"],
        )
    elif isinstance(case_spec, dict):
        need = {"C1", "C2", "d_profile", "d_amplitude"}
        if set(case_spec) != need:
            raise ConfigError(f"inline case must have exactly the keys {sorted(need)}")
        case = dict(case_spec)
        defaults = {}
        for key in ("N", "L", "mu", "M_list"):
            if key not in raw:
                raise ConfigError(f"inline case configs must set {key!r} explicitly")
    else:
        raise ConfigError("'case' must be a case name or a parameter object")

    def pick(key, fallback=None):
        return raw.get(key, defaults.get(key, fallback))

    out_dir = raw.get("out_dir")
    if out_dir is None:
        raise ConfigError("missing required key 'out_dir'")
    return ExperimentConfig(
        case=case,
        N=int(pick("N")),
        L=int(pick("L")),
        mu=float(pick("mu")),
        M_list=[int(m) for m in pick("M_list")],
        oracle_tol=float(pick("oracle_tol", 1e-10)),
        out_dir=Path(out_dir),
        seed=int(pick("seed", 0)),
        raw=raw,
    )


@dataclass
class FigureDataset:
    """Named numeric columns for one figure, plus an optional linear fit."""

    kind: str
    name: str
    columns: dict
    fit: Optional[tuple] = None  # (slope, intercept, r_squared)

    def validate(self):
        expected = SCHEMAS.get(self.kind)
        if expected is None:
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if list(self.columns) != expected:
            raise ConfigError(
                f"dataset {self.name!r} columns {list(self.columns)} != schema {expected}"
            )
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ConfigError(f"dataset {self.name!r} has ragged columns {lengths}")


def emit_csv(dataset: FigureDataset, path) -> Path:
    """Write one dataset: header row, full-precision scientific numbers."""
    dataset.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(dataset.columns)
    series = [dataset.columns[c] for c in cols]
    n = len(series[0]) if series else 0
    lines = [",".join(cols)]
    for r in range(n):
        cells = []
        for s in series:
            v = s[r]
            cells.append(v if isinstance(v, str) else format(float(v), ".17e"))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path


def _zero_guess(params: BenchmarkParams):
    dims = Dimensions(1, 1, 1, params.N)
    return Trajectory.zeros(dims), DualTrajectory.zeros(dims)


def _safe_log(v: float) -> float:
    return math.log(max(float(v), LOG_FLOOR))


def _linear_fit(x: np.ndarray, y: np.ndarray) -> tuple:
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot < np.finfo(float).tiny else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(r2)


@dataclass
class CaseResult:
    """Datasets, certificates, and per-M run records of one case execution."""

    config: ExperimentConfig
    datasets: list
    certificates: dict
    records: dict = field(repr=False, default_factory=dict)
    failures: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        certs_ok = all(c["pass"] for c in self.certificates.values())
        return certs_ok and not self.failures


def certify_case(config: ExperimentConfig, model=None, oracle=None) -> dict:
    """Derivative, SOSC, and controllability certificates for a case.

    Twenty random evaluation points (seeded) drive the derivative check; the
    SOSC/controllability certificates are evaluated at the reference
    solution against the benchmark's analytic gamma_H, gamma_C = 1, t = 1.
    """
    params = config.benchmark_params()
    if model is None:
        model = make_benchmark(params)
    rng = np.random.default_rng(config.seed)
    worst = 0.0
    ok = True
    for _ in range(20):
        traj = Trajectory(
            rng.uniform(-1.0, 1.0, size=(params.N + 1, 1)),
            rng.uniform(-1.0, 1.0, size=(params.N, 1)),
        )
        dual = DualTrajectory(rng.uniform(-1.0, 1.0, size=(params.N + 1, 1)))
        report = check_derivatives(model, (traj, dual), rel_tol=1e-6)
        worst = max(worst, max(report.max_rel_err.values()))
        ok = ok and report.passed
    certs = {
        "derivatives": {"pass": ok, "max_rel_err": worst, "rel_tol": 1e-6},
    }

    if oracle is None:
        guess = _zero_guess(params)
        oracle = solve_full(model, guess, tol=config.oracle_tol)
    if not oracle.converged:
        certs["sosc"] = {"pass": False, "error": "reference solve did not converge"}
        certs["controllability"] = {"pass": False, "error": "reference solve did not converge"}
        return certs
    assumption = verify_solution_assumptions(
        model, oracle, gamma_H=params.gamma_H, gamma_C=1.0, t=1
    )
    certs["sosc"] = {
        "pass": assumption.sosc_pass,
        "min_eig": assumption.reduced_hessian_min_eig,
        "gamma_H": params.gamma_H,
    }
    certs["controllability"] = {
        "pass": assumption.controllability_pass,
        "min_eig": assumption.controllability_min_eig,
        "gamma_C": 1.0,
        "t": 1,
    }
    return certs


def run_case(config: ExperimentConfig, skip_certificates: bool = False) -> CaseResult:
    """Oracle solve + lag-L runs for every M, then build all figure datasets.

    Solver failures for one M are recorded and the remaining M values still
    run.
    """
    params = config.benchmark_params()
    model = make_benchmark(params)
    guess = _zero_guess(params)
    oracle = solve_full(model, guess, tol=config.oracle_tol)
    if not oracle.converged:
        raise RuntimeError(
            f"reference solve failed: residual {oracle.kkt_residual:.3e} "
            f"after {oracle.iterations} iterations"
        )

    datasets: list = []
    records: dict = {}
    failures: dict = {}
    omega_rows = []
    for M in config.M_list:
        try:
            cfg = MpcConfig(N=config.N, M=M, L=config.L, mu=config.mu,
                            initial_guess=guess)
            record = run_mpc(model, cfg, oracle=oracle)
        except Exception as exc:  # recorded per M, run continues
            failures[M] = f"{type(exc).__name__}: {exc}"
            continue
        records[M] = record
        datasets.extend(_per_m_datasets(record, oracle, M, config))
        omega_rows.append((M, cfg.S, _safe_log(record.groups.omega[cfg.S - 1])))

    if omega_rows:
        Ms = np.array([r[0] for r in omega_rows], dtype=float)
        logs = np.array([r[2] for r in omega_rows])
        fit = _linear_fit(Ms, logs) if len(omega_rows) >= 2 else None
        datasets.append(
            FigureDataset(
                kind="error_vs_M",
                name="error_vs_M",
                columns={
                    "M": [r[0] for r in omega_rows],
                    "S": [r[1] for r in omega_rows],
                    "log_omega": [r[2] for r in omega_rows],
                },
                fit=fit,
            )
        )

    certificates = {}
    if not skip_certificates:
        certificates = certify_case(config, model=model, oracle=oracle)
    return CaseResult(
        config=config,
        datasets=datasets,
        certificates=certificates,
        records=records,
        failures=failures,
    )


def _per_m_datasets(record, oracle, M: int, config: ExperimentConfig) -> list:
    """Datasets (a)-(c) for a single window length."""
    out_traj, out_dual = record.output
    n_show = min(100, config.N)
    ks = np.arange(n_show)
    traj = FigureDataset(
        kind="trajectory",
        name=f"trajectory_M{M}",
        columns={
            "k": ks,
            "x_hat": out_traj.x[:n_show, 0],
            "u_hat": out_traj.u[:n_show, 0],
            "lambda_hat": out_dual.lam[1:n_show + 1, 0],
            "x_star": oracle.z_star.x[:n_show, 0],
            "u_star": oracle.z_star.u[:n_show, 0],
            "lambda_star": oracle.lambda_star.lam[1:n_show + 1, 0],
        },
    )
    groups = record.groups
    logs = np.array([_safe_log(v) for v in groups.group_max_psi])
    trend = FigureDataset(
        kind="group_trend",
        name=f"group_trend_M{M}",
        columns={
            "group": groups.group_index,
            "k_start": (groups.group_index - 1) * config.L,
            "log_max_psi": logs,
        },
    )
    S = M // config.L
    n_g = groups.group_index.size
    head = slice(0, min(S, n_g))
    tail = slice(max(0, n_g - S), n_g)
    zoom = FigureDataset(
        kind="end_zoom",
        name=f"end_zoom_M{M}",
        columns={
            "end": ["head"] * (head.stop - head.start) + ["tail"] * (tail.stop - tail.start),
            "group": np.concatenate([groups.group_index[head], groups.group_index[tail]]),
            "log_max_psi": np.concatenate([logs[head], logs[tail]]),
        },
    )
    return [traj, trend, zoom]


def probe_case_decay(config: ExperimentConfig, max_offset: int):
    """Assemble the full-horizon KKT at the reference solution and probe it."""
    params = config.benchmark_params()
    model = make_benchmark(params)
    oracle = solve_full(model, _zero_guess(params), tol=config.oracle_tol)
    if not oracle.converged:
        raise RuntimeError("reference solve failed; cannot probe")
    spec = full_horizon_spec(model)
    it = WindowIterate(0, oracle.z_star.x, oracle.z_star.u, oracle.lambda_star.lam)
    kkt = assemble_kkt(model, spec.window, it, spec)
    return kkt_inverse_decay_probe(kkt, max_offset=max_offset)


def write_case_outputs(result: CaseResult, out_dir: Optional[Path] = None) -> list:
    """Emit every dataset CSV plus the run manifest; returns written paths."""
    out_dir = Path(out_dir) if out_dir is not None else result.config.out_dir
    written = []
    for ds in result.datasets:
        written.append(emit_csv(ds, out_dir / f"{ds.name}.csv"))
    manifest = out_dir / "run_manifest.txt"
    lines = [
        f"config_hash: {result.config.config_hash()}",
        f"oracle_tol: {result.config.oracle_tol:.3e}",
        f"seed: {result.config.seed}",
        f"N: {result.config.N}",
        f"L: {result.config.L}",
        f"mu: {result.config.mu}",
        f"M_list: {result.config.M_list}",
        "policy: fd_step=eps^(1/3) per-coordinate central differences",
        "policy: saddle solver=banded LU (LAPACK gbtrf/gbtrs), "
        f"pivot_rtol={_kkt.PIVOT_RTOL:.1e}, solve_rtol={_kkt.SOLVE_RTOL:.1e}",
        "policy: oracle merit=||grad L||, armijo=1e-4, backtrack=0.5, max_backtracks=40",
        "policy: desk N cap=2000 for named cases",
    ]
    for name, cert in result.certificates.items():
        lines.append(f"certificate {name}: {cert}")
    for ds_name, fit in ((ds.name, ds.fit) for ds in result.datasets if ds.fit):
        lines.append(f"fit {ds_name}: slope={fit[0]:.6e} intercept={fit[1]:.6e} r2={fit[2]:.6f}")
    for M, msg in result.failures.items():
        lines.append(f"failure M={M}: {msg}")
    manifest.parent.mkdir(parents=True, exist_ok=True)
    manifest.write_text("\n".join(lines) + "\n")
    written.append(manifest)
    return written
