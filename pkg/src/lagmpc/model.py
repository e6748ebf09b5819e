"""Nonlinear dynamic program definitions: stage costs, dynamics, references.

A model bundles the per-stage data of the discrete-time equality-constrained
problem

    min  sum_k g_k(x_k, u_k; d_k) + g_N(x_N)
    s.t. x_{k+1} = f_k(x_k, u_k; d_k),   x_0 = xbar_0,

together with analytic first/second derivatives supplied as block-level
callbacks, so downstream KKT assembly never materializes horizon-scale dense
matrices.  The scalar tracking benchmark family used throughout the test
harness lives here too, along with a finite-difference derivative validator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

__all__ = [
    "Dimensions",
    "Trajectory",
    "DualTrajectory",
    "BenchmarkParams",
    "ProblemModel",
    "DerivativeCheckReport",
    "make_benchmark",
    "make_lq_benchmark",
    "make_quadratic_model",
    "eval_lagrangian_blocks",
    "check_derivatives",
]


@dataclass(frozen=True)
class Dimensions:
    """Problem sizes: states n_x, controls n_u, references n_d, horizon N."""

    n_x: int
    n_u: int
    n_d: int
    N: int

    def __post_init__(self):
        for name in ("n_x", "n_u", "n_d", "N"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.N < 3:
            raise ValueError(f"horizon N must be >= 3, got {self.N}")


def _as_stage_array(a) -> np.ndarray:
    """Coerce to (stages, dim) float array; 1-D input means scalar stages."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ValueError(f"stage array must be 1-D or 2-D, got shape {a.shape}")
    return a


@dataclass
class Trajectory:
    """Primal iterate: states x_0..x_N and controls u_0..u_{N-1}."""

    x: np.ndarray  # (N+1, n_x)
    u: np.ndarray  # (N, n_u)

    def __post_init__(self):
        self.x = _as_stage_array(self.x)
        self.u = _as_stage_array(self.u)
        if self.x.shape[0] != self.u.shape[0] + 1:
            raise ValueError(
                f"state count {self.x.shape[0]} must be control count + 1 "
                f"({self.u.shape[0]} controls)"
            )

    @property
    def N(self) -> int:
        return self.u.shape[0]

    @staticmethod
    def zeros(dims: Dimensions) -> "Trajectory":
        return Trajectory(
            np.zeros((dims.N + 1, dims.n_x)), np.zeros((dims.N, dims.n_u))
        )

    def copy(self) -> "Trajectory":
        return Trajectory(self.x.copy(), self.u.copy())


@dataclass
class DualTrajectory:
    """Multipliers lambda_{-1}..lambda_{N-1}; slot j stores lambda_{j-1}."""

    lam: np.ndarray  # (N+1, n_x)

    def __post_init__(self):
        self.lam = _as_stage_array(self.lam)

    @property
    def N(self) -> int:
        return self.lam.shape[0] - 1

    def at(self, k: int) -> np.ndarray:
        """Multiplier lambda_k for k in [-1, N-1]."""
        if not -1 <= k <= self.N - 1:
            raise IndexError(f"multiplier index {k} out of range [-1, {self.N - 1}]")
        return self.lam[k + 1]

    @staticmethod
    def zeros(dims: Dimensions) -> "DualTrajectory":
        return DualTrajectory(np.zeros((dims.N + 1, dims.n_x)))

    def copy(self) -> "DualTrajectory":
        return DualTrajectory(self.lam.copy())


@dataclass(frozen=True)
class ProblemModel:
    """Stage costs, dynamics, references, and their derivative callbacks.

    All callbacks are pure functions of their arguments.  Derivatives are
    exposed block-wise:

    - ``stage_cost_grad``: (grad_x, grad_u) of g_k
    - ``stage_cost_hess``: (Gxx, Gux, Guu) second-derivative blocks of g_k
    - ``dynamics_jac``: (A_k, B_k) with A_k = df/dx (n_x, n_x), B_k = df/du
    - ``dynamics_hess_contract``: (Cxx, Cux, Cuu) blocks of sum_j lam_j
      * d^2 f_j; zero for affine dynamics

    ``refs`` holds d_{-1:N-1} with slot 0 storing the initial state xbar_0.
    """

    dims: Dimensions
    stage_cost: Callable[[int, np.ndarray, np.ndarray, np.ndarray], float]
    stage_cost_grad: Callable[..., tuple]
    stage_cost_hess: Callable[..., tuple]
    terminal_cost: Callable[[np.ndarray], float]
    terminal_cost_grad: Callable[[np.ndarray], np.ndarray]
    terminal_cost_hess: Callable[[np.ndarray], np.ndarray]
    dynamics: Callable[[int, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    dynamics_jac: Callable[..., tuple]
    dynamics_hess_contract: Callable[..., tuple]
    refs: tuple = field(repr=False)
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.refs) != self.dims.N + 1:
            raise ValueError(
                f"refs must hold d_(-1:N-1): expected {self.dims.N + 1} entries, "
                f"got {len(self.refs)}"
            )
        if self.refs[0].shape != (self.dims.n_x,):
            raise ValueError("refs[0] stores xbar_0 and must have shape (n_x,)")

    @property
    def x0(self) -> np.ndarray:
        """Initial state xbar_0 (= d_{-1})."""
        return self.refs[0]

    def d(self, k: int) -> np.ndarray:
        """Reference d_k for k in [-1, N-1]."""
        if not -1 <= k <= self.dims.N - 1:
            raise IndexError(f"reference index {k} out of range [-1, {self.dims.N - 1}]")
        return self.refs[k + 1]

    def with_overrides(self, **kwargs) -> "ProblemModel":
        """Copy with replaced callbacks (used to inject faults in tests)."""
        return replace(self, **kwargs)


def eval_lagrangian_blocks(model, k, x_k, u_k, lam_km1, lam_k):
    """Stage-Lagrangian gradient and Hessian block at stage k.

    The stage Lagrangian is L_k = g_k + lam_{k-1}' x_k - lam_k' f_k.  Returns
    (grad, H_k) where grad stacks (d/dx_k, d/du_k) and
    H_k = [[Q_k, S_k'], [S_k, R_k]].  H_k does not depend on lam_{k-1} (the
    coupling term is linear in x_k).
    """
    N = model.dims.N
    if not 0 <= k <= N - 1:
        raise IndexError(f"stage {k} out of range [0, {N - 1}]")
    d_k = model.d(k)
    gx, gu = model.stage_cost_grad(k, x_k, u_k, d_k)
    A, B = model.dynamics_jac(k, x_k, u_k, d_k)
    grad = np.concatenate([gx + lam_km1 - A.T @ lam_k, gu - B.T @ lam_k])

    Gxx, Gux, Guu = model.stage_cost_hess(k, x_k, u_k, d_k)
    Cxx, Cux, Cuu = model.dynamics_hess_contract(k, x_k, u_k, d_k, lam_k)
    nx, nu = model.dims.n_x, model.dims.n_u
    H = np.zeros((nx + nu, nx + nu))
    H[:nx, :nx] = Gxx - Cxx
    H[nx:, :nx] = Gux - Cux
    H[:nx, nx:] = (Gux - Cux).T
    H[nx:, nx:] = Guu - Cuu
    return grad, H


# ---------------------------------------------------------------------------
# Benchmark family


def _constant_profile(c: float):
    def d_k(k: int) -> float:
        return c

    return d_k


def _sine_profile(a: float):
    def d_k(k: int) -> float:
        return a * math.sin(k)

    return d_k


def _sine_squared_profile(a: float):
    def d_k(k: int) -> float:
        return a * math.sin(k) ** 2

    return d_k


_PROFILES = {
    "constant": _constant_profile,
    "sine": _sine_profile,
    "sine_squared": _sine_squared_profile,
}


@dataclass(frozen=True)
class BenchmarkParams:
    """Parameters of the scalar tracking benchmark.

    Stage cost 2*cos(x-d)^2 + C1*(x-d)^2 - C2*(u-d)^2, terminal cost C1*x_N^2,
    dynamics x + u + d, x_0 = 0.  ``d_profile`` is one of "constant", "sine",
    "sine_squared" with amplitude ``d_amplitude``.
    """

    C1: float
    C2: float
    d_profile: str
    d_amplitude: float
    N: int

    def __post_init__(self):
        if self.d_profile not in _PROFILES:
            raise ValueError(
                f"unknown d_profile {self.d_profile!r}; choose from {sorted(_PROFILES)}"
            )
        if self.N < 3:
            raise ValueError(f"horizon N must be >= 3, got {self.N}")

    @property
    def sosc_certified(self) -> bool:
        """Sufficient condition C1 - 2 > 4*|C2| for a positive reduced Hessian."""
        return self.C1 - 2.0 > 4.0 * abs(self.C2)

    @property
    def gamma_H(self) -> float:
        """Certified reduced-Hessian lower bound (C1 - 2 - 4|C2|)/4."""
        return (self.C1 - 2.0 - 4.0 * abs(self.C2)) / 4.0

    def d_values(self) -> np.ndarray:
        prof = _PROFILES[self.d_profile](self.d_amplitude)
        return np.array([prof(k) for k in range(self.N)])


def _benchmark_callbacks(C1: float, C2: float, cosine: bool):
    """Analytic derivatives of the benchmark stage cost and dynamics."""

    def stage_cost(k, x, u, d):
        dx = x[0] - d[0]
        du = u[0] - d[0]
        val = C1 * dx * dx - C2 * du * du
        if cosine:
            val += 2.0 * math.cos(dx) ** 2
        return val

    def stage_cost_grad(k, x, u, d):
        dx = x[0] - d[0]
        du = u[0] - d[0]
        gx = 2.0 * C1 * dx
        if cosine:
            gx += -2.0 * math.sin(2.0 * dx)
        gu = -2.0 * C2 * du
        return np.array([gx]), np.array([gu])

    def stage_cost_hess(k, x, u, d):
        dx = x[0] - d[0]
        hxx = 2.0 * C1
        if cosine:
            hxx += -4.0 * math.cos(2.0 * dx)
        return (
            np.array([[hxx]]),
            np.zeros((1, 1)),
            np.array([[-2.0 * C2]]),
        )

    def terminal_cost(xN):
        return C1 * xN[0] * xN[0]

    def terminal_cost_grad(xN):
        return np.array([2.0 * C1 * xN[0]])

    def terminal_cost_hess(xN):
        return np.array([[2.0 * C1]])

    def dynamics(k, x, u, d):
        return np.array([x[0] + u[0] + d[0]])

    def dynamics_jac(k, x, u, d):
        return np.array([[1.0]]), np.array([[1.0]])

    def dynamics_hess_contract(k, x, u, d, lam):
        z = np.zeros((1, 1))
        return z, z, z

    return dict(
        stage_cost=stage_cost,
        stage_cost_grad=stage_cost_grad,
        stage_cost_hess=stage_cost_hess,
        terminal_cost=terminal_cost,
        terminal_cost_grad=terminal_cost_grad,
        terminal_cost_hess=terminal_cost_hess,
        dynamics=dynamics,
        dynamics_jac=dynamics_jac,
        dynamics_hess_contract=dynamics_hess_contract,
    )


def make_benchmark(params: BenchmarkParams) -> ProblemModel:
    """Scalar tracking benchmark with analytic derivatives.

    x_0 = 0; references follow the configured profile.  The SOSC certificate
    holds whenever C1 - 2 > 4|C2| with gamma_H = (C1 - 2 - 4|C2|)/4, and the
    unit dynamics Jacobians give a one-step controllability certificate
    (gamma_C = 1 with t = 1).
    """
    dims = Dimensions(n_x=1, n_u=1, n_d=1, N=params.N)
    d_vals = params.d_values()
    refs = tuple([np.zeros(1)] + [np.array([v]) for v in d_vals])
    cbs = _benchmark_callbacks(params.C1, params.C2, cosine=True)
    return ProblemModel(dims=dims, refs=refs, meta={"params": params}, **cbs)


def make_lq_benchmark(params: BenchmarkParams) -> ProblemModel:
    """Benchmark with the cosine term removed: quadratic costs, affine dynamics."""
    dims = Dimensions(n_x=1, n_u=1, n_d=1, N=params.N)
    d_vals = params.d_values()
    refs = tuple([np.zeros(1)] + [np.array([v]) for v in d_vals])
    cbs = _benchmark_callbacks(params.C1, params.C2, cosine=False)
    return ProblemModel(dims=dims, refs=refs, meta={"params": params, "lq": True}, **cbs)


def make_quadratic_model(
    Q: np.ndarray,
    S: np.ndarray,
    R: np.ndarray,
    A: np.ndarray,
    B: np.ndarray,
    QN: np.ndarray,
    x0: np.ndarray,
    N: int,
    qx: np.ndarray | None = None,
    qu: np.ndarray | None = None,
    c: np.ndarray | None = None,
) -> ProblemModel:
    """Time-invariant linear-quadratic model, mainly for tests.

    Stage cost 0.5*(x'Qx + 2 u'Sx + u'Ru) + qx'x + qu'u, terminal 0.5 x'QN x,
    dynamics A x + B u + c.  References are unused placeholders (n_d = 1,
    d_k = 0).
    """
    Q, S, R = np.atleast_2d(Q), np.atleast_2d(S), np.atleast_2d(R)
    A, B, QN = np.atleast_2d(A), np.atleast_2d(B), np.atleast_2d(QN)
    n_x, n_u = A.shape[0], B.shape[1]
    qx = np.zeros(n_x) if qx is None else np.asarray(qx, dtype=float)
    qu = np.zeros(n_u) if qu is None else np.asarray(qu, dtype=float)
    c = np.zeros(n_x) if c is None else np.asarray(c, dtype=float)
    dims = Dimensions(n_x=n_x, n_u=n_u, n_d=1, N=N)
    refs = tuple([np.asarray(x0, dtype=float)] + [np.zeros(1)] * N)

    def stage_cost(k, x, u, d):
        return float(
            0.5 * (x @ Q @ x + u @ R @ u) + u @ S @ x + qx @ x + qu @ u
        )

    def stage_cost_grad(k, x, u, d):
        return Q @ x + S.T @ u + qx, R @ u + S @ x + qu

    def stage_cost_hess(k, x, u, d):
        return Q, S, R

    def terminal_cost(xN):
        return float(0.5 * xN @ QN @ xN)

    def terminal_cost_grad(xN):
        return QN @ xN

    def terminal_cost_hess(xN):
        return QN

    def dynamics(k, x, u, d):
        return A @ x + B @ u + c

    def dynamics_jac(k, x, u, d):
        return A, B

    def dynamics_hess_contract(k, x, u, d, lam):
        return (
            np.zeros((n_x, n_x)),
            np.zeros((n_u, n_x)),
            np.zeros((n_u, n_u)),
        )

    return ProblemModel(
        dims=dims,
        refs=refs,
        meta={"lq": True},
        stage_cost=stage_cost,
        stage_cost_grad=stage_cost_grad,
        stage_cost_hess=stage_cost_hess,
        terminal_cost=terminal_cost,
        terminal_cost_grad=terminal_cost_grad,
        terminal_cost_hess=terminal_cost_hess,
        dynamics=dynamics,
        dynamics_jac=dynamics_jac,
        dynamics_hess_contract=dynamics_hess_contract,
    )


# ---------------------------------------------------------------------------
# Finite-difference validation

_FD_STEP = float(np.cbrt(np.finfo(float).eps))


@dataclass
class DerivativeCheckReport:
    """Max relative finite-difference error per derivative block kind."""

    max_rel_err: dict
    worst_stage: dict
    rel_tol: float

    @property
    def passed(self) -> bool:
        return all(v <= self.rel_tol for v in self.max_rel_err.values())

    def failing_blocks(self) -> list:
        return [
            (kind, err, self.worst_stage[kind])
            for kind, err in self.max_rel_err.items()
            if err > self.rel_tol
        ]


def _fd_grad(f, v, h_scale=1.0):
    """Central-difference gradient of scalar f at v, per-coordinate step."""
    v = np.asarray(v, dtype=float)
    g = np.zeros_like(v)
    for i in range(v.size):
        h = _FD_STEP * max(1.0, abs(v[i])) * h_scale
        vp, vm = v.copy(), v.copy()
        vp[i] += h
        vm[i] -= h
        g[i] = (f(vp) - f(vm)) / (2.0 * h)
    return g


def _fd_jac(f, v):
    """Central-difference Jacobian of vector f at v: rows = outputs."""
    v = np.asarray(v, dtype=float)
    f0 = np.asarray(f(v))
    J = np.zeros((f0.size, v.size))
    for i in range(v.size):
        h = _FD_STEP * max(1.0, abs(v[i]))
        vp, vm = v.copy(), v.copy()
        vp[i] += h
        vm[i] -= h
        J[:, i] = (np.asarray(f(vp)) - np.asarray(f(vm))) / (2.0 * h)
    return J


def _rel_err(analytic, fd):
    analytic, fd = np.asarray(analytic), np.asarray(fd)
    scale = max(1.0, float(np.max(np.abs(fd))) if fd.size else 0.0)
    return float(np.max(np.abs(analytic - fd))) / scale if analytic.size else 0.0


def check_derivatives(model, point, rel_tol=1e-6):
    """Validate analytic derivative callbacks against central differences.

    ``point`` is a (Trajectory, DualTrajectory) pair.  Gradients are checked
    against differences of the cost/dynamics values; Hessian blocks against
    differences of the analytic gradients (second-order accurate at step
    h = eps^(1/3) scaled per coordinate).  Failures are reported, never
    raised.
    """
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    traj, dual = point
    dims = model.dims
    nx, nu = dims.n_x, dims.n_u
    kinds = [
        "cost_grad_x", "cost_grad_u", "cost_hess_xx", "cost_hess_ux",
        "cost_hess_uu", "dyn_jac_A", "dyn_jac_B", "dyn_hess_contract",
        "terminal_grad", "terminal_hess",
    ]
    worst = {k: 0.0 for k in kinds}
    worst_stage = {k: -1 for k in kinds}

    def record(kind, err, k):
        if err > worst[kind]:
            worst[kind] = err
            worst_stage[kind] = k

    for k in range(dims.N):
        x, u, d = traj.x[k], traj.u[k], model.d(k)
        lam = dual.at(k)
        z = np.concatenate([x, u])

        fd_g = _fd_grad(lambda v: model.stage_cost(k, v[:nx], v[nx:], d), z)
        gx, gu = model.stage_cost_grad(k, x, u, d)
        record("cost_grad_x", _rel_err(gx, fd_g[:nx]), k)
        record("cost_grad_u", _rel_err(gu, fd_g[nx:]), k)

        def grad_z(v):
            gxv, guv = model.stage_cost_grad(k, v[:nx], v[nx:], d)
            return np.concatenate([gxv, guv])

        fd_H = _fd_jac(grad_z, z)
        Gxx, Gux, Guu = model.stage_cost_hess(k, x, u, d)
        record("cost_hess_xx", _rel_err(Gxx, fd_H[:nx, :nx]), k)
        record("cost_hess_ux", _rel_err(Gux, fd_H[nx:, :nx]), k)
        record("cost_hess_uu", _rel_err(Guu, fd_H[nx:, nx:]), k)

        fd_J = _fd_jac(lambda v: model.dynamics(k, v[:nx], v[nx:], d), z)
        A, B = model.dynamics_jac(k, x, u, d)
        record("dyn_jac_A", _rel_err(A, fd_J[:, :nx]), k)
        record("dyn_jac_B", _rel_err(B, fd_J[:, nx:]), k)

        def lam_f_grad(v):
            Av, Bv = model.dynamics_jac(k, v[:nx], v[nx:], d)
            return np.concatenate([Av.T @ lam, Bv.T @ lam])

        fd_C = _fd_jac(lam_f_grad, z)
        Cxx, Cux, Cuu = model.dynamics_hess_contract(k, x, u, d, lam)
        C = np.zeros((nx + nu, nx + nu))
        C[:nx, :nx] = Cxx
        C[nx:, :nx] = Cux
        C[:nx, nx:] = Cux.T
        C[nx:, nx:] = Cuu
        record("dyn_hess_contract", _rel_err(C, fd_C), k)

    xN = traj.x[dims.N]
    fd_gN = _fd_grad(lambda v: model.terminal_cost(v), xN)
    record("terminal_grad", _rel_err(model.terminal_cost_grad(xN), fd_gN), dims.N)
    fd_HN = _fd_jac(lambda v: model.terminal_cost_grad(v), xN)
    record("terminal_hess", _rel_err(model.terminal_cost_hess(xN), fd_HN), dims.N)

    return DerivativeCheckReport(max_rel_err=worst, worst_stage=worst_stage, rel_tol=rel_tol)
