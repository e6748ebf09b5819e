"""Full-horizon reference solver: damped Newton on the KKT conditions.

Solves the whole problem to high accuracy so that receding-horizon runs can
be scored against a trustworthy (z*, lambda*).  Globalization is a plain
Armijo backtracking line search on the KKT-residual merit ||grad L||; the
default tolerance 1e-10 keeps the reference at least two orders tighter than
any tracking error measured against it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kkt import (
    HorizonWindow,
    SubproblemSpec,
    WindowIterate,
    assemble_kkt,
    controllability_matrix,
    reduced_hessian_min_eig,
    window_gradient,
)
from .model import DualTrajectory, Trajectory

__all__ = [
    "OracleSolution",
    "AssumptionCertificates",
    "solve_full",
    "verify_solution_assumptions",
    "full_horizon_spec",
]

ARMIJO_SLOPE = 1e-4
BACKTRACK_FACTOR = 0.5
MAX_BACKTRACKS = 40


@dataclass
class OracleSolution:
    """High-accuracy primal-dual solution of the full-horizon problem."""

    z_star: Trajectory
    lambda_star: DualTrajectory
    kkt_residual: float
    iterations: int
    converged: bool


def full_horizon_spec(model) -> SubproblemSpec:
    """Window covering [0, N] with plain terminal cost and no regularization."""
    N = model.dims.N
    window = HorizonWindow(i=1, n1=0, n2=N, is_last=True)
    d_slice = tuple(model.d(k) for k in range(N))
    return SubproblemSpec(
        window=window,
        x_bar_n1=model.x0.copy(),
        d_slice=d_slice,
        mu=0.0,
        terminal_modified=False,
    )


def _merit(model, window, iterate, spec) -> float:
    gz, gl = window_gradient(model, window, iterate, spec)
    return float(np.sqrt(np.dot(gz, gz) + np.dot(gl, gl)))


def solve_full(model, init, tol: float = 1e-10, max_iter: int = 100) -> OracleSolution:
    """Damped Newton on the full-horizon KKT system.

    ``init`` is a (Trajectory, DualTrajectory) pair with x_0 = xbar_0; the
    initial state is re-pinned exactly after every update.  Stops when the
    KKT residual drops below ``tol``; returns converged=False with the best
    iterate if ``max_iter`` is exhausted or the line search stalls.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    traj, dual = init
    N = model.dims.N
    if traj.N != N or dual.N != N:
        raise ValueError(f"init horizon mismatch: model N={N}, got {traj.N}/{dual.N}")
    if not np.array_equal(traj.x[0], model.x0):
        raise ValueError("init must satisfy x_0 = xbar_0")

    spec = full_horizon_spec(model)
    window = spec.window
    it = WindowIterate(n1=0, x=traj.x.copy(), u=traj.u.copy(), lam=dual.lam.copy())

    best = it.copy()
    best_merit = _merit(model, window, it, spec)
    iters = 0
    converged = best_merit <= tol
    while not converged and iters < max_iter:
        kkt = assemble_kkt(model, window, it, spec)
        phi0 = float(np.linalg.norm(kkt.rhs))
        if phi0 <= tol:
            converged = True
            break
        dz, dlam = kkt.solve()
        alpha = 1.0
        accepted = False
        for _ in range(MAX_BACKTRACKS + 1):
            trial = it.add_step(alpha * dz, alpha * dlam)
            trial.x[0] = model.x0
            phi = _merit(model, window, trial, spec)
            if phi <= (1.0 - ARMIJO_SLOPE * alpha) * phi0:
                accepted = True
                break
            alpha *= BACKTRACK_FACTOR
        if not accepted:
            break
        it = trial
        iters += 1
        if phi < best_merit:
            best, best_merit = it.copy(), phi
        if phi <= tol:
            converged = True

    sol = best if not converged else it
    residual = _merit(model, window, sol, spec)
    return OracleSolution(
        z_star=Trajectory(sol.x.copy(), sol.u.copy()),
        lambda_star=DualTrajectory(sol.lam.copy()),
        kkt_residual=residual,
        iterations=iters,
        converged=bool(converged),
    )


@dataclass
class AssumptionCertificates:
    """Numerical check of the SOSC and controllability conditions."""

    reduced_hessian_min_eig: float
    gamma_H: float
    sosc_pass: bool
    controllability_min_eig: float
    controllability_per_stage: np.ndarray
    best_t_per_stage: np.ndarray
    gamma_C: float
    t: int
    controllability_pass: bool

    @property
    def all_pass(self) -> bool:
        return self.sosc_pass and self.controllability_pass


def verify_solution_assumptions(
    model, sol: OracleSolution, gamma_H: float, gamma_C: float, t: int
) -> AssumptionCertificates:
    """Certify the solution against user-supplied gamma_H, gamma_C, t.

    Reports the minimum reduced-Hessian eigenvalue at (z*, lambda*) and, for
    each stage k in [0, N-t], the largest over t_k in [1, t] of the minimum
    eigenvalue of Xi Xi' for the controllability matrix Xi_{k, t_k}.
    """
    if not sol.converged:
        raise ValueError("certificates require a converged oracle solution")
    spec = full_horizon_spec(model)
    it = WindowIterate(0, sol.z_star.x, sol.z_star.u, sol.lambda_star.lam)
    kkt = assemble_kkt(model, spec.window, it, spec)
    min_eig = reduced_hessian_min_eig(kkt)

    N = model.dims.N
    stages = np.arange(0, N - t + 1)
    per_stage = np.empty(stages.size)
    best_t = np.zeros(stages.size, dtype=int)
    for idx, k in enumerate(stages):
        best = -np.inf
        for tk in range(1, t + 1):
            xi = controllability_matrix(model, sol.z_star, int(k), tk)
            val = float(np.linalg.eigvalsh(xi @ xi.T)[0])
            if val > best:
                best = val
                best_t[idx] = tk
        per_stage[idx] = best

    ctrl_min = float(np.min(per_stage)) if per_stage.size else np.inf
    return AssumptionCertificates(
        reduced_hessian_min_eig=min_eig,
        gamma_H=gamma_H,
        sosc_pass=bool(min_eig >= gamma_H - 1e-8),
        controllability_min_eig=ctrl_min,
        controllability_per_stage=per_stage,
        best_t_per_stage=best_t,
        gamma_C=gamma_C,
        t=t,
        controllability_pass=bool(ctrl_min >= gamma_C - 1e-8),
    )
