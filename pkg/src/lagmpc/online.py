"""Fast lag-L online MPC: one Newton step per receding horizon.

The strategy advances a length-M window by L stages at a time.  Each
subproblem warm-starts from the previous one ("discard the tail": the last L
post-Newton stages are never transferred, the freshly uncovered stages start
from the original guess), takes exactly one full Newton step on the
terminal-modified subproblem, and the emitted trajectory at stage k is the
*input* iterate of the last subproblem visiting k ("stop early").

Error bookkeeping against a reference solution records the per-stage errors
of every subproblem's input and output iterates, and aggregates them by scan
count for the superconvergence diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kkt import (
    HorizonWindow,
    SubproblemSpec,
    WindowIterate,
    assemble_kkt,
)
from .model import DualTrajectory, Trajectory

__all__ = [
    "MpcConfig",
    "Schedule",
    "MpcRunRecord",
    "GroupErrors",
    "build_schedule",
    "make_subproblem",
    "transfer_iterates",
    "one_newton_step",
    "run_mpc",
    "compute_group_errors",
]


@dataclass
class MpcConfig:
    """Run parameters: full horizon N, window length M = S*L with S > 2, lag L."""

    N: int
    M: int
    L: int
    mu: float
    initial_guess: tuple  # (Trajectory, DualTrajectory)

    def __post_init__(self):
        if self.L < 1:
            raise ValueError(f"lag L must be >= 1, got {self.L}")
        # S >= 2 so the transfer range [n1, n1 + M - 2L] is never empty; the
        # shipped benchmark cases include S = 2 windows.
        if self.M % self.L != 0 or self.M // self.L < 2:
            raise ValueError(
                f"window length M={self.M} must be S*L for integer S >= 2 (L={self.L})"
            )
        if self.M > self.N:
            raise ValueError(f"M={self.M} must not exceed N={self.N}")
        traj, dual = self.initial_guess
        if traj.N != self.N or dual.N != self.N:
            raise ValueError(
                f"initial guess horizon {traj.N}/{dual.N} does not match N={self.N}"
            )

    @property
    def S(self) -> int:
        return self.M // self.L


@dataclass
class Schedule:
    """Window plan plus the scan-count bookkeeping of the strategy."""

    N: int
    M: int
    L: int
    T: int
    windows: list  # HorizonWindow, index i-1

    def window(self, i: int) -> HorizonWindow:
        if not 1 <= i <= self.T:
            raise IndexError(f"subproblem index {i} out of range [1, {self.T}]")
        return self.windows[i - 1]

    def last_visitor(self, k: int) -> int:
        """Index T_k of the last subproblem whose window contains stage k."""
        if not 0 <= k <= self.N:
            raise IndexError(f"stage {k} out of range [0, {self.N}]")
        return min(k // self.L + 1, self.T)

    def scan_count(self, k: int, i: int) -> int:
        """s(k, i): subproblems before i that iterated on stage k.

        Counts h < i with k in [n1(h), n2(h)); the terminal stage of a window
        does not count as scanned.
        """
        if k >= self.N:
            return 0
        h_hi = min(i - 1, k // self.L + 1)
        h_lo = max(1, (k - self.M) // self.L + 2)
        return max(0, h_hi - h_lo + 1)

    def total_scans(self, k: int) -> int:
        """s_k = s(k, T_k): scans of stage k before its last visit."""
        return self.scan_count(k, self.last_visitor(k))

    def stage_groups(self) -> dict:
        """Partition of [0, N] into O_s = {k : s_k = s}."""
        groups: dict = {}
        for k in range(self.N + 1):
            groups.setdefault(self.total_scans(k), []).append(k)
        return groups


def build_schedule(cfg: MpcConfig) -> Schedule:
    """Window plan: n1(i) = (i-1)L, n2(i) = min(n1(i) + M, N), T windows."""
    N, M, L = cfg.N, cfg.M, cfg.L
    T = (N - M + L - 1) // L + 1
    windows = [
        HorizonWindow(i=i, n1=(i - 1) * L, n2=min((i - 1) * L + M, N), is_last=(i == T))
        for i in range(1, T + 1)
    ]
    return Schedule(N=N, M=M, L=L, T=T, windows=windows)


def make_subproblem(model, cfg, schedule, i, carried_state, guess) -> SubproblemSpec:
    """Subproblem data for window i: inherited initial state, reference slice,
    guess primal/dual at the terminal stage, and the terminal weight.

    The terminal objective of a non-last window is
    g_{n2}(x, u0_{n2}) - lambda0_{n2}' f_{n2}(x, u0_{n2}) + mu/2 ||x - x0_{n2}||^2;
    the last window keeps the plain terminal cost.
    """
    if not 1 <= i <= schedule.T:
        raise IndexError(f"subproblem index {i} out of range [1, {schedule.T}]")
    window = schedule.window(i)
    traj0, dual0 = guess
    modified = not window.is_last
    d_slice = tuple(
        model.d(k) for k in range(window.n1, window.n2 + (1 if modified else 0))
    )
    return SubproblemSpec(
        window=window,
        x_bar_n1=np.asarray(carried_state, dtype=float).copy(),
        d_slice=d_slice,
        mu=cfg.mu,
        terminal_modified=modified,
        x0_n2=traj0.x[window.n2].copy(),
        u0_n2=traj0.u[window.n2].copy() if modified else None,
        lambda0_n2=dual0.at(window.n2).copy() if modified else None,
    )


def transfer_iterates(prev: WindowIterate, guess, window: HorizonWindow,
                      M: int, L: int) -> WindowIterate:
    """Warm start of window i >= 2 from the previous window's Newton output.

    Stages [n1, n1 + M - 2L] copy the previous post-Newton iterate (the last
    L updated stages of the previous window are discarded); stages beyond
    restart from the original guess, and the terminal state is the guess
    state x0_{n2}.  The extra multiplier slot lambda_{n1-1} carries over from
    the previous output.
    """
    traj0, dual0 = guess
    n1, n2 = window.n1, window.n2
    nm = n1 + M - 2 * L
    if prev is None:
        raise ValueError("transfer needs the previous window outputs (use it for i >= 2)")
    if not (prev.n1 <= n1 and nm <= prev.n1 + prev.W):
        raise ValueError(
            f"previous outputs cover [{prev.n1}, {prev.n1 + prev.W}], "
            f"cannot transfer stages [{n1}, {nm}]"
        )
    W = window.length
    nx = prev.x.shape[1]
    nu = prev.u.shape[1]
    x = np.empty((W + 1, nx))
    u = np.empty((W, nu))
    lam = np.empty((W + 1, nx))

    ncopy = nm - n1 + 1  # stages n1..nm
    off = n1 - prev.n1
    x[:ncopy] = prev.x[off:off + ncopy]
    u[:ncopy] = prev.u[off:off + ncopy]
    lam[0] = prev.lam[off]  # lambda_{n1-1} = previous output multiplier
    lam[1:ncopy + 1] = prev.lam[off + 1:off + ncopy + 1]

    # (nm, n2): restart from the guess ("discard the tail")
    x[ncopy:W] = traj0.x[nm + 1:n2]
    u[ncopy:W] = traj0.u[nm + 1:n2]
    lam[ncopy + 1:] = dual0.lam[nm + 2:n2 + 1]
    x[W] = traj0.x[n2]
    return WindowIterate(n1=n1, x=x, u=u, lam=lam)


def one_newton_step(model, spec: SubproblemSpec, it: WindowIterate):
    """Exactly one full (unit step size) Newton step on the window subproblem.

    Returns (output iterate, assembled KKT system).  A singular KKT matrix
    aborts with window context.
    """
    kkt = assemble_kkt(model, spec.window, it, spec)
    dz, dlam = kkt.solve()
    return it.add_step(dz, dlam), kkt


@dataclass
class GroupErrors:
    """Scan-count maxima Omega_s and the per-L-group output error trend."""

    omega: dict  # s -> Omega_s
    group_index: np.ndarray  # 1-based group i covering stages [(i-1)L, iL)
    group_max_psi: np.ndarray  # max output error within each group


@dataclass
class MpcRunRecord:
    """Everything one strategy run produced.

    ``output`` follows the stop-early rule: stage k is the input iterate of
    subproblem T_k.  When a reference solution is attached, psi0/psi1 hold
    the per-stage input/output errors of every subproblem (terminal stages
    use the state-only norm) and ``groups`` the aggregated maxima.
    """

    config: MpcConfig
    schedule: Schedule
    output: tuple  # (Trajectory, DualTrajectory)
    inputs: list = field(repr=False, default_factory=list)
    post_newton: list = field(repr=False, default_factory=list)
    psi0: Optional[list] = None
    psi1: Optional[list] = None
    groups: Optional[GroupErrors] = None

    def transferred_stage_max_psi0(self, i: int) -> float:
        """Max input error of subproblem i over its warm-started stages."""
        if self.psi0 is None:
            raise ValueError("no reference errors recorded on this run")
        window = self.schedule.window(i)
        nm = window.n1 + self.schedule.M - 2 * self.schedule.L
        return float(np.max(self.psi0[i - 1][: nm - window.n1 + 1]))


def _stage_errors(it: WindowIterate, window: HorizonWindow, ref_traj, ref_dual):
    """Per-stage errors vs the reference; terminal stage is state-only."""
    n1, n2 = window.n1, window.n2
    W = window.length
    dx = it.x[:W] - ref_traj.x[n1:n2]
    du = it.u - ref_traj.u[n1:n2]
    dl = it.lam[1:] - ref_dual.lam[n1 + 1:n2 + 1]
    psi = np.empty(W + 1)
    psi[:W] = np.sqrt(
        np.sum(dx * dx, axis=1) + np.sum(du * du, axis=1) + np.sum(dl * dl, axis=1)
    )
    psi[W] = np.linalg.norm(it.x[W] - ref_traj.x[n2])
    return psi


def run_mpc(model, cfg: MpcConfig, oracle=None) -> MpcRunRecord:
    """Execute the lag-L strategy over the whole horizon.

    ``oracle`` is an optional reference solution with attributes ``z_star``
    and ``lambda_star``; when given, per-stage errors and group maxima are
    recorded.  Without it the record carries the output trajectory only.
    """
    if model.dims.N != cfg.N:
        raise ValueError(f"model horizon {model.dims.N} != config N {cfg.N}")
    guess_traj, guess_dual = cfg.initial_guess
    if not np.array_equal(guess_traj.x[0], model.x0):
        raise ValueError("initial guess must satisfy x_0 = xbar_0")
    schedule = build_schedule(cfg)
    nx, nu = model.dims.n_x, model.dims.n_u

    out_x = np.empty((cfg.N + 1, nx))
    out_u = np.empty((cfg.N, nu))
    out_lam = np.empty((cfg.N + 1, nx))
    out_lam[0] = guess_dual.at(-1)

    ref = None
    if oracle is not None:
        ref = (oracle.z_star, oracle.lambda_star)

    inputs: list = []
    posts: list = []
    psi0: list = []
    psi1: list = []

    prev: Optional[WindowIterate] = None
    for i in range(1, schedule.T + 1):
        window = schedule.window(i)
        if i == 1:
            n1, n2 = window.n1, window.n2
            it = WindowIterate(
                n1=n1,
                x=guess_traj.x[n1:n2 + 1].copy(),
                u=guess_traj.u[n1:n2].copy(),
                lam=guess_dual.lam[n1:n2 + 1].copy(),
            )
            carried = model.x0
        else:
            it = transfer_iterates(prev, cfg.initial_guess, window, cfg.M, cfg.L)
            carried = prev.x[window.n1 - prev.n1]
        spec = make_subproblem(model, cfg, schedule, i, carried, cfg.initial_guess)

        # stop-early outputs: stages whose last visitor is this subproblem
        k_lo = window.n1
        k_hi = cfg.N if i == schedule.T else window.n1 + cfg.L - 1
        for k in range(k_lo, k_hi + 1):
            out_x[k] = it.x[k - window.n1]
            if k <= cfg.N - 1:
                out_u[k] = it.u[k - window.n1]
                out_lam[k + 1] = it.lam[k - window.n1 + 1]

        post, _ = one_newton_step(model, spec, it)

        inputs.append(it)
        posts.append(post)
        if ref is not None:
            psi0.append(_stage_errors(it, window, *ref))
            psi1.append(_stage_errors(post, window, *ref))
        prev = post

    record = MpcRunRecord(
        config=cfg,
        schedule=schedule,
        output=(Trajectory(out_x, out_u), DualTrajectory(out_lam)),
        inputs=inputs,
        post_newton=posts,
        psi0=psi0 if ref is not None else None,
        psi1=psi1 if ref is not None else None,
    )
    if ref is not None:
        record.groups = compute_group_errors(record, schedule)
    return record


def compute_group_errors(record: MpcRunRecord, schedule: Schedule) -> GroupErrors:
    """Aggregate recorded errors: Omega_s per scan count, plus L-stage groups.

    Omega_s maximizes the input error over every subproblem's stages with
    scan count s.  The group trend takes, for each group of L consecutive
    stages, the maximum output error Psi0_{k, T_k} (the error of the emitted
    trajectory), matching the group error trend figures.
    """
    if record.psi0 is None:
        raise ValueError("record carries no reference errors")
    S = record.config.S
    omega = {s: 0.0 for s in range(S)}
    for i in range(1, schedule.T + 1):
        window = schedule.window(i)
        psi = record.psi0[i - 1]
        for j in range(window.length + 1):
            s = schedule.scan_count(window.n1 + j, i)
            if psi[j] > omega[s]:
                omega[s] = psi[j]

    # output error per stage: input error of the last visiting subproblem
    N, L = schedule.N, schedule.L
    out_err = np.empty(N)
    for k in range(N):
        i = schedule.last_visitor(k)
        out_err[k] = record.psi0[i - 1][k - schedule.window(i).n1]
    n_groups = (N + L - 1) // L
    gidx = np.arange(1, n_groups + 1)
    gmax = np.array(
        [np.max(out_err[(g - 1) * L:min(g * L, N)]) for g in gidx]
    )
    return GroupErrors(omega=omega, group_index=gidx, group_max_psi=gmax)
