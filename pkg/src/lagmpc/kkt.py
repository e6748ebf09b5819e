"""Stage-structured saddle-point KKT systems: assembly, solves, diagnostics.

For a window of stages [n1, n2] the Newton system is

    [ H   G' ] [dz  ]     [ grad_z L ]
    [ G   0  ] [dlam] = - [ grad_l L ]

with H = diag(H_n1, ..., H_{n2-1}, H_T) and G the initial-condition /
linearized-dynamics pattern (identity diagonal blocks, so the constraint
Jacobian always has full row rank).  Variables are interleaved per stage as
(lam_{k-1}, x_k, u_k) so the saddle matrix is banded with constant bandwidth
2*n_x + n_u - 1; factorization uses LAPACK banded LU (partial pivoting within
the band), giving O(window length) cost for fixed block sizes.

Structural probes: reduced-Hessian minimum eigenvalue (orthonormal null-space
basis from a QR of G'), controllability matrices of the linearized dynamics,
and an empirical measurement of the exponential block decay of the KKT
inverse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import lapack

__all__ = [
    "HorizonWindow",
    "SubproblemSpec",
    "WindowIterate",
    "KKTSystem",
    "DecayFitReport",
    "KKTSingularError",
    "assemble_kkt",
    "solve_saddle",
    "window_gradient",
    "window_lagrangian",
    "constraint_null_space",
    "reduced_hessian_min_eig",
    "controllability_matrix",
    "kkt_inverse_decay_probe",
    "mu_sosc_threshold",
]

# Pivot magnitudes below PIVOT_RTOL * max|K| are treated as singular.
PIVOT_RTOL = 1e-12
# Accepted solves must satisfy ||K sol - rhs|| <= SOLVE_RTOL * (1 + ||rhs||).
SOLVE_RTOL = 1e-10


class KKTSingularError(RuntimeError):
    """Numerically singular saddle matrix (SOSC/LICQ failure at the iterate)."""


@dataclass(frozen=True)
class HorizonWindow:
    """One receding horizon [n1, n2] (subproblem index i is 1-based)."""

    i: int
    n1: int
    n2: int
    is_last: bool

    def __post_init__(self):
        if not 0 <= self.n1 < self.n2:
            raise ValueError(f"window must satisfy 0 <= n1 < n2, got [{self.n1}, {self.n2}]")

    @property
    def length(self) -> int:
        """Number of stages carrying controls (n2 - n1)."""
        return self.n2 - self.n1


@dataclass
class SubproblemSpec:
    """Data defining one window subproblem: the extended reference.

    Bundles the inherited initial state, the reference slice d_{n1:n2}, the
    guess primal/dual at the terminal stage, and the terminal regularization
    weight mu.  ``terminal_modified`` is False exactly on the last window
    (n2 = N), where the plain terminal cost is used and mu plays no role.
    """

    window: HorizonWindow
    x_bar_n1: np.ndarray
    d_slice: tuple  # d_k for k = n1..n2-1, plus d_{n2} when terminal_modified
    mu: float
    terminal_modified: bool
    x0_n2: Optional[np.ndarray] = None
    u0_n2: Optional[np.ndarray] = None
    lambda0_n2: Optional[np.ndarray] = None

    def __post_init__(self):
        w = self.window
        if self.terminal_modified == w.is_last:
            raise ValueError("terminal modification must be off exactly on the last window")
        need = w.length + (1 if self.terminal_modified else 0)
        if len(self.d_slice) != need:
            raise ValueError(f"d_slice must hold {need} references, got {len(self.d_slice)}")
        if self.terminal_modified:
            for name in ("x0_n2", "u0_n2", "lambda0_n2"):
                if getattr(self, name) is None:
                    raise ValueError(f"{name} is required when the terminal objective is modified")

    def d(self, k: int) -> np.ndarray:
        """Reference d_k for a stage inside the window."""
        return self.d_slice[k - self.window.n1]


@dataclass
class WindowIterate:
    """Primal-dual point on a window: x_{n1..n2}, u_{n1..n2-1}, lam_{n1-1..n2-1}."""

    n1: int
    x: np.ndarray  # (W+1, n_x)
    u: np.ndarray  # (W, n_u)
    lam: np.ndarray  # (W+1, n_x); slot j holds lambda_{n1-1+j}

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        if self.x.shape[0] != self.u.shape[0] + 1 or self.lam.shape != self.x.shape:
            raise ValueError(
                f"inconsistent window iterate shapes x{self.x.shape} u{self.u.shape} "
                f"lam{self.lam.shape}"
            )

    @property
    def W(self) -> int:
        return self.u.shape[0]

    def copy(self) -> "WindowIterate":
        return WindowIterate(self.n1, self.x.copy(), self.u.copy(), self.lam.copy())

    def add_step(self, dz: np.ndarray, dlam: np.ndarray) -> "WindowIterate":
        """Return self + (dz, dlam), with dz in stage-packed primal order."""
        nx = self.x.shape[1]
        nu = self.u.shape[1]
        W = self.W
        dx, du = unpack_primal(dz, W, nx, nu)
        return WindowIterate(self.n1, self.x + dx, self.u + du,
                             self.lam + dlam.reshape(W + 1, nx))


def pack_primal(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Stack (x_0; u_0; ...; x_{W-1}; u_{W-1}; x_W) into a flat vector."""
    W, nu = u.shape
    nx = x.shape[1]
    z = np.empty(W * (nx + nu) + nx)
    body = z[: W * (nx + nu)].reshape(W, nx + nu)
    body[:, :nx] = x[:W]
    body[:, nx:] = u
    z[W * (nx + nu):] = x[W]
    return z


def unpack_primal(z: np.ndarray, W: int, nx: int, nu: int):
    """Inverse of pack_primal: returns (x (W+1, nx), u (W, nu))."""
    body = z[: W * (nx + nu)].reshape(W, nx + nu)
    x = np.empty((W + 1, nx))
    x[:W] = body[:, :nx]
    x[W] = z[W * (nx + nu):]
    return x, body[:, nx:].copy()


def _eval_window(model, window, iterate, spec, need_hessian: bool):
    """Evaluate gradient (and optionally Hessian/Jacobian blocks) on a window."""
    nx, nu = model.dims.n_x, model.dims.n_u
    if (window.n1, window.n2) != (spec.window.n1, spec.window.n2) or \
            spec.terminal_modified == window.is_last:
        raise ValueError(
            f"spec window [{spec.window.n1}, {spec.window.n2}] "
            f"(modified={spec.terminal_modified}) does not match window "
            f"[{window.n1}, {window.n2}] (is_last={window.is_last})"
        )
    W = window.length
    if iterate.W != W or iterate.x.shape[1] != nx or iterate.u.shape[1] != nu:
        raise ValueError(
            f"iterate shape mismatch: window length {W}, dims ({nx}, {nu}), "
            f"got x{iterate.x.shape} u{iterate.u.shape}"
        )
    x, u, lam = iterate.x, iterate.u, iterate.lam

    grad_z = np.empty((W, nx + nu))
    grad_lam = np.empty((W + 1, nx))
    grad_lam[0] = x[0] - spec.x_bar_n1
    Hk = np.empty((W, nx + nu, nx + nu)) if need_hessian else None
    As = np.empty((W, nx, nx))
    Bs = np.empty((W, nx, nu))

    for j in range(W):
        k = window.n1 + j
        d_k = spec.d(k)
        gx, gu = model.stage_cost_grad(k, x[j], u[j], d_k)
        A, B = model.dynamics_jac(k, x[j], u[j], d_k)
        As[j] = A
        Bs[j] = B
        grad_z[j, :nx] = gx + lam[j] - A.T @ lam[j + 1]
        grad_z[j, nx:] = gu - B.T @ lam[j + 1]
        grad_lam[j + 1] = x[j + 1] - model.dynamics(k, x[j], u[j], d_k)
        if need_hessian:
            Gxx, Gux, Guu = model.stage_cost_hess(k, x[j], u[j], d_k)
            Cxx, Cux, Cuu = model.dynamics_hess_contract(k, x[j], u[j], d_k, lam[j + 1])
            Hk[j, :nx, :nx] = Gxx - Cxx
            Hk[j, nx:, :nx] = Gux - Cux
            Hk[j, :nx, nx:] = (Gux - Cux).T
            Hk[j, nx:, nx:] = Guu - Cuu

    xT = x[W]
    if spec.terminal_modified:
        k = window.n2
        d_T = spec.d(k)
        u0, lam0 = spec.u0_n2, spec.lambda0_n2
        gx, _ = model.stage_cost_grad(k, xT, u0, d_T)
        A, _ = model.dynamics_jac(k, xT, u0, d_T)
        grad_xT = gx + lam[W] - A.T @ lam0 + spec.mu * (xT - spec.x0_n2)
        if need_hessian:
            Gxx, _, _ = model.stage_cost_hess(k, xT, u0, d_T)
            Cxx, _, _ = model.dynamics_hess_contract(k, xT, u0, d_T, lam0)
            HT = Gxx - Cxx + spec.mu * np.eye(nx)
        else:
            HT = None
    else:
        grad_xT = model.terminal_cost_grad(xT) + lam[W]
        HT = model.terminal_cost_hess(xT) if need_hessian else None

    gz = np.concatenate([grad_z.ravel(), grad_xT])
    return gz, grad_lam.ravel(), Hk, HT, As, Bs


def window_gradient(model, window, iterate, spec):
    """Gradient of the window Lagrangian: (grad wrt z, grad wrt lam), flat."""
    gz, gl, _, _, _, _ = _eval_window(model, window, iterate, spec, need_hessian=False)
    return gz, gl


def window_lagrangian(model, window, iterate, spec) -> float:
    """Value of the window Lagrangian (finite-difference reference for tests)."""
    W = window.length
    x, u, lam = iterate.x, iterate.u, iterate.lam
    val = -float(lam[0] @ spec.x_bar_n1)
    for j in range(W):
        k = window.n1 + j
        d_k = spec.d(k)
        val += model.stage_cost(k, x[j], u[j], d_k)
        val += float(lam[j] @ x[j])
        val -= float(lam[j + 1] @ model.dynamics(k, x[j], u[j], d_k))
    xT = x[W]
    val += float(lam[W] @ xT)
    if spec.terminal_modified:
        k = window.n2
        d_T = spec.d(k)
        val += model.stage_cost(k, xT, spec.u0_n2, d_T)
        val -= float(spec.lambda0_n2 @ model.dynamics(k, xT, spec.u0_n2, d_T))
        diff = xT - spec.x0_n2
        val += 0.5 * spec.mu * float(diff @ diff)
    else:
        val += model.terminal_cost(xT)
    return val


class KKTSystem:
    """Assembled saddle system over one window, with a banded factorization."""

    def __init__(self, window, spec, Hk, HT, As, Bs, rhs):
        self.window = window
        self.spec = spec
        self.Hk = Hk      # (W, nx+nu, nx+nu)
        self.HT = HT      # (nx, nx)
        self.As = As      # (W, nx, nx)
        self.Bs = Bs      # (W, nx, nu)
        self.rhs = rhs    # -(grad_z; grad_lam), standard ordering
        self.W = As.shape[0]
        self.nx = As.shape[1]
        self.nu = Bs.shape[2]
        self.n_primal = self.W * (self.nx + self.nu) + self.nx
        self.n_dual = (self.W + 1) * self.nx
        self.dim = self.n_primal + self.n_dual
        self._lu = None
        self._ipiv = None
        self._perm = None
        self._kl = 2 * self.nx + self.nu - 1

    # -- orderings ---------------------------------------------------------

    def _interleave_perm(self) -> np.ndarray:
        """int_of_std[s] = position of standard index s in the banded ordering."""
        if self._perm is not None:
            return self._perm
        nx, nu, W = self.nx, self.nu, self.W
        g = 2 * nx + nu
        perm = np.empty(self.dim, dtype=np.int64)
        for j in range(W):
            s = j * (nx + nu)
            perm[s:s + nx] = j * g + nx + np.arange(nx)
            perm[s + nx:s + nx + nu] = j * g + 2 * nx + np.arange(nu)
        perm[W * (nx + nu):self.n_primal] = W * g + nx + np.arange(nx)
        for j in range(W + 1):
            s = self.n_primal + j * nx
            perm[s:s + nx] = j * g + np.arange(nx)
        self._perm = perm
        return perm

    def _banded(self) -> np.ndarray:
        """LAPACK band storage of the interleaved saddle matrix."""
        nx, nu, W = self.nx, self.nu, self.W
        g = 2 * nx + nu
        kl = ku = self._kl
        ab = np.zeros((2 * kl + ku + 1, self.dim))
        rows_cache = {}

        def put(r0, c0, block):
            m, n = block.shape
            key = (m, n)
            if key not in rows_cache:
                rows_cache[key] = (np.arange(m)[:, None], np.arange(n)[None, :])
            ra, ca = rows_cache[key]
            ab[kl + ku + (r0 + ra) - (c0 + ca), c0 + ca] = block

        I = np.eye(nx)
        for j in range(W):
            p_lam = j * g
            p_x = j * g + nx
            p_u = j * g + 2 * nx
            p_lam1 = (j + 1) * g
            H = self.Hk[j]
            put(p_x, p_x, H[:nx, :nx])
            put(p_x, p_u, H[:nx, nx:])
            put(p_u, p_x, H[nx:, :nx])
            put(p_u, p_u, H[nx:, nx:])
            put(p_x, p_lam, I)
            put(p_lam, p_x, I)
            put(p_x, p_lam1, -self.As[j].T)
            put(p_lam1, p_x, -self.As[j])
            put(p_u, p_lam1, -self.Bs[j].T)
            put(p_lam1, p_u, -self.Bs[j])
        p_lam = W * g
        p_x = W * g + nx
        put(p_x, p_x, self.HT)
        put(p_x, p_lam, I)
        put(p_lam, p_x, I)
        return ab

    def max_abs(self) -> float:
        return max(
            float(np.max(np.abs(self.Hk))) if self.Hk.size else 0.0,
            float(np.max(np.abs(self.HT))),
            float(np.max(np.abs(self.As))),
            float(np.max(np.abs(self.Bs))),
            1.0,
        )

    # -- factorization and solves ------------------------------------------

    def factor(self):
        """Banded LU with partial pivoting; raises KKTSingularError if rank-deficient."""
        if self._lu is not None:
            return
        kl = self._kl
        ab = self._banded()
        lu, ipiv, info = lapack.dgbtrf(ab, kl, kl)
        if info < 0:
            raise ValueError(f"dgbtrf illegal argument {-info}")
        scale = self.max_abs()
        u_diag = np.abs(lu[2 * kl, :])
        if info > 0 or np.min(u_diag) < PIVOT_RTOL * scale:
            stage = int(np.argmin(u_diag)) // (2 * self.nx + self.nu) + self.window.n1
            raise KKTSingularError(
                f"singular KKT matrix on window {self.window.i} "
                f"[{self.window.n1}, {self.window.n2}] near stage {stage} "
                f"(min pivot {np.min(u_diag):.3e}, scale {scale:.3e})"
            )
        self._lu, self._ipiv = lu, ipiv

    def solve(self, rhs: Optional[np.ndarray] = None):
        """Solve K sol = rhs (defaults to the assembled Newton rhs).

        Returns (dz, dlam) split flat vectors in standard ordering.  Applies
        one step of iterative refinement if needed and raises if the residual
        still exceeds SOLVE_RTOL * (1 + ||rhs||).
        """
        b = self.rhs if rhs is None else np.asarray(rhs, dtype=float)
        sol = self._solve_raw(b)
        tol = SOLVE_RTOL * (1.0 + float(np.linalg.norm(b)))
        res = b - self.apply(sol)
        if np.linalg.norm(res) > tol:
            sol = sol + self._solve_raw(res)
            res = b - self.apply(sol)
            if np.linalg.norm(res) > tol:
                raise KKTSingularError(
                    f"saddle solve residual {np.linalg.norm(res):.3e} exceeds "
                    f"tolerance {tol:.3e} on window {self.window.i}"
                )
        return sol[: self.n_primal], sol[self.n_primal:]

    def _solve_raw(self, b: np.ndarray) -> np.ndarray:
        self.factor()
        perm = self._interleave_perm()
        bi = np.empty_like(b)
        bi[perm] = b
        xi, info = lapack.dgbtrs(self._lu, self._kl, self._kl, bi, self._ipiv)
        if info != 0:
            raise KKTSingularError(f"dgbtrs failed with info {info}")
        return xi[perm]

    def solve_many(self, B: np.ndarray) -> np.ndarray:
        """Solve with multiple right-hand sides (dim, m); no residual polish."""
        self.factor()
        perm = self._interleave_perm()
        Bi = np.empty_like(B)
        Bi[perm, :] = B
        Xi, info = lapack.dgbtrs(self._lu, self._kl, self._kl, Bi, self._ipiv)
        if info != 0:
            raise KKTSingularError(f"dgbtrs failed with info {info}")
        return Xi[perm, :]

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Matrix-vector product K @ v computed blockwise (standard ordering)."""
        nx, nu, W = self.nx, self.nu, self.W
        x, u = unpack_primal(v[: self.n_primal], W, nx, nu)
        lam = v[self.n_primal:].reshape(W + 1, nx)
        out_z = np.empty((W, nx + nu))
        zs = np.concatenate([x[:W], u], axis=1)
        Hz = np.einsum("kij,kj->ki", self.Hk, zs)
        ATl = np.einsum("kji,kj->ki", self.As, lam[1:])
        BTl = np.einsum("kji,kj->ki", self.Bs, lam[1:])
        out_z[:, :nx] = Hz[:, :nx] + lam[:W] - ATl
        out_z[:, nx:] = Hz[:, nx:] - BTl
        out_xT = self.HT @ x[W] + lam[W]
        out_lam = np.empty((W + 1, nx))
        out_lam[0] = x[0]
        out_lam[1:] = (
            x[1:]
            - np.einsum("kij,kj->ki", self.As, x[:W])
            - np.einsum("kij,kj->ki", self.Bs, u)
        )
        return np.concatenate([out_z.ravel(), out_xT, out_lam.ravel()])

    # -- dense views (diagnostics and small-scale tests) --------------------

    def dense_H(self) -> np.ndarray:
        nx, nu, W = self.nx, self.nu, self.W
        H = np.zeros((self.n_primal, self.n_primal))
        for j in range(W):
            s = j * (nx + nu)
            H[s:s + nx + nu, s:s + nx + nu] = self.Hk[j]
        H[-nx:, -nx:] = self.HT
        return H

    def dense_G(self) -> np.ndarray:
        nx, nu, W = self.nx, self.nu, self.W
        G = np.zeros((self.n_dual, self.n_primal))
        G[:nx, :nx] = np.eye(nx)
        for j in range(W):
            r = (j + 1) * nx
            s = j * (nx + nu)
            G[r:r + nx, s:s + nx] = -self.As[j]
            G[r:r + nx, s + nx:s + nx + nu] = -self.Bs[j]
            G[r:r + nx, s + nx + nu:s + 2 * nx + nu] = np.eye(nx)
        return G

    def dense(self) -> np.ndarray:
        K = np.zeros((self.dim, self.dim))
        K[: self.n_primal, : self.n_primal] = self.dense_H()
        G = self.dense_G()
        K[self.n_primal:, : self.n_primal] = G
        K[: self.n_primal, self.n_primal:] = G.T
        return K


def assemble_kkt(model, window, iterate, spec) -> KKTSystem:
    """Evaluate all saddle-system blocks and the Newton right-hand side.

    Blocks are evaluated at ``iterate``; the terminal Hessian block carries
    the +mu modification whenever the window is not last.  Raises on
    dimension mismatch or non-finite entries.
    """
    gz, gl, Hk, HT, As, Bs = _eval_window(model, window, iterate, spec, need_hessian=True)
    rhs = -np.concatenate([gz, gl])
    for name, arr in (("H", Hk), ("terminal H", HT), ("A", As), ("B", Bs), ("rhs", rhs)):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(
                f"non-finite {name} block assembling window {window.i} "
                f"[{window.n1}, {window.n2}]"
            )
    return KKTSystem(window, spec, Hk, HT, As, Bs, rhs)


def solve_saddle(kkt: KKTSystem):
    """Newton step of the window subproblem: solve K (dz; dlam) = rhs."""
    return kkt.solve()


# ---------------------------------------------------------------------------
# Structural probes


def constraint_null_space(G: np.ndarray) -> np.ndarray:
    """Orthonormal basis Z of null(G) via a complete QR of G'."""
    m, n = G.shape
    Q, R = np.linalg.qr(G.T, mode="complete")
    diag = np.abs(np.diag(R[:m, :m]))
    if m and np.min(diag) < PIVOT_RTOL * max(1.0, float(np.max(diag))):
        raise KKTSingularError("constraint Jacobian is numerically rank-deficient")
    return Q[:, m:]


def reduced_hessian_min_eig(kkt: KKTSystem) -> float:
    """Minimum eigenvalue of Z' H Z with Z spanning null(G)."""
    Z = constraint_null_space(kkt.dense_G())
    reduced = Z.T @ kkt.dense_H() @ Z
    return float(np.linalg.eigvalsh(reduced)[0])


def controllability_matrix(model, traj, k: int, t: int) -> np.ndarray:
    """Reachability blocks of the linearized dynamics over [k, k+t-1].

    Returns [B_{k+t-1}, A_{k+t-1} B_{k+t-2}, ..., (A_{k+t-1}...A_{k+1}) B_k],
    shape (n_x, t*n_u), Jacobians evaluated along ``traj`` and the model
    references.
    """
    N = model.dims.N
    if not 0 <= k <= N - 1:
        raise IndexError(f"stage {k} out of range [0, {N - 1}]")
    if not 1 <= t <= N - k:
        raise ValueError(f"evolution length t={t} out of range [1, {N - k}]")
    nx = model.dims.n_x
    P = np.eye(nx)
    blocks = []
    for m in range(t):
        j = k + t - 1 - m
        A, B = model.dynamics_jac(j, traj.x[j], traj.u[j], model.d(j))
        blocks.append(P @ B)
        P = P @ A
    return np.hstack(blocks)


def mu_sosc_threshold(upsilon: float, gamma_C: float, t: int) -> float:
    """Worst-case terminal weight 16*U*(U^(6t) - U^(4t)) / gamma_C^2.

    Diagnostic only: any mu at or above this value provably preserves the
    reduced-Hessian lower bound on truncated windows.  Practical runs use far
    smaller values.
    """
    if gamma_C <= 0 or t < 1:
        raise ValueError("gamma_C must be positive and t >= 1")
    return 16.0 * upsilon * (upsilon ** (6 * t) - upsilon ** (4 * t)) / gamma_C**2


@dataclass
class DecayFitReport:
    """Measured block norms of K^{-1} and their log-linear decay fit.

    ``block_norms`` maps (i, j, part) to the operator 2-norm of the response
    block, keyed by window-relative stage indices (part 1: primal/primal with
    i, j in [0, W]; part 2: primal response i, constraint source j in
    [-1, W-1]; part 3: multiplier response i, constraint source j in
    [-1, W-1]).  Only pairs within the fitted offset range are retained.
    """

    block_norms: dict
    fitted_rho: float
    fitted_logK: float
    r_squared: float
    max_offset: int
    n_points: int = 0

    @staticmethod
    def offset_of(i: int, j: int, part: int) -> int:
        """Offset a block_norms key was fitted at."""
        return _block_offset(i, j, part)


def _block_offset(i: int, j: int, part: int) -> int:
    """Offset conventions of the inverse-decay bounds, per part."""
    if part == 1:
        return abs(i - j)
    if part == 2:
        return i if j == -1 else abs(i - j)
    return i + 1 if j == -1 else abs(i + 1 - j)


def _batched_two_norm(blocks: np.ndarray) -> np.ndarray:
    """Largest singular value of each block in a (K, m, n) stack."""
    return np.linalg.svd(blocks, compute_uv=False)[:, 0]


def kkt_inverse_decay_probe(kkt: KKTSystem, max_offset: int) -> DecayFitReport:
    """Measure the per-block operator norms of K^{-1} and fit their decay.

    For every stage j the probe solves K b = a with unit right-hand sides
    supported on the primal block (l_j; r_j) and on the constraint slots
    alpha_j (including the initial-condition slot alpha_{-1}), then records
    the response norms ||(p_i; q_i)|| and ||beta_{i-1}|| per stage.  A least
    squares line through log(norm) vs offset over offsets <= max_offset gives
    the empirical decay rate rho and prefactor log Upsilon_K.
    """
    if max_offset < 1:
        raise ValueError("max_offset must be >= 1")
    nx, nu, W = kkt.nx, kkt.nu, kkt.W
    kkt.factor()

    prim_rows = np.arange(W * (nx + nu)).reshape(W, nx + nu)
    term_rows = np.arange(W * (nx + nu), W * (nx + nu) + nx)
    dual_rows = kkt.n_primal + np.arange((W + 1) * nx).reshape(W + 1, nx)

    def response_norms(cols: np.ndarray):
        """Per-stage norms of the solution block for unit rhs on ``cols``."""
        B = np.zeros((kkt.dim, cols.size))
        B[cols, np.arange(cols.size)] = 1.0
        X = kkt.solve_many(B)
        prim = np.empty(W + 1)
        prim[:W] = _batched_two_norm(X[prim_rows])
        prim[W] = np.linalg.svd(X[term_rows], compute_uv=False)[0]
        dual = _batched_two_norm(X[dual_rows])
        return prim, dual

    norms = {}
    for j in range(W + 1):
        cols = prim_rows[j] if j < W else term_rows
        prim, _ = response_norms(cols)
        for i in range(W + 1):
            if _block_offset(i, j, 1) <= max_offset:
                norms[(i, j, 1)] = float(prim[i])
    for slot in range(W + 1):
        j = slot - 1  # constraint source alpha_j; slot 0 is alpha_{-1}
        prim, dual = response_norms(dual_rows[slot])
        for i in range(W + 1):
            if _block_offset(i, j, 2) <= max_offset:
                norms[(i, j, 2)] = float(prim[i])
        for slot_i in range(W + 1):
            if _block_offset(slot_i - 1, j, 3) <= max_offset:
                norms[(slot_i - 1, j, 3)] = float(dual[slot_i])

    offs = np.array([_block_offset(i, j, p) for (i, j, p) in norms], dtype=float)
    vals = np.array(list(norms.values()))
    floor = float(np.max(vals)) * 1e-16 if vals.size else 0.0
    logs = np.log(np.maximum(vals, floor))
    slope, intercept = np.polyfit(offs, logs, 1)
    pred = slope * offs + intercept
    ss_res = float(np.sum((logs - pred) ** 2))
    ss_tot = float(np.sum((logs - np.mean(logs)) ** 2))
    r2 = 1.0 if ss_tot < np.finfo(float).tiny else 1.0 - ss_res / ss_tot
    return DecayFitReport(
        block_norms=norms,
        fitted_rho=float(np.exp(slope)),
        fitted_logK=float(intercept),
        r_squared=r2,
        max_offset=max_offset,
        n_points=int(offs.size),
    )
