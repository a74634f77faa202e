"""Solvers for the ILC update criterion.

``lam == 0`` is the norm-optimal case and is solved in closed form.
Otherwise the generalized lasso

    minimize  1/2 f^T P f - q^T f + lam |D f|_1

is solved by ADMM on the split ``z = D f`` with a cached factorization of
``P + rho D^T D``. Whenever the sign pattern of ``z`` settles, an
active-set polish solves the equality-constrained quadratic exactly and
is accepted only if it passes the KKT certificate.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import csgraph
from scipy.optimize import lsq_linear

from . import kernels
from .criterion import (
    CUSTOM,
    FUSED,
    IDENTITY,
    SPARSE_FUSED,
    CriterionSpec,
    RegularizerSpec,
    WeightSpec,
    build_incremental_map,
    evaluate_criterion,
    smooth_value,
)
from .lti import LiftedOperator

log = logging.getLogger(__name__)


class SingularNormalMatrixError(np.linalg.LinAlgError):
    pass


class InfeasibleError(ValueError):
    def __init__(self, message, minimum):
        super().__init__(message)
        self.minimum = minimum


@dataclass(frozen=True)
class ExplicitGains:
    """Gains of the explicit update ``f_{j+1} = Q (f_j + L e_j)``."""

    L: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        L = np.asarray(self.L, dtype=np.float64)
        Q = np.asarray(self.Q, dtype=np.float64)
        if L.ndim != 2 or L.shape != Q.shape or L.shape[0] != L.shape[1]:
            raise ValueError("L and Q must be N x N matrices of equal size")
        if not (np.all(np.isfinite(L)) and np.all(np.isfinite(Q))):
            raise ValueError("gains must be finite")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "Q", Q)

    @property
    def N(self):
        return self.L.shape[0]


@dataclass
class SolverOptions:
    max_iterations: int = 50_000
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    # relative to mean(diag P) / mean(diag D^T D)
    rho: float = 1.0
    relaxation: float = 1.0
    adaptive_rho: bool = True
    polish: bool = True
    zero_threshold: float = 1e-9

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if not 1.0 <= self.relaxation < 2.0:
            raise ValueError("over-relaxation must lie in [1, 2)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class Solution:
    f: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    support: np.ndarray
    lam: float = 0.0
    smooth: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def cardinality(self) -> int:
        return int(self.support.size)


def soft_threshold(x, kappa) -> np.ndarray:
    """Proximal map of ``kappa |.|_1``: ``sign(x) max(|x| - kappa, 0)``."""
    if np.any(np.asarray(kappa) < 0):
        raise ValueError("threshold must be >= 0")
    return kernels.soft_threshold(x, kappa)


def snap_zeros(x: np.ndarray, threshold: float = 1e-9) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    scale = max(1.0, float(np.max(np.abs(x)))) if x.size else 1.0
    x[np.abs(x) <= threshold * scale] = 0.0
    return x


# ---------------------------------------------------------------------------
# closed form


def _weighted_blocks(J: LiftedOperator, W_e: WeightSpec, W_f: WeightSpec | None, W_df: WeightSpec):
    n = J.N
    blocks = [W_e.matrix(n) @ J.matrix]
    for W in (W_f, W_df):
        if W is not None and not W.is_zero:
            blocks.append(W.matrix(n))
    return blocks


def _qr_checked(blocks, name):
    A = np.vstack(blocks)
    if A.shape[0] < A.shape[1]:
        raise SingularNormalMatrixError("%s is singular (too few weighted rows)" % name)
    Qf, R = linalg.qr(A, mode="economic")
    d = np.abs(np.diag(R))
    if d.size and (d.min() == 0.0 or np.linalg.cond(R) > 1e15):
        raise SingularNormalMatrixError("%s is singular (condition number of its root %.3g)"
                                        % (name, np.linalg.cond(R) if d.min() > 0 else np.inf))
    return Qf, R


def norm_optimal_gains(J: LiftedOperator, W_e: WeightSpec, W_f: WeightSpec, W_df: WeightSpec) -> ExplicitGains:
    """Explicit gains of the quadratic (``lam = 0``) criterion.

    ``L = (J^T We J + Wdf)^-1 J^T We`` and ``Q = (J^T We J + Wf + Wdf)^-1 (J^T We J + Wdf)``
    (Gram forms), computed from QR factors of the stacked weighted rows
    rather than the normal matrices, whose condition number is squared.
    """
    n = J.N
    blocks = _weighted_blocks(J, W_e, None, W_df)
    Qf, R = _qr_checked(blocks, "J^T We J + Wdf")
    me = blocks[0].shape[0]
    L = linalg.solve_triangular(R, Qf[:me].T @ W_e.matrix(n))
    if W_f.is_zero:
        Q = np.eye(n)
    else:
        _, R2 = _qr_checked(_weighted_blocks(J, W_e, W_f, W_df), "J^T We J + Wf + Wdf")
        X = linalg.solve_triangular(R2, R.T, trans="T")
        Q = linalg.solve_triangular(R2, X @ R)
    return ExplicitGains(L, Q)


# ---------------------------------------------------------------------------
# penalty operators


class _Penalty:
    """``D`` with fast apply/adjoint for the structured kinds."""

    def __init__(self, reg: RegularizerSpec, n: int, rows: np.ndarray | None = None):
        self.kind = reg.kind
        self.n = n
        self.alpha = reg.fusion_weight
        self.include_first = reg.include_first
        self.dense = reg.matrix(n) if rows is None else rows
        self.m = self.dense.shape[0]

    @classmethod
    def from_matrix(cls, D: np.ndarray):
        reg = RegularizerSpec(0.0, CUSTOM, custom=D)
        return cls(reg, D.shape[1])

    def apply(self, x):
        if self.kind == IDENTITY:
            return x.copy()
        if self.kind == FUSED:
            d = kernels.diff_apply(x)
            return np.concatenate([x[:1], d]) if self.include_first else d
        if self.kind == SPARSE_FUSED:
            return np.concatenate([self.alpha * kernels.diff_apply(x), x])
        return self.dense @ x

    def adjoint(self, y):
        if self.kind == IDENTITY:
            return y.copy()
        if self.kind == FUSED:
            if self.include_first:
                out = kernels.diff_adjoint(y[1:])
                out[0] += y[0]
                return out
            return kernels.diff_adjoint(y)
        if self.kind == SPARSE_FUSED:
            k = self.n - 1
            return self.alpha * kernels.diff_adjoint(y[:k]) + y[k:]
        return self.dense.T @ y

    def gram(self):
        return self.dense.T @ self.dense


def _segment_labels(D, active, n, kind):
    """Contiguous segment label per sample and the labels not pinned to zero.

    Valid for the fused and sparse-fused penalties, where an active
    difference row joins two neighbours and an active sample row pins a
    sample (and hence its whole segment) to zero.
    """
    pinned = np.zeros(n, dtype=bool)
    if kind == FUSED and D.shape[0] == n:  # first row pins f[0]
        joined = active[1:]
        pinned[0] = active[0]
    elif kind == FUSED:
        joined = active
    else:
        joined = active[: n - 1] & np.any(D[: n - 1] != 0, axis=1)
        pinned = active[n - 1:]
    labels = np.concatenate([[0], np.cumsum(~joined)])
    dead = np.zeros(labels[-1] + 1, dtype=bool)
    dead[labels[pinned]] = True
    return labels, np.flatnonzero(~dead)


def _reduced_basis(D: np.ndarray, active: np.ndarray, n: int, kind: str) -> np.ndarray:
    """Columns spanning ``{x : D[active] x = 0}``.

    Structured kinds use segment indicators (exact 0/1 columns); custom D
    falls back to an SVD null space.
    """
    if not np.any(active):
        return np.eye(n)
    if kind == CUSTOM:
        return linalg.null_space(D[active])
    if kind == IDENTITY:
        return np.eye(n)[:, ~active]
    if kind in (FUSED, SPARSE_FUSED):
        labels, keep = _segment_labels(D, active, n, kind)
        return (labels[:, None] == keep[None, :]).astype(np.float64)
    # union-find over samples; "zero" marks samples forced to zero
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    zero = np.zeros(n, dtype=bool)
    for r in np.flatnonzero(active):
        nz = np.flatnonzero(D[r])
        if nz.size == 0:
            continue
        if nz.size == 1:
            zero[nz[0]] = True
        elif nz.size == 2 and D[r, nz[0]] == -D[r, nz[1]]:
            a, b = find(nz[0]), find(nz[1])
            if a != b:
                parent[b] = a
        else:
            return linalg.null_space(D[active])
    roots = np.array([find(i) for i in range(n)])
    dead = set(roots[zero].tolist())
    labels = [r for r in dict.fromkeys(roots.tolist()) if r not in dead]
    B = np.zeros((n, len(labels)))
    for col, lab in enumerate(labels):
        B[roots == lab, col] = 1.0
    return B


def _solve_psd(M, rhs, refine: int = 2):
    """Solve ``M x = rhs`` for symmetric PSD M; min-norm if singular."""
    try:
        c = linalg.cho_factor(M)
        x = linalg.cho_solve(c, rhs)
        # iterative refinement: M is often badly conditioned
        for _ in range(refine):
            x = x + linalg.cho_solve(c, rhs - M @ x)
        if np.all(np.isfinite(x)):
            return x, True
    except linalg.LinAlgError:
        pass
    x, *_ = linalg.lstsq(M, rhs, cond=1e-13)
    return x, False


def _components(Da: np.ndarray):
    """Group active rows that share coordinates (connected components)."""
    A = sparse.csr_matrix(Da != 0, dtype=np.int8)
    n_comp, labels = csgraph.connected_components(A @ A.T, directed=False)
    return n_comp, labels


def _dual_fit(base, D, act, lam):
    """Multipliers ``g`` in ``[-1, 1]`` on the active rows that best cancel ``base``.

    Returns ``(g_active, w)`` with ``w = base + lam D[act]^T g`` (the
    stationarity residual). The fit splits into independent blocks of
    rows sharing coordinates; each block is an unbounded least-squares
    solve unless that breaks the bounds, then a bounded one.
    """
    Dact = D[act]
    w = base.copy()
    ga = np.zeros(Dact.shape[0])
    if Dact.shape[0] == 0:
        return ga, w
    n_comp, labels = _components(Dact)
    order = np.argsort(labels, kind="stable")
    splits = np.flatnonzero(np.diff(labels[order])) + 1
    for rows in np.split(order, splits):
        sub = Dact[rows]
        cols = np.flatnonzero(np.any(sub != 0, axis=0))
        if cols.size == 0:
            continue
        # work in units of lam so solver tolerances are meaningful
        A = sub[:, cols].T
        rhs = -base[cols] / lam
        if rows.size == 1:
            a = A[:, 0]
            g = np.array([np.clip(float(a @ rhs) / float(a @ a), -1.0, 1.0)])
        else:
            g, *_ = np.linalg.lstsq(A, rhs, rcond=None)
            if np.max(np.abs(g)) > 1.0 + 1e-12:
                g = lsq_linear(A, rhs, bounds=(-1.0, 1.0), method="bvls", tol=1e-15, lsq_solver="exact").x
            g = np.clip(g, -1.0, 1.0)
        ga[rows] = g
        w[cols] = base[cols] + lam * (A @ g)
    return ga, w


def _residual_on(grad, D, lam, z, act):
    g = np.sign(z)
    g[act] = 0.0
    base = grad + lam * (D[~act].T @ g[~act])
    ga, w = _dual_fit(base, D, act, lam)
    g[act] = ga
    return float(np.max(np.abs(w), initial=0.0)), g


def kkt_residual(P, q, D, lam, x, threshold=1e-9):
    """Distance from stationarity ``0 in P x - q + lam D^T sign(D x)``.

    Returns ``(residual, g)`` where ``g`` (``|g| <= 1``, ``g_i = sign`` on
    nonzero rows) minimizes the residual; the residual is its inf-norm.
    Rows of ``D x`` below ``threshold`` (relative) may be treated as zero.
    """
    grad = P @ x - q
    if lam == 0 or D.shape[0] == 0:
        return float(np.max(np.abs(grad), initial=0.0)), np.zeros(D.shape[0])
    z = D @ x
    scale = max(1.0, float(np.max(np.abs(z))))
    loose = np.abs(z) <= threshold * scale
    best = _residual_on(grad, D, lam, z, loose)
    exact = z == 0.0
    if np.any(exact != loose):
        other = _residual_on(grad, D, lam, z, exact)
        if other[0] < best[0]:
            best = other
    return best


# ---------------------------------------------------------------------------
# generalized lasso engine


class GeneralizedLasso:
    """``min 1/2 x^T P x - q^T x + lam |D x|_1`` for fixed P and D.

    Factorizations are cached per rho so repeated solves (one per ILC
    trial) reuse them.
    """

    def __init__(self, P: np.ndarray, penalty: _Penalty, opts: SolverOptions | None = None):
        self.opts = opts or SolverOptions()
        self.P = np.asarray(P, dtype=np.float64)
        self.n = self.P.shape[0]
        self.pen = penalty
        self.D = penalty.dense
        self.DtD = penalty.gram()
        pd = float(np.mean(np.diag(self.P)))
        self.scale = pd if pd > 0 else 1.0
        dd = float(np.mean(np.diag(self.DtD))) if self.D.size else 1.0
        self.rho0 = self.opts.rho * self.scale / (dd if dd > 0 else 1.0)
        self._factors = {}
        self._warm = None

    def _factor(self, rho):
        key = float(rho)
        f = self._factors.get(key)
        if f is None:
            M = self.P + rho * self.DtD
            try:
                f = ("cho", linalg.cho_factor(M))
            except linalg.LinAlgError:
                f = ("pinv", np.linalg.pinv(M, rcond=1e-13))
            if len(self._factors) > 16:
                self._factors.clear()
            self._factors[key] = f
        return f

    def _xsolve(self, rho, rhs):
        kind, f = self._factor(rho)
        if kind == "cho":
            return linalg.cho_solve(f, rhs)
        return f @ rhs

    def objective(self, x, q, lam):
        return float(0.5 * x @ self.P @ x - q @ x + lam * np.sum(np.abs(self.pen.apply(x))))

    def _pattern_solve(self, act, s, q, lam):
        """Minimize the quadratic with ``D[act] x = 0`` and the signs ``s`` fixed."""
        rhs = q - lam * self.pen.adjoint(s)
        kind = self.pen.kind
        x = np.zeros(self.n)
        if kind == IDENTITY:
            keep = np.flatnonzero(~act)
            if keep.size:
                x[keep], _ = _solve_psd(self.P[np.ix_(keep, keep)], rhs[keep])
        elif kind in (FUSED, SPARSE_FUSED):
            labels, keep = _segment_labels(self.D, act, self.n, kind)
            if keep.size:
                starts = np.flatnonzero(np.diff(labels, prepend=-1))
                Ps = np.add.reduceat(np.add.reduceat(self.P, starts, axis=0), starts, axis=1)
                rs = np.add.reduceat(rhs, starts)
                y = np.zeros(starts.size)
                y[keep], _ = _solve_psd(Ps[np.ix_(keep, keep)], rs[keep])
                x = y[labels]
        else:
            B = _reduced_basis(self.D, act, self.n, kind)
            if B.shape[1]:
                y, _ = _solve_psd(B.T @ self.P @ B, B.T @ rhs)
                x = B @ y
        return x if np.all(np.isfinite(x)) else None

    def polish(self, z, q, lam, tol=None, max_steps: int = 400):
        """Monotone active-set refinement from the sign pattern of ``z``.

        The state is a set of rows of ``D x`` held at zero plus fixed signs
        on the others. Each step minimizes the quadratic for that state and
        moves towards the minimizer with a discrete line search over the
        points where a sign changes; when the minimizer is sign-consistent,
        active rows whose multipliers leave ``[-1, 1]`` are released. The
        true objective never increases. Returns ``(x, residual)`` for the
        last iterate, or ``None``.
        """
        thr = self.opts.zero_threshold * max(1.0, float(np.max(np.abs(z), initial=0.0)))
        act = np.abs(z) <= thr
        s = np.sign(z)
        s[act] = 0.0
        x = self._pattern_solve(act, s, q, lam)
        if x is None:
            return None
        Dx = self.pen.apply(x)
        act, s = self._state(Dx, act)
        res = None
        for _ in range(max_steps):
            x_new = self._pattern_solve(act, s, q, lam)
            if x_new is None:
                break
            Dn = self.pen.apply(x_new)
            if np.any((~act) & (s * Dn < 0)):
                x, Dx, hit, t = self._line_search(x, Dx, x_new, Dn, s, act, q, lam)
                act, s = self._state(Dx, act | hit)
                res = None
                continue
            x, Dx = x_new, Dn
            act, s = self._state(Dx, act)
            base = self.P @ x - q + lam * self.pen.adjoint(s)
            g, w = _dual_fit(base, self.D, act, lam)
            res = float(np.max(np.abs(w), initial=0.0))
            if (tol is not None and res <= tol) or not np.any(act):
                break
            # step along the steepest descent direction (minus the least-norm
            # subgradient); this fixes the signs of the rows that open up
            d = -w
            Dd = self.pen.apply(d)
            top = float(np.max(np.abs(Dd), initial=0.0))
            if top == 0.0:
                break
            frozen = act & (np.abs(Dd) <= 1e-10 * top)
            Dd[frozen] = 0.0
            x, Dx, hit, t = self._ray_search(x, Dx, d, Dd, q, lam)
            if t == 0.0:
                break
            act, s = self._state(Dx, frozen | hit)
            res = None
        if res is None:
            res, _ = kkt_residual(self.P, q, self.D, lam, x, self.opts.zero_threshold)
        return x, res

    def _state(self, Dx, act):
        """Rows exactly at zero (or forced) are active; the rest keep their sign."""
        act = act | (Dx == 0.0)
        s = np.sign(Dx)
        s[act] = 0.0
        return act.copy(), s

    def _ray_search(self, x0, D0, d, Dd, q, lam):
        """Exact minimization of the objective along ``x0 + t d``, ``t >= 0``.

        The objective is piecewise quadratic in ``t`` with breakpoints where
        a row of ``D x`` crosses zero.
        """
        a2 = 0.5 * float(d @ self.P @ d)
        b1 = float((self.P @ x0 - q) @ d)
        with np.errstate(divide="ignore", invalid="ignore"):
            tc = -D0 / Dd
        bps = np.unique(tc[(Dd != 0) & (D0 != 0) & (tc > 0)])
        edges = np.concatenate([[0.0], bps])
        upper = np.concatenate([bps, [np.inf]])
        # slope of the l1 part inside each interval
        mid = np.where(np.isfinite(upper), 0.5 * (edges + upper), edges + 1.0)
        slopes = np.sign(D0[None, :] + mid[:, None] * Dd[None, :]) @ Dd
        with np.errstate(divide="ignore", invalid="ignore"):
            tstar = np.where(a2 > 0, -(b1 + lam * slopes) / (2 * a2), np.inf)
        tstar = np.clip(tstar, edges, upper)
        cand = np.unique(np.concatenate([edges, tstar[np.isfinite(tstar)]]))
        obj = a2 * cand**2 + b1 * cand + lam * np.abs(D0[None, :] + cand[:, None] * Dd[None, :]).sum(axis=1)
        t = float(cand[int(np.argmin(obj))])
        x = x0 + t * d
        Dx = D0 + t * Dd
        hit = np.zeros(D0.size, dtype=bool)
        if t > 0:
            hit = (D0 != 0) & np.isclose(tc, t, rtol=1e-12, atol=0.0)
        hit |= (D0 == 0.0) & (Dd == 0.0)
        Dx[hit] = 0.0
        return x, Dx, hit, t

    def _line_search(self, x0, D0, x1, D1, s, act, q, lam):
        d = x1 - x0
        dz = D1 - D0
        cross = (~act) & (s * D1 < 0) & (dz != 0)
        ts = np.unique(np.clip(-D0[cross] / dz[cross], 0.0, 1.0))
        ts = np.append(ts, 1.0)
        g0 = self.P @ x0 - q
        a2 = 0.5 * float(d @ self.P @ d)
        b1 = float(g0 @ d)
        l1 = np.abs(D0[None, :] + ts[:, None] * dz[None, :]).sum(axis=1)
        obj = a2 * ts**2 + b1 * ts + lam * l1
        k = int(np.argmin(obj))
        t = ts[k]
        x = x0 + t * d
        Dx = self.pen.apply(x)
        hit = np.zeros(act.size, dtype=bool)
        if t < 1.0:
            with np.errstate(divide="ignore", invalid="ignore"):
                tc = -D0 / dz
            hit = cross & np.isclose(tc, t, rtol=1e-12, atol=0.0)
            Dx[hit] = 0.0
        return x, Dx, hit, t

    def tolerance(self, q, lam):
        # KKT tolerance in gradient units
        qs = float(np.max(np.abs(q), initial=0.0))
        return self.opts.abs_tol * self.scale + self.opts.rel_tol * max(qs, lam, self.scale * 1e-300)

    def solve(self, q, lam, x0=None, warm=True):
        opts = self.opts
        n, m = self.n, self.pen.m
        q = np.asarray(q, dtype=np.float64)
        t0 = time.perf_counter()
        diag = {}
        tol = self.tolerance(q, lam)
        if lam == 0 or m == 0:
            x, ok = _solve_psd(self.P, q)
            res, _ = kkt_residual(self.P, q, self.D, 0.0, x)
            diag["unique"] = ok
            return x, res, 0, bool(ok or res <= tol), diag

        if warm and self._warm is not None and x0 is None:
            z, u, rho = self._warm
            z, u = z.copy(), u.copy()
        else:
            x_init = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64)
            z = self.pen.apply(x_init)
            u = np.zeros(m)
            rho = self.rho0
        alpha = opts.relaxation
        best = None
        last_pattern = None
        stable_since = 0
        polished_patterns = set()
        converged = False
        k = 0
        next_polish_check = 10
        for k in range(1, opts.max_iterations + 1):
            x = self._xsolve(rho, q + rho * self.pen.adjoint(z - u))
            Dx = self.pen.apply(x)
            Dxh = alpha * Dx + (1.0 - alpha) * z
            z_old = z
            z = kernels.soft_threshold(Dxh + u, lam / rho)
            u = u + Dxh - z
            r_norm = np.linalg.norm(Dx - z)
            s_norm = rho * np.linalg.norm(self.pen.adjoint(z - z_old))
            # tolerances in units of the normalized problem (Hessian scale 1)
            eps_pri = np.sqrt(m) * opts.abs_tol + opts.rel_tol * max(np.linalg.norm(Dx), np.linalg.norm(z))
            eps_dual = (np.sqrt(n) * opts.abs_tol * self.scale
                        + opts.rel_tol * rho * np.linalg.norm(self.pen.adjoint(u)))
            admm_done = r_norm <= eps_pri and s_norm <= eps_dual

            if opts.polish and (k >= next_polish_check or admm_done):
                next_polish_check = k + 10
                pattern = np.sign(z).astype(np.int8).tobytes()
                if pattern == last_pattern:
                    stable_since += 10
                else:
                    stable_since = 0
                    last_pattern = pattern
                if (stable_since >= 30 or admm_done) and pattern not in polished_patterns:
                    polished_patterns.add(pattern)
                    got = self.polish(z, q, lam, tol)
                    diag["polish_attempts"] = diag.get("polish_attempts", 0) + 1
                    if got is not None:
                        xp, res = got
                        if best is None or res < best[1]:
                            best = (xp, res)
                        if res <= tol:
                            converged = True
                            diag["polished"] = True
                            break
            if admm_done and not opts.polish:
                converged = True
                break
            if admm_done and opts.polish and best is not None and best[1] <= tol:
                converged = True
                break
            if opts.adaptive_rho and k % 10 == 0:
                s_hat = s_norm / self.scale
                if r_norm > 10.0 * s_hat:
                    rho, u = rho * 2.0, u / 2.0
                elif s_hat > 10.0 * r_norm:
                    rho, u = rho / 2.0, u * 2.0

        if opts.polish and not converged:
            got = self.polish(z, q, lam, tol)
            diag["polish_attempts"] = diag.get("polish_attempts", 0) + 1
            if got is not None and (best is None or got[1] < best[1]):
                best = got
                converged = got[1] <= tol
        self._warm = (z.copy(), u.copy(), rho)
        x_admm = x
        res_admm, _ = kkt_residual(self.P, q, self.D, lam, x_admm, opts.zero_threshold)
        # a certified polished point has exact zeros; keep it over the raw iterate
        if best is None or (best[1] > tol and res_admm < best[1]):
            best = (x_admm, res_admm)
        x, res = best
        if not converged:
            converged = res <= tol
        diag["rho"] = rho
        diag["seconds"] = time.perf_counter() - t0
        diag["tolerance"] = tol
        return x, res, k, converged, diag


# ---------------------------------------------------------------------------
# ILC update


class UpdateSolver:
    """Reusable solver for one ``(CriterionSpec, J)`` pair."""

    def __init__(self, spec: CriterionSpec, J: LiftedOperator, opts: SolverOptions | None = None):
        if J.N != spec.N:
            raise ValueError("model has size %d, criterion expects %d" % (J.N, spec.N))
        self.spec = spec
        self.J = J
        self.opts = opts or SolverOptions()
        self.P = spec.hessian(J)
        self.pen = _Penalty(spec.reg, spec.N)
        self.engine = GeneralizedLasso(self.P, self.pen, self.opts)
        self.unique = None
        self._qr = None

    def _solve_quadratic(self, e_j, f_j, q):
        """Least-squares solve for the increment ``f - f_j`` via a cached QR factor."""
        spec, n = self.spec, self.spec.N
        if self._qr is None:
            blocks = _weighted_blocks(self.J, spec.W_e, spec.W_f, spec.W_df)
            try:
                self._qr = _qr_checked(blocks, "normal matrix")
            except SingularNormalMatrixError:
                self._qr = False
        if self._qr is False:
            x, ok = _solve_psd(self.P, q)
            res, _ = kkt_residual(self.P, q, self.pen.dense, 0.0, x)
            return x, res, 0, bool(ok), {"unique": False}
        Qf, R = self._qr
        rhs = [spec.W_e.apply(e_j)]
        if not spec.W_f.is_zero:
            rhs.append(-spec.W_f.apply(f_j))
        if not spec.W_df.is_zero:
            rhs.append(np.zeros(spec.W_df.matrix(n).shape[0]))
        step = linalg.solve_triangular(R, Qf.T @ np.concatenate(rhs))
        x = f_j + step
        res, _ = kkt_residual(self.P, q, self.pen.dense, 0.0, x)
        return x, res, 0, True, {"unique": True}

    def check_uniqueness(self):
        if self.unique is None:
            self.unique = self.spec.unique(self.J)
        return self.unique

    def solve(self, e_j, f_j, x0=None) -> Solution:
        spec, J = self.spec, self.J
        n = spec.N
        e_j = np.asarray(e_j, dtype=np.float64)
        f_j = np.asarray(f_j, dtype=np.float64)
        if e_j.shape != (n,) or f_j.shape != (n,):
            raise ValueError("e_j and f_j must have length %d" % n)
        q = spec.linear_term(J, e_j, f_j)
        lam = spec.lam
        if lam == 0:
            x, res, iters, conv, diag = self._solve_quadratic(e_j, f_j, q)
        else:
            x, res, iters, conv, diag = self.engine.solve(q, lam, x0=x0)
        if lam > 0 and spec.reg.kind == IDENTITY:
            x = snap_zeros(x, self.opts.zero_threshold)
        obj = evaluate_criterion(spec, e_j, f_j, x, J)
        # f_j itself is always feasible; never return something worse
        obj_stay = evaluate_criterion(spec, e_j, f_j, f_j, J)
        if obj_stay < obj:
            diag["kept_previous"] = True
            x, obj = f_j.copy(), obj_stay
            res, _ = kkt_residual(self.P, q, self.pen.dense, lam, x, self.opts.zero_threshold)
        diag["unique"] = diag.get("unique", True) if lam == 0 else self.check_uniqueness()
        support = np.flatnonzero(x)
        return Solution(
            f=x,
            objective=obj,
            kkt_residual=res,
            iterations=iters,
            converged=bool(conv),
            support=support,
            lam=lam,
            smooth=smooth_value(spec, e_j, f_j, x, J),
            diagnostics=diag,
        )


def solve_update(spec: CriterionSpec, e_j, f_j, J: LiftedOperator, opts: SolverOptions | None = None) -> Solution:
    """Minimize the ILC criterion over the next command signal."""
    return UpdateSolver(spec, J, opts).solve(e_j, f_j)


def lasso_lambda_max(J: LiftedOperator, W_e: WeightSpec, e_j, f_j, D_kind: str = IDENTITY) -> float:
    """Smallest ``lam`` whose pure-lasso update is exactly zero."""
    if D_kind != IDENTITY:
        raise ValueError("lambda_max formula only holds for the identity penalty")
    e_j = np.asarray(e_j, dtype=np.float64)
    f_j = np.asarray(f_j, dtype=np.float64)
    g = J.T @ (W_e.gram(J.N) @ (e_j + J @ f_j))
    return float(np.max(np.abs(g), initial=0.0))


def solve_fused_via_increments(spec: CriterionSpec, e_j, f_j, J: LiftedOperator,
                               opts: SolverOptions | None = None) -> Solution:
    """Fused lasso solved as a lasso on the increments ``D_f^i f``.

    The model becomes ``J (D_f^i)^-1`` (cumulative sum on the input side).
    Without ``include_first`` the first increment (``f[0]``) is left
    unpenalized, matching the (N-1)-row difference penalty.
    """
    if spec.reg.kind != FUSED:
        raise ValueError("increment transform requires the fused penalty")
    if not (spec.W_f.is_zero and spec.W_df.is_zero):
        raise ValueError("increment transform requires W_f = W_df = 0; use solve_update")
    n = spec.N
    e_j = np.asarray(e_j, dtype=np.float64)
    f_j = np.asarray(f_j, dtype=np.float64)
    Ji = LiftedOperator(np.cumsum(J.matrix[:, ::-1], axis=1)[:, ::-1], J.dt)
    We = spec.W_e.gram(n)
    P = Ji.T @ We @ Ji.matrix
    q = Ji.T @ (We @ (e_j + J @ f_j))
    if spec.reg.include_first:
        pen = _Penalty(RegularizerSpec(0.0, IDENTITY), n)
    else:
        pen = _Penalty.from_matrix(np.eye(n)[1:])
    opts = opts or SolverOptions()
    engine = GeneralizedLasso(P, pen, opts)
    xi, _, iters, conv, diag = engine.solve(q, spec.lam)
    f = np.cumsum(xi)
    # certificate on the original problem
    P0 = spec.hessian(J)
    q0 = spec.linear_term(J, e_j, f_j)
    res, _ = kkt_residual(P0, q0, spec.reg.matrix(n), spec.lam, f, opts.zero_threshold)
    diag["increments"] = xi
    return Solution(
        f=f,
        objective=evaluate_criterion(spec, e_j, f_j, f, J),
        kkt_residual=res,
        iterations=iters,
        converged=bool(conv),
        support=np.flatnonzero(f),
        lam=spec.lam,
        smooth=smooth_value(spec, e_j, f_j, f, J),
        diagnostics=diag,
    )


def _segments_active(spec: CriterionSpec, f: np.ndarray, threshold: float) -> np.ndarray:
    D = spec.reg.matrix(spec.N)
    z = D @ f
    return D, np.abs(z) <= threshold * max(1.0, float(np.max(np.abs(z), initial=0.0)))


def debias(sol: Solution, spec: CriterionSpec, e_j, f_j, J: LiftedOperator,
           zero_threshold: float = 1e-9) -> Solution:
    """Re-fit the quadratic part on the structure found by the l1 solve.

    The command is restricted to ``{f : (D f)_i = 0 wherever it is zero in
    the l1 solution}`` (support for the lasso, constant segments for the
    fused lasso) and the smooth criterion is minimized there.
    """
    n = spec.N
    e_j = np.asarray(e_j, dtype=np.float64)
    f_j = np.asarray(f_j, dtype=np.float64)
    f0 = np.asarray(sol.f, dtype=np.float64)
    D, act = _segments_active(spec, f0, zero_threshold)
    kind = spec.reg.kind
    B = _reduced_basis(D, act, n, kind)
    diag = {"basis_size": B.shape[1]}
    if B.shape[1] == 0:
        f = np.zeros(n)
    else:
        P = spec.hessian(J)
        q = spec.linear_term(J, e_j, f_j)
        Pr = B.T @ P @ B
        rank = np.linalg.matrix_rank(Pr)
        if rank < Pr.shape[0]:
            diag["rank_deficient"] = True
            log.warning("debias: restricted problem rank %d < %d; using min-norm solution", rank, Pr.shape[0])
        y, _ = _solve_psd(Pr, B.T @ q)
        f = B @ y
        if kind == IDENTITY:
            f[np.flatnonzero(f0 == 0.0)] = 0.0
    sm = smooth_value(spec, e_j, f_j, f, J)
    if sm > sol.smooth and np.isfinite(sol.smooth):
        # numerical noise only; keep the dominance guarantee
        diag["kept_original"] = True
        f, sm = f0.copy(), sol.smooth
    return Solution(
        f=f,
        objective=evaluate_criterion(spec, e_j, f_j, f, J),
        kkt_residual=float("nan"),
        iterations=0,
        converged=True,
        support=np.flatnonzero(f),
        lam=spec.lam,
        smooth=sm,
        diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# l1-minimal solution under a quadratic constraint


def solve_constrained_l1(A, b, M, t: float, opts: SolverOptions | None = None,
                         max_bisections: int = 60, slack: float = 1e-6) -> Solution:
    """``min |M x|_1  s.t.  1/2 |b - A x|^2 <= t`` by bisection on the multiplier.

    The penalized problem ``1/2 |b - A x|^2 + lam |M x|_1`` has a quadratic
    value that is non-decreasing in ``lam``; the largest ``lam`` meeting
    the constraint gives the l1-minimal point.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64)
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    n = A.shape[1]
    if M.shape[1] != n or A.shape[0] != b.shape[0]:
        raise ValueError("inconsistent dimensions")
    if np.linalg.matrix_rank(M) < n:
        raise ValueError("M must have full column rank")
    opts = opts or SolverOptions()
    P = A.T @ A
    q = A.T @ b

    def quad(x):
        r = b - A @ x
        return 0.5 * float(r @ r)

    x_ls, *_ = np.linalg.lstsq(A, b, rcond=None)
    qmin = quad(x_ls)
    if t < qmin * (1 - 1e-12) - 1e-300:
        raise InfeasibleError("level %.6g is below the attainable minimum %.6g" % (t, qmin), qmin)
    q0 = quad(np.zeros(n))
    if t >= q0:
        return Solution(np.zeros(n), 0.0, 0.0, 0, True, np.zeros(0, dtype=int), lam=float("inf"),
                        smooth=q0, diagnostics={"constraint": q0, "level": t, "bisections": 0})
    g, *_ = np.linalg.lstsq(M.T, q, rcond=None)
    lam_hi = float(np.max(np.abs(g))) * (1 + 1e-3)
    engine = GeneralizedLasso(P, _Penalty.from_matrix(M), opts)
    # lam = 0 end of the bracket is the least-squares point
    best = (x_ls, 0.0, qmin, float(np.sum(np.abs(M @ x_ls))))
    lo, hi = 0.0, lam_hi
    it = 0
    tol_ok = t * (1 + slack) + 1e-300
    for it in range(1, max_bisections + 1):
        lam = 0.5 * (lo + hi)
        x, _, _, _, _ = engine.solve(q, lam)
        x = snap_zeros(x, opts.zero_threshold)
        v = quad(x)
        if v <= tol_ok:
            lo = lam
            l1 = float(np.sum(np.abs(M @ x)))
            if l1 <= best[3]:
                best = (x, lam, v, l1)
            if abs(v - t) <= slack * t:
                break
        else:
            hi = lam
    x, lam, v, l1 = best
    res, _ = kkt_residual(P, q, M, lam, x, opts.zero_threshold)
    return Solution(
        f=x,
        objective=l1,
        kkt_residual=res,
        iterations=it,
        converged=bool(v <= tol_ok),
        support=np.flatnonzero(M @ x),
        lam=lam,
        smooth=v,
        diagnostics={"constraint": v, "level": t, "bisections": it, "lam_max": lam_hi},
    )


def incremental_inverse(n: int) -> np.ndarray:
    """Cumulative-sum matrix, the inverse of ``build_incremental_map(n)``."""
    return np.tril(np.ones((n, n)))


__all__ = [
    "ExplicitGains",
    "SolverOptions",
    "Solution",
    "GeneralizedLasso",
    "UpdateSolver",
    "norm_optimal_gains",
    "soft_threshold",
    "solve_update",
    "lasso_lambda_max",
    "solve_fused_via_increments",
    "debias",
    "solve_constrained_l1",
    "kkt_residual",
    "build_incremental_map",
]
