"""The ILC update criterion and its penalty matrices.

The criterion for the next command ``f`` given the measured trial
``(e_j, f_j)`` and a lifted model ``J`` is::

    1/2 |W_e (e_j - J (f - f_j))|^2 + 1/2 |W_f f|^2
        + 1/2 |W_df (f - f_j)|^2 + lam |D f|_1
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lti import LiftedOperator

ZERO, SCALED, DIAGONAL, FULL = "zero", "scaled", "diagonal", "full"
IDENTITY, FUSED, SPARSE_FUSED, CUSTOM = "identity", "fused", "sparse_fused", "custom"


def build_fused_difference(n: int) -> np.ndarray:
    """(N-1) x N first-difference matrix with rows ``[-1, 1]``."""
    if n < 2:
        raise ValueError("fused difference needs N >= 2")
    d = np.zeros((n - 1, n))
    idx = np.arange(n - 1)
    d[idx, idx] = -1.0
    d[idx, idx + 1] = 1.0
    return d


def build_incremental_map(n: int) -> np.ndarray:
    """N x N map from a signal to its increments (first row keeps ``f[0]``).

    Its inverse is the lower-triangular all-ones (cumulative sum) matrix.
    """
    if n < 1:
        raise ValueError("N must be at least 1")
    d = np.eye(n)
    idx = np.arange(1, n)
    d[idx, idx - 1] = -1.0
    return d


def build_sparse_fused(n: int, fusion_weight: float) -> np.ndarray:
    """Stack ``[fusion_weight * D_f; I]`` of shape (2N-1) x N."""
    if fusion_weight < 0 or not np.isfinite(fusion_weight):
        raise ValueError("fusion weight must be finite and >= 0")
    diff = build_fused_difference(n) if n > 1 else np.zeros((0, n))
    return np.vstack([fusion_weight * diff, np.eye(n)])


@dataclass(frozen=True)
class WeightSpec:
    """A weighting matrix ``W``; only its Gram form ``W^T W`` enters the solvers."""

    kind: str = ZERO
    value: object = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == SCALED:
            v = float(self.value)
            if not np.isfinite(v) or v < 0:
                raise ValueError("scaled weight must be finite and >= 0")
            object.__setattr__(self, "value", v)
        elif self.kind == DIAGONAL:
            v = np.asarray(self.value, dtype=np.float64)
            if v.ndim != 1 or np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ValueError("diagonal weight must be a finite non-negative vector")
            object.__setattr__(self, "value", v)
        elif self.kind == FULL:
            v = np.asarray(self.value, dtype=np.float64)
            if v.ndim != 2 or not np.all(np.isfinite(v)):
                raise ValueError("full weight must be a finite matrix")
            object.__setattr__(self, "value", v)
        elif self.kind != ZERO:
            raise ValueError("unknown weight kind %r" % self.kind)

    @classmethod
    def zero(cls):
        return cls(ZERO)

    @classmethod
    def scaled(cls, s: float):
        return cls(SCALED, s)

    @classmethod
    def identity(cls):
        return cls(SCALED, 1.0)

    @classmethod
    def diagonal(cls, d):
        return cls(DIAGONAL, d)

    @classmethod
    def full(cls, m):
        return cls(FULL, m)

    @property
    def is_zero(self) -> bool:
        if self.kind == ZERO:
            return True
        if self.kind == SCALED:
            return self.value == 0.0
        return not np.any(self.value)

    def check(self, n: int):
        if self.kind == DIAGONAL and len(self.value) != n:
            raise ValueError("diagonal weight has length %d, expected %d" % (len(self.value), n))
        if self.kind == FULL and self.value.shape[1] != n:
            raise ValueError("full weight has %d columns, expected %d" % (self.value.shape[1], n))

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == ZERO:
            return np.zeros_like(x)
        if self.kind == SCALED:
            return self.value * x
        if self.kind == DIAGONAL:
            return self.value * x
        return self.value @ x

    def matrix(self, n: int) -> np.ndarray:
        self.check(n)
        if self.kind == ZERO:
            return np.zeros((n, n))
        if self.kind == SCALED:
            return self.value * np.eye(n)
        if self.kind == DIAGONAL:
            return np.diag(self.value)
        return self.value.copy()

    def gram(self, n: int) -> np.ndarray:
        """``W^T W`` (computed once per N)."""
        g = self._cache.get(n)
        if g is None:
            self.check(n)
            if self.kind == ZERO:
                g = np.zeros((n, n))
            elif self.kind == SCALED:
                g = self.value**2 * np.eye(n)
            elif self.kind == DIAGONAL:
                g = np.diag(self.value**2)
            else:
                g = self.value.T @ self.value
            g.setflags(write=False)
            self._cache[n] = g
        return g


@dataclass(frozen=True)
class RegularizerSpec:
    """``lam * |D f|_1``.

    ``include_first`` (fused only) prepends the row ``[1, 0, ...]`` so the
    first sample is penalized too, i.e. ``D`` becomes the N x N
    incremental map instead of the (N-1) x N difference matrix.
    """

    lam: float = 0.0
    kind: str = IDENTITY
    fusion_weight: float = 1.0
    custom: np.ndarray = None
    include_first: bool = False

    def __post_init__(self):
        lam = float(self.lam)
        if not np.isfinite(lam) or lam < 0:
            raise ValueError("lambda must be finite and >= 0")
        object.__setattr__(self, "lam", lam)
        if self.kind not in (IDENTITY, FUSED, SPARSE_FUSED, CUSTOM):
            raise ValueError("unknown penalty kind %r" % self.kind)
        fw = float(self.fusion_weight)
        if self.kind == SPARSE_FUSED and (not np.isfinite(fw) or fw < 0):
            raise ValueError("fusion weight must be finite and >= 0")
        object.__setattr__(self, "fusion_weight", fw)
        if self.kind == CUSTOM:
            if self.custom is None:
                raise ValueError("custom penalty requires a matrix")
            m = np.atleast_2d(np.asarray(self.custom, dtype=np.float64))
            if not np.all(np.isfinite(m)):
                raise ValueError("custom penalty matrix must be finite")
            object.__setattr__(self, "custom", m)

    def matrix(self, n: int) -> np.ndarray:
        if self.kind == IDENTITY:
            return np.eye(n)
        if self.kind == FUSED:
            if self.include_first:
                return build_incremental_map(n)
            return build_fused_difference(n)
        if self.kind == SPARSE_FUSED:
            return build_sparse_fused(n, self.fusion_weight)
        if self.custom.shape[1] != n:
            raise ValueError("custom penalty has %d columns, expected %d" % (self.custom.shape[1], n))
        return self.custom

    def norm(self, f: np.ndarray) -> float:
        """``|D f|_1`` without forming D for the structured kinds."""
        f = np.asarray(f, dtype=np.float64)
        if self.kind == IDENTITY:
            return float(np.sum(np.abs(f)))
        if self.kind == FUSED:
            s = float(np.sum(np.abs(np.diff(f))))
            return s + abs(f[0]) if self.include_first else s
        if self.kind == SPARSE_FUSED:
            return float(self.fusion_weight * np.sum(np.abs(np.diff(f))) + np.sum(np.abs(f)))
        return float(np.sum(np.abs(self.custom @ f)))


@dataclass(frozen=True)
class CriterionSpec:
    N: int
    W_e: WeightSpec = field(default_factory=WeightSpec.identity)
    W_f: WeightSpec = field(default_factory=WeightSpec.zero)
    W_df: WeightSpec = field(default_factory=WeightSpec.zero)
    reg: RegularizerSpec = field(default_factory=RegularizerSpec)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        for w in (self.W_e, self.W_f, self.W_df):
            w.check(self.N)
        if self.reg.kind == FUSED and self.N < 2 and not self.reg.include_first:
            raise ValueError("the fused penalty needs N >= 2")
        if self.reg.kind == CUSTOM and self.reg.custom.shape[1] != self.N:
            raise ValueError("custom penalty matrix must have N columns")

    @property
    def lam(self) -> float:
        return self.reg.lam

    def hessian(self, J: LiftedOperator) -> np.ndarray:
        """Hessian of the smooth part: ``J^T We J + Wf + Wdf`` (Gram forms)."""
        n = self.N
        return J.T @ self.W_e.gram(n) @ J.matrix + self.W_f.gram(n) + self.W_df.gram(n)

    def linear_term(self, J: LiftedOperator, e_j: np.ndarray, f_j: np.ndarray) -> np.ndarray:
        """``q`` with smooth part ``1/2 f^T P f - q^T f + const``."""
        n = self.N
        We = self.W_e.gram(n)
        return J.T @ (We @ (e_j + J @ f_j)) + self.W_df.gram(n) @ f_j

    def unique(self, J: LiftedOperator) -> bool:
        """True when the minimizer is guaranteed unique (strictly convex smooth part,
        or a positive penalty through a full-column-rank D)."""
        P = self.hessian(J)
        ev = np.linalg.eigvalsh(0.5 * (P + P.T))
        if ev[0] > 1e-12 * max(ev[-1], np.finfo(float).tiny):
            return True
        if self.lam > 0:
            D = self.reg.matrix(self.N)
            return np.linalg.matrix_rank(D) == self.N
        return False


def _check_len(n, **vecs):
    out = []
    for name, v in vecs.items():
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (n,):
            raise ValueError("%s has shape %s, expected (%d,)" % (name, v.shape, n))
        out.append(v)
    return out


def smooth_value(spec: CriterionSpec, e_j, f_j, f, J: LiftedOperator) -> float:
    """Quadratic part of the criterion."""
    e_j, f_j, f = _check_len(spec.N, e_j=e_j, f_j=f_j, f=f)
    if J.N != spec.N:
        raise ValueError("model has size %d, expected %d" % (J.N, spec.N))
    pred = e_j - J @ (f - f_j)
    return float(
        0.5 * np.sum(spec.W_e.apply(pred) ** 2)
        + 0.5 * np.sum(spec.W_f.apply(f) ** 2)
        + 0.5 * np.sum(spec.W_df.apply(f - f_j) ** 2)
    )


def evaluate_criterion(spec: CriterionSpec, e_j, f_j, f, J: LiftedOperator) -> float:
    value = smooth_value(spec, e_j, f_j, f, J)
    if spec.lam > 0:
        value += spec.lam * spec.reg.norm(f)
    return value
