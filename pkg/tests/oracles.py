"""Reference computations used as independent oracles in the tests."""
import numpy as np

from sparse_ilc.criterion import CUSTOM, FUSED, IDENTITY, SPARSE_FUSED, CriterionSpec, RegularizerSpec, WeightSpec
from sparse_ilc.lti import LiftedOperator

KINDS = (IDENTITY, FUSED, SPARSE_FUSED, CUSTOM)


def random_spec(rng, n, kind, w_f=0.0, w_df=0.0, lam_scale=1.0):
    include_first = kind == FUSED and n == 1
    custom = rng.normal(size=(int(rng.integers(1, 4)), n)) if kind == CUSTOM else None
    reg = RegularizerSpec(0.0, kind, fusion_weight=float(rng.uniform(0.2, 3.0)), custom=custom,
                          include_first=include_first)
    spec = CriterionSpec(n, WeightSpec.identity(), WeightSpec.scaled(w_f), WeightSpec.scaled(w_df), reg)
    return spec


def random_model(rng, n, diag=(0.8, 1.5), off=0.3):
    M = np.tril(rng.normal(scale=off, size=(n, n)), -1)
    M[np.diag_indices(n)] = rng.uniform(*diag, n) * rng.choice([-1.0, 1.0], n)
    return LiftedOperator(M)


def with_lam(spec, lam):
    r = spec.reg
    reg = RegularizerSpec(lam, r.kind, fusion_weight=r.fusion_weight, custom=r.custom, include_first=r.include_first)
    return CriterionSpec(spec.N, spec.W_e, spec.W_f, spec.W_df, reg)


def objective_pq(P, q, D, lam, X):
    """``1/2 x'Px - q'x + lam |Dx|_1`` for the rows of X."""
    X = np.atleast_2d(X)
    return 0.5 * np.einsum("ij,jk,ik->i", X, P, X) - X @ q + lam * np.sum(np.abs(X @ D.T), axis=1)


def search_box(P, q, D, lam):
    """Centre and radius of a ball holding every minimizer.

    With ``x_u = P^-1 q``, ``F(x) - F(x_u) >= mu/2 |x - x_u|^2 - lam |D x_u|_1``.
    """
    mu = float(np.linalg.eigvalsh(0.5 * (P + P.T))[0])
    xu = np.linalg.solve(P, q)
    return xu, float(np.sqrt(2.0 * lam * np.sum(np.abs(D @ xu)) / mu))


def grid_minimum(P, q, D, lam, step=1e-3):
    """Exhaustive search over the lattice ``step * Z^N`` inside the search box (N <= 2)."""
    n = P.shape[0]
    c, r = search_box(P, q, D, lam)
    axes = [step * np.arange(np.floor((c[i] - r) / step) - 1, np.ceil((c[i] + r) / step) + 2) for i in range(n)]
    if n == 1:
        X = axes[0][:, None]
        v = objective_pq(P, q, D, lam, X)
        k = int(np.argmin(v))
        return X[k], float(v[k])
    a = axes[0][:, None]
    b = axes[1][None, :]
    v = 0.5 * (P[0, 0] * a * a + (P[0, 1] + P[1, 0]) * a * b + P[1, 1] * b * b) - q[0] * a - q[1] * b
    for d0, d1 in D:
        v = v + lam * np.abs(d0 * a + d1 * b)
    i, k = np.unravel_index(int(np.argmin(v)), v.shape)
    return np.array([axes[0][i], axes[1][k]]), float(v[i, k])
