"""Trial-domain ILC loop: plant trials with trial-varying noise and updates."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .criterion import CriterionSpec
from .lti import LiftedOperator, TransferFunction, lift, simulate
from .solvers import (
    ExplicitGains,
    SolverOptions,
    UpdateSolver,
    debias,
    solve_constrained_l1,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlantSetup:
    """True closed loop ``J_o``, learner model ``J``, noise filter ``H``.

    ``r`` is the trial-invariant error (what ``e`` equals with ``f = 0``
    and no noise).
    """

    J_o: object  # TransferFunction or LiftedOperator
    J: LiftedOperator
    H: TransferFunction
    noise_variance: float
    r: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        if r.ndim != 1 or not np.all(np.isfinite(r)):
            raise ValueError("reference must be a finite vector")
        object.__setattr__(self, "r", r)
        if self.noise_variance < 0:
            raise ValueError("noise variance must be >= 0")
        if self.J.N != r.size:
            raise ValueError("model size %d does not match N=%d" % (self.J.N, r.size))
        if isinstance(self.J_o, TransferFunction):
            if not self.J_o.stable:
                raise ValueError("true system must be stable")
        elif isinstance(self.J_o, LiftedOperator):
            if self.J_o.N != r.size:
                raise ValueError("true system size does not match N")
        else:
            raise TypeError("J_o must be a TransferFunction or LiftedOperator")

    @property
    def N(self) -> int:
        return self.r.size

    def noise_assumption_ok(self) -> bool:
        """Monic and bistable noise filter, as the spectral analysis assumes."""
        return self.H.monic and self.H.bistable

    def apply_true(self, f: np.ndarray) -> np.ndarray:
        if isinstance(self.J_o, TransferFunction):
            return simulate(self.J_o, f)
        return self.J_o @ f

    def lifted_true(self) -> LiftedOperator:
        if isinstance(self.J_o, LiftedOperator):
            return self.J_o
        return lift(self.J_o, self.N)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent counter-based (Philox) stream for one trial."""
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return np.random.Generator(np.random.Philox(key=int(seed) + (int(trial) << 64)))


def run_trial(plant: PlantSetup, f_j, rng: np.random.Generator | None) -> np.ndarray:
    """One execution: ``e = r - J_o f - H n`` with ``n ~ N(0, noise_variance)``."""
    f_j = np.asarray(f_j, dtype=np.float64)
    if f_j.shape != (plant.N,):
        raise ValueError("command has shape %s, expected (%d,)" % (f_j.shape, plant.N))
    e = plant.r - plant.apply_true(f_j)
    if plant.noise_variance > 0 and rng is not None:
        n = rng.normal(0.0, np.sqrt(plant.noise_variance), plant.N)
        e = e - simulate(plant.H, n)
    return e


def explicit_update(gains: ExplicitGains, f_j, e_j, alpha: float = 1.0) -> np.ndarray:
    """``Q (f_j + alpha L e_j)``."""
    if not 0 < alpha <= 1:
        raise ValueError("learning gain must lie in (0, 1]")
    return gains.Q @ (np.asarray(f_j) + alpha * (gains.L @ np.asarray(e_j)))


def inverse_model_gains(J: LiftedOperator, gain: float = 1.0) -> ExplicitGains:
    """``Q = I``, ``L = gain * J^-1`` (J lower triangular)."""
    n = J.N
    if J.lower_triangular:
        Jinv = linalg.solve_triangular(J.matrix, np.eye(n), lower=True)
    else:
        Jinv = np.linalg.inv(J.matrix)
    return ExplicitGains(gain * Jinv, np.eye(n))


# ---------------------------------------------------------------------------
# algorithms


@dataclass
class ExplicitILC:
    gains: ExplicitGains
    alpha: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("learning gain must lie in (0, 1]")


@dataclass
class OptimizationILC:
    spec: CriterionSpec
    options: SolverOptions = field(default_factory=SolverOptions)
    debias: bool = False


@dataclass
class BasisILC:
    """``f = Psi theta`` with l1-minimal ``theta`` under a quadratic level.

    The level is ``t_multiplier`` times the least attainable quadratic value
    of that trial's criterion.
    """

    Psi: np.ndarray
    spec: CriterionSpec
    t_multiplier: float = 1.0
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        self.Psi = np.atleast_2d(np.asarray(self.Psi, dtype=np.float64))
        if self.Psi.shape[0] != self.spec.N:
            raise ValueError("basis must have N rows")
        if self.t_multiplier < 1:
            raise ValueError("t multiplier must be >= 1")


@dataclass
class RunConfig:
    n_trials: int = 40
    seed: int = 0
    noise: bool = True
    n_conv: int = 0
    n_iter: int = 0

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.n_iter and self.n_conv + self.n_iter > self.n_trials:
            raise ValueError("averaging window n_conv + n_iter exceeds n_trials")


@dataclass
class TrialRecord:
    trial: int
    f: np.ndarray
    e: np.ndarray
    e_norm2: float
    f_card: int
    df_card: int
    objective: float
    converged: bool = True
    wall_ms: float = 0.0
    info: dict = field(default_factory=dict)


def trial_cost(spec: CriterionSpec | None, e, f) -> float:
    """``1/2 |W_e e|^2 + 1/2 |W_f f|^2 + lam |D f|_1`` for one trial."""
    if spec is None:
        return 0.5 * float(e @ e)
    v = 0.5 * float(np.sum(spec.W_e.apply(e) ** 2)) + 0.5 * float(np.sum(spec.W_f.apply(f) ** 2))
    if spec.lam > 0:
        v += spec.lam * spec.reg.norm(f)
    return v


def _make_record(j, f, e, spec, converged, wall_ms, info=None):
    return TrialRecord(
        trial=j,
        f=f,
        e=e,
        e_norm2=float(np.linalg.norm(e)),
        f_card=int(np.count_nonzero(f)),
        df_card=int(np.count_nonzero(np.diff(f))),
        objective=trial_cost(spec, e, f),
        converged=bool(converged),
        wall_ms=wall_ms,
        info=info or {},
    )


def _basis_step(alg: BasisILC, J: LiftedOperator, e_j, theta_j):
    spec, Psi = alg.spec, alg.Psi
    n = spec.N
    We, Wf, Wd = (spec.W_e.matrix(n), spec.W_f.matrix(n), spec.W_df.matrix(n))
    JPsi = J @ Psi
    blocks_A = [We @ JPsi]
    blocks_b = [We @ (e_j + JPsi @ theta_j)]
    if not spec.W_f.is_zero:
        blocks_A.append(Wf @ Psi)
        blocks_b.append(np.zeros(Wf.shape[0]))
    if not spec.W_df.is_zero:
        blocks_A.append(Wd @ Psi)
        blocks_b.append(Wd @ (Psi @ theta_j))
    A = np.vstack(blocks_A)
    b = np.concatenate(blocks_b)
    x_ls, *_ = np.linalg.lstsq(A, b, rcond=None)
    r = b - A @ x_ls
    t = alg.t_multiplier * 0.5 * float(r @ r)
    sol = solve_constrained_l1(A, b, np.eye(Psi.shape[1]), t, alg.options)
    return sol


def run_ilc(plant: PlantSetup, algorithm, run: RunConfig, progress=None) -> list[TrialRecord]:
    """Run ``run.n_trials`` trials starting from ``f_0 = 0``.

    Solver non-convergence is recorded per trial and does not stop the run.
    """
    n = plant.N
    J = plant.J
    f = np.zeros(n)
    theta = None
    spec = None
    solver = None
    if isinstance(algorithm, OptimizationILC):
        spec = algorithm.spec
        solver = UpdateSolver(spec, J, algorithm.options)
    elif isinstance(algorithm, BasisILC):
        spec = algorithm.spec
        theta = np.zeros(algorithm.Psi.shape[1])
    elif not isinstance(algorithm, ExplicitILC):
        raise TypeError("unknown ILC algorithm %r" % type(algorithm).__name__)

    records = []
    converged, info = True, {}
    for j in range(run.n_trials):
        t0 = time.perf_counter()
        rng = trial_rng(run.seed, j) if run.noise else None
        e = run_trial(plant, f, rng)
        rec = _make_record(j, f, e, spec, converged, 0.0, info)
        records.append(rec)
        if j == run.n_trials - 1:
            rec.wall_ms = (time.perf_counter() - t0) * 1e3
            break
        info = {}
        if isinstance(algorithm, ExplicitILC):
            f_next = explicit_update(algorithm.gains, f, e, algorithm.alpha)
            converged = True
        elif isinstance(algorithm, OptimizationILC):
            sol = solver.solve(e, f)
            if algorithm.debias and spec.lam > 0:
                sol = debias(sol, spec, e, f, J, algorithm.options.zero_threshold)
                info["debiased"] = True
            converged = sol.converged
            info["kkt"] = sol.kkt_residual
            info["iterations"] = sol.iterations
            if not converged:
                log.warning("trial %d: update solver did not converge (kkt %.3g)", j, sol.kkt_residual)
            f_next = sol.f
        else:
            sol = _basis_step(algorithm, J, e, theta)
            theta = sol.f
            converged = sol.converged
            info["theta"] = theta.copy()
            info["lam"] = sol.lam
            f_next = algorithm.Psi @ theta
        f = np.asarray(f_next, dtype=np.float64)
        rec.wall_ms = (time.perf_counter() - t0) * 1e3
        if progress is not None:
            progress(rec)
    return records


def estimate_e_inf(records, n_conv: int, n_iter: int) -> np.ndarray:
    """Mean error over trials ``n_conv .. n_conv + n_iter - 1``."""
    if n_iter < 1 or n_conv < 0:
        raise ValueError("need n_iter >= 1 and n_conv >= 0")
    if n_conv + n_iter > len(records):
        raise ValueError("window [%d, %d) exceeds %d records" % (n_conv, n_conv + n_iter, len(records)))
    return np.mean([records[j].e for j in range(n_conv, n_conv + n_iter)], axis=0)


def trial_varying_norm(e_j, e_inf) -> float:
    """``sqrt(sum_t (e_j(t) - e_inf(t))^2)``."""
    e_j = np.asarray(e_j, dtype=np.float64)
    e_inf = np.asarray(e_inf, dtype=np.float64)
    if e_j.shape != e_inf.shape:
        raise ValueError("signals differ in length")
    d = e_j - e_inf
    return float(np.sqrt(np.sum(d * d)))


def update_count(f, tol: float = 0.0) -> int:
    """Number of samples where the command changes (``|D_f f|_0``)."""
    from . import kernels

    return kernels.count_nonzero_diffs(f, tol)
