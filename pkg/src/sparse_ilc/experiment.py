"""Turn an ExperimentConfig into a plant, an algorithm, runs and artifacts."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import analysis
from .config import (
    BASIS,
    COEFFICIENTS,
    EXPLICIT,
    INVERSE,
    OPTIMIZATION,
    ConfigError,
    ExperimentConfig,
    dump_config,
)
from .criterion import CriterionSpec, RegularizerSpec, WeightSpec
from .engine import (
    BasisILC,
    ExplicitILC,
    OptimizationILC,
    PlantSetup,
    RunConfig,
    TrialRecord,
    estimate_e_inf,
    inverse_model_gains,
    run_ilc,
    trial_varying_norm,
)
from .lti import TransferFunction, frequency_response, lift
from .plant import Surrogate, SurrogateParams, build_surrogate, close_loop
from .solvers import ExplicitGains, SolverOptions, lasso_lambda_max, norm_optimal_gains
from .trajectory import MoveProfile, build_basis, build_reference

log = logging.getLogger(__name__)

TRIALS_HEADER = ["trial", "e_norm2", "f_card", "df_card", "objective", "converged", "wall_ms"]
SIGNALS_HEADER = ["t_index", "r", "f", "e"]
SPECTRA_HEADER = ["freq_hz", "phi_measured", "phi_v_theory", "phi_e_inf_theory"]
PREDICTION_HEADER = ["freq_hz", "phi_v_theory", "phi_e_inf_theory"]


class NoFrequencyDomainForm(ValueError):
    """The configured update has no closed-form frequency-domain representation."""


@dataclass
class Experiment:
    cfg: ExperimentConfig
    loop: Surrogate
    H: TransferFunction
    setpoint: np.ndarray
    plant: PlantSetup
    algorithm: object
    lam: float
    lam_max: float
    noise: bool

    @property
    def N(self) -> int:
        return self.plant.N

    @property
    def dt(self) -> float:
        return self.plant.dt


def _weights(a):
    return WeightSpec.scaled(a.w_e), WeightSpec.scaled(a.w_f), WeightSpec.scaled(a.w_df)


def build_loop(cfg: ExperimentConfig) -> Surrogate:
    p = cfg.plant
    dt = 1.0 / p.sample_rate
    if p.model == COEFFICIENTS:
        G = TransferFunction(p.g_num, p.g_den, dt)
        C = TransferFunction(p.c_num, p.c_den, dt)
        return close_loop(G, C)
    params = SurrogateParams(
        sample_rate=p.sample_rate, mass_motor=p.mass_motor, mass_load=p.mass_load,
        resonance_hz=p.resonance_hz, resonance_damping=p.resonance_damping,
        viscous_damping=p.viscous_damping, bandwidth_hz=p.bandwidth_hz, lowpass_factor=p.lowpass_factor,
    )
    return build_surrogate(params)


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    """Validate the physics of a parsed config and assemble everything a run needs.

    Raises ConfigError for problems that only show up once the system is
    built (unstable loop, infeasible move, singular normal matrices).
    """
    p, t, a = cfg.plant, cfg.task, cfg.algorithm
    try:
        loop = build_loop(cfg)
    except ValueError as exc:
        raise ConfigError("[plant] %s" % exc) from None
    if not loop.closed_loop_stable:
        raise ConfigError("[plant] the feedback loop is unstable")
    dt = loop.dt
    H = TransferFunction(p.h_num, p.h_den, dt) if p.h_num else loop.S
    if not H.stable:
        raise ConfigError("[plant] noise filter H is unstable")
    profile = MoveProfile(t.distance, t.max_velocity, t.max_acceleration, t.start_time)
    try:
        setpoint = build_reference(profile, dt, t.n)
    except ValueError as exc:
        raise ConfigError("[task] %s" % exc) from None
    r = loop.reference_error(setpoint)
    J_true = lift(loop.J, t.n)
    model = J_true.scaled(p.mismatch_gain)
    noise = bool(cfg.run.noise and p.noise_variance > 0)
    plant = PlantSetup(loop.J, model, H, p.noise_variance if noise else 0.0, r, dt)
    W_e, W_f, W_df = _weights(a)
    lam_max = lasso_lambda_max(model, W_e, r, np.zeros(t.n))
    lam = a.lam if a.lam_relative is None else a.lam_relative * lam_max
    s = cfg.solver
    options = SolverOptions(max_iterations=s.max_iterations, abs_tol=s.abs_tol, rel_tol=s.rel_tol,
                            rho=s.rho, relaxation=s.relaxation)
    reg = RegularizerSpec(lam, a.penalty, fusion_weight=a.fusion_weight, include_first=a.include_first)
    try:
        spec = CriterionSpec(t.n, W_e, W_f, W_df, reg)
        if a.variant == EXPLICIT:
            if a.gains == INVERSE:
                gains = inverse_model_gains(model, a.inverse_gain)
            else:
                gains = norm_optimal_gains(model, W_e, W_f, W_df)
            algorithm = ExplicitILC(gains, a.learning_gain)
        elif a.variant == OPTIMIZATION:
            algorithm = OptimizationILC(spec, options, a.debias)
        else:
            basis = build_basis(setpoint, a.basis_orders, dt)
            algorithm = BasisILC(basis.matrix, spec, a.t_multiplier, options)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError("[algorithm] %s" % exc) from None
    return Experiment(cfg, loop, H, setpoint, plant, algorithm, lam, lam_max, noise)


def run_config(exp: Experiment) -> RunConfig:
    r = exp.cfg.run
    return RunConfig(r.n_trials, 0 if r.seed is None else r.seed, exp.noise, r.n_conv, r.n_iter)


def run(exp: Experiment, progress=None) -> list[TrialRecord]:
    return run_ilc(exp.plant, exp.algorithm, run_config(exp), progress)


# ---------------------------------------------------------------------------
# frequency-domain theory


def theory_gains(exp: Experiment, grid):
    """``(Q, L)`` responses on ``grid`` of the configured update, as seen by J_o.

    Explicit inverse-model and norm-optimal updates (and the optimization
    variant with ``lam = 0``) are representable; l1 and basis variants are not.
    """
    a, p = exp.cfg.algorithm, exp.cfg.plant
    if a.variant == BASIS:
        raise NoFrequencyDomainForm("basis-function ILC has no closed-form frequency-domain representation")
    if a.variant == OPTIMIZATION and exp.lam > 0:
        raise NoFrequencyDomainForm(
            "l1-regularized ILC (lam > 0) has no closed-form frequency-domain representation")
    Jm = p.mismatch_gain * frequency_response(exp.loop.J, grid).values
    alpha = a.learning_gain if a.variant == EXPLICIT else 1.0
    if a.variant == EXPLICIT and a.gains == INVERSE:
        L = alpha * a.inverse_gain / Jm
        Q = np.ones_like(Jm)
        return Q, L
    we2, wf2, wd2 = a.w_e**2, a.w_f**2, a.w_df**2
    m1 = np.abs(Jm) ** 2 * we2 + wd2
    L = alpha * np.conj(Jm) * we2 / m1
    Q = m1 / (m1 + wf2)
    return Q, L.astype(complex)


def explicit_lifted_gains(exp: Experiment) -> ExplicitGains:
    alg = exp.algorithm
    if isinstance(alg, ExplicitILC):
        return ExplicitGains(alg.alpha * alg.gains.L, alg.gains.Q)
    a = exp.cfg.algorithm
    W_e, W_f, W_df = _weights(a)
    return norm_optimal_gains(exp.plant.J, W_e, W_f, W_df)


def predicted_trial_varying(exp: Experiment, grid):
    """Noise part of the limit error spectrum on ``grid`` (rad/sample)."""
    Q, L = theory_gains(exp, grid)
    Jo = frequency_response(exp.loop.J, grid).values
    phi_v = analysis.theoretical_phi_v(exp.H, exp.cfg.plant.noise_variance, grid)
    lim = analysis.limit_error_spectrum(Q, L, Jo, 0.0, phi_v, grid)
    return phi_v, lim


def predict(exp: Experiment, grid=None, lifted: bool = True):
    """Convergence report and predicted spectra; raises NoFrequencyDomainForm."""
    grid = analysis.frequency_grid() if grid is None else grid
    Q, L = theory_gains(exp, grid)
    Jo = frequency_response(exp.loop.J, grid).values
    lifted_arg = (explicit_lifted_gains(exp), lift(exp.loop.J, exp.N)) if lifted else None
    report = analysis.convergence_factor(Q, L, Jo, grid, lifted=lifted_arg)
    phi_v = analysis.theoretical_phi_v(exp.H, exp.cfg.plant.noise_variance, grid)
    lim = None
    if report.converges:
        lim = analysis.limit_error_spectrum(Q, L, Jo, 0.0, phi_v, grid)
    return report, phi_v, lim


# ---------------------------------------------------------------------------
# artifacts


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError("row has %d columns, header %d" % (len(row), len(header)))
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_trials(path, records):
    write_csv(path, TRIALS_HEADER, [
        (r.trial, r.e_norm2, r.f_card, r.df_card, r.objective, r.converged, r.wall_ms) for r in records])


def write_signals(path, r, f, e):
    write_csv(path, SIGNALS_HEADER, [(k, r[k], f[k], e[k]) for k in range(len(r))])


def write_summary(path, items):
    write_csv(path, ["metric", "value"], [])
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for k, v in items:
            w.writerow([k, v if isinstance(v, str) else _fmt(v)])


def save_records(path, exp: Experiment, records):
    np.savez(path, r=exp.plant.r, setpoint=exp.setpoint, dt=exp.dt,
             f=np.array([rec.f for rec in records]), e=np.array([rec.e for rec in records]),
             objective=np.array([rec.objective for rec in records]),
             converged=np.array([rec.converged for rec in records]))


def load_records(path):
    """Records saved by ``run``: a ``records.npz`` file or a directory holding one."""
    if os.path.isdir(path):
        path = os.path.join(path, "records.npz")
    with np.load(path) as z:
        data = {k: z[k] for k in z.files}
    f, e = data["f"], data["e"]
    out = []
    for j in range(e.shape[0]):
        out.append(TrialRecord(j, f[j], e[j], float(np.linalg.norm(e[j])), int(np.count_nonzero(f[j])),
                               int(np.count_nonzero(np.diff(f[j]))), float(data["objective"][j]),
                               bool(data["converged"][j])))
    return out, data


def spectra_rows(exp: Experiment, records, n_conv: int, n_iter: int):
    """Measured trial-varying spectrum with theoretical overlays on the estimate grid."""
    est = analysis.trial_varying_spectrum(records, n_conv, n_iter)
    grid = est.omega
    phi_v = analysis.theoretical_phi_v(exp.H, exp.cfg.plant.noise_variance, grid)
    try:
        g = grid.copy()
        g[g == 0] = 1e-12
        _, lim = predicted_trial_varying(exp, g)
        lim_power = lim.power
    except (NoFrequencyDomainForm, ValueError):
        lim_power = np.full(grid.shape, np.nan)
    hz = est.hz(exp.dt)
    rows = list(zip(hz, est.power, phi_v.power, lim_power))
    return est, phi_v, lim_power, rows


def signal_indices(exp: Experiment, n_records: int):
    out = []
    for k in exp.cfg.run.signal_trials:
        j = k % n_records
        if j not in out:
            out.append(j)
    return sorted(out)


def summary_items(exp: Experiment, records):
    a = exp.cfg.algorithm
    last = records[-1]
    return [
        ("variant", a.variant),
        ("penalty", a.penalty if a.variant != EXPLICIT else "none"),
        ("n", exp.N),
        ("n_trials", len(records)),
        ("lam", exp.lam),
        ("lam_max", exp.lam_max),
        ("fusion_weight", a.fusion_weight),
        ("e0_norm2", records[0].e_norm2),
        ("final_e_norm2", last.e_norm2),
        ("final_f_card", last.f_card),
        ("final_df_card", last.df_card),
        ("final_objective", last.objective),
        ("unconverged_updates", sum(1 for r in records if not r.converged)),
    ]


def trial_varying_rows(records, n_conv, n_iter):
    e_inf = estimate_e_inf(records, n_conv, n_iter)
    return e_inf, [(r.trial, trial_varying_norm(r.e, e_inf)) for r in records]


def config_text(exp: Experiment) -> str:
    return dump_config(exp.cfg)
