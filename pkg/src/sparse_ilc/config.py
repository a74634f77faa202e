"""Experiment configuration: INI-style sections with typed, validated keys.

``parse_config(text)`` and ``dump_config(cfg)`` are inverse to each other
on the parsed representation, so ``parse(dump(parse(t))) == parse(t)``.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
import typing
from dataclasses import dataclass, field, fields

SURROGATE, COEFFICIENTS = "surrogate", "coefficients"
EXPLICIT, OPTIMIZATION, BASIS = "explicit", "optimization", "basis"
INVERSE, NORM_OPTIMAL = "inverse", "norm_optimal"


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists ``[section] key: message`` entries."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class PlantConfig:
    model: str = SURROGATE
    sample_rate: float = 1000.0
    mass_motor: float = 5.0
    mass_load: float = 1.0
    resonance_hz: float = 150.0
    resonance_damping: float = 0.02
    viscous_damping: float = 5.0
    bandwidth_hz: float = 30.0
    lowpass_factor: float = 6.0
    g_num: tuple[float, ...] = ()
    g_den: tuple[float, ...] = ()
    c_num: tuple[float, ...] = ()
    c_den: tuple[float, ...] = ()
    h_num: tuple[float, ...] = ()
    h_den: tuple[float, ...] = ()
    noise_variance: float = 1.5e-7
    mismatch_gain: float = 1.0


@dataclass(frozen=True)
class TaskConfig:
    n: int = 2048
    distance: float = 0.25
    max_velocity: float = 0.25 / 0.24
    max_acceleration: float = 0.25 / 0.24 / 0.03
    start_time: float = 0.0


@dataclass(frozen=True)
class AlgorithmConfig:
    variant: str = EXPLICIT
    gains: str = INVERSE
    learning_gain: float = 1.0
    inverse_gain: float = 1.0
    w_e: float = 1.0
    w_f: float = 0.0
    w_df: float = 0.0
    penalty: str = "identity"
    lam: float = 0.0
    lam_relative: float | None = None
    fusion_weight: float = 1.0
    include_first: bool = False
    debias: bool = False
    basis_orders: tuple[int, ...] = (1, 2, 3, 4)
    t_multiplier: float = 1.0


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 50_000
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    rho: float = 1.0
    relaxation: float = 1.0


@dataclass(frozen=True)
class RunSection:
    n_trials: int = 40
    seed: int | None = None
    noise: bool = True
    n_conv: int = 0
    n_iter: int = 0
    signal_trials: tuple[int, ...] = (0, -1)


@dataclass(frozen=True)
class SweepConfig:
    lam: tuple[float, ...] = ()
    lam_relative: tuple[float, ...] = ()
    lam_relative_min: float | None = None
    lam_relative_max: float | None = None
    lam_count: int = 0
    fusion_weight: tuple[float, ...] = ()


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    plots: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    run: RunSection = field(default_factory=RunSection)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def replace(self, section: str, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})


SECTIONS = [f.name for f in fields(ExperimentConfig)]
# sections that must appear in every config file
REQUIRED = ("plant", "task", "algorithm", "run")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _section_types(cls):
    return typing.get_type_hints(cls)


def _convert(raw: str, tp):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)) and type(None) in args:
        if raw == "" or raw.lower() == "none":
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _convert(raw, inner)
    if origin is tuple:
        if raw == "":
            return ()
        return tuple(_convert(part, args[0]) for part in raw.replace(",", " ").split())
    if tp is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError("expected a boolean, got %r" % raw)
    if tp is int:
        v = float(raw)
        if not v.is_integer():
            raise ValueError("expected an integer, got %r" % raw)
        return int(v)
    if tp is float:
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError("expected a finite number, got %r" % raw)
        return v
    if tp is str:
        return raw
    raise TypeError("unsupported field type %r" % tp)


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def parse_config(text: str, seed: int | None = None) -> ExperimentConfig:
    """Parse and validate; raises ConfigError with every problem found.

    ``seed`` overrides ``[run] seed``.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("syntax: %s" % exc) from None
    problems = []
    for name in cp.sections():
        if name not in SECTIONS:
            problems.append("[%s] unknown section" % name)
    for name in REQUIRED:
        if not cp.has_section(name):
            problems.append("[%s] missing section" % name)
    values = {}
    top = _section_types(ExperimentConfig)
    for name in SECTIONS:
        cls = top[name]
        types = _section_types(cls)
        kwargs = {}
        if cp.has_section(name):
            for key, raw in cp.items(name):
                if key not in types:
                    problems.append("[%s] %s: unknown key" % (name, key))
                    continue
                try:
                    kwargs[key] = _convert(raw, types[key])
                except (TypeError, ValueError) as exc:
                    problems.append("[%s] %s: %s" % (name, key, exc))
        try:
            values[name] = cls(**kwargs)
        except TypeError as exc:
            problems.append("[%s] %s" % (name, exc))
            values[name] = cls()
    cfg = ExperimentConfig(**values)
    has_seed = cp.has_section("run") and cp.has_option("run", "seed")
    if seed is not None:
        cfg = cfg.replace("run", seed=int(seed))
        has_seed = True
    problems.extend(validate(cfg, seed_in_file=has_seed))
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc.strerror)) from None
    return parse_config(text, seed)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name in SECTIONS:
        section = getattr(cfg, name)
        lines.append("[%s]" % name)
        for f in fields(section):
            lines.append("%s = %s" % (f.name, _format(getattr(section, f.name))))
        lines.append("")
    return "\n".join(lines)


def validate(cfg: ExperimentConfig, seed_in_file: bool = True) -> list[str]:
    """Field-level checks beyond type conversion."""
    p, t, a, s, r, sw = cfg.plant, cfg.task, cfg.algorithm, cfg.solver, cfg.run, cfg.sweep
    out = []

    def need(cond, where, msg):
        if not cond:
            out.append("[%s] %s" % (where, msg))

    need(p.model in (SURROGATE, COEFFICIENTS), "plant", "model: must be 'surrogate' or 'coefficients'")
    need(p.sample_rate > 0, "plant", "sample_rate: must be > 0")
    if p.model == SURROGATE:
        for key in ("mass_motor", "mass_load", "resonance_hz", "bandwidth_hz", "lowpass_factor"):
            need(getattr(p, key) > 0, "plant", "%s: must be > 0" % key)
        need(p.resonance_damping >= 0 and p.viscous_damping >= 0, "plant", "damping values must be >= 0")
        need(p.resonance_hz < p.sample_rate / 2, "plant", "resonance_hz: must lie below the Nyquist frequency")
    else:
        for key in ("g_num", "g_den", "c_num", "c_den"):
            need(len(getattr(p, key)) > 0, "plant", "%s: required for model = coefficients" % key)
    need(bool(p.h_num) == bool(p.h_den), "plant", "h_num/h_den: give both or neither (default H = S)")
    need(p.noise_variance >= 0, "plant", "noise_variance: must be >= 0")
    need(p.mismatch_gain > 0, "plant", "mismatch_gain: must be > 0")

    need(t.n >= 2, "task", "n: must be >= 2")
    need(t.max_velocity > 0 and t.max_acceleration > 0, "task", "velocity/acceleration limits must be > 0")
    need(t.start_time >= 0, "task", "start_time: must be >= 0")

    need(a.variant in (EXPLICIT, OPTIMIZATION, BASIS), "algorithm", "variant: must be explicit, optimization or basis")
    need(a.gains in (INVERSE, NORM_OPTIMAL), "algorithm", "gains: must be inverse or norm_optimal")
    need(0 < a.learning_gain <= 1, "algorithm", "learning_gain: must lie in (0, 1]")
    need(a.inverse_gain > 0, "algorithm", "inverse_gain: must be > 0")
    need(min(a.w_e, a.w_f, a.w_df) >= 0, "algorithm", "weights must be >= 0")
    need(a.penalty in ("identity", "fused", "sparse_fused"), "algorithm",
         "penalty: must be identity, fused or sparse_fused")
    need(a.lam >= 0, "algorithm", "lam: must be >= 0")
    need(a.lam_relative is None or a.lam_relative >= 0, "algorithm", "lam_relative: must be >= 0")
    need(a.fusion_weight >= 0, "algorithm", "fusion_weight: must be >= 0")
    need(all(1 <= k <= 8 for k in a.basis_orders) and len(a.basis_orders) > 0, "algorithm",
         "basis_orders: values must lie in 1..8")
    need(all(k < t.n for k in a.basis_orders), "algorithm", "basis_orders: order must be smaller than task n")
    need(a.t_multiplier >= 1, "algorithm", "t_multiplier: must be >= 1")

    need(s.max_iterations >= 1, "solver", "max_iterations: must be >= 1")
    need(s.abs_tol > 0 and s.rel_tol > 0, "solver", "tolerances must be > 0")
    need(s.rho > 0, "solver", "rho: must be > 0")
    need(1 <= s.relaxation < 2, "solver", "relaxation: must lie in [1, 2)")

    need(r.n_trials >= 1, "run", "n_trials: must be >= 1")
    need(r.n_conv >= 0 and r.n_iter >= 0, "run", "n_conv/n_iter: must be >= 0")
    need(r.n_iter == 0 or r.n_conv + r.n_iter <= r.n_trials, "run",
         "n_conv + n_iter: averaging window exceeds n_trials")
    need(r.seed is None or 0 <= r.seed < 2**64, "run", "seed: must be a 64-bit unsigned integer")
    if r.noise and p.noise_variance > 0:
        need(seed_in_file and r.seed is not None, "run", "seed: required when noise is enabled")
    need(all(-r.n_trials <= k < r.n_trials for k in r.signal_trials), "run", "signal_trials: index out of range")

    need(all(v >= 0 for v in sw.lam + sw.lam_relative + sw.fusion_weight), "sweep", "values must be >= 0")
    rng = (sw.lam_relative_min, sw.lam_relative_max)
    if any(v is not None for v in rng) or sw.lam_count:
        need(all(v is not None and v > 0 for v in rng) and sw.lam_count >= 1, "sweep",
             "lam_relative_min/max must be > 0 with lam_count >= 1 for a log range")
    return out
