"""Command-line entry point: ``sparse-ilc {run,analyze,predict,sweep} <config>``.

Exit codes: 0 success, 1 configuration error, 2 completed with warnings,
3 runtime failure.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import math
import multiprocessing
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import analysis
from . import experiment as ex
from .config import OPTIMIZATION, ConfigError, load_config, parse_config

OK, CONFIG_ERROR, WARNINGS, RUNTIME_FAILURE = 0, 1, 2, 3

log = logging.getLogger("sparse_ilc")


@contextlib.contextmanager
def blas_threads(n):
    """Cap BLAS/OpenMP threads for the duration of the block (no-op for None)."""
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def _out_dir(args, cfg):
    out = args.out if args.out is not None else cfg.output.dir
    os.makedirs(out, exist_ok=True)
    return out


def _plots_on(args, cfg):
    return cfg.output.plots and not args.no_plots


def _progress(rec):
    log.info("trial %3d  |e| = %.4e  |f|_0 = %d  |Df|_0 = %d", rec.trial, rec.e_norm2, rec.f_card, rec.df_card)


# ---------------------------------------------------------------------------
# run


def execute_run(exp: ex.Experiment, out: str, plots: bool):
    """Run the configured experiment and write all artifacts into ``out``.

    Returns ``(summary_items, warnings)``.
    """
    records = ex.run(exp, _progress)
    warnings = []
    bad = [r.trial for r in records if not r.converged]
    if bad:
        warnings.append("update solver did not converge after trials %s" % bad)
    ex.write_trials(os.path.join(out, "trials.csv"), records)
    idx = ex.signal_indices(exp, len(records))
    for j in idx:
        rec = records[j]
        ex.write_signals(os.path.join(out, "signals_%04d.csv" % j), exp.plant.r, rec.f, rec.e)
    ex.save_records(os.path.join(out, "records.npz"), exp, records)
    with open(os.path.join(out, "config.ini"), "w", encoding="utf-8") as fh:
        fh.write(ex.config_text(exp))
    items = ex.summary_items(exp, records)
    rs = exp.cfg.run
    spectra = None
    if exp.noise and rs.n_iter > 0:
        est, phi_v, lim, rows = ex.spectra_rows(exp, records, rs.n_conv, rs.n_iter)
        ex.write_csv(os.path.join(out, "spectra.csv"), ex.SPECTRA_HEADER, rows)
        items.append(("amplification_ratio", analysis.band_ratio(est, phi_v, exp.dt)))
        if np.all(np.isfinite(lim)):
            items.append(("predicted_ratio", analysis.band_ratio(
                analysis.SpectrumEstimate(est.omega, lim), phi_v, exp.dt)))
        spectra = (est.hz(exp.dt), est.power, phi_v.power, lim)
    ex.write_summary(os.path.join(out, "summary.csv"), items)
    if plots:
        from . import plots as pl

        pl.time_series(os.path.join(out, "time_series.svg"), exp.dt, exp.plant.r,
                       {j: (records[j].f, records[j].e) for j in idx})
        pl.convergence(os.path.join(out, "convergence.svg"), [r.trial for r in records],
                       [r.e_norm2 for r in records], [r.f_card for r in records], [r.df_card for r in records])
        if spectra is not None:
            pl.spectra(os.path.join(out, "spectra.svg"), *spectra)
    return items, warnings


def cmd_run(args, cfg):
    exp = ex.build_experiment(cfg)
    out = _out_dir(args, cfg)
    with blas_threads(args.threads):
        items, warnings = execute_run(exp, out, _plots_on(args, cfg))
    for k, v in items:
        print("%-22s %s" % (k, v))
    for w in warnings:
        log.warning(w)
    return WARNINGS if warnings else OK


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args, cfg):
    exp = ex.build_experiment(cfg)
    try:
        records, data = ex.load_records(args.records)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError("cannot read records %s: %s" % (args.records, exc)) from None
    if records[0].e.size != exp.N:
        raise ConfigError("records have N=%d but [task] n = %d" % (records[0].e.size, exp.N))
    rs = cfg.run
    n_conv, n_iter = rs.n_conv, rs.n_iter
    if n_iter == 0:
        n_conv = len(records) // 2
        n_iter = len(records) - n_conv
    if n_conv + n_iter > len(records):
        raise ConfigError("[run] averaging window n_conv + n_iter = %d exceeds the %d stored trials"
                          % (n_conv + n_iter, len(records)))
    out = _out_dir(args, cfg)
    warnings = []
    with blas_threads(args.threads):
        e_inf, tv = ex.trial_varying_rows(records, n_conv, n_iter)
        ex.write_csv(os.path.join(out, "trial_varying.csv"), ["trial", "e_tv_norm2"], tv)
        ex.write_csv(os.path.join(out, "e_inf.csv"), ["t_index", "e_inf"], list(enumerate(e_inf)))
        items = [("n_conv", n_conv), ("n_iter", n_iter), ("e_inf_norm2", float(np.linalg.norm(e_inf)))]
        if cfg.plant.noise_variance > 0 and n_iter >= 2:
            est, phi_v, lim, rows = ex.spectra_rows(exp, records, n_conv, n_iter)
            ex.write_csv(os.path.join(out, "spectra.csv"), ex.SPECTRA_HEADER, rows)
            items.append(("amplification_ratio", analysis.band_ratio(est, phi_v, exp.dt)))
            if np.all(np.isfinite(lim)):
                items.append(("predicted_ratio", analysis.band_ratio(
                    analysis.SpectrumEstimate(est.omega, lim), phi_v, exp.dt)))
            if _plots_on(args, cfg):
                from . import plots as pl

                pl.spectra(os.path.join(out, "spectra.svg"), est.hz(exp.dt), est.power, phi_v.power, lim)
        else:
            warnings.append("no spectra: noise variance is zero or the window holds fewer than 2 trials")
        if _plots_on(args, cfg):
            from . import plots as pl

            pl.trial_varying(os.path.join(out, "trial_varying.svg"), [t for t, _ in tv], [v for _, v in tv])
    ex.write_summary(os.path.join(out, "analysis.csv"), items)
    for k, v in items:
        print("%-22s %s" % (k, v))
    for w in warnings:
        log.warning(w)
    return WARNINGS if warnings else OK


# ---------------------------------------------------------------------------
# predict


def cmd_predict(args, cfg):
    exp = ex.build_experiment(cfg)
    try:
        with blas_threads(args.threads):
            report, phi_v, lim = ex.predict(exp)
    except ex.NoFrequencyDomainForm as exc:
        raise ConfigError("[algorithm] %s" % exc) from None
    out = _out_dir(args, cfg)
    hz = phi_v.omega / (2 * np.pi * exp.dt)
    lim_power = lim.power if lim is not None else np.full(hz.shape, np.nan)
    ex.write_csv(os.path.join(out, "prediction.csv"), ex.PREDICTION_HEADER, list(zip(hz, phi_v.power, lim_power)))
    items = [("rho", report.rho), ("lifted_rho", report.lifted_rho if report.lifted_rho is not None else math.nan),
             ("verdict", report.verdict), ("peak_freq_hz", report.peak_omega / (2 * np.pi * exp.dt))]
    if lim is not None:
        band = (hz >= 5.0) & (hz <= 400.0) & (phi_v.power > 0)
    if lim is not None and band.any():
        items.append(("predicted_ratio", float(np.mean(lim_power[band] / phi_v.power[band]))))
    ex.write_summary(os.path.join(out, "report.csv"), items)
    for k, v in items:
        print("%-22s %s" % (k, v))
    if not report.converges:
        log.warning("iteration does not converge (verdict %s); no limit spectrum", report.verdict)
        return WARNINGS
    return OK


# ---------------------------------------------------------------------------
# sweep

SWEEP_HEADER = ["entry", "lam", "lam_relative", "fusion_weight", "e0_norm2", "final_e_norm2", "final_f_card",
                "final_df_card", "final_objective", "unconverged_updates", "status"]


def sweep_entries(cfg):
    """``(lam, lam_relative)`` x fusion weight grid described by ``[sweep]``."""
    sw = cfg.sweep
    lams = [(float(v), None) for v in sw.lam]
    rel = list(sw.lam_relative)
    if sw.lam_count > 0:
        if sw.lam_relative_min is None or sw.lam_relative_max is None:
            raise ConfigError("[sweep] lam_count needs lam_relative_min and lam_relative_max")
        if not 0 < sw.lam_relative_min <= sw.lam_relative_max:
            raise ConfigError("[sweep] log range needs 0 < lam_relative_min <= lam_relative_max")
        rel.extend(np.logspace(np.log10(sw.lam_relative_min), np.log10(sw.lam_relative_max), sw.lam_count).tolist())
    lams.extend((None, float(v)) for v in rel)
    if not lams:
        raise ConfigError("[sweep] no lambda values: give lam, lam_relative, or a log range")
    if any((a is not None and a < 0) or (b is not None and b < 0) for a, b in lams):
        raise ConfigError("[sweep] lambda values must be >= 0")
    fws = list(sw.fusion_weight) or [cfg.algorithm.fusion_weight]
    return [(lam, rel_, fw) for fw in fws for lam, rel_ in lams]


def _sweep_worker(task):
    index, text, out, plots = task
    logging.getLogger("sparse_ilc").setLevel(logging.WARNING)
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=1):
            cfg = parse_config(text)
            exp = ex.build_experiment(cfg)
            items, warnings = execute_run(exp, out, plots)
        return index, dict(items), warnings, None
    except Exception as exc:  # reported per entry; the sweep carries on
        return index, None, [], "%s: %s" % (type(exc).__name__, exc)


def cmd_sweep(args, cfg):
    if cfg.algorithm.variant != OPTIMIZATION:
        raise ConfigError("[algorithm] variant: sweep requires the optimization variant")
    entries = sweep_entries(cfg)
    out = _out_dir(args, cfg)
    plots = _plots_on(args, cfg)
    tasks = []
    for i, (lam, rel, fw) in enumerate(entries):
        if rel is None:
            c = cfg.replace("algorithm", lam=lam, lam_relative=None, fusion_weight=fw)
        else:
            c = cfg.replace("algorithm", lam=0.0, lam_relative=rel, fusion_weight=fw)
        d = os.path.join(out, "entry_%03d" % i)
        os.makedirs(d, exist_ok=True)
        tasks.append((i, ex.dump_config(c.replace("output", dir=d)), d, plots))
    workers = max(1, min(args.threads or os.cpu_count() or 1, len(tasks)))
    results = {}
    if workers == 1:
        for t in tasks:
            i, items, w, err = _sweep_worker(t)
            results[i] = (items, w, err)
    else:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            for i, items, w, err in pool.map(_sweep_worker, tasks):
                results[i] = (items, w, err)
    # single-threaded merge
    rows, failed, warned = [], 0, 0
    for i, (lam, rel, fw) in enumerate(entries):
        items, w, err = results[i]
        if err is not None:
            failed += 1
            log.error("entry %03d failed: %s", i, err)
            rows.append((i, math.nan if lam is None else lam, math.nan if rel is None else rel, fw,
                         math.nan, math.nan, -1, -1, math.nan, -1, "failed"))
            continue
        if w:
            warned += 1
        rows.append((i, items["lam"], math.nan if rel is None else rel, fw, items["e0_norm2"],
                     items["final_e_norm2"], items["final_f_card"], items["final_df_card"],
                     items["final_objective"], items["unconverged_updates"], "warnings" if w else "ok"))
    path = os.path.join(out, "sweep_summary.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        import csv

        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(SWEEP_HEADER)
        for row in rows:
            wr.writerow([v if isinstance(v, str) else ex._fmt(v) for v in row])
    print("%d entries, %d with warnings, %d failed -> %s" % (len(rows), warned, failed, path))
    if failed == len(rows):
        return RUNTIME_FAILURE
    return WARNINGS if (failed or warned) else OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override [run] seed")
    common.add_argument("--out", default=None, help="output directory (default: [output] dir)")
    common.add_argument("--no-plots", action="store_true", help="skip SVG figures")
    common.add_argument("--threads", type=int, default=None,
                        help="sweep: worker processes; other commands: BLAS thread cap")
    common.add_argument("-v", "--verbose", action="store_true", help="log every trial")
    p = argparse.ArgumentParser(prog="sparse-ilc", description="Sparse iterative learning control experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("run", parents=[common], help="run the configured ILC experiment")
    s.add_argument("config")
    s = sub.add_parser("analyze", parents=[common], help="trial-varying error and spectra of stored records")
    s.add_argument("config")
    s.add_argument("records", help="records.npz written by run (or its directory)")
    s = sub.add_parser("predict", parents=[common], help="frequency-domain convergence and limit spectrum")
    s.add_argument("config")
    s = sub.add_parser("sweep", parents=[common], help="run the experiment for each lambda in [sweep]")
    s.add_argument("config")
    return p


COMMANDS = {"run": cmd_run, "analyze": cmd_analyze, "predict": cmd_predict, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return CONFIG_ERROR
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be a 64-bit unsigned integer", file=sys.stderr)
        return CONFIG_ERROR
    try:
        cfg = load_config(args.config, seed=args.seed)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print("configuration error in %s:" % args.config, file=sys.stderr)
        for p in exc.problems:
            print("  " + p, file=sys.stderr)
        return CONFIG_ERROR
    except KeyboardInterrupt:
        return RUNTIME_FAILURE
    except Exception as exc:
        log.debug("%s", traceback.format_exc())
        print("runtime failure: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        return RUNTIME_FAILURE


if __name__ == "__main__":
    sys.exit(main())
