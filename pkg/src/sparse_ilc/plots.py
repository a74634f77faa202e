"""SVG figures for runs and analyses (matplotlib, Agg backend, reproducible output)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "sparse-ilc"
_META = {"Date": None, "Creator": "sparse-ilc"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def time_series(path, dt, r, signals: dict, title=""):
    """Reference error with commands and errors of selected trials."""
    t = np.arange(len(r)) * dt
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax1.plot(t, r, color="0.5", lw=1, label="r")
    for j, (f, e) in signals.items():
        ax1.plot(t, e, lw=0.8, label="e, trial %d" % j)
        ax2.plot(t, f, lw=0.8, label="f, trial %d" % j)
    ax1.set_ylabel("error")
    ax2.set_ylabel("command")
    ax2.set_xlabel("time [s]")
    for ax in (ax1, ax2):
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
    if title:
        ax1.set_title(title)
    _save(fig, path)


def convergence(path, trials, e_norm, f_card, df_card=None):
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax1.semilogy(trials, np.maximum(e_norm, 1e-300), marker=".", lw=1)
    ax1.set_ylabel(r"$\|e_j\|_2$")
    ax2.plot(trials, f_card, marker=".", lw=1, label=r"$\|f_j\|_0$")
    if df_card is not None:
        ax2.plot(trials, df_card, marker=".", lw=1, label=r"$\|D f_j\|_0$")
    ax2.set_ylabel("nonzeros")
    ax2.set_xlabel("trial j")
    ax2.legend(fontsize=8)
    for ax in (ax1, ax2):
        ax.grid(True, alpha=0.3)
    _save(fig, path)


def spectra(path, freq_hz, measured, phi_v, phi_e_inf=None):
    """Measured trial-varying spectrum against phi_v, 2 phi_v and the prediction."""
    m = freq_hz > 0
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.loglog(freq_hz[m], measured[m], lw=0.9, label="measured")
    ax.loglog(freq_hz[m], phi_v[m], "k--", lw=1, label=r"$\phi_v$")
    ax.loglog(freq_hz[m], 2 * phi_v[m], "k:", lw=1, label=r"$2\phi_v$")
    if phi_e_inf is not None and np.all(np.isfinite(phi_e_inf)):
        ax.loglog(freq_hz[m], phi_e_inf[m], lw=1, label="predicted limit")
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("density")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)


def trial_varying(path, trials, norms):
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(trials, norms, marker=".", lw=1)
    ax.set_xlabel("trial j")
    ax.set_ylabel(r"$\|e_j - \hat e_\infty\|_2$")
    ax.grid(True, alpha=0.3)
    _save(fig, path)
