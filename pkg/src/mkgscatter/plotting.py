"""Figures for CLI reports, rendered to files with the Agg backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)


def plot_decay(dec, path) -> None:
    """sup|phi| and t sup|phi| against t on slices of constant t."""
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.6))
    if dec.sup_phi.min() > 0:
        a.loglog(dec.t, dec.sup_phi, "o-", label="sup |phi|")
        a.loglog(dec.t, dec.sup_phi[0] * (dec.t / dec.t[0]) ** -1.0, "k--", lw=0.8, label="t^-1")
    else:
        a.plot(dec.t, dec.sup_phi, "o-", label="sup |phi|")
    a.set_xlabel("t")
    a.set_title(f"fitted slope {dec.slope_phi:.3f}")
    a.legend()
    b.semilogx(dec.t, dec.t_sup_phi, "o-", label="t sup |phi|")
    if dec.sup_alphab.max() > 0:
        b.semilogx(dec.t, dec.t_sup_alphab, "s-", label="t sup |alphabar|")
    b.set_xlabel("t")
    b.legend()
    _save(fig, path)


def plot_charge(ch: dict, q0: float, path) -> None:
    """Slice charge, cone flux and their sum against the scri charge."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.plot(ch["t"], ch["q_slice"], "o-", label="slice charge")
    ax.plot(ch["t"], ch["cone_flux"], "s-", label="cone flux")
    ax.plot(ch["t"], ch["total"], "^-", label="sum")
    ax.axhline(q0, color="k", ls="--", lw=0.8, label="q0 at scri")
    ax.set_xlabel("t")
    ax.legend()
    _save(fig, path)


def plot_roundtrip(rt: dict, path) -> None:
    """Pointwise-in-u error of the extracted radiation field against the input."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.semilogy(rt["u"], rt["input_norm"] + 1e-300, label="input L2(S2)")
    ax.semilogy(rt["u"], rt["error_l2"] + 1e-300, label="extraction error")
    ax.set_xlabel("u")
    ax.set_title(f"relative L2 error {rt['relative_l2']:.2e}")
    ax.legend()
    _save(fig, path)


def plot_convergence(Ns, table: dict, path) -> None:
    """Error measures against grid spacing on log axes, with an h^2 guide."""
    h = 1.0 / (np.asarray(Ns, dtype=float) - 1)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for name, vals in table.items():
        vals = np.asarray(vals, dtype=float)
        if np.all(vals > 0):
            ax.loglog(h, vals, "o-", label=name)
    top = max((np.max(v) for v in table.values()), default=1.0)
    ax.loglog(h, top * (h / h[0]) ** 2, "k--", lw=0.8, label="h^2")
    ax.set_xlabel("h")
    ax.legend(fontsize=7)
    _save(fig, path)
