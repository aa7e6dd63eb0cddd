"""Static SVG figures for the experiment report.

Four analogues of the reference study's plots: |E|_2 and sigma against the
mean number of steps (log-log, one line per method), a per-sample scatter
of E against steps taken, and step-count means with one-sigma bars per N.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

_STYLE = {
    "fixed": dict(color="k", linestyle=":", marker="s"),
    "adaptive1": dict(color="tab:blue", linestyle="--", marker="o"),
    "adaptive2": dict(color="tab:red", linestyle="-", marker="^"),
}


def _by_method(rows):
    methods = {}
    for r in rows:
        methods.setdefault(r.method, []).append(r)
    for rs in methods.values():
        rs.sort(key=lambda r: r.N)
    return methods


def _line_figure(rows, stat, ylabel, path):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for method, rs in _by_method(rows).items():
        x = [r.stats.mean_steps for r in rs]
        y = [getattr(r.stats, stat) for r in rs]
        ax.loglog(x, y, label=method, markersize=4, **_STYLE.get(method, {}))
    ax.set_xlabel("mean number of steps")
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False, fontsize=8)
    ax.grid(True, which="both", alpha=0.25, linewidth=0.4)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def _scatter_figure(rows, path):
    methods = _by_method(rows)
    fig, axes = plt.subplots(
        len(methods), 1, figsize=(5, 2.2 * len(methods)), sharex=True, squeeze=False
    )
    for ax, (method, rs) in zip(axes[:, 0], methods.items()):
        for r in rs:
            ax.loglog(
                r.stats.steps,
                r.stats.errors,
                ".",
                markersize=2,
                alpha=0.3,
                color=_STYLE.get(method, {}).get("color", "k"),
            )
        ax.set_ylabel(f"E ({method})", fontsize=8)
    axes[-1, 0].set_xlabel("steps taken")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def _steps_figure(rows, path):
    methods = _by_method(rows)
    fig, axes = plt.subplots(
        1, len(methods), figsize=(3.0 * len(methods), 3.2), sharey=True, squeeze=False
    )
    for ax, (method, rs) in zip(axes[0], methods.items()):
        n = [r.N for r in rs]
        mean = [r.stats.mean_steps for r in rs]
        sig = [r.stats.sigma_steps for r in rs]
        ax.errorbar(n, mean, yerr=sig, fmt="o-", markersize=3, capsize=2,
                    color=_STYLE.get(method, {}).get("color", "k"))
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("N")
        ax.set_title(method, fontsize=9)
    axes[0, 0].set_ylabel("steps taken")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def render_report(rows, outdir):
    """Render the four report figures; returns the written paths."""
    paths = []
    p = os.path.join(outdir, "e2_vs_steps.svg")
    _line_figure(rows, "E2", r"$|E|_2$", p)
    paths.append(p)
    p = os.path.join(outdir, "sigma_vs_steps.svg")
    _line_figure(rows, "sigma", r"$\sigma(E)$", p)
    paths.append(p)
    p = os.path.join(outdir, "error_scatter.svg")
    _scatter_figure(rows, p)
    paths.append(p)
    p = os.path.join(outdir, "step_counts.svg")
    _steps_figure(rows, p)
    paths.append(p)
    return paths


def render_scaling_fit(reports, fit, path):
    """Log-log view of the |X_kn| cells with the fitted two-way scaling."""
    import numpy as np

    fig, ax = plt.subplots(figsize=(5, 3.6))
    hs = sorted({rep.h for rep in reports})
    cmap = plt.get_cmap("viridis")
    for ci, h in enumerate(hs):
        gaps, vals = [], []
        for rep in reports:
            if rep.h != h:
                continue
            dtau = rep.pairs[:, 3] - rep.pairs[:, 2]
            gaps.append(dtau)
            vals.append(rep.pairs[:, 4])
        g = np.concatenate(gaps)
        v = np.concatenate(vals)
        keep = v > 0
        ax.loglog(
            g[keep], v[keep], ".", markersize=2, alpha=0.2,
            color=cmap(ci / max(len(hs) - 1, 1)), label=f"h={h:.4g}"
        )
    gg = np.geomspace(min(rep.pairs[:, 3].max() for rep in reports) * 1e-3, 1.0, 32)
    ax.loglog(
        gg,
        np.exp(fit.time_exponent * np.log(gg)) * 0.5,
        "k--",
        linewidth=1,
        label=f"slope {fit.time_exponent:.2f}",
    )
    ax.set_xlabel(r"$\tau_n - \tau_k$")
    ax.set_ylabel(r"$\|X_{kn}\|$")
    ax.legend(frameon=False, fontsize=7)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
