"""Optional PNG figures for CLI runs.

The CSV files are the primary output; these figures are a convenience and
need matplotlib (``pip install artifact[plot]``).
"""

import numpy as np

from .errors import InputError


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        raise InputError("--figures needs matplotlib; install the 'plot' extra") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _fronts(plt, hist, path, title):
    fig, ax = plt.subplots(figsize=(5, 5))
    states = hist.states
    picks = sorted(set(np.linspace(0, len(states) - 1, 6).round().astype(int)))
    for k in picks:
        x = states[k].x
        pts = x.reshape(-1, x.shape[-1])
        ax.plot(pts[:, 0], pts[:, 1] if pts.shape[1] > 1 else np.zeros(len(pts)),
                ".", ms=1.5, label=f"t = {states[k].t:.2f}")
    ax.set_aspect("equal")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_title(title)
    ax.legend(fontsize=7, markerscale=4)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _deviation(plt, traces, path, title):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, tr in traces:
        worst = np.max(np.abs(tr.phi).reshape(len(tr.t), -1), axis=1)
        ax.semilogy(tr.t, np.maximum(worst, 1e-18), label=label)
    ax.set_xlabel("t")
    ax.set_ylabel("max |phi|")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _bars(plt, report, path, title):
    checks = report.checks
    fig, ax = plt.subplots(figsize=(7, 0.5 + 0.45 * len(checks)))
    vals = [max(abs(c.value), 1e-18) for c in checks]
    tols = [c.tolerance for c in checks]
    y = np.arange(len(checks))
    ax.barh(y, vals, color=["tab:green" if c.passed else "tab:red" for c in checks])
    ax.scatter(tols, y, marker="|", s=200, color="k", label="tolerance")
    ax.set_xscale("log")
    ax.set_yticks(y, [c.name for c in checks], fontsize=8)
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render(command, scenario, report, extra, out):
    """Write figures for a finished run; returns the file names."""
    plt = _pyplot()
    names = []
    if "history" in extra:
        _fronts(plt, extra["history"], out / "fronts.png", f"{scenario.name}: fronts")
        names.append("fronts.png")
        traces = [("normal data", extra["history"].trace)]
        if "perturbed" in extra:
            traces.append(("perturbed nu", extra["perturbed"].trace))
        _deviation(plt, traces, out / "deviations.png", f"{scenario.name}: deviation functions")
        names.append("deviations.png")
    _bars(plt, report, out / "checks.png", f"{scenario.name}: {command}")
    names.append("checks.png")
    return names
