"""PNG figures for run and sweep outputs (headless backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..trace import Trace  # noqa: E402

STYLE = {
    "figure.figsize": (7.0, 4.5),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.frameon": False,
}
# strip the timestamp so identical figures give identical files
PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=PNG_META)
    plt.close(fig)


def plot_run(trace: Trace, out_dir, oracle: Trace | None = None, onset: float | None = None) -> list[Path]:
    """One figure per compared quantity (loop runs) or one figure of every node voltage."""
    out_dir = Path(out_dir)
    written = []
    t = trace.seconds()
    with plt.rc_context(STYLE):
        if "v_ref" in trace.columns:
            panels = [("v_ref", "v", "coupling voltage", "V"), ("i_fb", "i", "interface current", "A")]
            fig, axes = plt.subplots(2, 1, sharex=True)
            for ax, (sig, ref, title, unit) in zip(axes, panels):
                ax.plot(t, trace.column(sig), lw=1.0, label=f"co-simulation ({sig})")
                if oracle is not None:
                    n = len(oracle.times)
                    ax.plot(oracle.seconds(), oracle.column(ref)[:n], "--", lw=0.9, label="monolithic")
                ax.set_ylabel(f"{title} [{unit}]")
                if onset is not None:
                    ax.axvline(onset, color="crimson", lw=0.8, label="instability onset")
                ax.legend(loc="best")
            axes[-1].set_xlabel("time [s]")
            path = out_dir / "loop.png"
            _save(fig, path)
            written.append(path)
        else:
            fig, ax = plt.subplots()
            for name in trace.names:
                if name.startswith("v_"):
                    ax.plot(t, trace.column(name), lw=1.0, label=name)
            ax.set_xlabel("time [s]")
            ax.set_ylabel("voltage [V]")
            ax.legend(loc="best")
            path = out_dir / "voltages.png"
            _save(fig, path)
            written.append(path)
    return written


def plot_sweep(rows: list[dict], axis: str, metric: str, path) -> Path | None:
    """Metric against the (first) swept parameter; unstable cells drawn as crosses."""
    xs, ys, bad = [], [], []
    for r in rows:
        try:
            x = float(r[axis])
        except (TypeError, ValueError):
            return None
        if r.get("verdict") == "unstable":
            bad.append(x)
        elif r.get(metric) is not None:
            xs.append(x)
            ys.append(float(r[metric]))
    if not xs and not bad:
        return None
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if xs:
            order = np.argsort(xs)
            ax.plot(np.array(xs)[order], np.array(ys)[order], "o-", lw=1.0, ms=4, label="stable")
        if bad:
            ax.plot(bad, [0.0] * len(bad), "x", color="crimson", ms=7, label="unstable")
        ax.set_xlabel(axis)
        ax.set_ylabel(metric)
        ax.legend(loc="best")
        _save(fig, path)
    return Path(path)
