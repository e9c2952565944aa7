"""PNG figures next to the CSV plot data (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

if TYPE_CHECKING:
    from .experiment import ExperimentResult

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 7,
    "legend.frameon": False,
}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def apd_vs_proportion(result: ExperimentResult, path: Path) -> Path:
    table = result.table()
    props = [q for q in result.proportions if q is not None]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for p in result.policies:
            if props:
                xs = [100 * q for q in props]
                ys = [table[p, q][0] for q in props]
                es = [table[p, q][1] for q in props]
                ax.errorbar(xs, ys, yerr=es, marker="o", ms=3, capsize=2, lw=1, label=p)
            else:
                m, s = table[p, result.proportions[0]]
                ax.errorbar([p], [m], yerr=[s], fmt="o", capsize=3)
        if props:
            ax.set_xlabel("CAV proportion (%)")
            ax.legend(ncol=2)
        ax.set_ylabel("APD (s)")
        return _save(fig, path)


def vd_vs_fraction(result: ExperimentResult, path: Path) -> Path:
    vd = result.vd_by_fraction()
    fr = sorted(vd)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.errorbar([100 * f for f in fr], [vd[f][0] for f in fr], yerr=[vd[f][1] for f in fr],
                    marker="o", capsize=3, color="k", lw=1)
        ax.set_xlabel("vehicles admitted to the restricted lane (%)")
        ax.set_ylabel("mean vehicle delay (s)")
        return _save(fig, path)


def speed_vs_position(result: ExperimentResult, path: Path) -> Path:
    prof = result.speed_by_fraction()
    cmap = plt.get_cmap("viridis")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        n = max(len(prof) - 1, 1)
        for i, (f, rows) in enumerate(sorted(prof.items())):
            if rows:
                ax.plot([x for x, _ in rows], [s for _, s in rows], marker=".", lw=1,
                        color=cmap(i / n), label=f"f = {f:g}")
        r = result.config.network.restricted
        if r is not None:
            ax.axvspan(r[1], r[2], color="0.9", zorder=0)
        ax.set_xlabel("position (m)")
        ax.set_ylabel("mean speed (m/s)")
        ax.legend(ncol=2)
        return _save(fig, path)


def render_figures(result: ExperimentResult, plot_dir: Path) -> list[Path]:
    plot_dir = Path(plot_dir)
    if not result.runs:
        return []
    if result.kind == "access-study":
        return [
            vd_vs_fraction(result, plot_dir / "vd_vs_fraction.png"),
            speed_vs_position(result, plot_dir / "speed_vs_position.png"),
        ]
    return [apd_vs_proportion(result, plot_dir / "apd_vs_proportion.png")]
