"""Static SVG renderings of the forest rows and the heatmap."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")

from matplotlib import rc_context  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from .tables import ForestRow, HeatmapMatrix  # noqa: E402

# Fixed hash salt and no date stamp keep the SVG output byte-stable.
_RC = {"svg.hashsalt": "borrowbench", "svg.fonttype": "none", "font.size": 9}


def _svg(fig: Figure) -> str:
    buf = io.StringIO()
    with rc_context(_RC):
        fig.savefig(buf, format="svg", metadata={"Date": None}, bbox_inches="tight")
    return buf.getvalue()


def forest_svg(rows: list[ForestRow]) -> str:
    with rc_context(_RC):
        fig = Figure(figsize=(6.5, 0.45 * max(len(rows), 1) + 1.0))
        ax = fig.add_subplot()
        ys = list(range(len(rows)))[::-1]
        for y, r in zip(ys, rows):
            ax.plot([r.ci_low, r.ci_high], [y, y], color="0.3", lw=1.2)
            ax.plot([r.effect_mean], [y], "o", color="C0" if r.ehss is not None else "C3", ms=5)
        ax.axvline(0.0, color="0.6", ls="--", lw=0.8)
        ax.set_yticks(ys)
        ax.set_yticklabels([r.method if r.ehss is None else f"{r.method} (EHSS {r.ehss:.1f})" for r in rows])
        ax.set_xlabel("treatment effect (posterior mean, 95% credible interval)")
        ax.set_ylim(-0.7, len(rows) - 0.3)
    return _svg(fig)


def heatmap_svg(heat: HeatmapMatrix) -> str:
    with rc_context(_RC):
        n_m, n_s = heat.values.shape
        fig = Figure(figsize=(1.2 + 0.7 * n_s + 2.5, 0.6 * n_m + 1.4))
        ax = fig.add_subplot()
        im = ax.imshow(heat.values, vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
        for i in range(n_m):
            for j in range(n_s):
                v = heat.values[i, j]
                ax.text(j, i, f"{v:.2f}", ha="center", va="center", color="white" if v < 0.6 else "black")
        ax.set_xticks(range(n_s))
        ax.set_xticklabels(heat.sources)
        ax.set_yticks(range(n_m))
        ax.set_yticklabels([f"{m}: {heat.semantics[m]}" for m in heat.methods])
        fig.colorbar(im, ax=ax, fraction=0.05)
    return _svg(fig)
