"""Chart rendering for experiment outputs.

Renders on the Agg backend so runs work headless. Each metric gets one
log-log chart with a line per series; PNG always, SVG on request. Iterations
or values that are not strictly positive are dropped from the log-log view
(the delimited plot data keeps every point).
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import IoFailure

AXIS_LABELS = {
    "consensus_error": "mean distance to the network average",
    "td_error_mean_abs": "mean absolute value error",
    "optimality_gap": "distance of the average iterate to the attractor",
}


def _positive_pairs(ts, values):
    xs = []
    ys = []
    for t, v in zip(ts, values):
        if t > 0 and v > 0:
            xs.append(t)
            ys.append(v)
    return xs, ys


def render_charts(
    chart_data: dict[str, dict[str, tuple[list[int], list[float]]]],
    directory: str,
    svg: bool = False,
) -> list[str]:
    """Render one chart per metric; returns the written paths.

    ``chart_data`` maps metric -> series label -> (iterations, values).
    """
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create directory ({exc})", directory) from exc

    plt.rcParams["svg.hashsalt"] = "ppdtd"
    paths = []
    for metric, by_label in chart_data.items():
        fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=120)
        drew_any = False
        for label in sorted(by_label):
            ts, values = by_label[label]
            xs, ys = _positive_pairs(ts, values)
            if not xs:
                continue
            ax.loglog(xs, ys, label=label, linewidth=1.2)
            drew_any = True
        ax.set_xlabel("iteration")
        ax.set_ylabel(AXIS_LABELS.get(metric, metric))
        ax.set_title(metric.replace("_", " "))
        ax.grid(True, which="both", alpha=0.3)
        if drew_any:
            ax.legend(fontsize=8)
        base = os.path.join(directory, metric)
        try:
            fig.savefig(base + ".png")
            paths.append(base + ".png")
            if svg:
                fig.savefig(base + ".svg", metadata={"Date": None})
                paths.append(base + ".svg")
        except OSError as exc:
            raise IoFailure(f"cannot write figure ({exc})", base) from exc
        finally:
            plt.close(fig)
    return paths
