"""Figure rendering for simulation reports and traffic analyses.

All figures are written as PNG files next to the JSON/CSV output. The Agg
backend is forced so rendering works headless and reruns stay
byte-reproducible.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

PLOT_DPI = 120

POLICY_STYLES = {
    "kdefault": {"color": "#b3443e", "linestyle": "--"},
    "netmarks": {"color": "#d99114", "linestyle": "-."},
    "trade": {"color": "#2a66a8", "linestyle": "-"},
}


def _style(policy: str) -> dict:
    return POLICY_STYLES.get(policy, {"color": "black", "linestyle": ":"})


def save_figure(fig, path):
    fig.savefig(path, dpi=PLOT_DPI, bbox_inches="tight")
    plt.close(fig)


def plot_latency_timeseries(reports: dict, target_ms: float, phase_changes, path):
    """Windowed mean latency over time, one line per policy.

    ``phase_changes`` is a list of (time_s, label) marking delay-schedule
    activations; the QoS target is drawn as a horizontal guide.
    """
    fig, ax = plt.subplots(figsize=(7.5, 3.6))
    for policy, report in sorted(reports.items()):
        ts = [row["time_s"] / 60.0 for row in report.timeseries]
        means = [
            row["window_mean_ms"] if row["window_mean_ms"] is not None else np.nan
            for row in report.timeseries
        ]
        ax.plot(ts, means, label=policy, linewidth=1.6, **_style(policy))
    ax.axhline(target_ms, color="gray", linewidth=1.0, linestyle=":",
               label=f"target {target_ms:g} ms")
    for t, label in phase_changes:
        ax.axvline(t / 60.0, color="lightgray", linewidth=0.8)
        ax.annotate(label, (t / 60.0, ax.get_ylim()[1]), fontsize=7,
                    ha="left", va="top", color="gray")
    ax.set_xlabel("time (min)")
    ax.set_ylabel("windowed mean latency (ms)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    save_figure(fig, path)


def plot_goodput_bars(goodputs: dict, path):
    """Goodput ratio per policy as a bar chart."""
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    policies = sorted(goodputs)
    values = [goodputs[p] for p in policies]
    bars = ax.bar(policies, values,
                  color=[_style(p)["color"] for p in policies])
    for bar, val in zip(bars, values):
        ax.annotate(f"{val * 100:.1f}%", (bar.get_x() + bar.get_width() / 2, val),
                    ha="center", va="bottom", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("goodput ratio")
    ax.grid(axis="y", alpha=0.3)
    save_figure(fig, path)


def plot_stress_heatmap(matrix: np.ndarray, names, path):
    """Traffic stress graph as a heatmap with service labels."""
    k = matrix.shape[0]
    fig, ax = plt.subplots(figsize=(0.45 * k + 2.2, 0.45 * k + 1.8))
    im = ax.imshow(matrix, cmap="YlOrRd")
    ax.set_xticks(range(k), labels=names, rotation=90, fontsize=7)
    ax.set_yticks(range(k), labels=names, fontsize=7)
    ax.set_xlabel("downstream")
    ax.set_ylabel("upstream")
    fig.colorbar(im, ax=ax, label="stress (bytes/s)", shrink=0.8)
    save_figure(fig, path)
