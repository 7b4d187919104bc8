"""Figures written to disk: contact plots, height traces, StS series, training
and evolution curves.  Every renderer writes both PNG and SVG and returns
the paths; output bytes are reproducible (no timestamps, fixed SVG ids)."""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "sds"
plt.rcParams["savefig.dpi"] = 100

LEG_LABELS = ("FL", "FR", "RL", "RR")
_META = {"png": {"Software": None}, "svg": {"Date": None, "Creator": None}}


def _save(fig, path, formats=("png", "svg")):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = []
    for ext in formats:
        target = path.with_suffix("." + ext)
        fig.savefig(target, format=ext, metadata=_META[ext], bbox_inches="tight")
        out.append(target)
    plt.close(fig)
    return out


def render_contact_plot(seq, path, title="Contact sequence", max_steps=None):
    """4-row raster, stance drawn filled, legs FL/FR/RL/RR top to bottom."""
    matrix = np.asarray(getattr(seq, "matrix", seq), dtype=bool)
    dt = float(getattr(seq, "dt", 0.02))
    if max_steps:
        matrix = matrix[:, :max_steps]
    n_steps = matrix.shape[1]
    fig, ax = plt.subplots(figsize=(8, 2.2))
    ax.imshow(matrix, aspect="auto", cmap="Greys", vmin=0, vmax=1, interpolation="nearest",
              extent=(0, n_steps * dt, 3.5, -0.5))
    ax.set_yticks(range(4))
    ax.set_yticklabels(LEG_LABELS)
    ax.set_xlabel("time [s]")
    ax.set_title(title)
    return _save(fig, path)


def render_height_trace(heights, dt, path, title="Base height"):
    """Height over time, annotated with its mean and variance."""
    height = np.asarray(heights, dtype=float)
    times = np.arange(len(height)) * dt
    mean, var = float(np.mean(height)), float(np.var(height))
    fig, ax = plt.subplots(figsize=(8, 2.5))
    ax.plot(times, height, lw=1.0, color="tab:blue")
    ax.axhline(mean, ls="--", lw=0.8, color="tab:gray")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("height [m]")
    ax.set_title(title)
    ax.text(0.01, 0.95, f"mean {mean:.4f} m, variance {var:.3g}", transform=ax.transAxes, va="top", fontsize=8)
    return _save(fig, path)


def render_sts(series, dt, path, title="Stability-to-speed score"):
    values = np.asarray(series, dtype=float)
    times = np.arange(len(values)) * dt
    fig, ax = plt.subplots(figsize=(8, 2.5))
    ax.plot(times, values, lw=1.0, color="tab:green")
    ax.set_ylim(0, 2.05)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("StS")
    ax.set_title(title)
    ax.text(0.01, 0.05, f"mean {np.mean(values):.3f}", transform=ax.transAxes, fontsize=8)
    return _save(fig, path)


def render_training_curve(run, path):
    """Best objective per iteration with checkpoint markers and rescale events."""
    fig, ax = plt.subplots(figsize=(6, 3))
    trace = np.array([np.nan if value is None or not np.isfinite(value) else value for value in run.best_trace],
                     dtype=float)
    ax.plot(np.arange(len(trace)), trace, lw=1.0)
    for entry in run.history:
        if entry["best_objective"] is not None:
            ax.plot(entry["iteration"], entry["best_objective"], "o", ms=3, color="tab:orange")
    for event in run.rescales:
        ax.axvline(event["iteration"], color="tab:red", lw=0.6, ls=":")
    ax.set_xlabel("iteration")
    ax.set_ylabel("best objective")
    ax.set_title(f"Training: {run.program_name} ({run.status})")
    return _save(fig, path)


def render_score_history(aggregates, path, title="RF* aggregate score"):
    fig, ax = plt.subplots(figsize=(5, 3))
    it = np.arange(1, len(aggregates) + 1)
    ax.plot(it, aggregates, "o-")
    ax.set_xticks(it)
    ax.set_ylim(0, 31)
    ax.set_xlabel("iteration")
    ax.set_ylabel("aggregate score")
    ax.set_title(title)
    return _save(fig, path)


def render_trajectory_overlay(demo_xy, rollout_xy, path, title="Foot trajectories (body frame)"):
    """Overlay of aligned demo and rollout keypoints, one colour per source."""
    fig, ax = plt.subplots(figsize=(4, 4))
    for xy, color, label in ((demo_xy, "tab:blue", "demo"), (rollout_xy, "tab:red", "rollout")):
        pts = np.asarray(xy, dtype=float).reshape(-1, 2)
        ax.plot(pts[:, 0], pts[:, 1], ".", ms=1, color=color, label=label)
    ax.set_aspect("equal")
    ax.legend(fontsize=8)
    ax.set_title(title)
    return _save(fig, path)
