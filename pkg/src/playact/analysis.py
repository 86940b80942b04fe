"""Introspection of the action model's first convolution layer.

A Conv1 filter spans a 10 x k x k block of the flow stack. Averaged over
its receptive field it becomes 10 numbers, read as five (dx, dy) steps:
the motion pattern the filter is tuned to.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402

from .exceptions import NoPositiveFrames, ShapeMismatch  # noqa: E402

N_STEPS = 5


@dataclass(frozen=True)
class FilterTrajectory:
    filter_index: int
    segments: tuple  # five (dx, dy) steps

    def points(self):
        """Cumulative path starting at the origin, six points."""
        steps = np.asarray(self.segments, dtype=np.float64)
        return np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])


def _conv1_weights(model_or_weights):
    if isinstance(model_or_weights, torch.nn.Module):
        w = model_or_weights.conv1().weight.detach().cpu().numpy()
    else:
        w = np.asarray(model_or_weights)
    if w.ndim != 4 or w.shape[1] != 2 * N_STEPS:
        raise ShapeMismatch(f"Conv1 weights must be [K, 10, k, k], got {w.shape}")
    return w


def filter_trajectories(model_or_weights):
    w = _conv1_weights(model_or_weights)
    means = w.mean(axis=(2, 3)).reshape(len(w), N_STEPS, 2)
    return [FilterTrajectory(k, tuple(map(tuple, means[k].tolist()))) for k in range(len(w))]


def plot_trajectories(trajectories, path, columns=12, titles=None):
    rows = int(np.ceil(len(trajectories) / columns))
    fig, axes = plt.subplots(rows, columns, figsize=(columns * 0.9, rows * 0.9), squeeze=False)
    for ax in axes.ravel():
        ax.set_axis_off()
    for ax, traj in zip(axes.ravel(), trajectories):
        pts = traj.points()
        span = max(np.abs(pts).max(), 1e-12)
        ax.plot(pts[:, 0], pts[:, 1], "-", color="0.3", linewidth=1)
        ax.scatter(pts[1:, 0], pts[1:, 1], c=np.arange(N_STEPS), cmap="viridis", s=6, zorder=3)
        ax.set_xlim(-span * 1.1, span * 1.1)
        ax.set_ylim(span * 1.1, -span * 1.1)  # image convention: y grows downwards
        ax.set_aspect("equal")
        ax.set_title(titles.get(traj.filter_index, str(traj.filter_index)) if titles
                     else str(traj.filter_index), fontsize=5)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)


def visualize_conv1(model_or_weights, path=None):
    """Trajectories for every Conv1 filter, plus an SVG grid when ``path`` is set."""
    trajectories = filter_trajectories(model_or_weights)
    if path is not None:
        plot_trajectories(trajectories, path)
    return trajectories


# ----------------------------------------------------------- characterizing

def conv1_peak_responses(model, inputs, batch_size=32):
    """Spatial max of rectified Conv1 output per frame: [N, K]."""
    conv1 = model.conv1()
    out = []
    with torch.no_grad():
        for start in range(0, len(inputs), batch_size):
            x = torch.as_tensor(np.asarray(inputs[start:start + batch_size]), dtype=torch.float32)
            out.append(torch.relu(conv1(x)).amax(dim=(2, 3)).numpy())
    return np.concatenate(out) if out else np.zeros((0, conv1.out_channels), np.float32)


def characterizing_matrix(responses):
    """Instrument x filter matrix from per-instrument [N_i, K] response arrays.

    Rows are mean responses over each instrument's positive frames; each
    column is then divided by its sum over instruments (zero columns stay 0).
    Returns (normalized, raw).
    """
    raw = np.stack([np.asarray(r, dtype=np.float64).mean(axis=0) for r in responses])
    col = raw.sum(axis=0, keepdims=True)
    normalized = np.divide(raw, col, out=np.zeros_like(raw), where=col > 0)
    return normalized, raw


@dataclass
class Characterization:
    instruments: list
    matrix: np.ndarray     # normalized, [G, K]
    raw: np.ndarray
    top_k: int = 5

    def ranking(self, instrument):
        g = self.instruments.index(instrument)
        return [int(k) for k in np.argsort(-self.matrix[g], kind="stable")]

    def top(self, instrument):
        return self.ranking(instrument)[:self.top_k]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["instrument", "rank", "filter_index", "normalized_score"])
            for g, name in enumerate(self.instruments):
                for rank, k in enumerate(self.top(name), start=1):
                    writer.writerow([name, rank, k, f"{self.matrix[g, k]:.6f}"])
        return Path(path)

    def plot(self, trajectories, path):
        by_index = {t.filter_index: t for t in trajectories}
        # one column per instrument, top filter first
        fig, axes = plt.subplots(self.top_k, len(self.instruments),
                                 figsize=(len(self.instruments) * 1.1, self.top_k * 1.1), squeeze=False)
        for c, name in enumerate(self.instruments):
            axes[0, c].set_title(name, fontsize=6)
            for r, k in enumerate(self.top(name)):
                ax = axes[r, c]
                pts = by_index[k].points()
                span = max(np.abs(pts).max(), 1e-12)
                ax.plot(pts[:, 0], pts[:, 1], "-o", markersize=1.5, linewidth=1)
                ax.set_xlim(-span * 1.1, span * 1.1)
                ax.set_ylim(span * 1.1, -span * 1.1)
                ax.set_aspect("equal")
                ax.set_xticks([])
                ax.set_yticks([])
                ax.set_ylabel(str(k), fontsize=5)
        fig.tight_layout()
        fig.savefig(path, format="svg")
        plt.close(fig)
        return Path(path)


def characterizing_filters(model, test_corpus, annotations, instruments, top_k=5):
    """Rank Conv1 filters by how specific they are to each instrument.

    ``test_corpus`` maps clip id -> indexable flow stacks per anchor
    ([N, 10, H, W]); ``annotations`` maps clip id -> annotation set. Only
    positive frames of each instrument contribute to its row.
    """
    responses = []
    for name in instruments:
        frames = []
        for clip_id, ann in annotations.items():
            positives = [t for t in ann.frame_indices if ann.is_positive(t, name)]
            if positives:
                stacks = test_corpus[clip_id]
                frames.append(conv1_peak_responses(model, np.stack([stacks[t] for t in positives])))
        if not frames:
            raise NoPositiveFrames(f"{name}: no positive frames in the test annotations")
        responses.append(np.concatenate(frames))
    normalized, raw = characterizing_matrix(responses)
    return Characterization(list(instruments), normalized, raw, top_k)
