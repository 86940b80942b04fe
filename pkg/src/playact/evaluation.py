"""Localization metrics against key-point annotations.

Temporal: per clip and class, the AUC of frame scores (spatial max of the
map) against frame positivity; clip AUCs are averaged per class.
Spatial: distance in pixels from the map's max location to the nearest
annotated key point, averaged over positive frames, then over clips.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.stats import rankdata

from .exceptions import EmptyKeypoints, NoBoxes, NoValidClips, ShapeMismatch

UPSAMPLE = "upsample"
CELL_CENTER = "center"


def mann_whitney_auc(scores, labels):
    """Probability a positive outranks a negative, ties counted as 1/2.

    Returns None when the labels are all positive or all negative.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def frame_positivity(annotations, instrument, frames=None):
    """Boolean positivity for each annotated frame (or the given frames)."""
    if frames is None:
        frames = annotations.frame_indices
    return np.array([annotations.is_positive(t, instrument) for t in frames], dtype=bool)


def temporal_auc(frame_scores, annotations, instrument, class_index):
    """Clip-averaged AUC for one class.

    ``frame_scores`` maps clip id -> [G, T] array of per-anchor scores;
    ``annotations`` maps clip id -> KeyPointAnnotationSet. Returns
    (mean AUC, number of clips used, number skipped as degenerate).
    """
    aucs, skipped = [], 0
    for clip_id, ann in annotations.items():
        scores = np.asarray(frame_scores[clip_id])
        frames = ann.frame_indices
        if frames and max(frames) >= scores.shape[1]:
            raise ShapeMismatch(
                f"{clip_id}: annotated frame {max(frames)} beyond {scores.shape[1]} predicted frames")
        auc = mann_whitney_auc(scores[class_index, frames], frame_positivity(ann, instrument))
        if auc is None:
            skipped += 1
        else:
            aucs.append(auc)
    if not aucs:
        raise NoValidClips(f"{instrument}: every clip is all-positive or all-negative")
    return float(np.mean(aucs)), len(aucs), skipped


def argmax_location(map_frame, input_dims, method=UPSAMPLE, stride=None):
    """(x, y) pixel coordinate of a [I, J] map's maximum.

    ``upsample`` bilinearly resizes the map to ``input_dims`` = (H, W)
    first; ``center`` maps the max cell (i, j) to its receptive-field
    center ``stride * (j, i) + stride / 2``. Ties go to the first cell in
    row-major order.
    """
    map_frame = np.asarray(map_frame, dtype=np.float32)
    if method == UPSAMPLE:
        h, w = input_dims
        up = cv2.resize(map_frame, (int(w), int(h)), interpolation=cv2.INTER_LINEAR)
        y, x = np.unravel_index(int(np.argmax(up)), up.shape)
        return float(x), float(y)
    if method == CELL_CENTER:
        if stride is None:
            h, w = input_dims
            stride = h / map_frame.shape[0]
        i, j = np.unravel_index(int(np.argmax(map_frame)), map_frame.shape)
        return stride * j + stride / 2, stride * i + stride / 2
    raise ValueError(f"unknown argmax method {method!r}")


def keypoint_distance(location, keypoints):
    """Minimum Euclidean distance from ``location`` to any key point."""
    keypoints = np.asarray(list(keypoints), dtype=np.float64)
    if keypoints.size == 0:
        raise EmptyKeypoints("spatial distance needs at least one key point")
    d = keypoints - np.asarray(location, dtype=np.float64)
    # exact squares for pixel coordinates, so the result is correctly rounded
    return float(np.sqrt(np.min((d * d).sum(axis=1))))


def spatial_distance(map_frame, keypoints, input_dims, method=UPSAMPLE, stride=None):
    return keypoint_distance(argmax_location(map_frame, input_dims, method, stride), keypoints)


def object_hit_rate(map_frames, boxes, input_dims, method=UPSAMPLE, stride=None):
    """Fraction of images whose max location falls in a ground-truth box.

    ``boxes[n]`` lists (x0, y0, x1, y1) boxes, borders inclusive;
    ``input_dims`` is one (H, W) or a list of them.
    """
    if len(map_frames) == 0:
        raise NoBoxes("no images to evaluate")
    dims = input_dims if isinstance(input_dims, list) else [input_dims] * len(map_frames)
    hits = 0
    for frame, image_boxes, hw in zip(map_frames, boxes, dims):
        if not image_boxes:
            raise NoBoxes("every evaluated image needs at least one box")
        x, y = argmax_location(frame, hw, method, stride)
        hits += any(x0 <= x <= x1 and y0 <= y <= y1 for x0, y0, x1, y1 in image_boxes)
    return hits / len(map_frames)


@dataclass
class ClassResult:
    instrument: str
    temporal_auc: float = math.nan
    spatial_px: float = math.nan
    n_clips: int = 0
    n_skipped: int = 0
    n_spatial_frames: int = 0


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    name: str = ""

    @property
    def mean_auc(self):
        vals = [r.temporal_auc for r in self.rows if not math.isnan(r.temporal_auc)]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def mean_distance(self):
        vals = [r.spatial_px for r in self.rows if not math.isnan(r.spatial_px)]
        return float(np.mean(vals)) if vals else math.nan

    def row(self, instrument):
        for r in self.rows:
            if r.instrument == instrument:
                return r
        raise KeyError(instrument)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["instrument", "temporal_auc", "spatial_px", "n_clips", "n_skipped"])
        for r in self.rows:
            writer.writerow([r.instrument, f"{r.temporal_auc:.6f}", f"{r.spatial_px:.4f}",
                             r.n_clips, r.n_skipped])
        writer.writerow(["AVG", f"{self.mean_auc:.6f}", f"{self.mean_distance:.4f}",
                         sum(r.n_clips for r in self.rows), sum(r.n_skipped for r in self.rows)])
        return buf.getvalue()

    def to_table(self):
        head = f"{self.name or 'Model':<14}|| {'Temporal (AUC)':>14} | {'Spatial (pixel)':>15}"
        lines = [head, "=" * len(head)]
        for r in self.rows:
            lines.append(f"{r.instrument:<14}|| {r.temporal_auc:>14.3f} | {r.spatial_px:>15.1f}")
        lines.append("-" * len(head))
        lines.append(f"{'AVG':<14}|| {self.mean_auc:>14.3f} | {self.mean_distance:>15.1f}")
        return "\n".join(lines)


def evaluate(predictions, annotations, vocabulary, input_dims=None, method=UPSAMPLE,
             instruments=None, name=""):
    """Temporal AUC and spatial distance per instrument.

    ``predictions`` maps clip id -> ActivationMap (any modality) over the
    clip's anchor grid; ``annotations`` maps clip id -> annotation set.
    ``input_dims`` is the (H, W) of the resized frames, or None to read
    each annotation's ``frame_size``.
    """
    if instruments is None:
        instruments = sorted({i for a in annotations.values() for i in a.instruments()},
                             key=vocabulary.index)
    frame_scores = {cid: predictions[cid].data.max(axis=(2, 3)) for cid in annotations}
    rows = []
    for instrument in instruments:
        g = vocabulary.index(instrument)
        res = ClassResult(instrument)
        try:
            res.temporal_auc, res.n_clips, res.n_skipped = temporal_auc(
                frame_scores, annotations, instrument, g)
        except NoValidClips:
            res.n_skipped = len(annotations)
        per_clip = []
        for cid, ann in annotations.items():
            hw = input_dims
            if hw is None:
                w, h = ann.frame_size
                hw = (h, w)
            amap = predictions[cid]
            dists = [spatial_distance(amap.data[g, t], ann.keypoints(t, instrument), hw,
                                      method, amap.stride)
                     for t in ann.frame_indices if ann.is_positive(t, instrument)]
            if dists:
                per_clip.append(np.mean(dists))
                res.n_spatial_frames += len(dists)
        if per_clip:
            res.spatial_px = float(np.mean(per_clip))
        rows.append(res)
    return EvalReport(rows, name)
