"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

import numpy as np

from .datamodel import ClipTags
from .exceptions import ChannelMismatch, ShapeMismatch
from .models import payload


def check_tags(y, n_samples=None):
    """Tag matrix [n_clips, G] of 0/1 -> list of ClipTags."""
    if len(y) and isinstance(y[0], ClipTags):
        tags = list(y)
    else:
        arr = np.asarray(y)
        if arr.ndim != 2:
            raise ShapeMismatch(f"tags must be [n_clips, n_classes], got shape {arr.shape}")
        tags = [ClipTags(tuple(row)) for row in arr]
    if n_samples is not None and len(tags) != n_samples:
        raise ShapeMismatch(f"{len(tags)} tag rows for {n_samples} clips")
    if len({len(t) for t in tags}) > 1:
        raise ShapeMismatch("tag rows differ in length")
    return tags


def check_mel_inputs(X, n_scales=3, n_mels=None):
    out = []
    for i, x in enumerate(X):
        data = np.asarray(payload(x), dtype=np.float32)
        if data.ndim != 3 or data.shape[0] != n_scales or (n_mels and data.shape[1] != n_mels):
            raise ShapeMismatch(f"clip {i}: expected [{n_scales}, {n_mels or 'mels'}, T], got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError(f"clip {i}: non-finite mel values")
        out.append(data)
    return out


def check_frame_inputs(X, channels):
    """Per-clip [N, C, H, W] stacks; entries may be lazy indexables."""
    for i, x in enumerate(X):
        shape = np.shape(x[:1]) if not hasattr(x, "shape") else x.shape
        if len(shape) != 4:
            raise ShapeMismatch(f"clip {i}: expected [N, C, H, W], got {shape}")
        if shape[1] != channels:
            raise ChannelMismatch(f"clip {i}: expected {channels} channels, got {shape[1]}")
    return list(X)


def check_same_length(name, items, n):
    if items is not None and len(items) != n:
        raise ShapeMismatch(f"{name}: {len(items)} entries for {n} clips")
