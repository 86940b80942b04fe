"""Teacher-derived training targets for the action stream.

Four schemes, named after what supplies the target:

* ``VT``  - clip tags, compared with the spatial max of each frame map
* ``ST``  - binarized sound activation, compared with the spatial max
* ``OT``  - binarized object map, compared cell by cell
* ``SOT`` - sound gate times object map, compared cell by cell

Teacher outputs are constants here; nothing flows back into the teachers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .datamodel import ActivationMap, BinaryMask, ClipTags, SoundActivation
from .exceptions import EmptyMap, MissingAuxiliary, ShapeMismatch, SpecError, ThresholdOutOfRange

EPS = 1e-7
MODES = ("VT", "OT", "ST", "SOT")
SPATIAL_MAX = "spatial_max"
SPATIAL_MAP = "spatial_map"


def _digits(x):
    return f"{x:g}".replace(".", "")


@dataclass(frozen=True)
class TargetSpec:
    mode: str
    sound_threshold: float | None = None
    object_threshold: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise SpecError(f"mode must be one of {MODES}, got {self.mode!r}")
        needs_v = self.mode in ("ST", "SOT")
        needs_u = self.mode in ("OT", "SOT")
        if needs_v != (self.sound_threshold is not None):
            raise SpecError(f"{self.mode}: sound threshold is {'required' if needs_v else 'not allowed'}")
        if needs_u != (self.object_threshold is not None):
            raise SpecError(f"{self.mode}: object threshold is {'required' if needs_u else 'not allowed'}")
        for t in (self.sound_threshold, self.object_threshold):
            if t is not None:
                _check_threshold(t)

    @property
    def name(self):
        out = self.mode
        if self.sound_threshold is not None:
            out += _digits(self.sound_threshold)
        if self.object_threshold is not None:
            out += _digits(self.object_threshold)
        return out

    @property
    def comparison_mode(self):
        return SPATIAL_MAP if self.mode in ("OT", "SOT") else SPATIAL_MAX


def _check_threshold(threshold):
    if not 0.0 < threshold < 1.0:
        raise ThresholdOutOfRange(f"threshold must lie in (0, 1), got {threshold}")


def binarize(source, threshold):
    """Indicator ``source >= threshold`` (inclusive)."""
    _check_threshold(threshold)
    if isinstance(source, ActivationMap):
        modality, data = source.modality, source.data
    elif isinstance(source, SoundActivation):
        modality, data = "sound", source.data
    else:
        modality, data = "array", np.asarray(source)
    return BinaryMask((data >= threshold).astype(np.uint8), threshold, modality)


def build_target(spec, tags=None, obj=None, snd=None, map_shape=None, n_frames=None):
    """Target tensor and comparison mode for one clip.

    Shapes: spatial-max targets are [G, T]; per-cell targets are
    [G, T, I, J]. ``map_shape`` is the action model's [G, T, I, J] output
    shape and is checked against the object map when given. ``n_frames``
    sets T for VT when no teacher output is supplied.
    """
    if spec.mode in ("OT", "SOT") and obj is None:
        raise MissingAuxiliary(f"{spec.name} needs an object activation map")
    if spec.mode in ("ST", "SOT") and snd is None:
        raise MissingAuxiliary(f"{spec.name} needs a sound activation")
    if spec.mode == "VT" and tags is None:
        raise MissingAuxiliary("VT needs clip tags")
    if obj is not None and map_shape is not None and tuple(obj.shape) != tuple(map_shape):
        raise ShapeMismatch(f"object map {obj.shape} != action map {tuple(map_shape)}")
    if obj is not None and snd is not None:
        if abs(obj.fps - snd.fps) > 1e-9:
            raise ShapeMismatch(f"object fps {obj.fps} != sound fps {snd.fps}")
        if obj.shape[:2] != snd.shape:
            raise ShapeMismatch(f"object map {obj.shape} does not align with sound {snd.shape}")

    if spec.mode == "VT":
        if n_frames is None:
            ref = snd if snd is not None else obj
            if ref is None and map_shape is None:
                raise MissingAuxiliary("VT needs n_frames, map_shape or a teacher output to size T")
            n_frames = ref.shape[1] if ref is not None else map_shape[1]
        v = tags.array if isinstance(tags, ClipTags) else np.asarray(tags, np.float32)
        target = np.repeat(v[:, None], n_frames, axis=1)
    elif spec.mode == "ST":
        target = binarize(snd, spec.sound_threshold).data
    elif spec.mode == "OT":
        target = binarize(obj, spec.object_threshold).data
    else:
        gate = binarize(snd, spec.sound_threshold).data
        target = gate[:, :, None, None] * binarize(obj, spec.object_threshold).data
    return target.astype(np.float32), spec.comparison_mode


def bce_loss(p, q, eps=EPS):
    """Mean binary cross-entropy with predictions clipped to [eps, 1 - eps].

    Works on torch tensors (differentiable) or array-likes (float64).
    """
    if torch.is_tensor(p):
        q = torch.as_tensor(q, dtype=p.dtype)
        if p.shape != q.shape:
            raise ShapeMismatch(f"prediction {tuple(p.shape)} vs target {tuple(q.shape)}")
        p = p.clamp(eps, 1 - eps)
        return -(q * torch.log(p) + (1 - q) * torch.log(1 - p)).mean()
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs target {q.shape}")
    p = np.clip(p, eps, 1 - eps)
    return float(-(q * np.log(p) + (1 - q) * np.log(1 - p)).mean())


def spatial_max(maps):
    """Max over the last two axes.

    The torch path routes the gradient to the first maximal cell in
    row-major order only, also when several cells tie.
    """
    if torch.is_tensor(maps):
        if maps.shape[-1] * maps.shape[-2] == 0:
            raise EmptyMap("spatial max of an empty map")
        flat = maps.flatten(-2)
        idx = flat.argmax(dim=-1, keepdim=True)
        return flat.gather(-1, idx).squeeze(-1)
    maps = np.asarray(maps)
    if maps.ndim < 2 or maps.shape[-1] * maps.shape[-2] == 0:
        raise EmptyMap("spatial max of an empty map")
    return maps.max(axis=(-2, -1))


def action_loss(maps, target, comparison_mode):
    """BCE between action maps [..., G, I, J] and a target per comparison mode."""
    if comparison_mode == SPATIAL_MAX:
        return bce_loss(spatial_max(maps), target)
    if comparison_mode == SPATIAL_MAP:
        return bce_loss(maps, target)
    raise ValueError(f"unknown comparison mode {comparison_mode!r}")
