"""Post-training fusion of the action, object and sound streams by pointwise product."""
from __future__ import annotations

import numpy as np

from .datamodel import ActivationMap, SoundActivation
from .exceptions import MissingAuxiliary, ShapeMismatch

FUSION_MODES = ("A", "AO", "AS", "AOS")


def fuse(mode, action, obj=None, sound=None):
    if mode not in FUSION_MODES:
        raise ValueError(f"fusion mode must be one of {FUSION_MODES}, got {mode!r}")
    needs_obj = "O" in mode
    needs_sound = "S" in mode
    if needs_obj and obj is None:
        raise MissingAuxiliary(f"{mode} fusion needs an object map")
    if needs_sound and sound is None:
        raise MissingAuxiliary(f"{mode} fusion needs a sound activation")

    out = np.array(action.data, dtype=np.float32)
    if needs_obj:
        if not isinstance(obj, ActivationMap) or obj.shape != action.shape:
            raise ShapeMismatch(f"object map {getattr(obj, 'shape', None)} != action map {action.shape}")
        _check_fps(action, obj)
        out *= obj.data
    if needs_sound:
        if not isinstance(sound, SoundActivation) or sound.shape != action.shape[:2]:
            raise ShapeMismatch(f"sound {getattr(sound, 'shape', None)} != action [G, T] {action.shape[:2]}")
        _check_fps(action, sound)
        out *= sound.data[:, :, None, None]
    modality = action.modality if mode == "A" else "fused"
    return ActivationMap(out, action.fps, action.stride, modality)


def _check_fps(a, b):
    if abs(a.fps - b.fps) > 1e-9:
        raise ShapeMismatch(f"stream rates differ: {a.fps} vs {b.fps}")
