"""Per-clip feature preparation and teacher inference over the anchor grid."""
from __future__ import annotations

import numpy as np

from .datamodel import SUBCLIPS_PER_CLIP, FRAMES_PER_SUBCLIP, ActivationMap, SoundActivation
from .features import FlowExtractor, extract_mel_3scale
from .models import predict_maps, rgb_input, sound_forward

TRAIN_ANCHORS = SUBCLIPS_PER_CLIP * FRAMES_PER_SUBCLIP


class RGBInputs:
    """Anchor frames kept as uint8, converted to model input when sliced."""

    def __init__(self, frames):
        self.frames = np.asarray(frames, dtype=np.uint8)

    def __len__(self):
        return len(self.frames)

    @property
    def shape(self):
        n, h, w, c = self.frames.shape
        return (n, c, h, w)

    def __getitem__(self, idx):
        sel = self.frames[idx]
        if sel.ndim == 3:
            return rgb_input(sel)
        return np.stack([rgb_input(f) for f in sel]) if len(sel) else np.zeros((0,) + self.shape[1:], np.float32)


def anchor_list(clip, anchors=None, training=False):
    if anchors is not None:
        return list(anchors)
    return list(range(TRAIN_ANCHORS if training else clip.n_anchors))


def rgb_inputs(clip, anchors=None, training=False):
    return RGBInputs(clip.anchor_frames(anchor_list(clip, anchors, training)))


def flow_inputs(clip, flow_fps, anchors=None, training=False, dtype=np.float16):
    """Flow stacks [N, 10, H, W] for the clip's anchors (float16 to save memory)."""
    ext = FlowExtractor(clip.frames, clip.frame_fps)
    anchors = anchor_list(clip, anchors, training)
    out = None
    for k, n in enumerate(anchors):
        stack = ext.stack(n, flow_fps).data
        if out is None:
            out = np.empty((len(anchors),) + stack.shape, dtype)
        out[k] = stack
    return out


def mel_inputs(clip):
    return extract_mel_3scale(clip.audio).data


def fit_length(data, n):
    """Crop or edge-pad axis 1 to n entries."""
    if data.shape[1] >= n:
        return data[:, :n]
    pad = [(0, 0)] * data.ndim
    pad[1] = (0, n - data.shape[1])
    return np.pad(data, pad, mode="edge")


def sound_teacher(model, mel, n_anchors):
    """Sound activation resampled to exactly ``n_anchors`` frames."""
    act, _ = sound_forward(mel, model)
    return SoundActivation(fit_length(act.data, n_anchors), act.fps)


def object_teacher(model, inputs):
    return ActivationMap(predict_maps(model, inputs), stride=model.config.total_stride,
                         modality="object")


def subset_frames(act, anchors):
    """Select anchor columns from an ActivationMap or SoundActivation."""
    if isinstance(act, SoundActivation):
        return SoundActivation(act.data[:, anchors], act.fps)
    return ActivationMap(act.data[:, anchors], act.fps, act.stride, act.modality)


def downsample_masks(masks, map_size, stride):
    """Pixel masks [G, N, H, W] -> per-cell coverage fraction [G, N, I, J]."""
    g, n, h, w = masks.shape
    i, j = map_size
    out = np.zeros((g, n, i, j), np.float32)
    for a in range(i):
        for b in range(j):
            block = masks[:, :, a * stride:(a + 1) * stride, b * stride:(b + 1) * stride]
            if block.size:
                out[:, :, a, b] = block.mean(axis=(2, 3))
    return out
