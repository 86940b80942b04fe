"""Audio and motion features.

* 3-scale log-mel spectrograms (windows 512/2048/8192, hop 512, 128 bands)
  at 16 kHz, i.e. 31.25 input frames per second.
* 10-channel optical-flow stacks: five dense Farneback flows around an
  anchor frame, each split into x and y components.
"""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import librosa
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .datamodel import ANCHOR_FPS, HOP_SIZE, SAMPLE_RATE, anchor_time
from .exceptions import AudioTooShort, ConfigError, EmptyImage, InsufficientFrames, ShapeMismatch

TARGET_LONG_SIDE = 256
MEL_WINDOWS = (512, 2048, 8192)
N_MELS = 128
LOG_FLOOR = 1e-10
FLOWS_PER_STACK = 5
FLOW_RATES = tuple(ANCHOR_FPS * 2 ** k for k in range(5))  # 1.95 ... 31.25
FLOW_CLIP = 20.0


def resize_frame(image, long_side=TARGET_LONG_SIDE):
    """Resize so the longer side equals ``long_side``, keeping aspect ratio."""
    image = np.asarray(image)
    if image.ndim < 2 or image.shape[0] == 0 or image.shape[1] == 0:
        raise EmptyImage("cannot resize an empty image")
    h, w = image.shape[:2]
    if max(h, w) == long_side:
        return image.copy()
    scale = long_side / max(h, w)
    new_w = max(1, int(round(w * scale)))
    new_h = max(1, int(round(h * scale)))
    interp = cv2.INTER_AREA if scale < 1 else cv2.INTER_LINEAR
    return cv2.resize(image, (new_w, new_h), interpolation=interp)


def to_gray(image):
    """ITU-R 601 luma of an RGB frame (OpenCV's RGB2GRAY weights)."""
    image = np.asarray(image)
    if image.ndim == 2:
        return image
    if image.dtype != np.uint8:
        image = np.clip(image, 0, 255).astype(np.uint8)
    return cv2.cvtColor(image, cv2.COLOR_RGB2GRAY)


# ---------------------------------------------------------------------- audio

@dataclass(frozen=True, eq=False)
class MelStack:
    """Log-mel maps for the three window sizes, shape [3, 128, T]."""

    data: np.ndarray
    window_sizes: tuple = MEL_WINDOWS
    hop: int = HOP_SIZE
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ShapeMismatch(f"mel stack must be [scales, bands, T], got {self.data.shape}")

    @property
    def n_frames(self):
        return self.data.shape[-1]

    @property
    def fps(self):
        return self.sample_rate / self.hop


def extract_mel_3scale(audio, sample_rate=SAMPLE_RATE, windows=MEL_WINDOWS,
                       hop=HOP_SIZE, n_mels=N_MELS, floor=LOG_FLOOR):
    audio = np.asarray(audio, dtype=np.float32)
    if audio.ndim != 1:
        raise ShapeMismatch("audio must be mono")
    if sample_rate != SAMPLE_RATE:
        raise ConfigError(f"expected {SAMPLE_RATE} Hz audio, got {sample_rate}")
    if len(audio) < max(windows):
        raise AudioTooShort(f"{len(audio)} samples < largest window {max(windows)}")
    n_frames = len(audio) // hop
    maps = []
    for n_fft in windows:
        power = librosa.feature.melspectrogram(
            y=audio, sr=sample_rate, n_fft=n_fft, hop_length=hop, n_mels=n_mels,
            center=True, pad_mode="reflect", power=2.0)
        maps.append(np.log(np.maximum(power[:, :n_frames], floor)))
    return MelStack(np.stack(maps).astype(np.float32), tuple(windows), hop, sample_rate)


# --------------------------------------------------------------------- motion

@dataclass(frozen=True)
class FarnebackParams:
    pyr_scale: float = 0.5
    levels: int = 3
    winsize: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.2


def dense_flow(prev_gray, next_gray, params=FarnebackParams()):
    """Per-pixel (dx, dy) displacement from ``prev_gray`` to ``next_gray``."""
    if np.array_equal(prev_gray, next_gray):
        return np.zeros(prev_gray.shape + (2,), np.float32)
    return cv2.calcOpticalFlowFarneback(
        prev_gray, next_gray, None, params.pyr_scale, params.levels, params.winsize,
        params.iterations, params.poly_n, params.poly_sigma, 0)


def canonical_flow_fps(flow_fps):
    """Map a nominal rate (1.95, 3.9, 7.8, 15.6, 31.3) onto the exact grid."""
    for rate in FLOW_RATES:
        if abs(flow_fps - rate) / rate < 0.02:
            return rate
    raise ConfigError(f"flow_fps {flow_fps} not in {{1.95, 3.9, 7.8, 15.6, 31.3}}")


@dataclass(frozen=True, eq=False)
class FlowStack:
    """Normalized flows, shape [10, H, W]: channel 2k is x, 2k+1 is y of flow k."""

    data: np.ndarray
    anchor_time: float
    flow_fps: float

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 2 * FLOWS_PER_STACK:
            raise ShapeMismatch(f"flow stack must be [10, H, W], got {self.data.shape}")

    @property
    def span(self):
        """Seconds covered by the frames feeding the stack."""
        return FLOWS_PER_STACK / self.flow_fps


class FlowExtractor:
    """Flow-stack extraction over one clip, memoizing gray frames and flows.

    Neighbouring anchors share flows at high flow rates, so one extractor
    per clip avoids recomputation.
    """

    def __init__(self, frames, frame_fps, params=FarnebackParams(), clip_value=FLOW_CLIP):
        if len(frames) < 2:
            raise InsufficientFrames(f"need at least 2 frames, got {len(frames)}")
        self.frames = frames
        self.frame_fps = frame_fps
        self.params = params
        self.clip_value = clip_value
        self._gray = {}
        self._flows = {}

    def gray(self, i):
        if i not in self._gray:
            self._gray[i] = to_gray(self.frames[i])
        return self._gray[i]

    def flow(self, i, step):
        key = (i, step)
        if key not in self._flows:
            raw = dense_flow(self.gray(i), self.gray(i + step), self.params)
            self._flows[key] = np.clip(raw, -self.clip_value, self.clip_value) / self.clip_value
        return self._flows[key]

    def stack(self, anchor_index, flow_fps):
        flow_fps = canonical_flow_fps(flow_fps)
        n = len(self.frames)
        step = max(1, int(round(self.frame_fps / flow_fps)))
        step = min(step, n - 1)
        t = anchor_time(anchor_index)
        a = min(max(int(round(t * self.frame_fps)), 0), n - 1)
        channels = []
        for k in range(-2, FLOWS_PER_STACK - 2):
            # out-of-range neighbours replicate the nearest edge flow
            start = min(max(a + k * step, 0), n - 1 - step)
            flow = self.flow(start, step)
            channels.append(flow[..., 0])
            channels.append(flow[..., 1])
        return FlowStack(np.stack(channels).astype(np.float32), t, flow_fps)

    def stacks(self, anchors, flow_fps):
        return np.stack([self.stack(n, flow_fps).data for n in anchors])


def extract_flow_stack(frames, anchor_index, flow_fps, frame_fps=31.25,
                       params=FarnebackParams(), clip_value=FLOW_CLIP):
    return FlowExtractor(frames, frame_fps, params, clip_value).stack(anchor_index, flow_fps)


# --------------------------------------------------------------- transformers

class LogMelExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer: mono 16 kHz waveforms -> [3, 128, T] arrays."""

    def __init__(self, windows=MEL_WINDOWS, hop=HOP_SIZE, n_mels=N_MELS, floor=LOG_FLOOR):
        self.windows = windows
        self.hop = hop
        self.n_mels = n_mels
        self.floor = floor

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return [extract_mel_3scale(x, windows=self.windows, hop=self.hop,
                                   n_mels=self.n_mels, floor=self.floor).data for x in X]


class FlowStackExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer: VideoClips -> [N_anchors, 10, H, W] arrays.

    ``anchors`` selects anchor indices per clip; None means every anchor.
    """

    def __init__(self, flow_fps=7.8, anchors=None, clip_value=FLOW_CLIP):
        self.flow_fps = flow_fps
        self.anchors = anchors
        self.clip_value = clip_value

    def fit(self, X, y=None):
        canonical_flow_fps(self.flow_fps)
        return self

    def transform(self, X):
        out = []
        for clip in X:
            anchors = self.anchors if self.anchors is not None else range(clip.n_anchors)
            ext = FlowExtractor(clip.frames, clip.frame_fps, clip_value=self.clip_value)
            out.append(ext.stacks(list(anchors), self.flow_fps))
        return out
