"""Core clip, tensor and annotation types plus sub-clip sampling.

All temporal indices in the package live on one grid: the sound model's
output rate, 16000 / 512 / 16 = 1.953125 frames per second. Anchor ``n`` sits
at ``n / 1.953125`` seconds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .exceptions import ClipTooShort, EpochExhausted, SchemaError, ShapeMismatch

SAMPLE_RATE = 16000
HOP_SIZE = 512
SOUND_STRIDE = 16
ANCHOR_FPS = SAMPLE_RATE / HOP_SIZE / SOUND_STRIDE  # 1.953125
FRAMES_PER_SUBCLIP = 10
SUBCLIPS_PER_CLIP = 12
TRAIN_CLIP_SECONDS = 60.0

DEFAULT_INSTRUMENTS = (
    "Accordion", "Cello", "Drum", "Flute", "Guitar",
    "Piano", "Saxophone", "Trumpet", "Violin",
)

# annotated evaluation windows, seconds
ANNOTATED_WINDOWS = ((0.0, 10.0), (30.0, 40.0))


def anchor_time(n):
    return n / ANCHOR_FPS


def anchors_in_window(start, stop):
    """Anchor indices n with start <= t_n < stop."""
    first = int(np.ceil(start * ANCHOR_FPS - 1e-9))
    last = int(np.ceil(stop * ANCHOR_FPS - 1e-9))
    return list(range(first, last))


def annotated_anchor_indices(windows=ANNOTATED_WINDOWS):
    out = []
    for start, stop in windows:
        out.extend(anchors_in_window(start, stop))
    return out


def _frozen_array(data, dtype=None):
    arr = np.array(data, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class InstrumentVocabulary:
    names: tuple = DEFAULT_INSTRUMENTS

    def __post_init__(self):
        names = tuple(self.names)
        if not names:
            raise SchemaError("vocabulary must not be empty")
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate instrument names in {names}")
        object.__setattr__(self, "names", names)

    @property
    def size(self):
        return len(self.names)

    def __len__(self):
        return len(self.names)

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown instrument {name!r}") from None


@dataclass(frozen=True)
class ClipTags:
    """Multi-hot clip-level instrument tags."""

    v: tuple

    def __post_init__(self):
        v = tuple(int(x) for x in np.asarray(self.v).ravel())
        if any(x not in (0, 1) for x in v):
            raise SchemaError(f"tags must be binary, got {v}")
        object.__setattr__(self, "v", v)

    @classmethod
    def from_names(cls, names, vocabulary=None):
        vocabulary = vocabulary or InstrumentVocabulary()
        v = [0] * vocabulary.size
        for name in names:
            v[vocabulary.index(name)] = 1
        return cls(tuple(v))

    @property
    def array(self):
        return np.asarray(self.v, dtype=np.float32)

    @property
    def positives(self):
        return [g for g, x in enumerate(self.v) if x]

    def __len__(self):
        return len(self.v)


@dataclass(frozen=True, eq=False)
class VideoClip:
    """A decoded clip.

    ``frames`` is any sequence of HxWx3 uint8 images; lazily rendered
    sequences are fine as long as they support ``len`` and indexing.
    """

    clip_id: str
    frames: Sequence
    frame_fps: float
    audio: np.ndarray
    tags: ClipTags
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.frame_fps <= 0:
            raise SchemaError("frame_fps must be positive")
        if self.sample_rate != SAMPLE_RATE:
            raise SchemaError(f"audio must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        audio = np.asarray(self.audio, dtype=np.float32)
        if audio.ndim != 1:
            raise SchemaError("audio must be mono")
        audio.setflags(write=False)
        object.__setattr__(self, "audio", audio)
        if abs(len(audio) / self.sample_rate - self.duration) > 1.0 / self.frame_fps + 1e-9:
            raise SchemaError(
                f"audio duration {len(audio) / self.sample_rate:.3f}s differs from "
                f"video duration {self.duration:.3f}s by more than one frame")

    @property
    def duration(self):
        return len(self.frames) / self.frame_fps

    @property
    def n_anchors(self):
        return int(np.ceil(self.duration * ANCHOR_FPS - 1e-9))

    def frame_index(self, t):
        """Nearest frame to time ``t``, clamped to the clip."""
        i = int(round(t * self.frame_fps))
        return min(max(i, 0), len(self.frames) - 1)

    def anchor_frame_index(self, n):
        return self.frame_index(anchor_time(n))

    def anchor_frames(self, indices=None):
        if indices is None:
            indices = range(self.n_anchors)
        return [self.frames[self.anchor_frame_index(n)] for n in indices]


@dataclass(frozen=True, eq=False)
class SubClip:
    parent_id: str
    index: int
    anchors: tuple
    frames: tuple


def split_subclips(clip):
    """Cut the first minute of a training clip into 12 sub-clips of 10 anchors.

    Anchors past the last decoded frame (the 120th anchor sits at 60.93 s)
    reuse the final frame.
    """
    if clip.duration < TRAIN_CLIP_SECONDS - 1e-9:
        raise ClipTooShort(
            f"{clip.clip_id}: {clip.duration:.2f}s < {TRAIN_CLIP_SECONDS:.0f}s required for training")
    out = []
    for k in range(SUBCLIPS_PER_CLIP):
        anchors = tuple(range(k * FRAMES_PER_SUBCLIP, (k + 1) * FRAMES_PER_SUBCLIP))
        frames = tuple(clip.anchor_frames(anchors))
        out.append(SubClip(clip.clip_id, k, anchors, frames))
    return out


class CorpusSampler:
    """Video-without-replacement, sub-clip-uniform sampler.

    Each epoch visits every video exactly once in a random order; for each
    visit one of its sub-clips is drawn uniformly. The whole sequence is a
    function of ``seed``.
    """

    def __init__(self, n_videos, n_subclips=SUBCLIPS_PER_CLIP, seed=None):
        if n_videos <= 0:
            raise ValueError("corpus is empty")
        self.n_videos = int(n_videos)
        self.n_subclips = n_subclips
        self.rng = np.random.default_rng(seed)
        self.epoch = -1
        self._order = []
        self._pos = 0

    def start_epoch(self):
        self.epoch += 1
        self._order = [int(i) for i in self.rng.permutation(self.n_videos)]
        self._pos = 0

    @property
    def remaining(self):
        return len(self._order) - self._pos

    def draw(self):
        if self._pos >= len(self._order):
            raise EpochExhausted(f"all {self.n_videos} videos consumed in epoch {self.epoch}")
        video = self._order[self._pos]
        self._pos += 1
        n_sub = self.n_subclips
        if not isinstance(n_sub, int):
            n_sub = n_sub[video]
        return video, int(self.rng.integers(n_sub))

    def __iter__(self):
        while self.remaining:
            yield self.draw()


def sample_minibatch(sampler, corpus):
    """Draw the next mini-batch (one sub-clip, 10 frames) from ``corpus``."""
    video, sub = sampler.draw()
    return split_subclips(corpus[video])[sub]


@dataclass(frozen=True, eq=False)
class ActivationMap:
    """Per-class confidence over time and space, shape [G, T, I, J]."""

    data: np.ndarray
    fps: float = ANCHOR_FPS
    stride: float = 32
    modality: str = "action"

    def __post_init__(self):
        data = _frozen_array(self.data, np.float32)
        if data.ndim != 4:
            raise ShapeMismatch(f"activation map must be [G, T, I, J], got shape {data.shape}")
        _check_unit_range(data)
        if self.fps <= 0 or self.stride < 1:
            raise SchemaError("fps must be > 0 and stride >= 1")
        if self.modality not in ("object", "action", "fused"):
            raise SchemaError(f"unknown modality {self.modality!r}")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True, eq=False)
class SoundActivation:
    """Per-class sound confidence over time, shape [G, T]."""

    data: np.ndarray
    fps: float = ANCHOR_FPS

    def __post_init__(self):
        data = _frozen_array(self.data, np.float32)
        if data.ndim != 2:
            raise ShapeMismatch(f"sound activation must be [G, T], got shape {data.shape}")
        _check_unit_range(data)
        if self.fps <= 0:
            raise SchemaError("fps must be > 0")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True, eq=False)
class BinaryMask:
    data: np.ndarray
    threshold: float
    source_modality: str

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen_array(self.data, np.uint8))


def _check_unit_range(data):
    if data.size and (not np.all(np.isfinite(data)) or data.min() < 0 or data.max() > 1):
        raise SchemaError("activation values must lie in [0, 1]")


@dataclass(frozen=True)
class KeyPointAnnotationSet:
    """Key points per anchor frame and instrument.

    ``frames`` maps anchor index -> instrument name -> frozenset of (x, y),
    with x the column and y the row in resized-frame pixels. A frame listed
    with no instruments is annotated and negative for every class.
    """

    clip_id: str
    fps: float = ANCHOR_FPS
    frames: Mapping = field(default_factory=dict)
    frame_size: tuple | None = None  # (width, height)

    def __post_init__(self):
        frames = {}
        for t, per_inst in self.frames.items():
            frames[int(t)] = {
                str(name): frozenset(tuple(p) for p in points)
                for name, points in per_inst.items() if len(points)
            }
        object.__setattr__(self, "frames", frames)
        if self.frame_size is not None:
            object.__setattr__(self, "frame_size", tuple(self.frame_size))

    @property
    def frame_indices(self):
        return sorted(self.frames)

    def keypoints(self, t, instrument):
        return self.frames.get(t, {}).get(instrument, frozenset())

    def is_positive(self, t, instrument):
        return bool(self.keypoints(t, instrument))

    def instruments(self):
        return sorted({name for per in self.frames.values() for name in per})
