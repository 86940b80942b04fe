"""Synthetic audiovisual scenes with exact ground truth.

Each present instrument is a textured, coloured shape that drifts slowly
for the whole clip. While it "plays", a small grating patch on the shape
oscillates (the action) and the class's sine tone sounds. So actions sit
inside objects and coincide with sound by construction, while drift gives
plenty of motion that is not playing.

Frames are rendered on demand from continuous formulas, so any frame rate
works without storing video.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
from scipy.io import wavfile

from .datamodel import (ANCHOR_FPS, ANNOTATED_WINDOWS, SAMPLE_RATE, ClipTags,
                        InstrumentVocabulary, KeyPointAnnotationSet, SoundActivation,
                        VideoClip, anchor_time, anchors_in_window)
from .exceptions import SpecError
from .storage import load_annotations, persist_tensor, save_annotations

TONE_DBFS = -12.0
NOISE_DBFS = -40.0
PALETTE = ((220, 60, 50), (50, 90, 220), (60, 190, 70), (230, 200, 40), (170, 60, 200),
           (40, 200, 200), (240, 130, 30), (140, 140, 140), (250, 110, 180))
SHAPES = ("square", "disc")


@dataclass(frozen=True)
class ClassSpec:
    name: str
    color: tuple
    shape: str = "square"
    half_size: int = 11
    tone_hz: float = 440.0


@dataclass(frozen=True)
class SceneSpec:
    clip_id: str
    classes: tuple
    present: tuple
    intervals: dict = field(default_factory=dict)  # class index -> ((start, stop), ...)
    clip_seconds: float = 60.0
    frame_size: tuple = (64, 64)  # (width, height)
    frame_fps: float = 31.25
    drift_px: float = 5.0
    action_px: float = 2.0
    action_hz: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.clip_seconds <= 0:
            raise SpecError("clip_seconds must be positive")
        for g in self.present:
            if not 0 <= g < len(self.classes):
                raise SpecError(f"present class {g} not in 0..{len(self.classes) - 1}")
        for g, spans in self.intervals.items():
            if g not in self.present:
                raise SpecError(f"class {g} plays but is not present")
            for start, stop in spans:
                if not 0 <= start < stop <= self.clip_seconds:
                    raise SpecError(f"interval ({start}, {stop}) outside 0..{self.clip_seconds}s")
        tones = [self.classes[g].tone_hz for g in self.present]
        if len(set(tones)) != len(tones):
            raise SpecError("present classes must have distinct tone frequencies")

    @property
    def n_frames(self):
        return int(round(self.clip_seconds * self.frame_fps))

    @property
    def n_anchors(self):
        return int(np.ceil(self.clip_seconds * ANCHOR_FPS - 1e-9))

    def playing(self, g, t):
        return any(start <= t < stop for start, stop in self.intervals.get(g, ()))


def default_classes(n_classes, vocabulary=None):
    vocabulary = vocabulary or InstrumentVocabulary()
    if n_classes > len(vocabulary):
        raise SpecError(f"vocabulary has only {len(vocabulary)} classes")
    return tuple(
        ClassSpec(vocabulary.names[g], PALETTE[g % len(PALETTE)], SHAPES[g % 2],
                  11 if g % 2 == 0 else 12, 330.0 * 2 ** (g * 5 / 12))
        for g in range(n_classes))


def random_intervals(rng, clip_seconds, min_len=3.0, max_len=9.0):
    """Alternating rest/play segments, starting in a random state."""
    spans, t = [], 0.0
    playing = bool(rng.integers(2))
    while t < clip_seconds:
        length = float(rng.uniform(min_len, max_len))
        stop = min(t + length, clip_seconds)
        if playing:
            spans.append((round(t, 3), round(stop, 3)))
        playing = not playing
        t = stop
    return tuple(s for s in spans if s[1] > s[0])


def random_scene_spec(seed, clip_id=None, n_classes=2, clip_seconds=60.0, p_both=0.25,
                      classes=None, **overrides):
    """Scene with one random instrument (or all, with probability ``p_both``)."""
    rng = np.random.default_rng(seed)
    classes = classes or default_classes(n_classes)
    if rng.random() < p_both:
        present = tuple(range(len(classes)))
    else:
        present = (int(rng.integers(len(classes))),)
    intervals = {g: random_intervals(rng, clip_seconds) for g in present}
    return SceneSpec(clip_id or f"synth{seed:06d}", tuple(classes), present, intervals,
                     clip_seconds, seed=int(seed), **overrides)


@dataclass
class SyntheticScene:
    spec: SceneSpec
    clip: VideoClip
    sound: SoundActivation      # [G, N_anchors], 1 exactly while playing
    masks: np.ndarray           # [G, N_anchors, H, W] bool object regions
    annotations: KeyPointAnnotationSet
    vocabulary: InstrumentVocabulary

    @property
    def tags(self):
        return self.clip.tags


class _Renderer:
    def __init__(self, spec):
        self.spec = spec
        rng = np.random.default_rng([spec.seed, 1])
        w, h = spec.frame_size
        noise = rng.normal(0.0, 1.0, (h, w)).astype(np.float32)
        noise = cv2.GaussianBlur(noise, (0, 0), 1.5)
        noise /= noise.std() + 1e-8
        self.background = np.clip(95 + 12 * noise, 0, 255)[..., None].repeat(3, axis=2)
        self.yy, self.xx = np.mgrid[0:h, 0:w].astype(np.float32)
        n = len(spec.present)
        slots = [(w * (k + 0.5) / n, h / 2) for k in range(n)]
        self.objects = {}
        for slot, g in zip(slots, spec.present):
            cls = spec.classes[g]
            margin = cls.half_size - 5
            offset = (float(rng.uniform(-margin, margin)), float(rng.uniform(-margin, margin)))
            self.objects[g] = dict(
                base=(slot[0] + rng.uniform(-2, 2), slot[1] + rng.uniform(-6, 6)),
                freqs=rng.uniform(0.08, 0.25, 2),
                phases=rng.uniform(0, 2 * np.pi, 4),
                tex=(rng.uniform(4.0, 7.0), rng.uniform(4.0, 7.0), rng.uniform(0, 2 * np.pi)),
                offset=offset,
            )

    def center(self, g, t):
        o = self.objects[g]
        a = self.spec.drift_px
        f1, f2 = o["freqs"]
        p = o["phases"]
        dx = a * (0.7 * np.sin(2 * np.pi * f1 * t + p[0]) + 0.3 * np.sin(2 * np.pi * 2.3 * f1 * t + p[1]))
        dy = a * (0.7 * np.sin(2 * np.pi * f2 * t + p[2]) + 0.3 * np.sin(2 * np.pi * 1.7 * f2 * t + p[3]))
        return o["base"][0] + dx, o["base"][1] + dy

    def keypoint(self, g, t):
        cx, cy = self.center(g, t)
        ox, oy = self.objects[g]["offset"]
        return cx + ox, cy + oy

    def mask(self, g, t):
        cls = self.spec.classes[g]
        cx, cy = self.center(g, t)
        u, v = self.xx - cx, self.yy - cy
        if cls.shape == "disc":
            return u * u + v * v <= cls.half_size ** 2
        return (np.abs(u) <= cls.half_size) & (np.abs(v) <= cls.half_size)

    def frame(self, t):
        img = self.background.copy()
        for g in self.spec.present:
            cls = self.spec.classes[g]
            o = self.objects[g]
            cx, cy = self.center(g, t)
            u, v = self.xx - cx, self.yy - cy
            inside = self.mask(g, t)
            lu, lv, ph = o["tex"]
            shade = 0.75 + 0.25 * np.sin(2 * np.pi * u / lu + ph) * np.sin(2 * np.pi * v / lv)
            color = np.asarray(cls.color, np.float32)
            img[inside] = shade[inside, None] * color
            # the action: an oscillating grating patch around the key point
            kx, ky = self.keypoint(g, t)
            pu, pv = self.xx - kx, self.yy - ky
            patch = (np.abs(pu) <= 5) & (np.abs(pv) <= 5) & inside
            shift = 0.0
            if self.spec.playing(g, t):
                shift = self.spec.action_px * np.sin(2 * np.pi * self.spec.action_hz * t)
            # period 8 px keeps the frame-to-frame shift under half a period
            grating = 0.5 + 0.5 * np.sin(2 * np.pi * (pu - shift) / 8.0) * np.cos(2 * np.pi * pv / 8.0)
            img[patch] = (40 + 200 * grating[patch])[:, None] * np.ones(3, np.float32)
        return np.clip(img + 0.5, 0, 255).astype(np.uint8)


class LazyFrames(Sequence):
    """Frames of a synthetic scene, rendered when indexed."""

    def __init__(self, renderer, n_frames, fps):
        self._renderer = renderer
        self._n = n_frames
        self._fps = fps

    def __len__(self):
        return self._n

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(self._n))]
        if i < 0:
            i += self._n
        if not 0 <= i < self._n:
            raise IndexError(i)
        return self._renderer.frame(i / self._fps)


def synth_audio(spec, rng):
    n = int(round(spec.clip_seconds * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    audio = rng.normal(0.0, 10 ** (NOISE_DBFS / 20), n)
    amp = 10 ** (TONE_DBFS / 20)
    for g in spec.present:
        on = np.zeros(n, bool)
        for start, stop in spec.intervals.get(g, ()):
            on[int(round(start * SAMPLE_RATE)):int(round(stop * SAMPLE_RATE))] = True
        audio += on * amp * np.sin(2 * np.pi * spec.classes[g].tone_hz * t)
    return audio.astype(np.float32)


def generate_scene(spec, annotate_windows=ANNOTATED_WINDOWS):
    """Render a scene and its exact ground truth.

    Key points are annotated on the anchors inside ``annotate_windows``
    that fall within the clip (None annotates every anchor).
    """
    vocabulary = InstrumentVocabulary(tuple(c.name for c in spec.classes))
    renderer = _Renderer(spec)
    rng = np.random.default_rng([spec.seed, 2])
    audio = synth_audio(spec, rng)
    tags = ClipTags(tuple(int(g in spec.present) for g in range(len(spec.classes))))
    frames = LazyFrames(renderer, spec.n_frames, spec.frame_fps)
    clip = VideoClip(spec.clip_id, frames, spec.frame_fps, audio, tags)

    n_anchors = spec.n_anchors
    w, h = spec.frame_size
    sound = np.zeros((len(spec.classes), n_anchors), np.float32)
    masks = np.zeros((len(spec.classes), n_anchors, h, w), bool)
    for n in range(n_anchors):
        t = clip.anchor_frame_index(n) / spec.frame_fps
        for g in spec.present:
            sound[g, n] = float(spec.playing(g, anchor_time(n)))
            masks[g, n] = renderer.mask(g, t)

    if annotate_windows is None:
        anchors = list(range(n_anchors))
    else:
        anchors = [n for lo, hi in annotate_windows for n in anchors_in_window(lo, hi)
                   if n < n_anchors]
    ann_frames = {}
    for n in anchors:
        t = clip.anchor_frame_index(n) / spec.frame_fps
        ann_frames[n] = {}
        for g in spec.present:
            if sound[g, n]:
                kx, ky = renderer.keypoint(g, t)
                ann_frames[n][spec.classes[g].name] = [(int(round(kx)), int(round(ky)))]
    annotations = KeyPointAnnotationSet(spec.clip_id, ANCHOR_FPS, ann_frames, (w, h))
    return SyntheticScene(spec, clip, SoundActivation(sound), masks, annotations, vocabulary)


def make_corpus(n_clips, seed, clip_seconds=60.0, n_classes=2, prefix="clip", **kwargs):
    seeds = np.random.default_rng(seed).integers(0, 2 ** 31, n_clips)
    return [generate_scene(random_scene_spec(int(s), f"{prefix}{k:04d}", n_classes,
                                             clip_seconds, **kwargs))
            for k, s in enumerate(seeds)]


# ------------------------------------------------------------------ on disk

def write_scene(scene, directory):
    """Frames as PNGs, 16-bit WAV, tags/annotations JSON, masks as TNSR."""
    directory = Path(directory)
    frame_dir = directory / "frames"
    frame_dir.mkdir(parents=True, exist_ok=True)
    for i in range(len(scene.clip.frames)):
        cv2.imwrite(str(frame_dir / f"{i:05d}.png"),
                    cv2.cvtColor(scene.clip.frames[i], cv2.COLOR_RGB2BGR))
    pcm = np.clip(np.round(scene.clip.audio * 32767), -32768, 32767).astype(np.int16)
    wavfile.write(directory / "audio.wav", SAMPLE_RATE, pcm)
    meta = {"clip_id": scene.clip.clip_id, "frame_fps": scene.clip.frame_fps,
            "vocabulary": list(scene.vocabulary.names),
            "tags": [n for n, v in zip(scene.vocabulary.names, scene.tags.v) if v]}
    (directory / "clip.json").write_text(json.dumps(meta, indent=1))
    save_annotations(scene.annotations, directory / "annotations.json")
    persist_tensor(scene.masks.astype(np.float32), directory / "masks.tnsr")
    persist_tensor(scene.sound.data, directory / "sound_gt.tnsr")
    return directory


class _PngFrames(Sequence):
    def __init__(self, paths):
        self._paths = paths

    def __len__(self):
        return len(self._paths)

    def __getitem__(self, i):
        img = cv2.imread(str(self._paths[i]), cv2.IMREAD_COLOR)
        if img is None:
            raise IndexError(i)
        return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def read_clip(directory, vocabulary=None):
    """Load a clip written by :func:`write_scene` (or laid out the same way)."""
    directory = Path(directory)
    meta = json.loads((directory / "clip.json").read_text())
    vocabulary = vocabulary or InstrumentVocabulary(tuple(meta["vocabulary"]))
    rate, pcm = wavfile.read(directory / "audio.wav")
    audio = pcm.astype(np.float32) / 32768.0 if pcm.dtype == np.int16 else pcm.astype(np.float32)
    frames = _PngFrames(sorted((directory / "frames").glob("*.png")))
    tags = ClipTags.from_names(meta["tags"], vocabulary)
    return VideoClip(meta["clip_id"], frames, meta["frame_fps"], audio, tags, rate), vocabulary


def read_annotations(directory):
    path = Path(directory) / "annotations.json"
    return load_annotations(path) if path.exists() else None


def with_seed(spec, seed):
    return replace(spec, seed=seed)
