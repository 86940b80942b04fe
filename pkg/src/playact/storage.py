"""On-disk formats: the TNSR tensor container, annotation JSON, checkpoints.

Tensor container layout (little-endian)::

    b"TNSR" | u32 rank | rank x u32 dims | float32 payload, row-major
"""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .datamodel import ANCHOR_FPS, ActivationMap, KeyPointAnnotationSet, SoundActivation
from .exceptions import FormatError, SchemaError

MAGIC = b"TNSR"
MAX_RANK = 4
DEFAULT_BOUND = 256


def encode_tensor(tensor):
    arr = np.asarray(tensor)
    if arr.ndim > MAX_RANK:
        raise FormatError(f"rank {arr.ndim} exceeds the container limit of {MAX_RANK}")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return header + arr.tobytes(order="C")


def decode_tensor(buf):
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError("bad magic: not a TNSR container")
    (rank,) = struct.unpack_from("<I", buf, 4)
    if rank > MAX_RANK:
        raise FormatError(f"rank {rank} exceeds the container limit of {MAX_RANK}")
    offset = 8 + 4 * rank
    if len(buf) < offset:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    expected = 4 * math.prod(dims)
    payload = buf[offset:]
    if len(payload) != expected:
        raise FormatError(
            f"payload is {len(payload)} bytes, dims {tuple(dims)} need {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def persist_tensor(tensor, path):
    data = encode_tensor(tensor)
    Path(path).write_bytes(data)


def load_tensor(path):
    return decode_tensor(Path(path).read_bytes())


# ---------------------------------------------------------------- annotations

def annotations_to_dict(annotations):
    out = {"clip_id": annotations.clip_id, "fps": annotations.fps, "frames": {}}
    if annotations.frame_size is not None:
        out["frame_size"] = list(annotations.frame_size)
    for t in annotations.frame_indices:
        out["frames"][str(t)] = {
            name: [list(p) for p in sorted(points)]
            for name, points in sorted(annotations.frames[t].items())
        }
    return out


def annotations_from_dict(doc, vocabulary=None, frame_size=None, source="<dict>"):
    def fail(where, msg):
        raise SchemaError(f"{source}: {where}: {msg}")

    if not isinstance(doc, dict):
        fail("$", "top level must be an object")
    for key in ("clip_id", "fps", "frames"):
        if key not in doc:
            fail("$", f"missing required field {key!r}")
    unknown = set(doc) - {"clip_id", "fps", "frames", "frame_size"}
    if unknown:
        fail("$", f"unknown fields {sorted(unknown)}")
    if not isinstance(doc["clip_id"], str):
        fail("clip_id", "must be a string")
    fps = doc["fps"]
    if isinstance(fps, bool) or not isinstance(fps, (int, float)) or fps <= 0:
        fail("fps", "must be a positive number")
    size = doc.get("frame_size", frame_size)
    if size is not None:
        if (not isinstance(size, (list, tuple)) or len(size) != 2
                or not all(isinstance(s, int) and s > 0 for s in size)):
            fail("frame_size", "must be [width, height] positive integers")
        width, height = size
    else:
        width = height = DEFAULT_BOUND
    frames = doc["frames"]
    if not isinstance(frames, dict):
        fail("frames", "must be an object keyed by frame index")
    parsed = {}
    for key, per_inst in frames.items():
        where = f"frames[{key!r}]"
        try:
            t = int(key)
        except ValueError:
            fail(where, "frame key must be a non-negative integer string")
        if t < 0 or str(t) != key:
            fail(where, "frame key must be a non-negative integer string")
        if not isinstance(per_inst, dict):
            fail(where, "must map instrument names to point lists")
        parsed[t] = {}
        for name, points in per_inst.items():
            w = f"{where}[{name!r}]"
            if vocabulary is not None and name not in vocabulary.names:
                fail(w, "unknown instrument")
            if not isinstance(points, list):
                fail(w, "must be a list of [x, y] pairs")
            pts = []
            for i, p in enumerate(points):
                if (not isinstance(p, list) or len(p) != 2
                        or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in p)):
                    fail(f"{w}[{i}]", "point must be [x, y] numbers")
                x, y = p
                if not (0 <= x < width and 0 <= y < height):
                    fail(f"{w}[{i}]", f"point ({x}, {y}) outside {width}x{height} frame")
                pts.append((x, y))
            parsed[t][name] = pts
    return KeyPointAnnotationSet(doc["clip_id"], fps, parsed,
                                 tuple(size) if size is not None else None)


def save_annotations(annotations, path):
    Path(path).write_text(json.dumps(annotations_to_dict(annotations), indent=1))


def load_annotations(path, vocabulary=None, frame_size=None):
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return annotations_from_dict(doc, vocabulary, frame_size, source=str(path))


def empty_annotations(clip_id, anchors, frame_size=None):
    return KeyPointAnnotationSet(clip_id, ANCHOR_FPS, {t: {} for t in anchors}, frame_size)


# ---------------------------------------------------------------- checkpoints

def save_state_dict(state, directory, manifest):
    """Write a tensor dict as one TNSR file per entry plus ``manifest.json``.

    Integer tensors (e.g. batch-norm counters, optimizer steps) are stored as
    float32 and restored to their recorded dtype; only small counts are
    stored this way so the round-trip stays exact.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for i, (name, value) in enumerate(state.items()):
        arr = np.asarray(value)
        fname = f"{i:04d}.tnsr"
        persist_tensor(arr.reshape(-1) if arr.ndim > MAX_RANK else arr, directory / fname)
        entries[name] = {"file": fname, "dtype": str(arr.dtype), "shape": list(arr.shape)}
    manifest = dict(manifest, tensors=entries)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_state_dict(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    state = {}
    for name, entry in manifest["tensors"].items():
        arr = load_tensor(directory / entry["file"]).reshape(entry["shape"])
        state[name] = arr.astype(entry["dtype"])
    return state, manifest


# ---------------------------------------------------------------- activations

def save_activation(act, path):
    """Write an ActivationMap or SoundActivation as ``<path>.tnsr`` + ``<path>.json``."""
    path = Path(path)
    persist_tensor(act.data, path.with_suffix(".tnsr"))
    meta = {"fps": act.fps}
    if isinstance(act, ActivationMap):
        meta.update(kind="map", stride=act.stride, modality=act.modality)
    else:
        meta["kind"] = "sound"
    path.with_suffix(".json").write_text(json.dumps(meta))
    return path.with_suffix(".tnsr")


def load_activation(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    data = load_tensor(path.with_suffix(".tnsr"))
    if meta.get("kind") == "sound":
        return SoundActivation(data, meta["fps"])
    if meta.get("kind") == "map":
        return ActivationMap(data, meta["fps"], meta["stride"], meta["modality"])
    raise SchemaError(f"{path}: unknown activation kind {meta.get('kind')!r}")
