"""Training loops for the sound, object and action streams.

Visual streams train on mini-batches of one sub-clip (10 anchor frames)
from a video drawn without replacement; the sound stream trains on whole
clips against clip tags through temporal average pooling.
"""
from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .datamodel import FRAMES_PER_SUBCLIP, ClipTags, CorpusSampler, SoundActivation, ActivationMap
from .evaluation import mann_whitney_auc
from .exceptions import DivergenceDetected, NoCheckpoints, ShapeMismatch, SpecError
from .models import (Checkpoint, SoundNet, SoundNetConfig, VisualNet, VisualNetConfig,
                     config_hash, init_params, save_checkpoint, snapshot)
from .pipeline import fit_length
from .supervision import SPATIAL_MAX, action_loss, bce_loss, build_target, spatial_max

log = logging.getLogger(__name__)

KINDS = ("sound", "object", "action")


@dataclass(frozen=True)
class TrainSchedule:
    optimizer: str = "sgd"
    lr: float = 0.001
    momentum: float = 0.9
    epochs: int = 100
    freeze_early_epochs: int = 0
    finetune_epochs: int = 0
    batch_size: int = 8  # clips per step, sound stream only

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adagrad"):
            raise SpecError(f"optimizer must be 'sgd' or 'adagrad', got {self.optimizer!r}")
        if self.lr <= 0 or self.epochs <= 0:
            raise SpecError("lr and epochs must be positive")
        if self.freeze_early_epochs < 0 or self.finetune_epochs < 0:
            raise SpecError("epoch counts must be non-negative")

    @classmethod
    def sound(cls):
        return cls("adagrad", 0.01, 0.0, 100)

    @classmethod
    def object(cls):
        # 20 epochs with the early convs frozen, then 30 with everything free
        return cls("sgd", 0.001, 0.9, 50, freeze_early_epochs=20)

    @classmethod
    def action(cls):
        return cls("sgd", 0.001, 0.9, 100, finetune_epochs=30)

    @classmethod
    def for_kind(cls, kind):
        return {"sound": cls.sound, "object": cls.object, "action": cls.action}[kind]()

    def make_optimizer(self, params):
        if self.optimizer == "adagrad":
            return torch.optim.Adagrad(params, lr=self.lr)
        return torch.optim.SGD(params, lr=self.lr, momentum=self.momentum)


@dataclass
class TrainingClip:
    """One clip's model inputs plus whatever supervision it carries.

    ``inputs`` is [3, mels, T] for the sound stream and [N, C, H, W] per
    anchor for the visual streams. ``sound`` and ``objects`` are teacher
    outputs on the same anchor grid, used to build action targets.
    """

    clip_id: str
    inputs: object
    tags: ClipTags
    sound: SoundActivation | None = None
    objects: ActivationMap | None = None


@dataclass
class TrainingRun:
    model: torch.nn.Module
    checkpoints: list = field(default_factory=list)
    name: str = ""

    @property
    def best(self):
        return select_best_epoch(self.checkpoints)

    def best_model(self):
        return self.best.restore(self.model)


def select_best_epoch(checkpoints):
    """Checkpoint with the highest validation clip AUC; ties go to the earliest."""
    best = None
    for ckpt in checkpoints:
        auc = ckpt.val_auc
        if auc is None or math.isnan(auc):
            continue
        if best is None or auc > best.val_auc:
            best = ckpt
    if best is None:
        raise NoCheckpoints("no checkpoint has a recorded validation AUC")
    return best


# ---------------------------------------------------------------- validation

def clip_scores(kind, model, clip, batch_size=32):
    """Per-class clip score.

    Sound: temporal mean of the frame output. Visual: spatial max per
    frame, then max over the clip's frames.
    """
    model.eval()
    with torch.no_grad():
        if kind == "sound":
            frames = model(torch.as_tensor(np.asarray(clip.inputs), dtype=torch.float32)[None])
            return SoundNet.clip_scores(frames)[0].numpy()
        inputs = clip.inputs
        best = None
        for start in range(0, len(inputs), batch_size):
            x = torch.as_tensor(np.asarray(inputs[start:start + batch_size]), dtype=torch.float32)
            s = spatial_max(model(x)).amax(dim=0)
            best = s if best is None else torch.maximum(best, s)
        return best.numpy()


def clip_level_auc(kind, model, clips):
    """Mean over classes of the clip-level AUC; NaN when no class has both labels."""
    if not clips:
        return math.nan
    was_training = model.training
    scores = np.stack([clip_scores(kind, model, c) for c in clips])
    labels = np.stack([np.asarray(c.tags.v) for c in clips]).astype(bool)
    model.train(was_training)
    aucs = [mann_whitney_auc(scores[:, g], labels[:, g]) for g in range(labels.shape[1])]
    aucs = [a for a in aucs if a is not None]
    return float(np.mean(aucs)) if aucs else math.nan


# ------------------------------------------------------------------ targets

def action_targets(spec, clip, map_shape):
    """Target for every anchor of a clip: [N, G] or [N, G, I, J]."""
    n = len(clip.inputs)
    g, _, i, j = map_shape
    snd = obj = None
    if clip.sound is not None:
        snd = SoundActivation(fit_length(clip.sound.data, n), clip.sound.fps)
    if clip.objects is not None:
        obj = ActivationMap(fit_length(clip.objects.data, n), clip.objects.fps,
                            clip.objects.stride, clip.objects.modality)
    target, mode = build_target(spec, clip.tags, obj, snd, map_shape=(g, n, i, j), n_frames=n)
    return np.moveaxis(target, 1, 0), mode


# ------------------------------------------------------------------ training

def _visual_batches(sampler):
    for video, sub in sampler:
        lo = sub * FRAMES_PER_SUBCLIP
        yield video, slice(lo, lo + FRAMES_PER_SUBCLIP)


def train_model(kind, schedule, data, spec=None, val=None, model=None, config=None, seed=0,
                checkpoint_dir=None, metrics_csv=None, keep_states="best", name=None):
    """Train one stream and return the per-epoch checkpoint series.

    ``data`` and ``val`` are lists of TrainingClip. Action training needs a
    TargetSpec; its teacher outputs must already be attached to the clips.
    With ``keep_states="best"`` only the best-so-far and the latest
    checkpoints hold parameters in memory (all are written to
    ``checkpoint_dir`` when given).
    """
    if kind not in KINDS:
        raise SpecError(f"kind must be one of {KINDS}, got {kind!r}")
    if kind == "action" and spec is None:
        raise SpecError("action training needs a TargetSpec")
    if not data:
        raise SpecError("no training clips")
    if model is None:
        if config is None:
            n_classes = len(data[0].tags)
            config = (SoundNetConfig(n_classes=n_classes) if kind == "sound" else
                      VisualNetConfig(3 if kind == "object" else 10, n_classes))
        model = init_params(config, seed)
    expected = SoundNet if kind == "sound" else VisualNet
    if not isinstance(model, expected):
        raise SpecError(f"{kind} training needs a {expected.__name__}")
    name = name or (spec.name if spec is not None else kind)
    run = TrainingRun(model, [], name)
    chash = config_hash(model.config)

    targets = None
    if kind == "action":
        with torch.no_grad():
            model.eval()
            probe = model(torch.as_tensor(np.asarray(data[0].inputs[:1]), dtype=torch.float32))
        map_shape = (probe.shape[1], 0, probe.shape[2], probe.shape[3])
        targets = [action_targets(spec, c, map_shape) for c in data]

    writer = None
    if metrics_csv is not None:
        fh = open(metrics_csv, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_clip_auc"])

    with torch.random.fork_rng():
        torch.manual_seed(seed)
        sampler = None
        if kind != "sound":
            n_sub = [max(1, len(c.inputs) // FRAMES_PER_SUBCLIP) for c in data]
            sampler = CorpusSampler(len(data), n_sub, seed)
        rng = np.random.default_rng(seed)
        phases = [(schedule.epochs, False)]
        if schedule.finetune_epochs:
            phases.append((schedule.finetune_epochs, True))
        epoch = 0
        best_auc, best_ckpt = -math.inf, None
        try:
            for n_epochs, from_best in phases:
                if from_best and best_ckpt is not None:
                    best_ckpt.restore(model)
                optimizer = schedule.make_optimizer(model.parameters())
                for _ in range(n_epochs):
                    epoch += 1
                    frozen = not from_best and epoch <= schedule.freeze_early_epochs
                    for p in model.early_parameters():
                        p.requires_grad_(not frozen)
                    model.train()
                    if kind == "sound":
                        loss = _sound_epoch(model, optimizer, data, schedule.batch_size, rng)
                    else:
                        sampler.start_epoch()
                        loss = _visual_epoch(kind, model, optimizer, sampler, data, targets)
                    if not math.isfinite(loss):
                        last = run.checkpoints[-1] if run.checkpoints else None
                        raise DivergenceDetected(f"{name}: non-finite loss at epoch {epoch}", last)
                    auc = clip_level_auc(kind, model, val) if val else math.nan
                    ckpt = Checkpoint(epoch, auc, loss, chash, state=snapshot(model),
                                      optimizer_state=copy.deepcopy(optimizer.state_dict()),
                                      extra={"name": name, "kind": kind})
                    if checkpoint_dir is not None:
                        save_checkpoint(ckpt, Path(checkpoint_dir) / f"epoch{epoch:04d}")
                    if not math.isnan(auc) and auc > best_auc:
                        best_auc, best_ckpt = auc, ckpt
                    if keep_states != "all":
                        for c in run.checkpoints:
                            if c is not best_ckpt:
                                c.state = c.optimizer_state = None
                    run.checkpoints.append(ckpt)
                    if writer is not None:
                        writer.writerow([epoch, f"{loss:.6f}", f"{auc:.6f}"])
                        fh.flush()
                    log.info("%s epoch %d loss %.5f val_auc %.4f", name, epoch, loss, auc)
        finally:
            for p in model.parameters():
                p.requires_grad_(True)
            if writer is not None:
                fh.close()
    return run


def _sound_epoch(model, optimizer, clips, batch_size, rng):
    order = rng.permutation(len(clips))
    total, steps = 0.0, 0
    for start in range(0, len(order), batch_size):
        chunk = [clips[i] for i in order[start:start + batch_size]]
        t = min(np.shape(c.inputs)[-1] for c in chunk)
        x = torch.as_tensor(np.stack([np.asarray(c.inputs)[..., :t] for c in chunk]), dtype=torch.float32)
        y = torch.as_tensor(np.stack([c.tags.array for c in chunk]))
        optimizer.zero_grad()
        loss = bce_loss(SoundNet.clip_scores(model(x)), y)
        loss.backward()
        optimizer.step()
        total += loss.item()
        steps += 1
    return total / max(steps, 1)


def _visual_epoch(kind, model, optimizer, sampler, clips, targets):
    total, steps = 0.0, 0
    for video, window in _visual_batches(sampler):
        clip = clips[video]
        x = torch.as_tensor(np.asarray(clip.inputs[window]), dtype=torch.float32)
        optimizer.zero_grad()
        maps = model(x)
        if kind == "object":
            y = np.repeat(clip.tags.array[None], len(x), axis=0)
            loss = bce_loss(spatial_max(maps), y)
        else:
            target, mode = targets[video]
            y = target[window]
            if mode != SPATIAL_MAX and y.shape[1:] != tuple(maps.shape[1:]):
                raise ShapeMismatch(f"target {y.shape[1:]} vs map {tuple(maps.shape[1:])}")
            loss = action_loss(maps, y, mode)
        loss.backward()
        optimizer.step()
        total += loss.item()
        steps += 1
    return total / max(steps, 1)


def with_epochs(schedule, epochs, freeze=None, finetune=None):
    """Shortened copy of a schedule for desk-scale runs."""
    return replace(schedule, epochs=epochs,
                   freeze_early_epochs=schedule.freeze_early_epochs if freeze is None else freeze,
                   finetune_epochs=schedule.finetune_epochs if finetune is None else finetune)
