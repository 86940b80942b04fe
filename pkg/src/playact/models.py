"""Fully-convolutional networks for the three streams.

``SoundNet`` runs 1-D convolutions over three log-mel scales (each scale has
its own two early convs, outputs concatenated on the channel axis) and ends
in a per-frame sigmoid layer; the clip score is its temporal mean.

``VisualNet`` is shared by the object stream (3-channel RGB input, clip
score = spatial max) and the action stream (10-channel flow input, no
global pooling).
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .datamodel import ANCHOR_FPS, DEFAULT_INSTRUMENTS, ActivationMap, SoundActivation
from .exceptions import ChannelMismatch, ShapeMismatch, WeightShapeMismatch
from .storage import load_state_dict, save_state_dict


@dataclass(frozen=True)
class ConvSpec:
    filters: int
    rf: int
    pad: int = 0
    stride: int = 1
    pool: int = 1
    lrn: bool = False
    dropout: float = 0.0


@dataclass(frozen=True)
class SoundNetConfig:
    n_classes: int = len(DEFAULT_INSTRUMENTS)
    n_scales: int = 3
    n_mels: int = 128
    early: tuple = (ConvSpec(256, 5, 2, 1, pool=4), ConvSpec(256, 5, 2, 1, pool=4))
    late: tuple = (ConvSpec(512, 1, dropout=0.5), ConvSpec(512, 1, dropout=0.5))

    @property
    def total_stride(self):
        return int(np.prod([c.stride * c.pool for c in self.early + self.late]))

    @classmethod
    def miniature(cls, n_classes=2, n_mels=128, width=16):
        return cls(n_classes, 3, n_mels,
                   (ConvSpec(width, 5, 2, 1, pool=4), ConvSpec(width, 5, 2, 1, pool=4)),
                   (ConvSpec(2 * width, 1, dropout=0.5), ConvSpec(2 * width, 1, dropout=0.5)))


LRN = dict(size=5, alpha=1e-4, beta=0.75, k=2.0)

VISUAL_EARLY = (
    ConvSpec(96, 7, 3, 2, pool=2, lrn=True),
    ConvSpec(256, 5, 2, 2, pool=2),
    ConvSpec(512, 3, 1, 1),
    ConvSpec(512, 3, 1, 1),
    ConvSpec(512, 3, 1, 1, pool=2),
)
# Conv6 padded by 1 so the map keeps a total stride of exactly 32
VISUAL_LATE = (ConvSpec(2048, 3, 1, 1, dropout=0.5), ConvSpec(1024, 1, dropout=0.5))


@dataclass(frozen=True)
class VisualNetConfig:
    in_channels: int = 10
    n_classes: int = len(DEFAULT_INSTRUMENTS)
    early: tuple = VISUAL_EARLY
    late: tuple = VISUAL_LATE
    use_lrn: bool = True
    batch_norm: bool = False

    @property
    def modality(self):
        return "object" if self.in_channels == 3 else "action"

    @property
    def total_stride(self):
        return int(np.prod([c.stride * c.pool for c in self.early + self.late]))

    def output_size(self, height, width):
        """Map size for an input of ``height`` x ``width`` (floor pooling)."""
        dims = [height, width]
        for c in self.early + self.late:
            dims = [(d + 2 * c.pad - c.rf) // c.stride + 1 for d in dims]
            dims = [d // c.pool for d in dims]
        return tuple(dims)

    @classmethod
    def object(cls, n_classes=len(DEFAULT_INSTRUMENTS)):
        return cls(3, n_classes)

    @classmethod
    def action(cls, n_classes=len(DEFAULT_INSTRUMENTS)):
        return cls(10, n_classes)

    @classmethod
    def miniature(cls, in_channels, n_classes=2, width=16):
        """Total stride 8: 64x64 inputs give 8x8 maps.

        Small receptive field (22 px) so a cell only sees its neighbourhood.
        No batch norm: a minibatch holds frames of very few clips, and batch
        statistics would leak clip-level presence into every cell.
        """
        early = (
            ConvSpec(width, 3, 1, 1, pool=2, lrn=True),
            ConvSpec(2 * width, 3, 1, 1, pool=2),
            ConvSpec(2 * width, 3, 1, 1, pool=2),
        )
        late = (ConvSpec(4 * width, 1, dropout=0.5), ConvSpec(2 * width, 1, dropout=0.5))
        return cls(in_channels, n_classes, early, late, True, False)


def config_to_dict(config):
    kind = "sound" if isinstance(config, SoundNetConfig) else "visual"
    return {"type": kind, **asdict(config)}


def config_from_dict(doc):
    doc = dict(doc)
    cls = SoundNetConfig if doc.pop("type") == "sound" else VisualNetConfig
    for key in ("early", "late"):
        doc[key] = tuple(ConvSpec(**c) for c in doc[key])
    return cls(**doc)


def config_hash(config):
    blob = json.dumps({"type": type(config).__name__, **asdict(config)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _conv_block(conv_cls, bn_cls, pool_cls, in_ch, spec, batch_norm, lrn):
    layers = [conv_cls(in_ch, spec.filters, spec.rf, spec.stride, spec.pad)]
    if batch_norm:
        layers.append(bn_cls(spec.filters))
    layers.append(nn.ReLU())
    if lrn:
        layers.append(nn.LocalResponseNorm(**LRN))
    if spec.pool > 1:
        layers.append(pool_cls(spec.pool))
    if spec.dropout:
        layers.append(nn.Dropout(spec.dropout))
    return nn.Sequential(*layers)


class SoundNet(nn.Module):
    def __init__(self, config=SoundNetConfig()):
        super().__init__()
        self.config = config
        self.branches = nn.ModuleList()
        for _ in range(config.n_scales):
            blocks, ch = [], config.n_mels
            for spec in config.early:
                blocks.append(_conv_block(nn.Conv1d, nn.BatchNorm1d, nn.MaxPool1d, ch, spec, True, False))
                ch = spec.filters
            self.branches.append(nn.Sequential(*blocks))
        late, ch = [], config.n_scales * config.early[-1].filters
        for spec in config.late:
            late.append(_conv_block(nn.Conv1d, nn.BatchNorm1d, nn.MaxPool1d, ch, spec, True, False))
            ch = spec.filters
        self.late = nn.Sequential(*late)
        self.out = nn.Conv1d(ch, config.n_classes, 1)

    def early_parameters(self):
        return list(self.branches.parameters())

    def forward(self, x):
        """[B, scales, mels, T] -> frame probabilities [B, G, T // 16]."""
        h = torch.cat([branch(x[:, s]) for s, branch in enumerate(self.branches)], dim=1)
        return torch.sigmoid(self.out(self.late(h)))

    @staticmethod
    def clip_scores(frames):
        return frames.mean(dim=-1)


class VisualNet(nn.Module):
    def __init__(self, config=VisualNetConfig()):
        super().__init__()
        self.config = config
        blocks, ch = [], config.in_channels
        for spec in config.early:
            blocks.append(_conv_block(nn.Conv2d, nn.BatchNorm2d, nn.MaxPool2d, ch, spec,
                                      config.batch_norm, spec.lrn and config.use_lrn))
            ch = spec.filters
        self.early = nn.Sequential(*blocks)
        late = []
        for spec in config.late:
            late.append(_conv_block(nn.Conv2d, nn.BatchNorm2d, nn.MaxPool2d, ch, spec,
                                    config.batch_norm, False))
            ch = spec.filters
        self.late = nn.Sequential(*late)
        self.out = nn.Conv2d(ch, config.n_classes, 1)

    def early_parameters(self):
        return list(self.early.parameters())

    def conv1(self):
        return self.early[0][0]

    def forward(self, x):
        """[B, C, H, W] -> maps [B, G, I, J] in (0, 1)."""
        return torch.sigmoid(self.out(self.late(self.early(x))))

    @staticmethod
    def clip_scores(maps):
        return maps.amax(dim=(-2, -1))


def init_params(config, seed=0, pretrained_early=None):
    """Build a network with fan-in scaled uniform weights and zero biases.

    ``pretrained_early`` optionally maps early-layer parameter names (as in
    ``model.early.state_dict()``) to arrays; those layers are overwritten
    and every other layer keeps its random initialization.
    """
    model = SoundNet(config) if isinstance(config, SoundNetConfig) else VisualNet(config)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Conv1d, nn.Conv2d)):
                fan_in = module.weight[0].numel()
                bound = float(np.sqrt(6.0 / fan_in))
                module.weight.uniform_(-bound, bound, generator=gen)
                module.bias.zero_()
    if pretrained_early is not None:
        load_early_weights(model, pretrained_early)
    return model


def load_early_weights(model, weights):
    if isinstance(weights, (str, Path)):
        weights, _ = load_state_dict(weights)
    target = model.early.state_dict() if isinstance(model, VisualNet) else model.branches.state_dict()
    for name, value in weights.items():
        if name not in target:
            raise WeightShapeMismatch(f"external weight {name!r} has no matching early layer")
        if tuple(np.shape(value)) != tuple(target[name].shape):
            raise WeightShapeMismatch(
                f"{name}: external shape {tuple(np.shape(value))} != expected {tuple(target[name].shape)}")
        target[name] = torch.as_tensor(np.asarray(value), dtype=target[name].dtype)
    if isinstance(model, VisualNet):
        model.early.load_state_dict(target)
    else:
        model.branches.load_state_dict(target)
    return model


# -------------------------------------------------------------------- forward

def payload(x):
    """Array inside a FlowStack/MelStack, or ``x`` itself for plain arrays."""
    if isinstance(x, (np.ndarray, torch.Tensor)):
        return x
    return getattr(x, "data", x)


def _as_tensor(x):
    dtype = torch.float32
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def sound_forward(mel, model):
    """Frame-level sound activation and clip scores for one MelStack.

    The model is run in evaluation mode (running batch-norm statistics, no
    dropout).
    """
    data = np.asarray(payload(mel))
    cfg = model.config
    if data.ndim != 3 or data.shape[0] != cfg.n_scales or data.shape[1] != cfg.n_mels:
        raise ShapeMismatch(f"expected [{cfg.n_scales}, {cfg.n_mels}, T] mel input, got {data.shape}")
    if data.shape[2] < cfg.total_stride:
        raise ShapeMismatch(f"need at least {cfg.total_stride} mel frames, got {data.shape[2]}")
    was_training = model.training
    model.eval()
    with torch.no_grad():
        frames = model(_as_tensor(data)[None])[0]
    model.train(was_training)
    fps = getattr(mel, "fps", 31.25) / cfg.total_stride
    return SoundActivation(frames.numpy(), fps), SoundNet.clip_scores(frames).numpy()


def rgb_input(frame):
    """HxWx3 uint8 -> [3, H, W] float in [-0.5, 0.5]."""
    frame = np.asarray(frame, dtype=np.float32)
    return np.transpose(frame, (2, 0, 1)) / 255.0 - 0.5


def visual_forward(x, model, mode):
    """One frame through the visual net.

    Returns the [G, I, J] map and, for ``mode="object"``, the per-class
    spatial max; action mode returns ``None`` for the scores.
    """
    data = np.asarray(payload(x))
    expected = {"object": 3, "action": 10}.get(mode)
    if expected is None:
        raise ValueError(f"mode must be 'object' or 'action', got {mode!r}")
    if data.ndim != 3:
        raise ShapeMismatch(f"expected [C, H, W] input, got {data.shape}")
    if data.shape[0] != expected or model.config.in_channels != expected:
        raise ChannelMismatch(
            f"{mode} mode needs {expected} channels; input has {data.shape[0]}, "
            f"model takes {model.config.in_channels}")
    maps = predict_maps(model, data[None])[:, 0]
    scores = maps.max(axis=(1, 2)) if mode == "object" else None
    return maps, scores


def predict_maps(model, inputs, batch_size=32):
    """Batched eval-mode forward: [N, C, H, W] -> [G, N, I, J] numpy."""
    was_training = model.training
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(inputs), batch_size):
            out.append(model(_as_tensor(inputs[start:start + batch_size])).numpy())
    model.train(was_training)
    return np.transpose(np.concatenate(out), (1, 0, 2, 3))


def predict_activation(model, inputs, fps=ANCHOR_FPS):
    cfg = model.config
    return ActivationMap(predict_maps(model, inputs), fps, cfg.total_stride, cfg.modality)


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    epoch: int
    val_auc: float
    train_loss: float
    config_hash: str
    state: dict | None = None
    optimizer_state: dict | None = None
    path: str | None = None
    extra: dict = field(default_factory=dict)

    def restore(self, model):
        state = self.state
        if state is None and self.path is not None:
            state = load_checkpoint(self.path).state
        if state is None:
            raise ValueError(f"checkpoint for epoch {self.epoch} holds no parameters")
        model.load_state_dict({k: torch.as_tensor(np.asarray(v)) for k, v in state.items()})
        return model


def snapshot(model):
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def _flatten_optimizer(opt_state):
    flat, meta = {}, {}
    for pid, entry in opt_state.get("state", {}).items():
        for key, value in entry.items():
            name = f"state.{pid}.{key}"
            if torch.is_tensor(value):
                flat[name] = value.detach().cpu().numpy().copy()
            else:
                meta[name] = value
    return flat, meta


def save_checkpoint(ckpt, directory):
    directory = Path(directory)
    manifest = {"epoch": ckpt.epoch, "val_auc": ckpt.val_auc, "train_loss": ckpt.train_loss,
                "config_hash": ckpt.config_hash, "extra": ckpt.extra}
    save_state_dict(ckpt.state, directory / "params", manifest)
    if ckpt.optimizer_state is not None:
        flat, meta = _flatten_optimizer(ckpt.optimizer_state)
        param_groups = copy.deepcopy(ckpt.optimizer_state.get("param_groups", []))
        save_state_dict(flat, directory / "optimizer", {"scalars": meta, "param_groups": param_groups})
    ckpt.path = str(directory)
    return directory


def load_checkpoint(directory):
    directory = Path(directory)
    state, manifest = load_state_dict(directory / "params")
    return Checkpoint(manifest["epoch"], manifest["val_auc"], manifest["train_loss"],
                      manifest["config_hash"], state=state, path=str(directory),
                      extra=manifest.get("extra", {}))
