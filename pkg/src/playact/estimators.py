"""scikit-learn style wrappers around the three streams.

Each estimator takes one entry of ``X`` per clip and a tag matrix ``y``
([n_clips, G], 0/1). Hyper-parameters live in ``__init__`` so
``get_params``/``set_params``/``clone`` work as usual; fitted state ends in
an underscore.

>>> snd = SoundModel(epochs=5).fit(mels, tags)            # doctest: +SKIP
>>> act = ActionModel(target="SOT", sound_threshold=0.5,  # doctest: +SKIP
...                   object_threshold=0.3).fit(flows, tags, sound=S, objects=O)
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .datamodel import ANCHOR_FPS
from .exceptions import NoCheckpoints
from .models import SoundNetConfig, VisualNetConfig, init_params, predict_activation, sound_forward
from .supervision import TargetSpec
from .training import TrainingClip, TrainSchedule, clip_scores, train_model
from .validation import check_frame_inputs, check_mel_inputs, check_same_length, check_tags


class _StreamModel(BaseEstimator):
    kind = None

    def _schedule(self):
        raise NotImplementedError

    def _default_config(self, n_classes):
        raise NotImplementedError

    def _clips(self, X, tags, **teachers):
        clips = []
        for i, (x, t) in enumerate(zip(X, tags)):
            extra = {k: v[i] for k, v in teachers.items() if v is not None}
            clips.append(TrainingClip(f"clip{i}", x, t, **extra))
        return clips

    def _fit(self, X, y, X_val=None, y_val=None, spec=None, **teachers):
        tags = check_tags(y, len(X))
        for name, values in teachers.items():
            check_same_length(name, values, len(X))
        config = self.config or self._default_config(len(tags[0]))
        model = init_params(config, self.seed, getattr(self, "pretrained_early", None))
        val = None
        if X_val is not None:
            val = self._clips(self._check_X(X_val), check_tags(y_val, len(X_val)))
        self.run_ = train_model(self.kind, self._schedule(), self._clips(X, tags, **teachers),
                                spec=spec, val=val, model=model, seed=self.seed,
                                checkpoint_dir=self.checkpoint_dir, metrics_csv=self.metrics_csv)
        try:
            self.best_checkpoint_ = self.run_.best
            self.model_ = self.run_.best_model()
        except NoCheckpoints:  # no validation data: keep the last epoch
            self.best_checkpoint_ = self.run_.checkpoints[-1]
            self.model_ = self.run_.model
        self.model_.eval()
        self.n_classes_ = len(tags[0])
        return self

    def predict_proba(self, X):
        """Clip-level class scores, [n_clips, G]."""
        check_is_fitted(self, "model_")
        X = self._check_X(X)
        return np.stack([clip_scores(self.kind, self.model_, TrainingClip("", x, None)) for x in X])


class SoundModel(_StreamModel):
    """Frame-level instrument sound detector on 3-scale log-mel input."""

    kind = "sound"

    def __init__(self, config=None, epochs=100, lr=0.01, batch_size=8, seed=0,
                 checkpoint_dir=None, metrics_csv=None):
        self.config = config
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.checkpoint_dir = checkpoint_dir
        self.metrics_csv = metrics_csv

    def _default_config(self, n_classes):
        return SoundNetConfig(n_classes=n_classes)

    def _schedule(self):
        return TrainSchedule("adagrad", self.lr, 0.0, self.epochs, batch_size=self.batch_size)

    def _check_X(self, X):
        return check_mel_inputs(X, n_mels=self.config.n_mels if self.config else None)

    def fit(self, X, y, X_val=None, y_val=None):
        return self._fit(self._check_X(X), y, X_val, y_val)

    def predict_frames(self, X):
        """SoundActivation per clip at 1.953125 frames per second."""
        check_is_fitted(self, "model_")
        return [sound_forward(x, self.model_)[0] for x in self._check_X(X)]


class _VisualModel(_StreamModel):
    channels = None

    def _default_config(self, n_classes):
        return VisualNetConfig(self.channels, n_classes)

    def _check_X(self, X):
        return check_frame_inputs(X, self.channels)

    def predict_maps(self, X):
        """ActivationMap [G, N, I, J] per clip."""
        check_is_fitted(self, "model_")
        return [predict_activation(self.model_, x, ANCHOR_FPS) for x in self._check_X(X)]


class ObjectModel(_VisualModel):
    """Instrument localizer on RGB frames, trained from clip tags via spatial max."""

    kind = "object"
    channels = 3

    def __init__(self, config=None, epochs=50, freeze_epochs=20, lr=0.001, momentum=0.9,
                 seed=0, pretrained_early=None, checkpoint_dir=None, metrics_csv=None):
        self.config = config
        self.epochs = epochs
        self.freeze_epochs = freeze_epochs
        self.lr = lr
        self.momentum = momentum
        self.seed = seed
        self.pretrained_early = pretrained_early
        self.checkpoint_dir = checkpoint_dir
        self.metrics_csv = metrics_csv

    def _schedule(self):
        return TrainSchedule("sgd", self.lr, self.momentum, self.epochs,
                             freeze_early_epochs=self.freeze_epochs)

    def fit(self, X, y, X_val=None, y_val=None):
        return self._fit(self._check_X(X), y, X_val, y_val)


class ActionModel(_VisualModel):
    """Playing-action detector on 10-channel flow stacks.

    ``target`` picks the supervision: VT (tags), ST (sound), OT (objects) or
    SOT (sound x objects). Teacher outputs are passed to ``fit`` per clip
    on the same anchor grid as the flow stacks.
    """

    kind = "action"
    channels = 10

    def __init__(self, config=None, target="SOT", sound_threshold=0.5, object_threshold=0.3,
                 epochs=100, finetune_epochs=30, lr=0.001, momentum=0.9, seed=0,
                 checkpoint_dir=None, metrics_csv=None):
        self.config = config
        self.target = target
        self.sound_threshold = sound_threshold
        self.object_threshold = object_threshold
        self.epochs = epochs
        self.finetune_epochs = finetune_epochs
        self.lr = lr
        self.momentum = momentum
        self.seed = seed
        self.checkpoint_dir = checkpoint_dir
        self.metrics_csv = metrics_csv

    @property
    def target_spec(self):
        v = self.sound_threshold if self.target in ("ST", "SOT") else None
        u = self.object_threshold if self.target in ("OT", "SOT") else None
        return TargetSpec(self.target, v, u)

    def _schedule(self):
        return TrainSchedule("sgd", self.lr, self.momentum, self.epochs,
                             finetune_epochs=self.finetune_epochs)

    def fit(self, X, y, X_val=None, y_val=None, sound=None, objects=None):
        spec = self.target_spec
        return self._fit(self._check_X(X), y, X_val, y_val, spec=spec, sound=sound, objects=objects)
