import csv
import math

import numpy as np
import pytest
import torch
from sklearn.base import clone

from playact.datamodel import ActivationMap, ClipTags, SoundActivation
from playact.estimators import ActionModel, ObjectModel, SoundModel
from playact.exceptions import DivergenceDetected, NoCheckpoints, SpecError
from playact.models import (Checkpoint, SoundNetConfig, VisualNetConfig, init_params,
                            load_checkpoint)
from playact.supervision import TargetSpec
from playact.training import (TrainingClip, TrainSchedule, select_best_epoch, train_model,
                              with_epochs)


# ---------------------------------------------------------------- schedules

def test_object_schedule():
    s = TrainSchedule.object()
    assert (s.freeze_early_epochs, s.epochs - s.freeze_early_epochs) == (20, 30)
    assert (s.optimizer, s.lr, s.momentum) == ("sgd", 0.001, 0.9)


def test_sound_schedule():
    s = TrainSchedule.sound()
    assert (s.optimizer, s.lr, s.epochs) == ("adagrad", 0.01, 100)
    assert isinstance(s.make_optimizer([torch.nn.Parameter(torch.zeros(1))]), torch.optim.Adagrad)


def test_action_schedule():
    s = TrainSchedule.action()
    assert (s.optimizer, s.lr, s.momentum, s.epochs, s.finetune_epochs) == ("sgd", 0.001, 0.9, 100, 30)
    opt = s.make_optimizer([torch.nn.Parameter(torch.zeros(1))])
    assert opt.defaults["lr"] == 0.001 and opt.defaults["momentum"] == 0.9


@pytest.mark.parametrize("kw", [dict(lr=0), dict(epochs=0), dict(optimizer="adam"),
                                dict(freeze_early_epochs=-1)])
def test_schedule_validation(kw):
    with pytest.raises(SpecError):
        TrainSchedule(**kw)


def test_with_epochs():
    s = with_epochs(TrainSchedule.object(), 4, freeze=1)
    assert (s.epochs, s.freeze_early_epochs, s.lr) == (4, 1, 0.001)


# --------------------------------------------------------------- best epoch

def _ck(epoch, auc):
    return Checkpoint(epoch, auc, 0.0, "h")


@pytest.mark.parametrize("aucs, best", [([0.6, 0.8, 0.7], 2), ([0.8, 0.8], 1), ([0.5], 1),
                                        ([math.nan, 0.4, 0.3], 2)])
def test_select_best_epoch(aucs, best):
    assert select_best_epoch([_ck(i + 1, a) for i, a in enumerate(aucs)]).epoch == best


def test_select_best_epoch_empty():
    with pytest.raises(NoCheckpoints):
        select_best_epoch([])
    with pytest.raises(NoCheckpoints):
        select_best_epoch([_ck(1, math.nan)])


# ------------------------------------------------------------------ training

def _action_clips(rng, n_clips=3, n=20, size=16, g=2):
    clips = []
    for k in range(n_clips):
        tags = ClipTags((1, 0) if k % 2 == 0 else (0, 1))
        x = rng.uniform(-1, 1, (n, 10, size, size)).astype(np.float32)
        snd = SoundActivation(rng.random((g, n)))
        obj = ActivationMap(rng.random((g, n, size // 8, size // 8)), modality="object")
        clips.append(TrainingClip(f"c{k}", x, tags, snd, obj))
    return clips


def _run(clips, seed=0, epochs=2, **kw):
    cfg = VisualNetConfig.miniature(10, 2, width=4)
    return train_model("action", with_epochs(TrainSchedule.action(), epochs, finetune=0), clips,
                       TargetSpec("SOT", 0.5, 0.3), config=cfg, seed=seed, keep_states="all", **kw)


def test_training_is_reproducible(rng):
    clips = _action_clips(rng)
    a, b, c = _run(clips, 1), _run(clips, 1), _run(clips, 2)
    for ka, kb in zip(a.checkpoints, b.checkpoints):
        assert ka.train_loss == kb.train_loss
        assert all(np.array_equal(ka.state[k], kb.state[k]) for k in ka.state)
    assert a.checkpoints[-1].train_loss != c.checkpoints[-1].train_loss


def test_training_writes_metrics_and_checkpoints(rng, tmp_path):
    clips = _action_clips(rng)
    run = _run(clips, val=clips, checkpoint_dir=tmp_path / "ck", metrics_csv=tmp_path / "m.csv")
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == ["epoch", "train_loss", "val_clip_auc"]
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    assert all(0 <= float(r[2]) <= 1 for r in rows[1:])
    back = load_checkpoint(tmp_path / "ck" / "epoch0002")
    assert back.epoch == 2 and back.val_auc == pytest.approx(run.checkpoints[1].val_auc)
    assert run.best.epoch in (1, 2)


def test_divergence_is_detected(rng):
    clips = _action_clips(rng)
    bad = TrainingClip("bad", np.full_like(clips[0].inputs, np.nan), clips[0].tags,
                       clips[0].sound, clips[0].objects)
    with pytest.raises(DivergenceDetected):
        _run([bad])


def test_action_needs_spec(rng):
    with pytest.raises(SpecError):
        train_model("action", TrainSchedule.action(), _action_clips(rng, 1))
    with pytest.raises(SpecError):
        train_model("video", TrainSchedule.action(), _action_clips(rng, 1))


def test_freeze_keeps_early_weights(rng):
    clips = [TrainingClip(c.clip_id, c.inputs[:, :3], c.tags) for c in _action_clips(rng)]
    model = init_params(VisualNetConfig.miniature(3, 2, width=4), seed=0)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    train_model("object", TrainSchedule("sgd", 0.1, 0.9, 1, freeze_early_epochs=1), clips,
                model=model)
    after = model.state_dict()
    early = [k for k in after if k.startswith("early.")]
    late = [k for k in after if k.endswith("weight") and not k.startswith("early.")]
    assert early and late
    assert all(torch.equal(before[k], after[k]) for k in early)
    assert any(not torch.equal(before[k], after[k]) for k in late)


def test_finetune_restarts_from_best(rng):
    clips = _action_clips(rng)
    cfg = VisualNetConfig.miniature(10, 2, width=4)
    run = train_model("action", with_epochs(TrainSchedule.action(), 2, finetune=1), clips,
                      TargetSpec("VT"), val=clips, config=cfg, keep_states="all")
    assert [c.epoch for c in run.checkpoints] == [1, 2, 3]


# ---------------------------------------------------------------- estimators

def test_estimators_clone():
    for est in (SoundModel(epochs=3), ObjectModel(freeze_epochs=2),
                ActionModel(target="OT", object_threshold=0.4)):
        assert clone(est).get_params() == est.get_params()
    assert ActionModel().target_spec.name == "SOT0503"
    assert ActionModel(target="VT").target_spec.name == "VT"


def test_sound_model_fit_predict(rng):
    mels = [rng.normal(size=(3, 32, 64)).astype(np.float32) for _ in range(4)]
    tags = [[1, 0], [0, 1], [1, 0], [0, 1]]
    est = SoundModel(config=SoundNetConfig.miniature(2, n_mels=32, width=4), epochs=2).fit(mels, tags)
    proba = est.predict_proba(mels)
    assert proba.shape == (4, 2) and np.all((proba > 0) & (proba < 1))
    act = est.predict_frames(mels[:1])[0]
    assert act.data.shape == (2, 4) and act.fps == 1.953125


def test_action_model_fit_predict(rng):
    clips = _action_clips(rng)
    est = ActionModel(config=VisualNetConfig.miniature(10, 2, width=4), epochs=1, finetune_epochs=0)
    est.fit([c.inputs for c in clips], [c.tags.v for c in clips],
            sound=[c.sound for c in clips], objects=[c.objects for c in clips])
    maps = est.predict_maps([clips[0].inputs])[0]
    assert maps.data.shape == (2, 20, 2, 2) and maps.modality == "action"
