"""Desk-scale VT vs SOT comparison on the synthetic benchmark.

Teachers and students are miniature nets on 64 px frames. Teachers are
trained without a validation split, so the last epoch is kept.
"""
import numpy as np
import torch

from playact import pipeline as P
from playact.estimators import ActionModel, ObjectModel, SoundModel
from playact.evaluation import evaluate
from playact.models import SoundNetConfig, VisualNetConfig
from playact.synthbench import make_corpus

FLOW_FPS = 7.8
MAP_SIZE = (8, 8)
STRIDE = 8


def build_data(seed=0, n_train=60, n_test=20, train_seconds=60.0, test_seconds=40.0):
    train = make_corpus(n_train, seed, train_seconds, prefix="tr")
    test = make_corpus(n_test, seed + 2000, test_seconds, prefix="te")
    test_anchors = range(test[0].spec.n_anchors)
    return dict(
        vocabulary=train[0].vocabulary,
        y=np.array([s.tags.v for s in train]),
        mel=[P.mel_inputs(s.clip) for s in train],
        rgb=[P.rgb_inputs(s.clip, training=True) for s in train],
        flow=[P.flow_inputs(s.clip, FLOW_FPS, training=True) for s in train],
        test_flow=[P.flow_inputs(s.clip, FLOW_FPS, anchors=test_anchors) for s in test],
        test_ann={s.clip.clip_id: s.annotations for s in test},
        test_sound=[s.sound for s in test],
        test_masks=[s.masks for s in test],
    )


def run_seed(data, seed, modes=("VT", "SOT")):
    """Train teachers and one action model per mode; returns {mode: (report, maps)}."""
    torch.set_num_threads(1)
    n = P.TRAIN_ANCHORS
    snd = SoundModel(SoundNetConfig.miniature(2), epochs=15, seed=seed).fit(data["mel"], data["y"])
    sound = [P.sound_teacher(snd.model_, m, n) for m in data["mel"]]
    obj = ObjectModel(VisualNetConfig.miniature(3, 2), epochs=8, freeze_epochs=0, lr=0.01,
                      seed=seed).fit(data["rgb"], data["y"])
    objects = obj.predict_maps(data["rgb"])
    out = {}
    for mode in modes:
        act = ActionModel(VisualNetConfig.miniature(10, 2), target=mode, epochs=15,
                          finetune_epochs=0, lr=0.01, seed=seed)
        act.fit(data["flow"], data["y"], sound=sound, objects=objects)
        maps = dict(zip(data["test_ann"], act.predict_maps(data["test_flow"])))
        report = evaluate(maps, data["test_ann"], data["vocabulary"], input_dims=(64, 64), name=mode)
        out[mode] = (report, maps)
    return out
