"""Acceptance criteria, each at its stated tolerance.

A PASS/FAIL line per criterion is printed in the terminal summary.
"""
import itertools
import math
import time

import numpy as np
import pytest
import torch

from playact.analysis import characterizing_filters, filter_trajectories
from playact.datamodel import ActivationMap, KeyPointAnnotationSet, SoundActivation
from playact.evaluation import (CELL_CENTER, UPSAMPLE, argmax_location, evaluate,
                                spatial_distance, temporal_auc)
from playact.fusion import fuse
from playact.models import (ConvSpec, SoundNetConfig, VisualNetConfig, init_params, sound_forward,
                            visual_forward)
from playact.pipeline import downsample_masks
from playact.storage import (annotations_from_dict, annotations_to_dict, decode_tensor,
                             encode_tensor)
from playact.supervision import TargetSpec, bce_loss, binarize, build_target, spatial_max


def pairwise_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    if not pos or not neg:
        return None
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


# ------------------------------------------------------------------------ 1

def test_criterion_1_metric_oracles(record_property):
    rng = np.random.default_rng(1)
    start = time.time()
    worst = 0.0
    done = 0
    while done < 200:
        clips = int(rng.integers(1, 4))
        anns, scores, expected = {}, {}, []
        for c in range(clips):
            n = int(rng.integers(2, 51))
            labels = rng.random(n) < rng.uniform(0.2, 0.8)
            # coarse scores so ties are common
            s = rng.integers(0, int(rng.integers(2, 20)), n) / 7.0
            anns[f"c{c}"] = KeyPointAnnotationSet(
                f"c{c}", frames={t: ({"Drum": [(1, 1)]} if labels[t] else {}) for t in range(n)})
            scores[f"c{c}"] = np.vstack([np.zeros(n), s])
            auc = pairwise_auc(s, labels)
            if auc is not None:
                expected.append(auc)
        if not expected:
            continue
        got, used, skipped = temporal_auc(scores, anns, "Drum", 1)
        assert (used, skipped) == (len(expected), clips - len(expected))
        worst = max(worst, abs(got - np.mean(expected)))
        done += 1
    assert worst < 1e-9

    for _ in range(200):
        i, j = rng.integers(1, 12, 2)
        m = rng.random((i, j))
        pts = rng.integers(0, 256, (int(rng.integers(1, 8)), 2))
        # independent argmax at the cell centre, then a brute-force scan
        a, b = divmod(int(np.argmax(m)), j)
        cx, cy = 16 * b + 8, 16 * a + 8
        brute = min(math.sqrt((x - cx) ** 2 + (y - cy) ** 2) for x, y in pts)
        assert spatial_distance(m, pts, (16 * i, 16 * j), CELL_CENTER, 16) == brute
        # upsampled argmax: the minimum over key points is still exact
        x0, y0 = argmax_location(m, (16 * i, 16 * j), UPSAMPLE)
        brute = min(math.sqrt((x - x0) ** 2 + (y - y0) ** 2) for x, y in pts)
        assert spatial_distance(m, pts, (16 * i, 16 * j)) == brute
    elapsed = time.time() - start
    record_property("detail", f"max AUC diff {worst:.1e}, {elapsed:.1f}s")
    assert elapsed < 60


# ------------------------------------------------------------------------ 2

def test_criterion_2_supervision_algebra(record_property):
    rng = np.random.default_rng(2)
    violations = 0
    for _ in range(1000):
        g, t, i, j = rng.integers(1, 5, 4)
        obj = ActivationMap(rng.random((g, t, i, j)), modality="object")
        snd = SoundActivation(rng.random((g, t)))
        u1, u2 = np.sort(rng.uniform(0.01, 0.99, 2))
        v = float(rng.uniform(0.01, 0.99))
        violations += int(np.any(binarize(obj, u2).data > binarize(obj, u1).data))
        violations += int(np.any(binarize(snd, u2).data > binarize(snd, u1).data))
        ot, _ = build_target(TargetSpec("OT", None, u1), None, obj)
        sot, _ = build_target(TargetSpec("SOT", v, u1), None, obj, snd)
        gate = binarize(snd, v).data.astype(bool)
        violations += int(np.any(sot > ot))
        violations += int(np.any(sot[~gate] != 0))
        violations += int(np.any(sot[gate] != ot[gate]))
    record_property("detail", f"{violations} violations")
    assert violations == 0


# ------------------------------------------------------------------------ 3

# layer arithmetic, written out independently: (rf, pad, stride, pool)
VISUAL_LAYERS = [(7, 3, 2, 2), (5, 2, 2, 2), (3, 1, 1, 1), (3, 1, 1, 1), (3, 1, 1, 2),
                 (3, 1, 1, 1), (1, 0, 1, 1)]


def _visual_size(d):
    for rf, pad, stride, pool in VISUAL_LAYERS:
        d = (d + 2 * pad - rf) // stride + 1
        d //= pool
    return d


def test_criterion_3_shape_contracts(record_property):
    sizes = [(256, 192), (192, 256), (256, 256), (64, 64), (96, 160), (100, 70), (255, 191),
             (320, 480), (33, 47), (128, 96)]
    obj = init_params(VisualNetConfig.object(), seed=0)
    act = init_params(VisualNetConfig.action(), seed=0)
    assert VisualNetConfig().total_stride == 32
    for k, (h, w) in enumerate(sizes):
        net, mode, c = (obj, "object", 3) if k % 2 == 0 else (act, "action", 10)
        x = np.zeros((c, h, w), np.float32)
        maps, _ = visual_forward(x, net, mode)
        assert maps.shape == (9, _visual_size(h), _visual_size(w)), (h, w)
    maps, _ = visual_forward(np.zeros((3, 256, 192), np.float32), obj, "object")
    assert maps.shape == (9, 8, 6)

    snd = init_params(SoundNetConfig(), seed=0)
    for t in (16, 17, 31, 32, 100, 160, 255, 312, 500, 1000):
        act_s, _ = sound_forward(np.zeros((3, 128, t), np.float32), snd)
        assert act_s.data.shape == (9, t // 16) and act_s.fps == 1.953125
    record_property("detail", "10 visual sizes, 10 sound lengths")


# ------------------------------------------------------------------------ 4

def _mini_net(seed):
    cfg = VisualNetConfig(3, 2, early=(ConvSpec(4, 3, 1, 1, pool=2),), late=(),
                          use_lrn=False, batch_norm=True)
    net = init_params(cfg, seed).double().train()
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():  # non-trivial affine BN parameters and biases
        for name, p in net.named_parameters():
            if not name.endswith("weight") or p.dim() == 1:
                p.copy_(0.5 * torch.randn(p.shape, generator=gen, dtype=torch.float64))
    return net, gen


def test_criterion_4_gradients_match_finite_differences(record_property):
    start = time.time()
    worst = 0.0
    h = 1e-4
    for seed in range(10):
        net, gen = _mini_net(seed)
        x = torch.randn(4, 3, 8, 8, generator=gen, dtype=torch.float64)
        y = torch.randint(0, 2, (4, 2), generator=gen).double()

        def loss():
            return bce_loss(spatial_max(net(x)), y)

        net.zero_grad()
        loss().backward()
        for p in net.parameters():
            analytic = p.grad.detach().clone().ravel()
            flat = p.data.view(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                f = {}
                with torch.no_grad():
                    for step in (-2, -1, 1, 2):
                        flat[k] = orig + step * h
                        f[step] = loss().item()
                    flat[k] = orig
                # five-point central stencil, error O(h^4)
                numeric = (f[-2] - 8 * f[-1] + 8 * f[1] - f[2]) / (12 * h)
                a = analytic[k].item()
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
                worst = max(worst, err)
    elapsed = time.time() - start
    record_property("detail", f"max relative error {worst:.1e}, {elapsed:.1f}s")
    assert worst < 1e-4
    assert elapsed < 120


# ------------------------------------------------------------------------ 5

def test_criterion_5_fusion_properties(record_property):
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(1000):
        g, t, i, j = rng.integers(1, 5, 4)
        a = ActivationMap(rng.random((g, t, i, j)), modality="action")
        o = ActivationMap(rng.random((g, t, i, j)), modality="object")
        s = SoundActivation(rng.random((g, t)))
        aos = fuse("AOS", a, o, s).data
        ao = fuse("AO", a, o).data
        bad += int(np.any(aos > ao)) + int(np.any(ao > fuse("A", a).data))
        bad += int(not np.array_equal(aos, fuse("AS", ActivationMap(ao, a.fps), sound=s).data))
    record_property("detail", f"{bad} violations")
    assert bad == 0


# ---------------------------------------------------------------------- 6, 7

N_SEEDS = 5


@pytest.fixture(scope="module")
def synthetic_runs():
    from synth_experiment import build_data, run_seed
    start = time.time()
    data = build_data(seed=0)
    runs = [run_seed(data, seed) for seed in range(N_SEEDS)]
    return data, runs, time.time() - start


@pytest.mark.slow
def test_criterion_6_synthetic_sot_beats_vt(synthetic_runs, record_property):
    _, runs, elapsed = synthetic_runs
    auc = {m: [r[m][0].mean_auc for r in runs] for m in ("VT", "SOT")}
    px = {m: [r[m][0].mean_distance for r in runs] for m in ("VT", "SOT")}
    med = {m: (float(np.median(auc[m])), float(np.median(px[m]))) for m in auc}
    record_property("detail", "median AUC VT %.3f SOT %.3f, px VT %.1f SOT %.1f, %.0fs" % (
        med["VT"][0], med["SOT"][0], med["VT"][1], med["SOT"][1], elapsed))
    print("per-seed AUC", auc, "px", px)
    assert med["SOT"][0] >= med["VT"][0]
    assert med["SOT"][1] <= med["VT"][1]
    assert elapsed < 30 * 60


@pytest.mark.slow
def test_criterion_7_oracle_fusion_gain(synthetic_runs, record_property):
    data, runs, _ = synthetic_runs
    sound = dict(zip(data["test_ann"], data["test_sound"]))
    objects = {cid: ActivationMap(downsample_masks(m, (8, 8), 8), stride=8, modality="object")
               for cid, m in zip(data["test_ann"], data["test_masks"])}
    worst = math.inf
    for run in runs:
        for mode, (report, maps) in run.items():
            fused = {cid: fuse("AOS", a, objects[cid], sound[cid]) for cid, a in maps.items()}
            fused_report = evaluate(fused, data["test_ann"], data["vocabulary"], input_dims=(64, 64))
            for row in report.rows:
                gain = fused_report.row(row.instrument).temporal_auc - row.temporal_auc
                worst = min(worst, gain)
                assert gain >= 0, (mode, row.instrument)
    record_property("detail", f"smallest AUC gain {worst:.3f}")


# ------------------------------------------------------------------------ 8

def test_criterion_8_analysis_round_trip(record_property):
    w = np.zeros((1, 10, 7, 7))
    w[0, 0::2] = 1.0
    (traj,) = filter_trajectories(w)
    assert traj.segments == ((1.0, 0.0),) * 5

    net = init_params(VisualNetConfig.action(), seed=0)
    conv1 = net.conv1()
    with torch.no_grad():
        conv1.weight.zero_()
        conv1.bias.fill_(-0.5)
        for g in range(9):
            conv1.weight[40 + g, g, 3, 3] = 1.0  # filter 40+g fires only on channel g
    names = [f"inst{g}" for g in range(9)]
    corpus, anns = {}, {}
    for g, name in enumerate(names):
        stacks = np.zeros((3, 10, 16, 16), np.float32)
        stacks[:, g] = 1.0
        corpus[name] = stacks
        anns[name] = KeyPointAnnotationSet(name, frames={0: {name: [(3, 3)]}, 1: {name: [(4, 4)]}, 2: {}})
    result = characterizing_filters(net, corpus, anns, names)
    assert result.matrix.shape == (9, 96)
    assert all(result.top(name)[0] == 40 + g for g, name in enumerate(names))
    record_property("detail", "9x96, dedicated filters ranked first")


# ------------------------------------------------------------------------ 9

def test_criterion_9_persistence(record_property):
    rng = np.random.default_rng(9)
    for _ in range(100):
        shape = tuple(rng.integers(0, 6, int(rng.integers(0, 5))))
        x = rng.normal(size=shape).astype(np.float32)
        x[rng.random(shape) < 0.05] = np.nan
        assert decode_tensor(encode_tensor(x)).tobytes() == x.tobytes()
    names = ["Cello", "Drum", "Flute", "Violin"]
    for k in range(100):
        frames = {}
        for t in sorted(rng.choice(120, int(rng.integers(0, 10)), replace=False).tolist()):
            frames[t] = {n: [tuple(int(v) for v in p) for p in rng.integers(0, 256, (int(rng.integers(1, 4)), 2))]
                         for n in rng.choice(names, int(rng.integers(0, 3)), replace=False)}
        ann = KeyPointAnnotationSet(f"clip{k}", frames=frames)
        assert annotations_from_dict(annotations_to_dict(ann)) == ann
    record_property("detail", "100 tensors bit-exact, 100 annotation sets equal")
