"""Command-line entry point: ``playact <command> [options]``.

Every command accepts ``--config run.json``; keys are the long option
names (dashes or underscores) and flags given on the command line win.
Artifacts go under ``--out`` together with a ``manifest.json`` that records
the resolved configuration, its hash, the seed and library versions.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, PlayactError, SchemaError

log = logging.getLogger("playact")

COMMANDS = ("synth", "features", "train", "predict", "targets", "fuse", "evaluate", "viz")


# ------------------------------------------------------------------ plumbing

def _versions():
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "torch", "opencv-python-headless", "librosa",
                 "scikit-learn"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def run_config(args):
    return {k: _jsonable(v) for k, v in sorted(vars(args).items())
            if k not in ("func", "config", "log_level")}


def write_manifest(directory, args, **extra):
    config = run_config(args)
    blob = json.dumps(config, sort_keys=True).encode()
    manifest = {"command": args.command, "config": config,
                "config_hash": hashlib.sha256(blob).hexdigest()[:16],
                "seed": getattr(args, "seed", None), "versions": _versions(), **extra}
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def _pool_map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(jobs) as pool:
        return list(pool.map(fn, items))


def _clip_dirs(data):
    dirs = sorted(p.parent for p in Path(data).glob("*/clip.json"))
    if not dirs:
        raise SchemaError(f"{data}: no clip directories (expected */clip.json)")
    return dirs


def _read_index(features):
    path = Path(features) / "index.json"
    if not path.exists():
        raise SchemaError(f"{features}: missing index.json (not a features directory)")
    return json.loads(path.read_text())


def _load_preds(directory, clip_ids=None):
    from .storage import load_activation
    directory = Path(directory)
    paths = sorted(directory.glob("*.tnsr"))
    preds = {p.stem: load_activation(p) for p in paths
             if clip_ids is None or p.stem in clip_ids}
    if clip_ids is not None:
        missing = sorted(set(clip_ids) - set(preds))
        if missing:
            raise SchemaError(f"{directory}: no prediction for {missing[:3]}"
                              f"{' ...' if len(missing) > 3 else ''}")
    return preds


# ------------------------------------------------------------------ commands

def _write_one(job):
    from .synthbench import generate_scene, random_scene_spec, write_scene
    seed, clip_id, n_classes, seconds, out = job
    scene = generate_scene(random_scene_spec(seed, clip_id, n_classes, seconds))
    write_scene(scene, Path(out) / clip_id)
    return clip_id


def cmd_synth(args):
    seeds = np.random.default_rng(args.seed).integers(0, 2 ** 31, args.n_clips)
    jobs = [(int(s), f"{args.prefix}{k:04d}", args.n_classes, args.clip_seconds, args.out)
            for k, s in enumerate(seeds)]
    ids = _pool_map(_write_one, jobs, args.jobs)
    write_manifest(args.out, args, clips=ids)
    log.info("wrote %d clips to %s", len(ids), args.out)


def _features_one(job):
    from . import pipeline
    from .storage import persist_tensor
    from .synthbench import read_clip
    directory, kind, flow_fps, anchors, out = job
    clip, vocabulary = read_clip(directory)
    training = anchors == "train"
    if kind == "mel":
        data = pipeline.mel_inputs(clip)
    elif kind == "rgb":
        data = pipeline.rgb_inputs(clip, training=training)[:]
    else:
        data = pipeline.flow_inputs(clip, flow_fps, training=training)
    persist_tensor(data, Path(out) / f"{clip.clip_id}.tnsr")
    n = pipeline.TRAIN_ANCHORS if training else clip.n_anchors
    return clip.clip_id, {"tags": list(clip.tags.v), "n_anchors": n}, list(vocabulary.names)


def cmd_features(args):
    from .features import canonical_flow_fps
    if args.kind == "flow":
        canonical_flow_fps(args.flow_fps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(d, args.kind, args.flow_fps, args.anchors, out) for d in _clip_dirs(args.data)]
    results = _pool_map(_features_one, jobs, args.jobs)
    index = {"kind": args.kind, "flow_fps": args.flow_fps if args.kind == "flow" else None,
             "anchors": args.anchors, "vocabulary": results[0][2],
             "clips": {cid: info for cid, info, _ in results}}
    (out / "index.json").write_text(json.dumps(index, indent=1))
    write_manifest(out, args)
    log.info("%s features for %d clips in %s", args.kind, len(results), out)


def _target_spec(args):
    from .supervision import TargetSpec
    v, u = args.sound_threshold, args.object_threshold
    if args.mode in ("ST", "SOT") and v is None:
        v = 0.5
    if args.mode in ("OT", "SOT") and u is None:
        u = 0.3
    return TargetSpec(args.mode, v, u)


def _training_clips(features, kind, sound_pred=None, object_pred=None):
    from .datamodel import ClipTags
    from .storage import load_tensor
    from .training import TrainingClip
    index = _read_index(features)
    expected = {"sound": "mel", "object": "rgb", "action": "flow"}[kind]
    if index["kind"] != expected:
        raise ConfigError(f"{kind} training needs {expected} features, {features} holds {index['kind']}")
    ids = sorted(index["clips"])
    sounds = _load_preds(sound_pred, ids) if sound_pred else {}
    objects = _load_preds(object_pred, ids) if object_pred else {}
    clips = [TrainingClip(cid, load_tensor(Path(features) / f"{cid}.tnsr"),
                          ClipTags(tuple(index["clips"][cid]["tags"])),
                          sound=sounds.get(cid), objects=objects.get(cid))
             for cid in ids]
    return clips, index


def cmd_train(args):
    import torch

    from .models import SoundNetConfig, VisualNetConfig, config_to_dict, init_params, save_checkpoint
    from .storage import load_state_dict
    from .training import TrainSchedule, train_model

    torch.set_num_threads(max(1, args.jobs))
    spec = _target_spec(args) if args.kind == "action" else None
    data, index = _training_clips(args.features, args.kind, args.sound_pred, args.object_pred)
    val = None
    if args.val_features:
        val, _ = _training_clips(args.val_features, args.kind)
    n_classes = len(index["vocabulary"])
    channels = {"object": 3, "action": 10}.get(args.kind)
    if args.kind == "sound":
        config = SoundNetConfig.miniature(n_classes, width=args.width) if args.miniature \
            else SoundNetConfig(n_classes=n_classes)
    else:
        config = VisualNetConfig.miniature(channels, n_classes, args.width) if args.miniature \
            else VisualNetConfig(channels, n_classes)
    pretrained = load_state_dict(args.pretrained_early)[0] if args.pretrained_early else None
    model = init_params(config, args.seed, pretrained)

    schedule = TrainSchedule.for_kind(args.kind)
    overrides = {k: v for k, v in dict(
        epochs=args.epochs, lr=args.lr, momentum=args.momentum, batch_size=args.batch_size,
        freeze_early_epochs=args.freeze_epochs, finetune_epochs=args.finetune_epochs).items()
        if v is not None}
    schedule = replace(schedule, **overrides)

    name = args.name or (spec.name if spec is not None else args.kind)
    run_dir = Path(args.out) / name
    run_dir.mkdir(parents=True, exist_ok=True)
    run = train_model(args.kind, schedule, data, spec=spec, val=val, model=model, seed=args.seed,
                      checkpoint_dir=run_dir / "epochs" if args.keep_checkpoints else None,
                      metrics_csv=run_dir / "metrics.csv", name=name)
    best = run.best if val else run.checkpoints[-1]
    save_checkpoint(best, run_dir / "best")
    (run_dir / "network.json").write_text(json.dumps(
        {"kind": args.kind, "config": config_to_dict(config),
         "target": spec.name if spec is not None else None}, indent=1))
    auc = None if math.isnan(best.val_auc) else best.val_auc
    write_manifest(run_dir, args, run_name=name, best_epoch=best.epoch, best_val_auc=auc,
                   schedule=schedule.__dict__)
    print(f"{name}: best epoch {best.epoch} (val clip AUC {best.val_auc:.4f}) -> {run_dir}")


def load_run(run_dir):
    """Model (eval mode) and kind of a run written by ``train``."""
    from .models import config_from_dict, init_params, load_checkpoint
    run_dir = Path(run_dir)
    doc = json.loads((run_dir / "network.json").read_text())
    model = init_params(config_from_dict(doc["config"]))
    load_checkpoint(run_dir / "best").restore(model)
    return model.eval(), doc["kind"]


def cmd_predict(args):
    import torch

    from .datamodel import ANCHOR_FPS
    from .models import predict_activation
    from .pipeline import sound_teacher
    from .storage import load_tensor, save_activation

    torch.set_num_threads(max(1, args.jobs))
    model, kind = load_run(args.run)
    index = _read_index(args.features)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for cid, info in sorted(index["clips"].items()):
        x = load_tensor(Path(args.features) / f"{cid}.tnsr")
        if kind == "sound":
            act = sound_teacher(model, x, info["n_anchors"])
        else:
            act = predict_activation(model, x, ANCHOR_FPS)
        save_activation(act, out / cid)
    write_manifest(out, args, kind=kind)
    log.info("%s predictions for %d clips in %s", kind, len(index["clips"]), out)


def cmd_targets(args):
    from .datamodel import ActivationMap, ClipTags, SoundActivation
    from .pipeline import fit_length
    from .storage import persist_tensor
    from .supervision import build_target

    spec = _target_spec(args)
    index = _read_index(args.features)
    ids = sorted(index["clips"])
    sounds = _load_preds(args.sound_pred, ids) if args.sound_pred else {}
    objects = _load_preds(args.object_pred, ids) if args.object_pred else {}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for cid in ids:
        n = index["clips"][cid]["n_anchors"]
        snd, obj = sounds.get(cid), objects.get(cid)
        if snd is not None:
            snd = SoundActivation(fit_length(snd.data, n), snd.fps)
        if obj is not None:
            obj = ActivationMap(fit_length(obj.data, n), obj.fps, obj.stride, obj.modality)
        target, _ = build_target(spec, ClipTags(tuple(index["clips"][cid]["tags"])), obj, snd,
                                 n_frames=n)
        persist_tensor(target, out / f"{cid}.tnsr")
    write_manifest(out, args, target=spec.name, comparison_mode=spec.comparison_mode)
    log.info("%s targets for %d clips in %s", spec.name, len(ids), out)


def cmd_fuse(args):
    from .datamodel import SoundActivation
    from .fusion import fuse
    from .pipeline import fit_length
    from .storage import save_activation

    actions = _load_preds(args.action)
    if not actions:
        raise SchemaError(f"{args.action}: no predictions")
    ids = sorted(actions)
    objects = _load_preds(args.object, ids) if args.object else {}
    sounds = _load_preds(args.sound, ids) if args.sound else {}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for cid in ids:
        action = actions[cid]
        snd = sounds.get(cid)
        if snd is not None:
            snd = SoundActivation(fit_length(snd.data, action.shape[1]), snd.fps)
        save_activation(fuse(args.mode, action, objects.get(cid), snd), out / cid)
    write_manifest(out, args)
    log.info("%s fusion for %d clips in %s", args.mode, len(ids), out)


def _load_annotations(anno):
    from .storage import load_annotations
    anno = Path(anno)
    paths = sorted(anno.glob("*/annotations.json")) or sorted(anno.glob("*.json"))
    anns = {}
    for p in paths:
        if p.name == "manifest.json":
            continue
        a = load_annotations(p)
        anns[a.clip_id] = a
    if not anns:
        raise SchemaError(f"{anno}: no annotation files")
    return anns


def _vocabulary(args, anno):
    from .datamodel import InstrumentVocabulary
    if args.vocabulary:
        return InstrumentVocabulary(tuple(args.vocabulary.split(",")))
    for meta in sorted(Path(anno).glob("*/clip.json")):
        return InstrumentVocabulary(tuple(json.loads(meta.read_text())["vocabulary"]))
    return InstrumentVocabulary()


def cmd_evaluate(args):
    from .evaluation import evaluate

    anns = _load_annotations(args.anno)
    vocabulary = _vocabulary(args, args.anno)
    dims = tuple(args.input_dims) if args.input_dims else None
    reports = []
    for pred_dir in [args.pred] + list(args.compare or []):
        preds = _load_preds(pred_dir, sorted(anns))
        name = Path(pred_dir).name
        report = evaluate(preds, anns, vocabulary, dims, args.method, name=name)
        csv_path = Path(args.out) / f"{name}.csv" if args.out else Path(pred_dir) / "eval.csv"
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        csv_path.write_text(report.to_csv())
        print(report.to_table())
        print()
        reports.append(report)
    if len(reports) > 1:
        width = max(len(r.name) for r in reports)
        print(f"{'run':<{width}}  {'AUC':>6}  {'px':>6}")
        for r in reports:
            print(f"{r.name:<{width}}  {r.mean_auc:>6.3f}  {r.mean_distance:>6.1f}")
    if args.out:
        write_manifest(args.out, args)


def cmd_viz(args):
    from .analysis import characterizing_filters, visualize_conv1
    from .storage import load_tensor

    model, kind = load_run(args.run)
    if kind != "action":
        raise ConfigError(f"viz needs an action run, {args.run} is a {kind} run")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trajectories = visualize_conv1(model, out / "conv1_trajectories.svg")
    if args.features and args.anno:
        index = _read_index(args.features)
        anns = {cid: a for cid, a in _load_annotations(args.anno).items() if cid in index["clips"]}
        corpus = {cid: load_tensor(Path(args.features) / f"{cid}.tnsr") for cid in anns}
        instruments = [name for name in index["vocabulary"]
                       if any(a.is_positive(t, name) for a in anns.values() for t in a.frame_indices)]
        result = characterizing_filters(model, corpus, anns, instruments, args.top_k)
        result.write_csv(out / "characterizing.csv")
        result.plot(trajectories, out / "characterizing.svg")
    write_manifest(out, args)
    log.info("conv1 analysis written to %s", out)


# ------------------------------------------------------------------ parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option values")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1, help="worker processes / threads")
    common.add_argument("--log-level", default="INFO")

    parser = argparse.ArgumentParser(prog="playact", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="render a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-clips", type=int, default=10)
    p.add_argument("--clip-seconds", type=float, default=60.0)
    p.add_argument("--n-classes", type=int, default=2)
    p.add_argument("--prefix", default="clip")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", parents=[common], help="extract mel, rgb or flow inputs")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("mel", "rgb", "flow"), required=True)
    p.add_argument("--flow-fps", type=float, default=7.8)
    p.add_argument("--anchors", choices=("all", "train"), default="all",
                   help="every anchor, or the 120 anchors of the 12 training sub-clips")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", parents=[common], help="train one stream")
    p.add_argument("--kind", choices=("sound", "object", "action"), default="action")
    p.add_argument("--features", required=True)
    p.add_argument("--val-features")
    p.add_argument("--out", required=True)
    p.add_argument("--name")
    _target_args(p)
    p.add_argument("--sound-pred", help="sound predictions on the training clips")
    p.add_argument("--object-pred", help="object predictions on the training clips")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--freeze-epochs", type=int)
    p.add_argument("--finetune-epochs", type=int)
    p.add_argument("--miniature", action="store_true", help="small networks for 64 px inputs")
    p.add_argument("--width", type=int, default=16, help="base width of miniature networks")
    p.add_argument("--pretrained-early", help="state-dict directory for the early layers")
    p.add_argument("--keep-checkpoints", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="run a trained stream over features")
    p.add_argument("--run", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("targets", parents=[common], help="build action training targets")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    _target_args(p)
    p.add_argument("--sound-pred")
    p.add_argument("--object-pred")
    p.set_defaults(func=cmd_targets)

    p = sub.add_parser("fuse", parents=[common], help="multiply action, object and sound outputs")
    p.add_argument("--mode", choices=("A", "AO", "AS", "AOS"), default="AOS")
    p.add_argument("--action", required=True)
    p.add_argument("--object")
    p.add_argument("--sound")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", parents=[common], help="temporal AUC and spatial distance")
    p.add_argument("--pred", required=True)
    p.add_argument("--anno", required=True)
    p.add_argument("--compare", nargs="+", help="more prediction directories, one row each")
    p.add_argument("--out", help="directory for CSVs (default: next to the predictions)")
    p.add_argument("--method", choices=("upsample", "center"), default="upsample")
    p.add_argument("--input-dims", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--vocabulary", help="comma-separated instrument names")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("viz", parents=[common], help="Conv1 trajectories and filter ranking")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--features", help="flow features of the test clips")
    p.add_argument("--anno")
    p.add_argument("--top-k", type=int, default=5)
    p.set_defaults(func=cmd_viz)
    return parser, sub


def _target_args(p):
    p.add_argument("--mode", choices=("VT", "ST", "OT", "SOT"), default="SOT")
    p.add_argument("--sound-threshold", type=float)
    p.add_argument("--object-threshold", type=float)


def parse_args(argv):
    """Parse flags on top of an optional JSON config file."""
    parser, sub = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    config = pre.parse_known_args(argv)[0].config
    command = argv[0] if argv and argv[0] in sub.choices else None
    if config and command:
        command_parser = sub.choices[command]
        try:
            doc = json.loads(Path(config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            command_parser.error(f"cannot read config {config}: {exc}")
        if not isinstance(doc, dict):
            command_parser.error("config file must hold a JSON object")
        known = {a.dest for a in command_parser._actions} - {"help", "config"}
        values = {k.replace("-", "_"): v for k, v in doc.items()}
        unknown = sorted(set(values) - known)
        if unknown:
            command_parser.error(f"unknown config keys: {', '.join(unknown)}")
        for action in command_parser._actions:
            if action.dest in values:
                action.required = False
        command_parser.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv=None):
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(asctime)s level=%(levelname)s cmd=" + args.command
                        + " %(message)s")
    try:
        args.func(args)
    except PlayactError as exc:
        print(f"playact {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, KeyError) as exc:
        print(f"playact {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
