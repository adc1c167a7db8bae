"""Command-line entry point.

Exit codes: 0 ok, 2 invalid spec/config/arguments, 3 malformed input line,
4 training aborted, 5 vocabulary mismatch, 6 unknown clip id.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import numcore as nc
from .model import ModelConfig, VocabularyError, load_checkpoint, save_checkpoint
from .pipeline import (ABLATION_BASE, AXES, ExperimentConfig, ablation_csv, ablation_sweep,
                       cross_validate, evaluate, load_prepared, train, transfer_evaluate)
from .scenegen import ScenarioSpec, generate_dataset, write_dataset
from .scenegraph import (GraphConfig, MalformedLine, clip_to_graph_sequence, graph_record,
                         read_clips, read_detections, read_homography, write_graph_records)

log = logging.getLogger("sgrisk")

EXIT_CONFIG, EXIT_MALFORMED, EXIT_TRAINING, EXIT_VOCAB, EXIT_UNKNOWN_CLIP = 2, 3, 4, 5, 6
SECTIONS = ("generator", "graph", "model", "train")


class UnknownClip(LookupError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

def _graph_config(d):
    unknown = set(d) - {f.name for f in fields(GraphConfig)}
    if unknown:
        raise ConfigError(f"unknown graph keys: {sorted(unknown)}")
    return GraphConfig(**d)


def load_run_config(path):
    """Validated sections of a run config file; missing sections take defaults."""
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        return {
            "generator": ScenarioSpec.from_dict(raw.get("generator", {})),
            "graph": _graph_config(raw.get("graph", {})),
            "model": ModelConfig.from_dict(raw.get("model", {})),
            "train": ExperimentConfig.from_dict(raw.get("train", {})),
        }
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _override(obj, **changes):
    changes = {k: v for k, v in changes.items() if v is not None}
    if not changes:
        return obj
    d = obj.to_dict() if hasattr(obj, "to_dict") else asdict(obj)
    d.update(changes)
    return type(obj).from_dict(d) if hasattr(type(obj), "from_dict") else type(obj)(**d)


def snapshot(path, command, cfg, args, **extra):
    doc = {"command": command,
           "generator": cfg["generator"].to_dict(), "graph": asdict(cfg["graph"]),
           "model": cfg["model"].to_dict(), "train": cfg["train"].to_dict(),
           "args": {k: v for k, v in sorted(vars(args).items()) if k != "func"}, **extra}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _seeded(cfg, args):
    if args.seed is not None:
        cfg["generator"] = _override(cfg["generator"], seed=args.seed)
        cfg["train"] = _override(cfg["train"], seed=args.seed)
    return cfg


# ---------------------------------------------------------------- commands

def cmd_gen(args, cfg):
    spec = cfg["generator"]
    if args.spec:
        spec = ScenarioSpec.from_dict(json.loads(Path(args.spec).read_text(encoding="utf-8")))
        if args.seed is not None:
            spec = _override(spec, seed=args.seed)
    spec = _override(spec, n_clips=args.n, risky_fraction=args.risky_fraction,
                     domain_shift=args.domain_shift, collision_phase=args.collision_phase)
    cfg["generator"] = spec
    clips, manifest = generate_dataset(spec, jobs=args.jobs)
    write_dataset(args.out, clips, manifest)
    snapshot(f"{args.out}.config.json", "gen", cfg, args)
    print(f"wrote {manifest['n_clips']} clips to {args.out} "
          f"(risky fraction {manifest['risky_fraction']:.3f})")


def cmd_build_graphs(args, cfg):
    if args.homography:
        clips = read_detections(args.input, read_homography(args.homography))
    else:
        clips = read_clips(args.input)
    records = []
    for clip in clips:
        try:
            records.append(graph_record(clip, clip_to_graph_sequence(clip, cfg["graph"])))
        except ValueError as exc:
            raise ValueError(f"clip {clip.clip_id!r}: {exc}") from None
    write_graph_records(args.out, records)
    snapshot(f"{args.out}.config.json", "build-graphs", cfg, args)
    print(f"wrote graph sequences for {len(records)} clips to {args.out}")


def _exp_overrides(args, cfg):
    cfg["train"] = _override(cfg["train"], epochs=getattr(args, "epochs", None),
                             learning_rate=getattr(args, "lr", None),
                             n_splits=getattr(args, "splits", None),
                             val_fraction=getattr(args, "val_fraction", None))
    return cfg["train"]


def cmd_train(args, cfg):
    exp = _exp_overrides(args, cfg)
    data = load_prepared(args.data, cfg["graph"], cfg["model"].vocab)
    log_path = args.log or f"{args.out}.log.jsonl"
    result = train(data, exp, cfg["model"], log_path=log_path)
    save_checkpoint(args.out, result.model, {"seed": exp.seed, "epoch": result.best_epoch,
                                             "val_loss": result.best_loss,
                                             "selection": result.selection})
    snapshot(f"{args.out}.config.json", "train", cfg, args)
    print(f"checkpoint {args.out}: epoch {result.best_epoch}, "
          f"{result.selection} loss {result.best_loss:.4f}")


def cmd_xval(args, cfg):
    exp = _exp_overrides(args, cfg)
    data = load_prepared(args.data, cfg["graph"], cfg["model"].vocab)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = cross_validate(data, exp, cfg["model"], jobs=args.jobs, log_dir=str(out))
    report.write(out / "metrics.csv", out / "summary.json")
    snapshot(out / "config.json", "xval", cfg, args)
    auc = "n/a" if report.mean_auc is None else f"{report.mean_auc:.3f} ± {report.std_auc:.3f}"
    print(f"{exp.n_splits} splits: accuracy {report.mean_accuracy:.3f} ± "
          f"{report.std_accuracy:.3f}, AUC {auc}")


def _print_eval(tag, rep):
    auc = "n/a" if rep.auc is None else f"{rep.auc:.3f}"
    print(f"{tag}: accuracy {rep.accuracy:.3f}, AUC {auc}, confusion {rep.confusion}")


def cmd_eval(args, cfg):
    model, meta = load_checkpoint(args.checkpoint)
    data = load_prepared(args.data, cfg["graph"], model.config.vocab)
    rep = evaluate(model, data)
    _print_eval(args.data, rep)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"checkpoint": str(args.checkpoint), "data": str(args.data), **rep.summary()},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")
        snapshot(f"{args.out}.config.json", "eval", cfg, args, model_from_checkpoint=model.config.to_dict())


def _parse_axis(text):
    name, _, values = text.partition("=")
    if name not in AXES or not values:
        raise ConfigError(f"bad --axis {text!r}; use NAME=v1,v2 with NAME in {AXES}")
    out = []
    for v in values.split(","):
        if name in ("n_mrgcn_layers", "hidden"):
            out.append(0 if v in ("none", "no") else int(v))
        elif name == "pool_ratio":
            out.append(float(v))
        else:
            out.append(v.replace("-", "_").lower())
    return name, out


def cmd_ablate(args, cfg):
    exp = _exp_overrides(args, cfg)
    axes = dict(_parse_axis(a) for a in (args.axis or ["temporal=mean,lstm_last"]))
    base = ABLATION_BASE if args.config is None else cfg["model"]
    data = load_prepared(args.data, cfg["graph"], base.vocab)
    rows = ablation_sweep(data, exp, axes, base=base, jobs=args.jobs)
    Path(args.out).write_text(ablation_csv(rows), encoding="utf-8")
    snapshot(f"{args.out}.config.json", "ablate", cfg, args, ablation_base=base.to_dict(),
             axes={k: list(v) for k, v in axes.items()})
    for label, _, rep in rows:
        print(f"{label}: accuracy {rep.mean_accuracy:.3f} ± {rep.std_accuracy:.3f}")


def cmd_transfer(args, cfg):
    model, _ = load_checkpoint(args.source)
    out = transfer_evaluate(model, args.on, in_domain=args.in_domain)
    if "in_domain_accuracy" in out:
        print(f"in-domain accuracy {out['in_domain_accuracy']:.3f}, shifted accuracy "
              f"{out['shifted_accuracy']:.3f}, drop {out['accuracy_drop']:.3f}")
    else:
        print(f"shifted accuracy {out['shifted_accuracy']:.3f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(out, fh, indent=2, sort_keys=True)
            fh.write("\n")
        snapshot(f"{args.out}.config.json", "transfer", cfg, args, model_from_checkpoint=model.config.to_dict())


def attention_export(model, prepared):
    probs, trace = model.forward_clip(prepared)
    frames = []
    for t, (ids, kinds, sel) in enumerate(zip(trace.node_ids, trace.node_kinds, trace.selected)):
        alpha = trace.alpha[t]
        nodes = [{"node_id": nid, "node_kind": kind,
                  "alpha_raw": None if alpha is None else float(alpha[v]),
                  "alpha_tanh": None if alpha is None else float(np.tanh(alpha[v])),
                  "selected": bool(sel[v])}
                 for v, (nid, kind) in enumerate(zip(ids, kinds))]
        frames.append({"frame_index": t, "nodes": nodes})
    return {"clip_id": prepared.clip_id, "frames": frames,
            "betas": None if trace.beta is None else [float(b) for b in trace.beta],
            "predicted": [float(p) for p in probs.data],
            "label": ("safe", "risky")[prepared.label]}


def cmd_explain(args, cfg):
    model, _ = load_checkpoint(args.checkpoint)
    data = load_prepared(args.dataset, cfg["graph"], model.config.vocab)
    match = [p for p in data if p.clip_id == args.clip_id]
    if not match:
        raise UnknownClip(f"clip {args.clip_id!r} not found in {args.dataset}")
    export = attention_export(model, match[0])
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(export, fh, indent=2)
        fh.write("\n")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame_index", "beta", "node_id", "node_kind", "alpha_raw", "alpha_tanh", "selected"])
            for f in export["frames"]:
                beta = "" if export["betas"] is None else repr(export["betas"][f["frame_index"]])
                for n in f["nodes"]:
                    w.writerow([f["frame_index"], beta, n["node_id"], n["node_kind"],
                                "" if n["alpha_raw"] is None else repr(n["alpha_raw"]),
                                "" if n["alpha_tanh"] is None else repr(n["alpha_tanh"]),
                                int(n["selected"])])
    snapshot(f"{args.out}.config.json", "explain", cfg, args)
    print(f"{args.clip_id}: risky probability {export['predicted'][1]:.3f}, "
          f"{len(export['frames'])} frames")


# ---------------------------------------------------------------- parser

def _globals(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="overrides generator and train seeds")
    parser.add_argument("--jobs", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker processes for generation and per-split training")
    parser.add_argument("--config", default=default, help="run config JSON with generator/graph/model/train")


def build_parser():
    p = argparse.ArgumentParser(prog="sgrisk", description="Scene-graph based lane-change risk assessment")
    _globals(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        _globals(sp, suppress=True)
        sp.set_defaults(func=func)
        return sp

    g = add("gen", cmd_gen, "generate a synthetic clip dataset")
    g.add_argument("--spec", help="ScenarioSpec JSON file")
    g.add_argument("--n", type=int)
    g.add_argument("--risky-fraction", type=float)
    g.add_argument("--domain-shift")
    g.add_argument("--collision-phase", choices=["any", "late"])
    g.add_argument("--out", required=True)

    b = add("build-graphs", cmd_build_graphs, "convert clips (or detections) to scene-graph sequences")
    b.add_argument("--in", dest="input", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--homography", help="3x3 image-to-ground homography; input is then detections")

    t = add("train", cmd_train, "train one model on a dataset")
    t.add_argument("--data", required=True, help="clip or graph JSONL")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--val-fraction", type=float)
    t.add_argument("--log", help="per-epoch JSONL log (default: <out>.log.jsonl)")

    x = add("xval", cmd_xval, "stratified multi-split evaluation")
    x.add_argument("--data", required=True)
    x.add_argument("--out-dir", required=True)
    x.add_argument("--splits", type=int)
    x.add_argument("--epochs", type=int)
    x.add_argument("--lr", type=float)

    e = add("eval", cmd_eval, "evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out")

    a = add("ablate", cmd_ablate, "ablation sweep over architecture axes")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True, help="ablation CSV")
    a.add_argument("--axis", action="append", help="NAME=v1,v2 (repeatable, declared order kept)")
    a.add_argument("--splits", type=int)
    a.add_argument("--epochs", type=int)
    a.add_argument("--lr", type=float)

    tr = add("transfer", cmd_transfer, "evaluate a trained model on a shifted dataset")
    tr.add_argument("--from", dest="source", required=True, help="checkpoint")
    tr.add_argument("--on", required=True, help="shifted dataset")
    tr.add_argument("--in-domain", help="in-domain test set for the reference score")
    tr.add_argument("--out")

    ex = add("explain", cmd_explain, "export spatial and temporal attention for one clip")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--dataset", required=True)
    ex.add_argument("--clip-id", required=True)
    ex.add_argument("--out", required=True)
    ex.add_argument("--csv")
    return p


def _setup_logging():
    level = os.environ.get("SGRISK_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = _seeded(load_run_config(args.config), args)
        args.func(args, cfg)
    except MalformedLine as exc:
        print(f"error: malformed input at line {exc.lineno}: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except VocabularyError as exc:
        print(f"error: vocabulary mismatch: {exc}", file=sys.stderr)
        return EXIT_VOCAB
    except nc.TrainingError as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except UnknownClip as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_CLIP
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
