"""Command-line entry point: corpus generation, training, evaluation,
gradient checking, and whole-table topology sweeps.

stdout carries only machine-readable payloads (JSON, CSV rows, or
space-separated result lines); anything meant for humans goes to stderr.
Exit codes: 0 success, 1 validation/contract error, 2 I/O error,
3 gradient-check failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import (ConfigError, TrainConfig, parse_config_file, toy_model_config,
                     train_config_from_mapping)
from .data import (CorpusError, SynthSpec, load_corpus, synth_generate)
from .gradcheck import finite_diff_gradcheck
from .models import (ALL_TOPOLOGIES, FusionTopology, build_model, load_checkpoint,
                     parameter_count, save_checkpoint)
from .tensor import Tensor
from .training import (combined_loss, evaluate_metrics, loss_weights_for, metrics_record,
                       run_training, write_history_csv, write_metrics_json)

TOPOLOGY_NAMES = [t.value for t in ALL_TOPOLOGIES]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit code 1 instead of 2."""

    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="bcfusion")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True, help="key=value spec file")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="train one topology")
    p.add_argument("--manifest", required=True)
    p.add_argument("--topology", choices=TOPOLOGY_NAMES, default=None)
    p.add_argument("--task", choices=["detection", "agreement"], default=None)
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--window", type=float, default=None, help="window length in seconds")

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=["train", "validation", "test"], required=True)

    p = sub.add_parser("gradcheck", help="finite-difference verification at toy dims")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--topology", choices=TOPOLOGY_NAMES, default=None)
    group.add_argument("--all", action="store_true")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--step", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep", help="train every topology and tabulate results")
    p.add_argument("--manifest", required=True)
    p.add_argument("--task", choices=["detection", "agreement"], required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    return parser


# -- helpers -------------------------------------------------------------------

def _load_train_config(args) -> TrainConfig:
    cfg = train_config_from_mapping(parse_config_file(args.config)) if args.config \
        else TrainConfig()
    overrides = {"topology": getattr(args, "topology", None),
                 "task": getattr(args, "task", None),
                 "seed": args.seed,
                 "epochs": getattr(args, "epochs", None),
                 "learning_rate": getattr(args, "lr", None),
                 "batch_size": getattr(args, "batch_size", None),
                 "window_seconds": getattr(args, "window", None)}
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def _synth_spec(args) -> SynthSpec:
    mapping = parse_config_file(args.spec)
    spec_fields = {f.name: f.type for f in fields(SynthSpec)}
    kwargs = {}
    for key, raw in mapping.items():
        if key not in spec_fields:
            raise ConfigError(f"unknown synth spec key {key!r}")
        current = getattr(SynthSpec(), key)
        if isinstance(current, bool):
            kwargs[key] = raw.lower() in ("1", "true", "yes", "on")
        elif isinstance(current, int):
            kwargs[key] = int(raw)
        elif isinstance(current, float):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw
    spec = SynthSpec(**kwargs)
    if args.seed is not None:
        spec.seed = args.seed
    spec.validate()
    return spec


def _train_once(manifest: str, cfg: TrainConfig, out_dir: Path) -> dict:
    corpus = load_corpus(manifest, cfg.task, cfg.window_seconds,
                         face_dim=cfg.model.face_dim - 1, pose_dim=cfg.model.pose_dim - 1)
    result = run_training(corpus, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out_dir / "checkpoint.npz",
                    extra_meta={"window_seconds": cfg.window_seconds, "seed": cfg.seed,
                                "best_epoch": result.best_epoch})
    write_history_csv(out_dir / "history.csv", result.history)
    metrics = evaluate_metrics(result.model, corpus["validation"], cfg.task)
    record = metrics_record(cfg.task, cfg.topology, "validation", metrics)
    write_metrics_json(out_dir / "metrics.json", record)
    record["params"] = parameter_count(result.model)
    return record


def gradcheck_topology(topology: FusionTopology | str, tol: float = 1e-4,
                       h: float = 1e-5, seed: int = 0):
    """Full-model gradient check at toy dimensions, detection task."""
    topology = FusionTopology(topology)
    cfg = toy_model_config()
    model = build_model(topology, "detection", cfg, rng_seed=seed)
    rng = np.random.default_rng([seed, 7])
    face = Tensor(rng.normal(size=(8, cfg.face_dim)))
    pose = Tensor(rng.normal(size=(8, cfg.pose_dim)))
    weights = loss_weights_for(topology)

    def f():
        return combined_loss(model.forward(face, pose, training=False), 1.0,
                             weights, "detection")

    return finite_diff_gradcheck(f, list(model.named_parameters()), h=h, tol=tol)


# -- subcommands --------------------------------------------------------------

def _cmd_synth(args) -> int:
    spec = _synth_spec(args)
    manifest = synth_generate(spec, args.out)
    print(json.dumps({"manifest": str(manifest), "n_samples": spec.n_samples,
                      "kind": spec.kind, "task": spec.task}, sort_keys=True))
    return 0


def _cmd_train(args) -> int:
    cfg = _load_train_config(args)
    if cfg.topology is None:
        raise ConfigError("a topology must be given via --topology or the config file")
    record = _train_once(args.manifest, cfg, Path(args.out))
    record.pop("params")  # stdout carries exactly the documented metrics schema
    print(json.dumps(record, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    window = float(meta.get("window_seconds", 3.0))
    corpus = load_corpus(args.manifest, model.task, window,
                         face_dim=model.config.face_dim - 1,
                         pose_dim=model.config.pose_dim - 1)
    samples = corpus[args.split]
    if not samples:
        raise ConfigError(f"split {args.split!r} is empty in {args.manifest}")
    metrics = evaluate_metrics(model, samples, model.task)
    print(json.dumps(metrics_record(model.task, model.topology.value, args.split, metrics),
                     sort_keys=True))
    return 0


def _cmd_gradcheck(args) -> int:
    names = [args.topology] if args.topology else TOPOLOGY_NAMES
    all_passed = True
    for name in names:
        report = gradcheck_topology(name, tol=args.tol, h=args.step, seed=args.seed)
        status = "PASS" if report.passed else "FAIL"
        all_passed &= report.passed
        print(f"{name} {status} {report.max_rel_err:.3e}")
        for failure in report.failures:
            print(f"{name}: {failure}", file=sys.stderr)
    return 0 if all_passed else 3


def _cmd_sweep(args) -> int:
    base = _load_train_config(args)
    out_root = Path(args.out)
    rows = []
    for topology in TOPOLOGY_NAMES:
        cfg = replace(base, topology=topology, model=replace(base.model))
        started = time.perf_counter()
        record = _train_once(args.manifest, cfg, out_root / topology)
        elapsed = time.perf_counter() - started
        rows.append((topology, record["value"], record["params"], elapsed))
        print(f"{topology}: {record['metric_name']}={record['value']:.4f} "
              f"({elapsed:.1f}s)", file=sys.stderr)
    metric_name = "accuracy" if base.task == "detection" else "mse"
    out_root.mkdir(parents=True, exist_ok=True)
    csv_lines = ["topology,metric,params,seconds"]
    csv_lines += ["%s,%.17g,%d,%.3f" % row for row in rows]
    (out_root / "results.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    width = max(len(t) for t in TOPOLOGY_NAMES)
    txt_lines = [f"{'topology'.ljust(width)}  {metric_name:>10}  {'params':>10}  {'seconds':>8}"]
    txt_lines += [f"{t.ljust(width)}  {m:>10.4f}  {p:>10d}  {s:>8.1f}" for t, m, p, s in rows]
    (out_root / "results.txt").write_text("\n".join(txt_lines) + "\n", encoding="utf-8")
    print("\n".join(csv_lines))
    return 0


def run_command(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {"synth": _cmd_synth, "train": _cmd_train, "eval": _cmd_eval,
                   "gradcheck": _cmd_gradcheck, "sweep": _cmd_sweep}[args.command]
        return handler(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, CorpusError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
