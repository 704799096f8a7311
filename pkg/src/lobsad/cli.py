"""Command-line entry point.

Subcommands:

    lobsad generate --config cfg.json --out DIR
        Write a synthetic LOB CSV, a label file and a ground-truth sidecar.
    lobsad run --config cfg.json --data lob.csv --labels labels.txt --out DIR
        Full experiment: repeats x contiguous folds, both models, results/
        checkpoints/scatter exports and a run manifest.
    lobsad score --checkpoint ckpt --data lob.csv --out scores.csv
        Anomaly score for every row of a CSV using a trial checkpoint.
    lobsad report --results results.json --out DIR
        Regenerate results.csv (and optional SVGs are written at run time).

Exit codes: 0 success, 1 runtime/divergence failure, 2 usage or config error.
Config files are versioned JSON; unknown keys are rejected. Flags override
config-file values; the resolved config is recorded in the run manifest.
Set SAD_LOG=DEBUG|INFO|... to control logging.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import data as data_mod
from . import evalx, harness, nnet, objectives
from .errors import ConfigError, DivergenceError, LobSadError

log = logging.getLogger("lobsad.cli")

CONFIG_VERSION = 1


def _dataclass_from_dict(cls, section: dict, name: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - fields
    if unknown:
        raise ConfigError(f"unknown keys in '{name}' section: {sorted(unknown)}")
    kwargs = dict(section)
    if "layer_dims" in kwargs:
        kwargs["layer_dims"] = tuple(kwargs["layer_dims"])
    if "archetype_mix" in kwargs:
        kwargs["archetype_mix"] = tuple(kwargs["archetype_mix"])
    if "schema" in kwargs:
        kwargs["schema"] = data_mod.SchemaConfig(tuple(kwargs["schema"]))
    return cls(**kwargs)


def load_run_config(path) -> tuple[harness.TrainConfig, data_mod.SynthConfig]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: "
            f"{exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if doc.get("version") != CONFIG_VERSION:
        raise ConfigError(f"{path}: expected version {CONFIG_VERSION}, "
                          f"got {doc.get('version')!r}")
    unknown = set(doc) - {"version", "train", "synth"}
    if unknown:
        raise ConfigError(f"{path}: unknown top-level keys {sorted(unknown)}")
    train = _dataclass_from_dict(harness.TrainConfig, doc.get("train", {}), "train")
    synth = _dataclass_from_dict(data_mod.SynthConfig, doc.get("synth", {}), "synth")
    return train, synth


def _apply_overrides(args, train: harness.TrainConfig,
                     synth: data_mod.SynthConfig):
    if getattr(args, "seed", None) is not None:
        train = dataclasses.replace(train, seed=args.seed)
        synth = dataclasses.replace(synth, seed=args.seed)
    if getattr(args, "paper_scale", False):
        train = harness.paper_scale(train)
    return train, synth


def _config_snapshot(train, synth) -> dict:
    doc = {"version": CONFIG_VERSION,
           "train": dataclasses.asdict(train),
           "synth": dataclasses.asdict(synth)}
    doc["synth"]["schema"] = list(synth.schema.feature_columns)
    return doc


def cmd_generate(args) -> int:
    train, synth = load_run_config(args.config)
    train, synth = _apply_overrides(args, train, synth)
    os.makedirs(args.out, exist_ok=True)
    result = data_mod.generate_synthetic(synth)
    data_mod.write_lob_csv(os.path.join(args.out, "lob.csv"),
                           result.timestamps, result.book)
    data_mod.write_labels(os.path.join(args.out, "labels.txt"),
                          result.dataset.labeled_idx)
    data_mod.write_ground_truth(os.path.join(args.out, "ground_truth.csv"),
                                result.ground_truth)
    log.info("wrote %d rows, %d labeled, %d injected anomalies to %s",
             result.dataset.n_rows, result.dataset.n_labeled,
             result.ground_truth.rows.size, args.out)
    return 0


def _save_trial(res: harness.TrialResult, out_dir: str) -> None:
    t = res.report.trial
    for mode, model in res.models.items():
        extra = {"center": res.sphere.center,
                 "norm_mean": res.normalizer.mean,
                 "norm_std": res.normalizer.std}
        nnet.save_checkpoint(
            model, os.path.join(out_dir, f"trial{t}_fold{res.report.fold}_{mode}.ckpt"),
            seed=res.report.config.get("seed"), extra=extra)
    for (mode, split), scores in res.scores.items():
        rows = res.train_rows if split == "train" else res.test_rows
        path = os.path.join(out_dir, f"trial{t}_scores_{mode}_{split}.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "score"])
            for r, s in zip(rows, scores):
                writer.writerow([int(r), repr(float(s))])


def cmd_run(args) -> int:
    train, synth = load_run_config(args.config)
    train, synth = _apply_overrides(args, train, synth)
    modes = {"both": ("svdd", "sad"), "svdd-only": ("svdd",),
             "sad-only": ("sad",)}[args.mode]
    os.makedirs(args.out, exist_ok=True)

    dataset = data_mod.load_lob_csv(args.data, synth.schema)
    dataset = data_mod.load_labels(args.labels, dataset)
    gt_rows = None
    if args.ground_truth:
        gt_rows = data_mod.load_ground_truth(args.ground_truth).rows

    manifest = {"config": _config_snapshot(train, synth),
                "data": os.path.abspath(args.data),
                "labels": os.path.abspath(args.labels),
                "mode": args.mode, "jobs": args.jobs,
                "n_rows": dataset.n_rows, "n_labeled": dataset.n_labeled}
    with open(os.path.join(args.out, "run_manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)

    done: list[harness.TrialResult] = []

    def flush():
        reports = [r.report for r in done]
        scatters = {}
        for r in done:
            for (mode, split), payload in r.projections.items():
                scatters[(r.report.trial, mode, split)] = payload
        evalx.export_report(reports, scatters, args.out, svg=args.svg)

    def on_trial(res):
        done.append(res)
        _save_trial(res, args.out)
        log.info("trial %d done in %.1fs", res.report.trial, res.report.runtime_s)

    try:
        harness.run_experiment(dataset, train, modes=modes, jobs=args.jobs,
                               ground_truth_rows=gt_rows, on_trial=on_trial)
    except DivergenceError as exc:
        flush()  # partial results before abort
        print(f"error: {exc}", file=sys.stderr)
        return 1
    flush()
    return 0


def cmd_score(args) -> int:
    model, meta = nnet.load_checkpoint(args.checkpoint)
    extra = meta["extra"]
    for key in ("center", "norm_mean", "norm_std"):
        if key not in extra:
            raise ConfigError(f"{args.checkpoint}: checkpoint lacks '{key}'; "
                              "score needs a trial checkpoint")
    dataset = data_mod.load_lob_csv(args.data)
    if dataset.features.shape[1] != model.input_dim:
        raise ConfigError(
            f"dimension mismatch: model expects {model.input_dim} features, "
            f"data has {dataset.features.shape[1]}")
    norm = data_mod.Normalizer(mean=extra["norm_mean"], std=extra["norm_std"],
                               degenerate=np.zeros(model.input_dim, dtype=bool))
    feats = data_mod.apply_normalizer(norm, dataset.features)
    sphere = objectives.Hypersphere(center=extra["center"])
    scores = objectives.anomaly_score(model, feats, sphere)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "score"])
        for i, s in enumerate(scores):
            writer.writerow([i, repr(float(s))])
    return 0


def cmd_report(args) -> int:
    try:
        with open(args.results, encoding="utf-8") as fh:
            docs = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.results}: malformed JSON at line {exc.lineno} "
                          f"column {exc.colno}") from None
    reports = [evalx.TrialReport(**d) for d in docs]
    evalx.export_report(reports, None, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lobsad",
        description="Hypersphere anomaly detection on limit-order-book data")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write synthetic LOB data")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=None)
    gen.set_defaults(func=cmd_generate)

    run = sub.add_parser("run", help="run the full cross-validated experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--data", required=True)
    run.add_argument("--labels", required=True)
    run.add_argument("--ground-truth", default=None,
                     help="optional sidecar; adds gt_* metrics to results.json")
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--jobs", type=int, default=1,
                     help="parallel trials; 1 guarantees bit-reproducibility")
    run.add_argument("--mode", choices=("both", "svdd-only", "sad-only"),
                     default="both")
    run.add_argument("--paper-scale", action="store_true",
                     help="1,000 pretrain / 10,000 main epochs")
    run.add_argument("--svg", action="store_true", help="also write SVG scatters")
    run.set_defaults(func=cmd_run)

    score = sub.add_parser("score", help="score a CSV with a trial checkpoint")
    score.add_argument("--checkpoint", required=True)
    score.add_argument("--data", required=True)
    score.add_argument("--out", required=True)
    score.set_defaults(func=cmd_score)

    rep = sub.add_parser("report", help="regenerate results.csv from results.json")
    rep.add_argument("--results", required=True)
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SAD_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except LobSadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
