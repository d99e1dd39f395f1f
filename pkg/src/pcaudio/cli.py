"""Command line driver: ``pcaudio {gen-toy,ingest,train,eval,sweep,report}``.

Every invocation writes into a fresh run directory under ``--out`` and never
touches earlier runs.  CSV outputs contain only quantities determined by the
seed and configuration; wall-clock figures go to ``run.json``.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data import FEATURE_PRESETS, DatasetManifest, FeatureConfig, ToySpec, featurize_for, ingest_directory, write_toy_dataset
from .errors import ParameterError, TrainingDiverged
from .experiments import cost_table, sweep_repr, sweep_subsample
from .models import PRESETS, attention_weights, build_model, load_checkpoint, preset, save_checkpoint
from .train import TrainConfig, count_macs, count_params, evaluate, train

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger("pcaudio")

RUN_SCHEMA_VERSION = 1

DEFAULT_TOY = {"bands": [[300.0, 3500.0], [4500.0, 7700.0]], "clips_per_class": 100, "duration": 0.5,
               "sample_rate": 16000}

SWEEP_DEFAULTS = {
    "window_sizes": [512, 1024, 2048],
    "sample_rates": [8000, 16000, 32000],
    "fractions": [0.05, 0.1, 0.3, 0.5, 1.0],
    "strategies": ["topk", "random"],
    "repeats": 10,
}


class ConfigError(ParameterError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _names(cls) -> set:
    return {f.name for f in fields(cls)}


SCHEMA = {
    "toy": _names(ToySpec) - {"seed"},
    "model": _names(type(preset("fst"))) - {"kind", "seed"},
    "features": _names(FeatureConfig),
    "train": (_names(TrainConfig) - {"seed", "subsample_strategy", "subsample_fraction"}) | {"subsample"},
    "sweep": set(SWEEP_DEFAULTS),
}


def load_config(path: Optional[str]) -> dict:
    """Read a TOML config and reject anything the schema does not know."""
    if path is None:
        return {}
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    for section, body in cfg.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"config entry {section!r} must be a table")
        for key in body:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
    sub = cfg.get("train", {}).get("subsample")
    if sub is not None:
        for key in sub:
            if key not in ("strategy", "fraction"):
                raise ConfigError(f"unknown config key train.subsample.{key}")
        for key in ("strategy", "fraction"):
            if key not in sub:
                raise ConfigError(f"missing config key train.subsample.{key}")
    return cfg


def train_config(cfg: dict, seed: int) -> TrainConfig:
    body = dict(cfg.get("train", {}))
    sub = body.pop("subsample", None)
    if sub is not None:
        body["subsample_strategy"] = sub["strategy"]
        body["subsample_fraction"] = float(sub["fraction"])
    return TrainConfig(seed=seed, **body)


# ---------------------------------------------------------------------------
# Run directories and writers
# ---------------------------------------------------------------------------


def new_run_dir(out: str, verb: str) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    base = Path(out) / f"{verb}-{stamp}"
    path, k = base, 1
    while path.exists():
        k += 1
        path = Path(f"{base}-{k}")
    path.mkdir(parents=True)
    return path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, rows: list[dict], columns: Optional[list] = None) -> None:
    columns = columns or list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def write_run_record(run_dir: Path, verb: str, args: argparse.Namespace, payload: dict, started: float) -> None:
    record = {
        "schema_version": RUN_SCHEMA_VERSION,
        "verb": verb,
        "package_version": __version__,
        "created": _dt.datetime.now().isoformat(timespec="seconds"),
        "wall_seconds": round(time.perf_counter() - started, 3),
        "argv": {k: v for k, v in vars(args).items() if k != "func"},
        **payload,
    }
    (run_dir / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")


def _features_for(name: str, cfg: dict) -> FeatureConfig:
    return replace(FEATURE_PRESETS[name], **cfg.get("features", {}))


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------


def cmd_gen_toy(args, cfg) -> Path:
    toy = {**DEFAULT_TOY, **cfg.get("toy", {})}
    spec = ToySpec(seed=args.seed, **toy)
    run_dir = new_run_dir(args.out, "gen-toy")
    manifest = write_toy_dataset(spec, run_dir)
    logger.info("wrote %d clips to %s", len(manifest.entries), run_dir)
    return run_dir, {"toy": asdict(spec), "counts": manifest.counts()}


def cmd_ingest(args, cfg) -> Path:
    run_dir = new_run_dir(args.out, "ingest")
    manifest = ingest_directory(args.root, run_dir, split_seed=args.seed, threshold_db=args.threshold_db)
    write_csv(run_dir / "skipped.csv", manifest.skipped, ["path", "reason"])
    return run_dir, {"counts": manifest.counts(), "skipped": len(manifest.skipped), "classes": manifest.classes}


def cmd_train(args, cfg) -> Path:
    manifest = DatasetManifest.load(args.manifest)
    fc = _features_for(args.preset, cfg)
    overrides = dict(cfg.get("model", {}))
    overrides.setdefault("n_classes", len(manifest.classes))
    spec = preset(args.preset, seed=args.seed, **overrides)
    tcfg = train_config(cfg, args.seed)
    model = build_model(spec)
    train_data = featurize_for(model, manifest.clips("train"), fc)
    test_data = featurize_for(model, manifest.clips("test"), fc)
    run_dir = new_run_dir(args.out, "train")
    hist = train(model, train_data, tcfg)
    rep = evaluate(model, test_data)
    save_checkpoint(model, run_dir / "checkpoint.npz", {
        "preset": args.preset, "features": fc.to_dict(), "train": tcfg.to_dict(),
        "manifest": str(Path(args.manifest).resolve()),
    })
    write_csv(run_dir / "history.csv", hist.rows)
    metrics = {"preset": args.preset, "params": count_params(model), "train_examples": len(train_data),
               "test_examples": rep.n_examples, "test_accuracy": rep.accuracy}
    write_csv(run_dir / "metrics.csv", [metrics])
    logger.info("test accuracy %.4f", rep.accuracy)
    return run_dir, {"metrics": metrics, "mean_epoch_seconds": hist.mean_epoch_seconds,
                     "model": spec.to_dict(), "features": fc.to_dict(), "train": tcfg.to_dict()}


def _load_for_eval(args):
    model, extra = load_checkpoint(args.checkpoint)
    fc = FeatureConfig(**extra["features"])
    manifest = DatasetManifest.load(args.manifest or extra["manifest"])
    return model, extra, fc, manifest


def cmd_eval(args, cfg) -> Path:
    model, extra, fc, manifest = _load_for_eval(args)
    data = featurize_for(model, manifest.clips("test"), fc)
    rep = evaluate(model, data)
    run_dir = new_run_dir(args.out, "eval")
    write_csv(run_dir / "eval.csv", [{"preset": extra.get("preset"), "examples": rep.n_examples,
                                      "accuracy": rep.accuracy}])
    conf = [{"true": i, **{f"pred_{j}": int(v) for j, v in enumerate(row)}} for i, row in enumerate(rep.confusion)]
    write_csv(run_dir / "confusion.csv", conf)
    return run_dir, {"accuracy": rep.accuracy, "checkpoint": str(Path(args.checkpoint).resolve())}


def cmd_sweep(args, cfg) -> Path:
    model, extra, fc, manifest = _load_for_eval(args)
    opts = {**SWEEP_DEFAULTS, **cfg.get("sweep", {})}
    started = time.perf_counter()
    clips = manifest.clips("test")
    if args.kind == "repr":
        rows = sweep_repr(model, clips, fc, opts["window_sizes"], opts["sample_rates"], jobs=args.jobs)
        columns = ["n_fft", "sample_rate", "status", "accuracy", "n_examples"]
    else:
        data = featurize_for(model, clips, fc)
        strategies = [s for s in opts["strategies"]]
        rows = sweep_subsample(model, data, opts["fractions"], strategies, opts["repeats"], seed=args.seed)
        columns = ["strategy", "fraction", "repeats", "mean", "std", "min", "max"]
    run_dir = new_run_dir(args.out, f"sweep-{args.kind}")
    write_csv(run_dir / "sweep.csv", rows, columns)
    return run_dir, {"kind": args.kind, "options": opts, "sweep_seconds": round(time.perf_counter() - started, 3)}


def _collect_runs(dirs) -> list[tuple[Path, dict]]:
    runs = []
    for d in dirs:
        d = Path(d)
        candidates = [d / "run.json"] if (d / "run.json").exists() else sorted(d.glob("*/run.json"))
        for p in candidates:
            runs.append((p.parent, json.loads(p.read_text())))
    if not runs:
        raise ParameterError(f"no runs found under {', '.join(map(str, dirs))}")
    versions = {r.get("schema_version") for _, r in runs}
    if len(versions) > 1:
        raise ParameterError(f"runs mix schema versions {sorted(map(str, versions))}")
    if versions != {RUN_SCHEMA_VERSION}:
        raise ParameterError(f"unsupported run schema version {versions.pop()}")
    return runs


def cmd_report(args, cfg) -> Path:
    runs = _collect_runs(args.runs)
    run_dir = new_run_dir(args.out, "report")
    summary, costs, attention = [], [], []
    for path, rec in runs:
        summary.append({"run": path.name, "verb": rec["verb"],
                        "test_accuracy": rec.get("metrics", {}).get("test_accuracy", rec.get("accuracy"))})
        ckpt = path / "checkpoint.npz"
        if rec["verb"] != "train" or not ckpt.exists():
            continue
        model, extra = load_checkpoint(ckpt)
        fc = FeatureConfig(**extra["features"])
        n_points = fc.bins * (fc.frames if fc.mode == "spectrogram" else 1)
        row = cost_table({path.name: model}, {path.name: n_points})[0]
        costs.append({"run": path.name, "preset": extra.get("preset"), **row})
        if model.input_kind == "cloud":
            manifest = DatasetManifest.load(extra["manifest"])
            clip = manifest.clips("test")[0]
            cloud = featurize_for(model, [clip], fc).inputs[0]
            w = attention_weights(model, cloud)
            for p, wi in zip(cloud.points, w):
                attention.append({"run": path.name, "label": cloud.label,
                                  **({"t": p[0]} if cloud.dim == 3 else {}), "f": p[-2], "m": p[-1], "weight": wi})
    write_csv(run_dir / "summary.csv", summary, ["run", "verb", "test_accuracy"])
    if costs:
        write_csv(run_dir / "costs.csv", costs)
    if attention:
        write_csv(run_dir / "attention.csv", attention)
    # the full-size presets' cost ordering, independent of what was trained
    ref = {name: build_model(preset(name)) for name in ("fst", "fb", "tst3", "cnn")}
    ref_rows = cost_table(ref, {"fst": 1025, "tst3": 5130})
    by = {r["model"]: r for r in ref_rows}
    for r in ref_rows:
        r["smaller_than_baseline"] = {"fst": by["fst"]["params"] < by["fb"]["params"],
                                      "tst3": by["tst3"]["params"] < by["cnn"]["params"]}.get(r["model"], "")
    write_csv(run_dir / "preset_costs.csv", ref_rows)
    merged = {"schema_version": RUN_SCHEMA_VERSION, "runs": {p.name: rec for p, rec in runs},
              "costs": costs, "preset_costs": ref_rows}
    (run_dir / "report.json").write_text(json.dumps(merged, indent=2, sort_keys=True, default=str) + "\n")
    return run_dir, {"runs": [str(p) for p, _ in runs]}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with [toy] [model] [features] [train] [sweep] tables")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="runs", help="parent directory for the new run directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pcaudio", description="Point-cloud audio classification experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("gen-toy", parents=[common], help="synthesize a band-noise dataset")
    s.set_defaults(func=cmd_gen_toy)

    s = sub.add_parser("ingest", parents=[common], help="trim and index a directory of class folders")
    s.add_argument("root")
    s.add_argument("--threshold-db", type=float, default=-60.0)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", parents=[common], help="train a model on a manifest")
    s.add_argument("manifest")
    s.add_argument("--preset", required=True, choices=sorted(PRESETS))
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    s.add_argument("checkpoint")
    s.add_argument("manifest", nargs="?")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", parents=[common], help="window/sample-rate or subsampling sweep")
    s.add_argument("checkpoint")
    s.add_argument("manifest", nargs="?")
    s.add_argument("--kind", choices=["repr", "subsample"], required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", parents=[common], help="summarize run directories")
    s.add_argument("runs", nargs="+")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = time.perf_counter()
    try:
        cfg = load_config(args.config)
        run_dir, payload = args.func(args, cfg)
    except (ParameterError, TrainingDiverged, FileNotFoundError, ValueError) as exc:
        print(f"pcaudio {args.verb}: error: {exc}", file=sys.stderr)
        return 2
    write_run_record(run_dir, args.verb, args, payload, started)
    print(run_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
