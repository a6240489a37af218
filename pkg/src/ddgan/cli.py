"""Command-line front end.

Subcommands write their artifacts plus ``<command>.manifest.json`` into the
output directory.  Exit codes: 0 success, 2 usage or validation error,
3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import __version__
from .data import Dataset, Domain, ZeroShotSplit, load_embeddings, load_features, make_split, \
    save_features, synth_dataset
from .errors import DDGANError, TrainingError
from .networks import ModelBundle, NetworkConfig, load_checkpoint, save_checkpoint
from .retrieval import evaluate, export_embeddings
from .training import TrainConfig, synthesize_unseen, train_phase1, train_phase2_retrain, write_history

log = logging.getLogger("ddgan")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
MODES = ("inductive", "transductive")


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- run config

@dataclass
class RunConfig:
    """Everything a training stage needs, loadable from JSON.

    Top-level keys are the fields below plus any :class:`TrainConfig` field;
    ``network`` holds :class:`NetworkConfig` overrides (widths are inferred
    from the data when absent).
    """

    features: str | None = None
    embeddings: str | None = None
    split: str | None = None
    out_dir: str = "run"
    mode: str = "transductive"
    network: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    _OWN = ("features", "embeddings", "split", "out_dir", "mode", "network")

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict):
            raise UsageError("run config must be a JSON object")
        train_keys = set(TrainConfig.field_names()) - {"transductive"}
        unknown = sorted(set(obj) - set(cls._OWN) - train_keys)
        if unknown:
            raise UsageError(f"unknown run config keys: {', '.join(unknown)}")
        net_keys = {f.name for f in fields(NetworkConfig)}
        bad_net = sorted(set(obj.get("network", {})) - net_keys)
        if bad_net:
            raise UsageError(f"unknown network keys: {', '.join(bad_net)}")
        own = {k: obj[k] for k in cls._OWN if k in obj}
        cfg = cls(**own, train={k: v for k, v in obj.items() if k in train_keys})
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot read run config {path}: {exc.strerror}") from exc
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None

    def validate(self):
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {self.mode!r}")

    def train_config(self, **overrides):
        merged = {**self.train, **{k: v for k, v in overrides.items() if v is not None}}
        merged["transductive"] = self.mode == "transductive"
        return TrainConfig(**merged)

    def to_json(self):
        return {"features": self.features, "embeddings": self.embeddings, "split": self.split,
                "out_dir": self.out_dir, "mode": self.mode, "network": self.network, **self.train}


def _run_config(args):
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for key in ("features", "embeddings", "split"):
        if getattr(args, key, None) is not None:
            setattr(cfg, key, getattr(args, key))
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    if getattr(args, "mode", None) is not None:
        cfg.mode = args.mode
    for flag, key in _TRAIN_FLAGS:
        value = getattr(args, flag, None)
        if value is not None:
            cfg.train[key] = value
    cfg.validate()
    return cfg


_TRAIN_FLAGS = (
    ("seed", "seed"), ("lr", "learning_rate"), ("batch_size", "batch_size"),
    ("d_steps", "d_steps_per_g_step"), ("ugan_wiring", "ugan_wiring"),
    ("checkpoint_every", "checkpoint_every"), ("iterations", "iterations_per_epoch"),
)


# ---------------------------------------------------------------- helpers

def _require(*paths):
    for p in paths:
        if p is None:
            raise UsageError("missing required input path")
        if not Path(p).is_file():
            raise FileNotFoundError(f"input file not found: {p}")


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_dir, command, inputs, outputs, seed=None, config=None):
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
        "created": {"unix_time": time.time()},
    }
    path = Path(out_dir) / f"{command}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_inputs(cfg, need_split=True):
    _require(cfg.features, cfg.embeddings, *([cfg.split] if need_split else []))
    records = load_features(cfg.features, expected_dim=None)
    if not records:
        raise UsageError(f"{cfg.features}: no feature rows")
    dataset = Dataset(records)
    split = ZeroShotSplit.load(cfg.split) if need_split else None
    labels = sorted(split.labels if split else dataset.label_set())
    embeddings = load_embeddings(cfg.embeddings, labels, dim=None)
    return dataset, split, embeddings


def _network(cfg, dataset, embeddings):
    opts = {"feature_dim": dataset.features.shape[1], "embed_dim": embeddings.dim, **cfg.network}
    return NetworkConfig(**opts)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    if args.classes < 2:
        raise UsageError("--classes must be at least 2")
    if args.per_class < 1 or args.dim < 1:
        raise UsageError("--per-class and --dim must be positive")
    if not 0 <= args.unseen < args.classes:
        raise UsageError("--unseen must be in [0, classes)")
    syn = synth_dataset(args.classes, args.per_class, args.dim, args.offset, args.noise, args.seed,
                        embed_dim=args.embed_dim, class_rank=args.class_rank)
    out = _out_dir(args.out)
    split = make_split([r.label for r in syn.records], args.unseen, args.seed)
    paths = [out / "features.csv", out / "embeddings.txt", out / "split.json"]
    save_features(syn.records, paths[0])
    syn.embeddings.save(paths[1])
    split.save(paths[2])
    _write_manifest(out, "gen-data", [], paths, seed=args.seed, config={
        k: getattr(args, k) for k in ("classes", "per_class", "dim", "unseen", "offset", "noise",
                                      "class_rank", "embed_dim")})
    print(f"{len(syn.records)} feature rows, {len(syn.embeddings)} embeddings, "
          f"{len(split.seen)} seen / {len(split.unseen)} unseen classes -> {out}")


def cmd_train(args):
    cfg = _run_config(args)
    train_cfg = cfg.train_config(epochs_phase1=args.epochs)
    dataset, split, embeddings = _load_inputs(cfg)
    out = _out_dir(cfg.out_dir)
    net = _network(cfg, dataset, embeddings)
    model = ModelBundle(net, seed=train_cfg.seed)
    unlabeled = dataset.filter(labels=split.unseen) if train_cfg.transductive else None
    result = train_phase1(model, dataset, split, embeddings, train_cfg, unlabeled=unlabeled,
                          checkpoint_dir=out if train_cfg.checkpoint_every else None)
    ckpt, hist = out / "phase1.ckpt", out / "phase1_history.csv"
    save_checkpoint(model, ckpt, meta={"phase": 1, "epochs": train_cfg.epochs_phase1, "seed": train_cfg.seed})
    write_history(result.history, hist)
    _write_manifest(out, "train", [cfg.features, cfg.embeddings, cfg.split], [ckpt, hist],
                    seed=train_cfg.seed, config={**cfg.to_json(), "resolved": train_cfg.to_json()})
    print(f"phase 1: {len(result.history)} epochs -> {ckpt}")


def cmd_synthesize(args):
    cfg = _run_config(args)
    _require(args.checkpoint)
    overrides = {}
    if args.per_class is not None:
        overrides["unseen_samples_per_class_per_domain"] = args.per_class
    train_cfg = cfg.train_config(**overrides)
    dataset, split, embeddings = _load_inputs(cfg)
    model, _ = load_checkpoint(args.checkpoint)
    records = synthesize_unseen(model, embeddings, split, dataset, train_cfg)
    out = _out_dir(cfg.out_dir)
    path = out / "synthetic_unseen.csv"
    save_features(records, path)
    _write_manifest(out, "synthesize-unseen", [args.checkpoint, cfg.features, cfg.embeddings, cfg.split],
                    [path], seed=train_cfg.seed, config=cfg.to_json())
    print(f"{len(records)} generated rows -> {path}")


def cmd_retrain(args):
    cfg = _run_config(args)
    _require(args.checkpoint, args.synthetic)
    train_cfg = cfg.train_config(epochs_phase2=args.epochs, reinit_phase2=args.reinit or None)
    dataset, split, embeddings = _load_inputs(cfg)
    synthetic = load_features(args.synthetic, expected_dim=dataset.features.shape[1])
    model, meta = load_checkpoint(args.checkpoint)
    out = _out_dir(cfg.out_dir)
    result = train_phase2_retrain(model, dataset, synthetic, embeddings, train_cfg, split=split,
                                  checkpoint_dir=out if train_cfg.checkpoint_every else None)
    ckpt, hist = out / "phase2.ckpt", out / "phase2_history.csv"
    if train_cfg.epochs_phase2:
        meta = {"phase": 2, "epochs": train_cfg.epochs_phase2, "seed": train_cfg.seed}
    save_checkpoint(result.model, ckpt, meta=meta)
    write_history(result.history, hist)
    _write_manifest(out, "retrain", [args.checkpoint, args.synthetic, cfg.features, cfg.embeddings, cfg.split],
                    [ckpt, hist], seed=train_cfg.seed, config={**cfg.to_json(), "resolved": train_cfg.to_json()})
    print(f"phase 2: {len(result.history)} epochs -> {ckpt}")


def cmd_evaluate(args):
    _require(args.checkpoint, args.queries, args.gallery, *([args.split] if args.split else []))
    if args.unseen_only and not args.split:
        raise UsageError("--unseen-only needs --split")
    model, _ = load_checkpoint(args.checkpoint)
    dim = model.config.feature_dim
    queries = [r for r in load_features(args.queries, dim) if r.domain is Domain.SKETCH]
    gallery = [r for r in load_features(args.gallery, dim) if r.domain is Domain.SHAPE]
    if args.unseen_only:
        split = ZeroShotSplit.load(args.split)
        if not split.unseen:
            raise UsageError("split has no unseen classes")
        queries = [r for r in queries if r.label in split.unseen]
        gallery = [r for r in gallery if r.label in split.unseen]
    if not queries:
        raise UsageError("no sketch queries left to evaluate")
    if not gallery:
        raise UsageError("no 3D shapes left in the gallery")
    report = evaluate(model, queries, gallery, metric=args.metric)
    out = _out_dir(args.out)
    paths = [out / "metrics.json", out / "metrics.csv", out / "pr_curve.csv", out / "per_query.csv"]
    report.save_json(paths[0])
    report.save_csv(paths[1])
    report.save_pr_csv(paths[2])
    report.save_per_query_csv(paths[3])
    _write_manifest(out, "evaluate", [args.checkpoint, args.queries, args.gallery]
                    + ([args.split] if args.split else []), paths,
                    config={"unseen_only": args.unseen_only, "metric": args.metric})
    scalars = report.scalars()
    print("  ".join(f"{k:>6}" for k in scalars))
    print("  ".join(f"{v:6.3f}" for v in scalars.values()))


def cmd_export(args):
    _require(args.checkpoint, args.features)
    model, _ = load_checkpoint(args.checkpoint)
    records = load_features(args.features, model.config.feature_dim)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_embeddings(model, records, out)
    print(f"{len(records)} rows -> {out}")


# ---------------------------------------------------------------- parser

def _add_run_flags(p, epochs_help=None):
    p.add_argument("--config", help="run config JSON (flags override it)")
    p.add_argument("--features")
    p.add_argument("--embeddings")
    p.add_argument("--split")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--d-steps", type=int)
    p.add_argument("--iterations", type=int, help="iterations per epoch")
    p.add_argument("--ugan-wiring", choices=("corrected", "literal"))
    p.add_argument("--checkpoint-every", type=int)
    if epochs_help:
        p.add_argument("--epochs", type=int, help=epochs_help)


def build_parser():
    parser = argparse.ArgumentParser(prog="ddgan", description="Zero-shot sketch to 3D shape retrieval.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=12)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--unseen", type=int, default=3)
    p.add_argument("--offset", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--class-rank", type=int)
    p.add_argument("--embed-dim", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="phase 1 training")
    _add_run_flags(p, "phase-1 epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize-unseen", help="generate unseen-class features")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--per-class", type=int, help="samples per unseen class and domain")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("retrain", help="phase 2 retraining on real seen plus generated unseen data")
    _add_run_flags(p, "phase-2 epochs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--synthetic", required=True)
    p.add_argument("--reinit", action="store_true", help="reinitialize instead of continuing phase-1 weights")
    p.set_defaults(func=cmd_retrain)

    p = sub.add_parser("evaluate", help="rank shapes for sketches and score")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--split")
    p.add_argument("--unseen-only", action="store_true")
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-embeddings", help="write invariant and specific features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except TrainingError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (ValueError, KeyError, DDGANError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
