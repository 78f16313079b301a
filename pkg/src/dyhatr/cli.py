"""``dyhatr`` command line: synth, train, eval, embed, ablate.

Every command is a pure function of its input files, config and seed.
Outputs carry no timestamps or timings so reruns match byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, ContractError, DataError, NumericError, ShapeError
from .evaluation import evaluate, format_table, make_splits, report_json, report_records
from .graph import DynamicGraph, FormatConfig, NodeFeatures, load_attributes, load_snapshots, merge_snapshots
from .model import VARIANTS, TrainConfig, embed, load_checkpoint, save_checkpoint, train
from .synth import SyntheticSpec, write_synthetic

log = logging.getLogger("dyhatr")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
ABLATION_ORDER = ("HAT-C", "HAT-GRU", "HAT-LSTM", "HAT-T", "HAT-TGRU", "HAT-TLSTM")


@dataclass
class ExperimentConfig:
    """One JSON document describing a run.

    ``dataset`` is resolved relative to the config file.  The last snapshot
    of the dataset is held out for evaluation; the rest, optionally merged in
    groups of ``group_size``, is the training sequence.
    """

    dataset: str
    format: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    split_seed: int = 0
    n_repeats: int = 5
    feature: str = "hadamard"
    group_size: int = 1
    attributes: str | None = None
    feature_mode: str = "id"
    variants: list[str] = field(default_factory=lambda: list(ABLATION_ORDER))
    seeds: list[int] = field(default_factory=lambda: [0])
    out_dir: str = "out"

    def validate(self) -> None:
        if self.feature not in ("hadamard", "dot"):
            raise ConfigError(f"feature must be hadamard or dot, got {self.feature!r}")
        if self.group_size < 1:
            raise ConfigError("group_size must be >= 1")
        if self.n_repeats < 1:
            raise ConfigError("n_repeats must be >= 1")
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown:
            raise ConfigError(f"unknown variants {unknown}; choose from {sorted(VARIANTS)}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        self.train.validate()

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["train"] = self.train.to_dict()
        d["variants"] = list(self.variants)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "dataset" not in d:
            raise ConfigError("config needs a 'dataset' path")
        d = dict(d)
        d["train"] = TrainConfig.from_dict(d.get("train", {}))
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self) -> str:
        """sha256 of the canonical JSON, ignoring where outputs go."""
        d = self.to_dict()
        d.pop("out_dir")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def load_experiment(path) -> tuple[ExperimentConfig, Path]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: no such config file") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(raw), path.parent


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    train_cfg = cfg.train
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
        cfg = replace(cfg, seeds=[args.seed])
    if args.mask is not None:
        train_cfg = replace(train_cfg, mask=args.mask)
    if args.rnn is not None:
        train_cfg = train_cfg.with_rnn(args.rnn)
    cfg = replace(cfg, train=train_cfg)
    if args.feature is not None:
        cfg = replace(cfg, feature=args.feature)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    if getattr(args, "variants", None):
        cfg = replace(cfg, variants=[v.strip() for v in args.variants.split(",") if v.strip()])
    cfg.validate()
    return cfg


@dataclass
class Experiment:
    config: ExperimentConfig
    graph: DynamicGraph
    train_graph: DynamicGraph
    features: NodeFeatures | None
    out: Path

    @property
    def eval_snapshot(self):
        return self.graph.snapshots[-1]

    def splits(self):
        return make_splits(self.eval_snapshot, self.config.split_seed, self.config.n_repeats)


def prepare(cfg: ExperimentConfig, base: Path) -> Experiment:
    data_path = (base / cfg.dataset) if not Path(cfg.dataset).is_absolute() else Path(cfg.dataset)
    if not data_path.exists():
        raise DataError(f"{data_path}: dataset not found")
    g = load_snapshots(data_path, FormatConfig.from_dict(cfg.format))
    if g.T < 2:
        raise DataError(f"{data_path}: need at least 2 snapshots (train + held-out), found {g.T}")
    history = g.subgraph(0, g.T - 1)
    if cfg.group_size > 1:
        history = merge_snapshots(history, cfg.group_size)
    features = None
    if cfg.feature_mode != "id":
        if cfg.attributes is None:
            raise ConfigError(f"feature_mode {cfg.feature_mode!r} needs an attributes file")
        attrs = load_attributes(base / cfg.attributes, g)
        features = NodeFeatures(cfg.feature_mode, cfg.train.feature_dim, attrs)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return Experiment(cfg, g, history, features, out)


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def threads() -> int:
    raw = os.environ.get("DYHATR_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"DYHATR_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    try:
        spec = SyntheticSpec.from_json(Path(args.config).read_text(encoding="utf-8")) if args.config else SyntheticSpec()
    except FileNotFoundError as exc:
        raise ConfigError(f"{args.config}: no such spec file") from exc
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    paths = write_synthetic(spec, args.out or "synthetic")
    for p in paths.values():
        log.info("wrote %s", p)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, base = load_experiment(args.config)
    cfg = apply_overrides(cfg, args)
    exp = prepare(cfg, base)
    splits = exp.splits()
    result = train(exp.train_graph, cfg.train, exp.features, split=splits[0])
    meta = {"config_hash": cfg.hash(), "best_epoch": result.best_epoch, "T": exp.train_graph.T}
    save_checkpoint(exp.out / "checkpoint.bin", result.params, cfg.train, meta)
    metrics = {"config_hash": cfg.hash(), "best_epoch": result.best_epoch, "history": result.history}
    _write(exp.out / "metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    _write(exp.out / "config.json", cfg.to_json())
    return EXIT_OK


def _checkpoint_path(args, cfg: ExperimentConfig) -> Path:
    return Path(args.checkpoint) if args.checkpoint else Path(cfg.out_dir) / "checkpoint.bin"


def _restore(args):
    cfg, base = load_experiment(args.config)
    cfg = apply_overrides(cfg, args)
    exp = prepare(cfg, base)
    params, tcfg, header = load_checkpoint(_checkpoint_path(args, cfg), exp.train_graph, exp.features)
    return exp, params, tcfg


def cmd_eval(args) -> int:
    exp, params, tcfg = _restore(args)
    emb = embed(exp.train_graph, params, tcfg)
    result = evaluate(emb, exp.splits(), exp.config.feature, workers=threads())
    h = exp.config.hash()
    _write(exp.out / "eval.json", report_json(result, h))
    _write(exp.out / "eval.txt", format_table([(tcfg.variant, result)]))
    return EXIT_OK


def write_embeddings(path: Path, ids: list[str], emb: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for nid, row in zip(ids, emb):
            fh.write(nid + " " + " ".join(repr(float(x)) for x in row) + "\n")


def cmd_embed(args) -> int:
    exp, params, tcfg = _restore(args)
    emb = embed(exp.train_graph, params, tcfg)
    write_embeddings(exp.out / "embeddings.txt", list(exp.graph.node_ids), emb)
    return EXIT_OK


def run_ablation(exp: Experiment) -> list[tuple[str, dict]]:
    """Train and evaluate every requested variant over every seed.

    Per variant, the reported std pools the per-seed repetition stds and the
    spread of the per-seed means.
    """
    cfg = exp.config
    splits = exp.splits()
    rows = []
    for variant in cfg.variants:
        per_seed = []
        for seed in cfg.seeds:
            tcfg = replace(cfg.train, variant=variant, seed=seed)
            result = train(exp.train_graph, tcfg, exp.features, split=splits[0])
            per_seed.append(evaluate(result.embeddings, splits, cfg.feature, workers=threads()))
        summary = {"n_repeats": sum(r["n_repeats"] for r in per_seed), "seeds": list(cfg.seeds)}
        for m in ("auroc", "auprc"):
            vals = np.array([run[m] for r in per_seed for run in r["runs"]])
            summary[m] = {"mean": float(vals.mean()), "std": float(vals.std())}
        rows.append((variant, summary))
    return rows


def cmd_ablate(args) -> int:
    cfg, base = load_experiment(args.config)
    cfg = apply_overrides(cfg, args)
    exp = prepare(cfg, base)
    rows = run_ablation(exp)
    h = cfg.hash()
    doc = {"variants": {label: report_records(r, h) for label, r in rows}}
    _write(exp.out / "ablation.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _write(exp.out / "ablation.txt", format_table(rows))
    sys.stdout.write(format_table(rows))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "embed": cmd_embed, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dyhatr", description="Dynamic heterogeneous graph embedding experiments")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="experiment config JSON (synthetic spec JSON for synth)")
    p.add_argument("--seed", type=int, help="override the training seed (synth: generator seed)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mask", choices=["eq7", "causal"], help="temporal attention mask orientation")
    p.add_argument("--rnn", choices=["gru", "lstm"], help="recurrent cell for RNN-based variants")
    p.add_argument("--feature", choices=["hadamard", "dot"], help="link feature for the classifier")
    p.add_argument("--checkpoint", help="checkpoint to read (eval/embed); default <out>/checkpoint.bin")
    p.add_argument("--variants", help="comma-separated variant list (ablate)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command != "synth" and not args.config:
        print(f"dyhatr {args.command}: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, ShapeError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
