"""Command-line entry point: ``signgt {train,ablate,gen,homophily,attn-dump,eval}``.

Exit codes: 0 success, 2 configuration or input error, 3 training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .data import (
    NODE_SPLIT,
    GRAPH_SPLIT,
    NodeDataset,
    export_run,
    generate_csbm,
    load_graph_dataset,
    load_node_dataset,
    read_graph_dir,
    write_attention_tsv,
    write_json,
    write_node_dataset,
)
from .errors import SignGTError, TrainingFailure
from .graph import homophily, stratified_split
from .model import VARIANTS, ModelConfig, SignGTModel, attention_rows, encode, load_model, save_model
from .training import (
    TrainConfig,
    default_model_config,
    evaluate,
    fit,
    grid_search,
    split_grid_point,
)

logger = logging.getLogger("signgt")

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3
MAX_K = 5


class ConfigError(Exception):
    pass


@dataclass
class RunSpec:
    task: str = "node"
    data: Optional[str] = None
    generator: Optional[dict] = None
    num_layers: int = 1
    d_model: int = 64
    num_heads: int = 2
    k: int = 1
    variant: str = "signed"
    scale_scores: bool = True
    norm: str = "pre"
    dropout: float = 0.1
    learning_rate: float = 5e-3
    weight_decay: float = 5e-4
    max_epochs: int = 500
    patience: int = 50
    out: str = "runs"
    seeds: list = field(default_factory=lambda: [0])
    grid: Optional[dict] = None

    def validate(self) -> "RunSpec":
        if self.task not in ("node", "graph"):
            raise ConfigError(f"task must be 'node' or 'graph', got {self.task!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not isinstance(self.k, int) or not 0 <= self.k <= MAX_K:
            raise ConfigError(f"k must be an integer in [0, {MAX_K}], got {self.k!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if (self.data is None) == (self.generator is None):
            raise ConfigError("exactly one of 'data' and 'generator' must be given")
        if self.generator is not None and self.task != "node":
            raise ConfigError("the generator only produces node datasets")
        try:
            self.model_config(1, 2)
            self.train_config(0)
        except (SignGTError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    def model_config(self, in_dim: int, num_classes: int, **overrides) -> ModelConfig:
        kw = dict(
            num_layers=self.num_layers,
            d_model=self.d_model,
            num_heads=self.num_heads,
            k=self.k,
            variant=self.variant,
            scale_scores=self.scale_scores,
            norm=self.norm,
            dropout=self.dropout,
            task=self.task,
        )
        kw.update(overrides)
        return ModelConfig(in_dim=in_dim, num_classes=num_classes, **kw)

    def train_config(self, seed: int, **overrides) -> TrainConfig:
        kw = dict(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=seed,
        )
        kw.update(overrides)
        return TrainConfig(**kw)


_FLAG_MAP = {
    "variant": "variant",
    "k": "k",
    "layers": "num_layers",
    "dmodel": "d_model",
    "heads": "num_heads",
    "out": "out",
    "task": "task",
    "data": "data",
    "epochs": "max_epochs",
    "patience": "patience",
    "lr": "learning_rate",
}


def build_spec(args) -> RunSpec:
    """Config file first, then command-line flags on top."""
    values: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a JSON object")
        known = {f.name for f in fields(RunSpec)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for flag, key in _FLAG_MAP.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if getattr(args, "seed", None):
        values["seeds"] = list(args.seed)
    try:
        spec = RunSpec(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return spec.validate()


def load_dataset(spec: RunSpec, seed: int):
    """The dataset for one run; the split is redrawn from ``seed``."""
    if spec.generator is not None:
        try:
            ds = generate_csbm(**spec.generator)
        except TypeError as exc:
            raise ConfigError(f"bad generator parameters: {exc}") from None
        return NodeDataset(ds.graph, stratified_split(ds.graph.labels, NODE_SPLIT, seed), ds.name)
    path = Path(spec.data)
    if not path.is_dir():
        raise ConfigError(f"dataset directory not found: {path}")
    if spec.task == "graph":
        return load_graph_dataset(path, GRAPH_SPLIT, seed)
    return load_node_dataset(path, NODE_SPLIT, seed)


def _threads() -> int:
    raw = os.environ.get("SIGNGT_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"SIGNGT_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def _map_seeds(fn, seeds):
    workers = min(_threads(), len(seeds))
    if workers == 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


def run_one(spec: RunSpec, seed: int, out_dir: Optional[Path], variant: Optional[str] = None) -> dict:
    dataset = load_dataset(spec, seed)
    model_kw: dict = {}
    train_kw: dict = {}
    if spec.grid:
        def make(**kw):
            return default_model_config(
                dataset, **{**_model_kwargs(spec, variant), **kw}
            )

        point, _ = grid_search(make, dataset, spec.train_config(seed), spec.grid, seeds=(seed,))
        model_kw, train_kw = split_grid_point(point)
    model_kw = {**_model_kwargs(spec, variant), **model_kw}
    model = SignGTModel.init(default_model_config(dataset, **model_kw), seed)
    model, history = fit(model, dataset, spec.train_config(seed, **train_kw))
    test_acc = evaluate(model, dataset, "test")
    if out_dir is not None:
        seed_dir = out_dir / f"seed_{seed}"
        attention, reps = None, None
        if isinstance(dataset, NodeDataset):
            attention = {0: attention_rows(model, dataset.graph, 0)}
            reps = encode(model, dataset.graph, "eval").data
        export_run(history, attention, reps, seed_dir)
        save_model(model, seed_dir / "model.npz")
    return {
        "seed": seed,
        "test_acc": test_acc,
        "val_acc": history.best_val_acc,
        "best_epoch": history.best_epoch,
        "epochs": history.epochs,
        "selected": {**model_kw, **train_kw},
    }


def _model_kwargs(spec: RunSpec, variant: Optional[str]) -> dict:
    return dict(
        num_layers=spec.num_layers,
        d_model=spec.d_model,
        num_heads=spec.num_heads,
        k=spec.k,
        variant=variant or spec.variant,
        scale_scores=spec.scale_scores,
        norm=spec.norm,
        dropout=spec.dropout,
        task=spec.task,
    )


def _aggregate(runs: list) -> dict:
    accs = [r["test_acc"] for r in runs]
    return {
        "test_accuracies": accs,
        "mean": float(np.mean(accs)),
        "stdev": float(statistics.stdev(accs)) if len(accs) > 1 else 0.0,
        "runs": runs,
    }


def _summary(command: str, spec: RunSpec, results: dict) -> dict:
    gain = None
    if all(v in results for v in VARIANTS):
        gain = results["signed"]["mean"] - max(results["original"]["mean"], results["tanh"]["mean"])
    return {
        "command": command,
        "task": spec.task,
        "seeds": list(spec.seeds),
        "spec": asdict(spec),
        "results": results,
        "gain": gain,
    }


def cmd_train(spec: RunSpec) -> dict:
    out = Path(spec.out)
    runs = _map_seeds(lambda s: run_one(spec, s, out), spec.seeds)
    summary = _summary("train", spec, {spec.variant: _aggregate(runs)})
    write_json(out / "summary.json", summary)
    r = summary["results"][spec.variant]
    print(f"{spec.variant}: test accuracy {100 * r['mean']:.2f} ± {100 * r['stdev']:.2f} over {len(runs)} seeds")
    return summary


def format_table(summary: dict) -> str:
    lines = [f"{'variant':<10}{'mean':>10}{'stdev':>10}"]
    for v in VARIANTS:
        r = summary["results"][v]
        lines.append(f"{v:<10}{100 * r['mean']:>10.2f}{100 * r['stdev']:>10.2f}")
    lines.append(f"{'gain':<10}{100 * summary['gain']:>+10.2f}")
    return "\n".join(lines)


def cmd_ablate(spec: RunSpec) -> dict:
    out = Path(spec.out)
    results = {}
    for variant in VARIANTS:
        runs = _map_seeds(lambda s: run_one(spec, s, out / variant, variant), spec.seeds)
        results[variant] = _aggregate(runs)
    summary = _summary("ablate", spec, results)
    write_json(out / "summary.json", summary)
    print(format_table(summary))
    return summary


def cmd_gen(params: dict, out_dir) -> float:
    ds = generate_csbm(**params)
    write_node_dataset(ds, out_dir)
    h = homophily(ds.graph) if ds.graph.n_edges else float("nan")
    print(f"n={ds.graph.n} edges={ds.graph.n_edges} homophily={h:.2f}")
    return h


def cmd_homophily(path) -> float:
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"dataset directory not found: {p}")
    h = homophily(read_graph_dir(p))
    print(f"{h:.2f}")
    return h


def cmd_attn_dump(spec: RunSpec, node_id: int, variants=None, checkpoint=None) -> list:
    out = Path(spec.out)
    seed = spec.seeds[0]
    dataset = load_dataset(spec, seed)
    if not isinstance(dataset, NodeDataset):
        raise ConfigError("attn-dump needs a node dataset")
    if not 0 <= node_id < dataset.graph.n:
        raise ConfigError(f"node id {node_id} outside [0, {dataset.graph.n})")
    written = []
    if checkpoint is not None:
        model = load_model(checkpoint)
        models = [(model.config.variant, model)]
    else:
        models = []
        for variant in variants or VARIANTS:
            m = SignGTModel.init(default_model_config(dataset, **_model_kwargs(spec, variant)), seed)
            m, _ = fit(m, dataset, spec.train_config(seed))
            models.append((variant, m))
    for variant, model in models:
        path = out / variant / f"attention_node_{node_id}.tsv"
        write_attention_tsv(path, attention_rows(model, dataset.graph, node_id))
        written.append(path)
        print(path)
    return written


def cmd_eval(spec: RunSpec, checkpoint, part: str = "test") -> float:
    model = load_model(checkpoint)
    acc = evaluate(model, load_dataset(spec, spec.seeds[0]), part)
    print(json.dumps({"checkpoint": str(checkpoint), "part": part, "accuracy": acc}))
    return acc


# ---------------------------------------------------------------------------
# argument parsing


def _run_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--seed", type=int, action="append", metavar="N")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--k", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--dmodel", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--task", choices=("node", "graph"))
    p.add_argument("--data", metavar="DIR", help="dataset directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="signgt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    flags = _run_flags()

    sub.add_parser("train", parents=[flags], help="train over one or more seeds")
    sub.add_parser("ablate", parents=[flags], help="compare signed / original / tanh attention")

    gen = sub.add_parser("gen", help="write a contextual SBM dataset")
    gen.add_argument("--out", required=True, metavar="DIR")
    gen.add_argument("--n", type=int, default=1000)
    gen.add_argument("--classes", type=int, default=2)
    gen.add_argument("--p-in", type=float, default=0.02)
    gen.add_argument("--p-out", type=float, default=0.002)
    gen.add_argument("--feat-dim", type=int, default=16)
    gen.add_argument("--feat-signal", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)

    hom = sub.add_parser("homophily", help="print edge homophily of a node dataset")
    hom.add_argument("path")

    dump = sub.add_parser("attn-dump", parents=[flags], help="dump one node's attention rows")
    dump.add_argument("--node", type=int, default=0)
    dump.add_argument("--checkpoint", metavar="PATH")

    ev = sub.add_parser("eval", parents=[flags], help="evaluate a saved model")
    ev.add_argument("--checkpoint", required=True, metavar="PATH")
    ev.add_argument("--part", choices=("train", "val", "test"), default="test")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse usage errors already exit with 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "gen":
            cmd_gen(
                dict(
                    n=args.n,
                    num_classes=args.classes,
                    p_in=args.p_in,
                    p_out=args.p_out,
                    feat_dim=args.feat_dim,
                    feat_signal=args.feat_signal,
                    seed=args.seed,
                ),
                args.out,
            )
        elif args.command == "homophily":
            cmd_homophily(args.path)
        else:
            spec = build_spec(args)
            if args.command == "train":
                cmd_train(spec)
            elif args.command == "ablate":
                cmd_ablate(spec)
            elif args.command == "attn-dump":
                variants = [args.variant] if args.variant else None
                cmd_attn_dump(spec, args.node, variants, args.checkpoint)
            elif args.command == "eval":
                cmd_eval(spec, args.checkpoint, args.part)
    except TrainingFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ConfigError, SignGTError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
