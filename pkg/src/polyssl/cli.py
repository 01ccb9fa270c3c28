"""Command-line entry point.

Subcommands: gen-data, pretrain, finetune, sweep, ablate, subgraph-dump,
encode, eval. Options come from an optional TOML/JSON config file plus
flags; flags win. Exit codes: 0 success, 2 configuration error, 3
runtime failure. Every artifact directory gets a run.json embedding the
config hash, seed, and code version.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import load_checkpoint, save_checkpoint
from .data import (
    CLASS_LABEL,
    REGRESSION_LABEL,
    generate_synthetic_dataset,
    read_dataset,
    write_dataset,
)
from .encoder import EncoderConfig
from .encoding import K_NODE, node_rwse
from .errors import ConfigError, PolysslError
from .partition import make_pool, select_context_and_targets
from .pipeline import (
    DEFAULT_FRACTIONS,
    FinetuneConfig,
    SplitManifest,
    ablation_run,
    config_hash,
    finetune,
    label_fraction_sweep,
    make_splits,
    sample_subset,
    summarize_sweep,
    write_ablation_csv,
    write_sweep_csv,
)
from .pretrain import PretrainConfig, export_sections, prepare_graphs, pretrain
from .rng import derive_seed

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def _load_config_file(path: str) -> dict:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        if p.suffix == ".json":
            return json.loads(raw.decode())
        return tomllib.loads(raw.decode())
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc


def _merge_config(args, parser_keys, allowed):
    """File values overridden by explicitly passed flags; unknown keys rejected."""
    merged = {}
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        for key, value in file_cfg.items():
            if key not in allowed:
                raise ConfigError(f"unknown config key '{key}'")
            merged[key] = value
    for key in parser_keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _encoder_cfg(cfg: dict) -> EncoderConfig:
    return EncoderConfig(
        depth=int(cfg.get("depth", 3)),
        hidden=int(cfg.get("hidden", 64)),
    )


def _pretrain_cfg(cfg: dict) -> PretrainConfig:
    try:
        return PretrainConfig(
            context_frac=float(cfg.get("context_frac", 0.6)),
            target_frac=float(cfg.get("target_frac", 0.1)),
            n_targets=int(cfg.get("n_targets", 1)),
            algorithm=cfg.get("algorithm", "random_walk"),
            epochs=int(cfg.get("epochs", 100)),
            batch_size=int(cfg.get("batch_size", 32)),
            lr=float(cfg.get("lr", 1e-3)),
            lambda_pseudo=float(cfg.get("lambda_pseudo", 1.0)),
            mask_rate=float(cfg.get("mask_rate", 0.15)),
            mode=cfg.get("mode", "ema"),
            seed=int(cfg.get("seed", 0)),
            encoder=_encoder_cfg(cfg),
        )
    except PolysslError as exc:
        raise ConfigError(str(exc)) from exc


def _finetune_cfg(cfg: dict, task: str) -> FinetuneConfig:
    label = cfg.get("label") or (REGRESSION_LABEL if task == "regression" else CLASS_LABEL)
    try:
        return FinetuneConfig(
            task=task,
            label=label,
            n_classes=int(cfg.get("n_classes", 4)),
            epochs=int(cfg.get("epochs", 200)),
            batch_size=int(cfg.get("batch_size", 16)),
            lr=float(cfg.get("lr", 1e-3)),
            patience=int(cfg.get("patience", 20)),
            seed=int(cfg.get("seed", 0)),
            encoder=_encoder_cfg(cfg),
        )
    except PolysslError as exc:
        raise ConfigError(str(exc)) from exc


def _out_dir(args, cfg=None, seed=None) -> Path:
    """Explicit --out wins; otherwise runs/<config-hash>/<seed>/."""
    if getattr(args, "out", None):
        out = Path(args.out)
    else:
        out = Path("runs") / config_hash(cfg or {}) / str(seed if seed is not None else 0)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_stamp(out: Path, command: str, cfg: dict, seed):
    stamp = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "version": __version__,
    }
    (out / "run.json").write_text(json.dumps(stamp, sort_keys=True, indent=1, default=str))
    return stamp


def _load_records(args):
    return read_dataset(args.dataset)


def _split_records(records, seed):
    manifest = make_splits(records, seed)
    by_id = {rec.id: rec for rec in records}
    return manifest, by_id


# --- subcommands ---------------------------------------------------------------


def cmd_gen_data(args):
    keys = ("n", "seed", "family")
    cfg = _merge_config(args, keys, set(keys))
    records = generate_synthetic_dataset(
        int(cfg.get("n", 1000)), int(cfg.get("seed", 0)), cfg.get("family", "A")
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(records, out)
    meta = {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": int(cfg.get("seed", 0)),
        "version": __version__,
        "n_records": len(records),
    }
    Path(str(out) + ".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    print(f"wrote {len(records)} records to {out}")
    return 0


PRETRAIN_KEYS = (
    "context_frac", "target_frac", "n_targets", "algorithm", "epochs",
    "batch_size", "lr", "lambda_pseudo", "mask_rate", "mode", "seed",
    "depth", "hidden", "split_seed",
)


def cmd_pretrain(args):
    cfg = _merge_config(args, PRETRAIN_KEYS, set(PRETRAIN_KEYS))
    pre_cfg = _pretrain_cfg(cfg)
    records = _load_records(args)
    split_seed = int(cfg.get("split_seed", pre_cfg.seed))
    manifest, by_id = _split_records(records, split_seed)
    out = _out_dir(args, cfg, pre_cfg.seed)
    stamp = _write_run_stamp(out, "pretrain", cfg, pre_cfg.seed)
    manifest.save(out / "splits.json")

    result = pretrain(
        [by_id[i] for i in manifest.pretrain_ids], pre_cfg, log_path=out / "training_log.jsonl"
    )
    meta = {
        "config_hash": stamp["config_hash"],
        "seed": pre_cfg.seed,
        "version": __version__,
        "encoder": asdict(pre_cfg.encoder),
        "mw_mean": result.mw_mean,
        "mw_std": result.mw_std,
        "collapsed": result.collapsed,
    }
    save_checkpoint(out / "pretrained.ckpt", export_sections(result), meta)
    final = result.history[-1]
    print(
        f"pretrained {pre_cfg.epochs} epochs: jepa_loss={final['jepa_loss']:.6f} "
        f"emb_std={final['emb_std']:.4f} collapsed={result.collapsed}"
    )
    return 0


FINETUNE_KEYS = (
    "task", "label", "n_classes", "epochs", "batch_size", "lr", "patience",
    "seed", "depth", "hidden", "n_labels", "split_seed", "use_pl_head",
)


def _load_pretrained(path, expect_encoder: EncoderConfig):
    sections, meta = load_checkpoint(path)
    enc_meta = meta.get("encoder")
    if enc_meta and (
        int(enc_meta["depth"]) != expect_encoder.depth
        or int(enc_meta["hidden"]) != expect_encoder.hidden
    ):
        raise ConfigError(
            f"checkpoint encoder {enc_meta} does not match configured "
            f"depth={expect_encoder.depth} hidden={expect_encoder.hidden}"
        )
    return sections.get("target"), sections.get("pl_head")


def cmd_finetune(args):
    cfg = _merge_config(args, FINETUNE_KEYS, set(FINETUNE_KEYS))
    task = cfg.get("task", "regression")
    ft_cfg = _finetune_cfg(cfg, task)
    records = _load_records(args)
    split_seed = int(cfg.get("split_seed", ft_cfg.seed))
    manifest, by_id = _split_records(records, split_seed)
    out = _out_dir(args, cfg, ft_cfg.seed)
    stamp = _write_run_stamp(out, "finetune", cfg, ft_cfg.seed)

    encoder_params, pl_head = None, None
    if args.checkpoint:
        encoder_params, pl_head = _load_pretrained(args.checkpoint, ft_cfg.encoder)
    if not cfg.get("use_pl_head"):
        pl_head = None

    pool = [by_id[i] for i in manifest.finetune_ids]
    n_labels = int(cfg.get("n_labels", len(pool)))
    n_labels = min(n_labels, len(pool))
    if task == "classification":
        subset = sample_subset(
            pool, n_labels, derive_seed("finetune-subset", ft_cfg.seed),
            task=task, label=ft_cfg.label, n_classes=ft_cfg.n_classes,
        )
    else:
        subset = sample_subset(pool, n_labels, derive_seed("finetune-subset", ft_cfg.seed))
    test_records = [by_id[i] for i in manifest.test_ids]
    encoder, head, report = finetune(
        subset, test_records, ft_cfg, encoder_params=encoder_params, pl_head=pl_head
    )

    save_checkpoint(
        out / "finetuned.ckpt",
        {"encoder": encoder, "head": head},
        {
            "config_hash": stamp["config_hash"],
            "seed": ft_cfg.seed,
            "version": __version__,
            "task": task,
            "label": ft_cfg.label,
            "n_classes": ft_cfg.n_classes,
            "encoder": asdict(ft_cfg.encoder),
            "pretrained": bool(args.checkpoint),
        },
    )
    (out / "metrics.json").write_text(json.dumps(asdict(report), sort_keys=True, indent=1))
    print(json.dumps(asdict(report), sort_keys=True))
    return 0


SWEEP_KEYS = (
    "task", "label", "n_classes", "epochs", "batch_size", "lr", "patience",
    "seed", "depth", "hidden", "fractions", "repeats", "folds", "split_seed",
    "use_pl_head", "jobs",
)


def cmd_sweep(args):
    cfg = _merge_config(args, SWEEP_KEYS, set(SWEEP_KEYS))
    task = cfg.get("task", "regression")
    ft_cfg = _finetune_cfg(cfg, task)
    records = _load_records(args)
    manifest, _ = _split_records(records, int(cfg.get("split_seed", ft_cfg.seed)))
    out = _out_dir(args, cfg, ft_cfg.seed)
    _write_run_stamp(out, "sweep", cfg, ft_cfg.seed)

    encoder_params, pl_head = None, None
    if args.checkpoint:
        encoder_params, pl_head = _load_pretrained(args.checkpoint, ft_cfg.encoder)
    if not cfg.get("use_pl_head"):
        pl_head = None

    fractions = cfg.get("fractions") or list(DEFAULT_FRACTIONS)
    if isinstance(fractions, str):
        fractions = [float(f) for f in fractions.split(",")]
    runs = label_fraction_sweep(
        records,
        manifest,
        ft_cfg,
        fractions=fractions,
        repeats=int(cfg.get("repeats", 3)),
        folds=int(cfg.get("folds", 5)),
        pretrained_encoder=encoder_params,
        pl_head=pl_head,
        jobs=int(cfg.get("jobs", 1)),
    )
    write_sweep_csv(runs, out / "sweep.csv")
    summary = summarize_sweep(runs)
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1))
    print(f"{len(runs)} runs -> {out / 'sweep.csv'}")
    return 0


ABLATE_KEYS = PRETRAIN_KEYS + ("knob", "values", "n_seeds", "n_labels", "ft_epochs")


def cmd_ablate(args):
    cfg = _merge_config(args, ABLATE_KEYS, set(ABLATE_KEYS))
    pre_cfg = _pretrain_cfg(cfg)
    ft_cfg = _finetune_cfg(
        {
            "seed": cfg.get("seed", 0),
            "depth": cfg.get("depth", 3),
            "hidden": cfg.get("hidden", 64),
            "epochs": cfg.get("ft_epochs", 200),
        },
        "regression",
    )
    knob = cfg.get("knob", "context_frac")
    values = cfg.get("values")
    if values is None:
        raise ConfigError("ablate requires 'values'")
    if isinstance(values, str):
        parts = values.split(",")
        if knob == "algorithm":
            values = parts
        elif knob == "n_targets":
            values = [int(v) for v in parts]
        else:
            values = [float(v) for v in parts]
    records = _load_records(args)
    manifest, _ = _split_records(records, int(cfg.get("split_seed", pre_cfg.seed)))
    out = _out_dir(args, cfg, pre_cfg.seed)
    _write_run_stamp(out, "ablate", cfg, pre_cfg.seed)
    table = ablation_run(
        records,
        manifest,
        knob,
        values,
        pre_cfg,
        ft_cfg,
        n_labels=int(cfg.get("n_labels", 64)),
        n_seeds=int(cfg.get("n_seeds", 3)),
    )
    (out / f"ablation_{knob}.json").write_text(json.dumps(table, sort_keys=True, indent=1))
    write_ablation_csv(table, out / f"ablation_{knob}.csv")
    print(f"ablation over {knob}: {len(table['rows'])} rows -> {out}")
    return 0


DUMP_KEYS = ("algorithm", "context_frac", "target_frac", "n_targets", "seed", "limit")


def cmd_subgraph_dump(args):
    cfg = _merge_config(args, DUMP_KEYS, set(DUMP_KEYS))
    records = _load_records(args)
    limit = int(cfg.get("limit", 0)) or len(records)
    algorithm = cfg.get("algorithm", "random_walk")
    context_frac = float(cfg.get("context_frac", 0.6))
    target_frac = float(cfg.get("target_frac", 0.1))
    m = int(cfg.get("n_targets", 1))
    seed = int(cfg.get("seed", 0))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for rec in records[:limit]:
            g = rec.build_graph()
            pool = make_pool(g, algorithm, target_frac, m, derive_seed("dump", seed, rec.id))
            sel = select_context_and_targets(
                pool, g, context_frac, target_frac, m, derive_seed("dump", seed, rec.id)
            )
            fh.write(
                json.dumps(
                    {
                        "graph_id": rec.id,
                        "context_nodes": list(sel.context.node_ids),
                        "targets": [list(t.node_ids) for t in sel.targets],
                        "meta": sel.meta,
                    },
                    sort_keys=True,
                )
            )
            fh.write("\n")
    print(f"wrote selections for {min(limit, len(records))} graphs to {out}")
    return 0


ENCODE_KEYS = ("seed", "depth", "hidden", "limit")


def cmd_encode(args):
    cfg = _merge_config(args, ENCODE_KEYS, set(ENCODE_KEYS))
    records = _load_records(args)
    limit = int(cfg.get("limit", 0)) or len(records)
    records = records[:limit]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.dump_pe:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["graph_id", "node"] + [f"pe{k}" for k in range(K_NODE)])
            for rec in records:
                pe = node_rwse(rec.build_graph(), K_NODE)
                for v in range(pe.shape[0]):
                    writer.writerow([rec.id, v] + [repr(float(x)) for x in pe[v]])
        print(f"wrote node PEs to {out}")
        return 0

    enc_cfg = _encoder_cfg(cfg)
    if args.checkpoint:
        encoder_params, _ = _load_pretrained(args.checkpoint, enc_cfg)
    else:
        from .encoder import init_encoder_params

        encoder_params = init_encoder_params(enc_cfg, ("encode-cli", int(cfg.get("seed", 0))))
    from .encoder import encode_nodes as _encode
    from .encoder import pool_graph as _pool

    graphs = prepare_graphs(records)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["graph_id"] + [f"e{k}" for k in range(enc_cfg.hidden)])
        for gd in graphs:
            emb = _pool(_encode(gd.tensors, encoder_params, enc_cfg)).data
            writer.writerow([gd.id] + [repr(float(x)) for x in emb])
    print(f"wrote embeddings to {out}")
    return 0


EVAL_KEYS = ("split_seed",)


def cmd_eval(args):
    cfg = _merge_config(args, EVAL_KEYS, set(EVAL_KEYS))
    sections, meta = load_checkpoint(args.model)
    records = _load_records(args)
    manifest, by_id = _split_records(records, int(cfg.get("split_seed", meta.get("seed", 0))))
    enc_meta = meta["encoder"]
    ft_cfg = FinetuneConfig(
        task=meta["task"],
        label=meta["label"],
        n_classes=int(meta.get("n_classes", 4)),
        seed=int(meta.get("seed", 0)),
        encoder=EncoderConfig(depth=int(enc_meta["depth"]), hidden=int(enc_meta["hidden"])),
    )
    from .pipeline import evaluate

    test_graphs = prepare_graphs([by_id[i] for i in manifest.test_ids])
    report = evaluate(
        test_graphs,
        sections["encoder"],
        sections["head"],
        ft_cfg,
        pretrained=bool(meta.get("pretrained")),
        n_train=0,
    )
    out = _out_dir(args, cfg, meta.get("seed", 0))
    (out / "metrics.json").write_text(json.dumps(asdict(report), sort_keys=True, indent=1))
    print(json.dumps(asdict(report), sort_keys=True))
    return 0


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyssl",
        description="Self-supervised pretraining on stochastic polymer graphs.",
    )
    parser.add_argument("--version", action="version", version=f"polyssl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, dataset=True, out=True, config=True, checkpoint=False, out_required=True):
        if dataset:
            p.add_argument("--dataset", required=True, help="JSONL dataset path")
        if out:
            p.add_argument(
                "--out",
                required=out_required,
                help="output path (default for run commands: runs/<config-hash>/<seed>/)",
            )
        if config:
            p.add_argument("--config", help="TOML or JSON config file; flags override")
        if checkpoint:
            p.add_argument("--checkpoint", help="pretrained checkpoint path")

    p = sub.add_parser("gen-data", help="generate a seeded synthetic dataset")
    add_common(p, dataset=False)
    p.add_argument("--n", type=int, help="number of records (default 1000)")
    p.add_argument("--seed", type=int, help="generator seed (default 0)")
    p.add_argument("--family", choices=("A", "B"), help="monomer library (default A)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    add_common(p, out_required=False)
    p.add_argument("--context-frac", dest="context_frac", type=float)
    p.add_argument("--target-frac", dest="target_frac", type=float)
    p.add_argument("--n-targets", dest="n_targets", type=int)
    p.add_argument("--algorithm", choices=("random_walk", "metis", "motif"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda-pseudo", dest="lambda_pseudo", type=float)
    p.add_argument("--mask-rate", dest="mask_rate", type=float)
    p.add_argument("--mode", choices=("ema", "joint"))
    p.add_argument("--seed", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised finetuning on labeled subset")
    add_common(p, checkpoint=True, out_required=False)
    p.add_argument("--task", choices=("regression", "classification"))
    p.add_argument("--label")
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--n-labels", dest="n_labels", type=int)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--use-pl-head", dest="use_pl_head", action="store_const", const=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("sweep", help="label-fraction ladder, pretrained vs fresh")
    add_common(p, checkpoint=True, out_required=False)
    p.add_argument("--task", choices=("regression", "classification"))
    p.add_argument("--label")
    p.add_argument("--fractions", help="comma-separated fractions of the dataset")
    p.add_argument("--repeats", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--use-pl-head", dest="use_pl_head", action="store_const", const=True)
    p.add_argument("--jobs", type=int, help="parallel sweep runs (default 1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="pretraining-knob ablation tables")
    add_common(p, out_required=False)
    p.add_argument("--knob", choices=("context_frac", "target_frac", "n_targets", "algorithm"))
    p.add_argument("--values", help="comma-separated knob values")
    p.add_argument("--n-seeds", dest="n_seeds", type=int)
    p.add_argument("--n-labels", dest="n_labels", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--ft-epochs", dest="ft_epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("subgraph-dump", help="emit context/target selections as JSON")
    add_common(p)
    p.add_argument("--algorithm", choices=("random_walk", "metis", "motif"))
    p.add_argument("--context-frac", dest="context_frac", type=float)
    p.add_argument("--target-frac", dest="target_frac", type=float)
    p.add_argument("--n-targets", dest="n_targets", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_subgraph_dump)

    p = sub.add_parser("encode", help="emit pooled embeddings (or PEs) as CSV")
    add_common(p, checkpoint=True)
    p.add_argument("--dump-pe", dest="dump_pe", action="store_true", help="emit node PEs instead")
    p.add_argument("--seed", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", help="evaluate a finetuned model on the test split")
    add_common(p, out_required=False)
    p.add_argument("--model", required=True, help="finetuned checkpoint")
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PolysslError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
