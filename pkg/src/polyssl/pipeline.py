"""Split management, supervised finetuning, sweeps, and ablation tables."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autodiff import (
    Adam,
    ParamSet,
    Tensor,
    assert_finite,
    clip_global_norm,
    cross_entropy,
    mse,
    reshape,
)
from .data import CLASS_LABEL, N_CLASSES, REGRESSION_LABEL
from .encoder import EncoderConfig, encode_nodes, init_encoder_params, pool_graph
from .errors import (
    ClassAbsent,
    DatasetTooSmall,
    FractionTooSmall,
    LabelMissing,
    ShapeMismatch,
)
from .metrics import macro_auprc, r2, rmse
from .pretrain import GRAD_CLIP_NORM, PretrainConfig, apply_head, init_head, prepare_graphs, pretrain
from .rng import derive_seed, make_rng

# Fraction ladder mirroring the scarce-to-plateau sweep.
DEFAULT_FRACTIONS = (0.004, 0.008, 0.016, 0.04, 0.08, 0.24)


def dataset_hash(records) -> str:
    h = hashlib.blake2b(digest_size=16)
    for rec in records:
        h.update(
            json.dumps(
                [rec.id, rec.monomer_a, rec.monomer_b, list(rec.stoichiometry), rec.architecture, rec.labels],
                sort_keys=True,
            ).encode()
        )
        h.update(b"\n")
    return h.hexdigest()


def config_hash(obj) -> str:
    return hashlib.blake2b(
        json.dumps(obj, sort_keys=True, default=str).encode(), digest_size=8
    ).hexdigest()


@dataclass
class SplitManifest:
    dataset_hash: str
    pretrain_ids: list[str]
    finetune_ids: list[str]
    test_ids: list[str]
    seed: int

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))


def make_splits(records, seed: int) -> SplitManifest:
    """Seeded shuffle then a 40/40/20 contiguous cut; idempotent per (dataset, seed)."""
    n = len(records)
    if n < 5:
        raise DatasetTooSmall(f"need at least 5 records, got {n}")
    n_pre = int(math.floor(0.4 * n + 0.5))
    n_fine = int(math.floor(0.4 * n + 0.5))
    order = make_rng("splits", seed).permutation(n)
    ids = [records[int(i)].id for i in order]
    return SplitManifest(
        dataset_hash=dataset_hash(records),
        pretrain_ids=ids[:n_pre],
        finetune_ids=ids[n_pre : n_pre + n_fine],
        test_ids=ids[n_pre + n_fine :],
        seed=seed,
    )


@dataclass(frozen=True)
class FinetuneConfig:
    task: str = "regression"
    label: str = REGRESSION_LABEL
    n_classes: int = N_CLASSES
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    patience: int = 20
    val_fraction: float = 0.1
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise ShapeMismatch(f"unknown task {self.task!r}")


@dataclass
class MetricReport:
    task: str
    r2: float | None
    rmse: float | None
    auprc_macro: float | None
    auprc_per_class: dict | None
    n_train: int
    n_test: int
    seed: int
    config_hash: str
    pretrained: bool

    def headline(self) -> float:
        return self.r2 if self.task == "regression" else self.auprc_macro


def _require_labels(records, label):
    for rec in records:
        if label not in rec.labels:
            raise LabelMissing(f"record {rec.id} lacks label {label!r}")


def _batch_loss(graphs, encoder, head, cfg: FinetuneConfig):
    losses = []
    for gd in graphs:
        emb = pool_graph(encode_nodes(gd.tensors, encoder, cfg.encoder))
        out = apply_head(head, emb)
        if cfg.task == "regression":
            losses.append(mse(out, Tensor(np.array([float(gd.labels[cfg.label])]))))
        else:
            logits = reshape(out, (1, -1))
            losses.append(cross_entropy(logits, [int(gd.labels[cfg.label])]))
    total = losses[0]
    for piece in losses[1:]:
        total = total + piece
    return total * (1.0 / len(losses))


def predict(graphs, encoder, head, cfg: FinetuneConfig):
    """Regression values or class-probability rows for prepared graphs."""
    outs = []
    for gd in graphs:
        emb = pool_graph(encode_nodes(gd.tensors, encoder, cfg.encoder))
        out = apply_head(head, emb).data
        if cfg.task == "regression":
            outs.append(float(out[0]))
        else:
            z = out - out.max()
            p = np.exp(z)
            outs.append(p / p.sum())
    return np.asarray(outs)


def transfer_head(source: ParamSet, fresh: ParamSet) -> ParamSet:
    """Copy layers with matching shapes from a pretrained head into a fresh one."""
    for name, p in fresh.items():
        if name in source and source[name].shape == p.shape:
            np.copyto(p.data, source[name].data)
    return fresh


def finetune(
    train_records,
    test_records,
    cfg: FinetuneConfig,
    encoder_params: ParamSet | None = None,
    pl_head: ParamSet | None = None,
    val_records=None,
):
    """End-to-end supervised training of encoder plus readout head.

    encoder_params seeds the encoder with pretrained weights (cloned, then
    updated jointly with the head); None trains from scratch. Returns
    (encoder, head, MetricReport) with test-split metrics.
    """
    _require_labels(train_records, cfg.label)
    _require_labels(test_records, cfg.label)
    pretrained = encoder_params is not None
    encoder = encoder_params.clone() if pretrained else init_encoder_params(
        cfg.encoder, ("finetune", cfg.seed)
    )
    n_out = 1 if cfg.task == "regression" else cfg.n_classes
    head = init_head(cfg.encoder, ("finetune", cfg.seed), n_out=n_out)
    if pl_head is not None:
        transfer_head(pl_head, head)

    train_graphs = prepare_graphs(train_records)
    test_graphs = prepare_graphs(test_records)

    if val_records is not None:
        val_graphs = prepare_graphs(val_records)
    else:
        n_val = int(round(cfg.val_fraction * len(train_graphs)))
        if n_val >= 1 and len(train_graphs) - n_val >= 2:
            order = make_rng("finetune-val", cfg.seed).permutation(len(train_graphs))
            val_graphs = [train_graphs[int(i)] for i in order[:n_val]]
            train_graphs = [train_graphs[int(i)] for i in order[n_val:]]
        else:
            val_graphs = []

    optimizers = [Adam(encoder, lr=cfg.lr), Adam(head, lr=cfg.lr)]
    best_val = math.inf
    best_state = None
    stale = 0
    n_batches = max(1, math.ceil(len(train_graphs) / cfg.batch_size))
    for epoch in range(cfg.epochs):
        order = make_rng("finetune-order", cfg.seed, epoch).permutation(len(train_graphs))
        for b in range(n_batches):
            batch = [train_graphs[int(i)] for i in order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            if not batch:
                continue
            encoder.zero_grad()
            head.zero_grad()
            loss = _batch_loss(batch, encoder, head, cfg)
            assert_finite(loss, "finetune loss")
            loss.backward()
            clip_global_norm([encoder, head], GRAD_CLIP_NORM)
            for opt in optimizers:
                opt.step()
        if val_graphs:
            val_loss = _batch_loss(val_graphs, encoder, head, cfg).item()
            if val_loss < best_val - 1e-12:
                best_val = val_loss
                best_state = (encoder.clone(), head.clone())
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if best_state is not None:
        encoder.copy_from(best_state[0])
        head.copy_from(best_state[1])

    report = evaluate(test_graphs, encoder, head, cfg, pretrained=pretrained, n_train=len(train_records))
    return encoder, head, report


def evaluate(test_graphs, encoder, head, cfg: FinetuneConfig, pretrained: bool, n_train: int) -> MetricReport:
    preds = predict(test_graphs, encoder, head, cfg)
    labels = [gd.labels[cfg.label] for gd in test_graphs]
    if cfg.task == "regression":
        y = np.asarray(labels, dtype=np.float64)
        return MetricReport(
            task=cfg.task,
            r2=r2(y, preds),
            rmse=rmse(y, preds),
            auprc_macro=None,
            auprc_per_class=None,
            n_train=n_train,
            n_test=len(test_graphs),
            seed=cfg.seed,
            config_hash=config_hash(asdict(cfg)),
            pretrained=pretrained,
        )
    macro, per_class = macro_auprc(np.asarray(labels, dtype=int), preds)
    return MetricReport(
        task=cfg.task,
        r2=None,
        rmse=None,
        auprc_macro=macro,
        auprc_per_class=per_class,
        n_train=n_train,
        n_test=len(test_graphs),
        seed=cfg.seed,
        config_hash=config_hash(asdict(cfg)),
        pretrained=pretrained,
    )


def sample_subset(pool, n: int, seed, task: str = "regression", label: str = CLASS_LABEL, n_classes: int = N_CLASSES):
    """Seeded sample without replacement; stratified by class for classification.

    A classification sample missing a class triggers one stratified
    resample with a derived seed, then ClassAbsent.
    """
    if n > len(pool):
        raise FractionTooSmall(f"cannot sample {n} from pool of {len(pool)}")
    if task == "regression":
        order = make_rng("subset", seed).permutation(len(pool))
        return [pool[int(i)] for i in order[:n]]
    for attempt in range(2):
        rng = make_rng("subset", seed, attempt)
        by_class = {}
        for idx in rng.permutation(len(pool)):
            by_class.setdefault(int(pool[int(idx)].labels[label]), []).append(pool[int(idx)])
        take = {c: 0 for c in by_class}
        for c in by_class:
            take[c] = min(len(by_class[c]), max(1, int(math.floor(n * len(by_class[c]) / len(pool)))))
        while sum(take.values()) > n:
            biggest = max(take, key=lambda c: take[c])
            take[biggest] -= 1
        order = sorted(by_class)
        while sum(take.values()) < n:
            for c in order:
                if sum(take.values()) == n:
                    break
                if take[c] < len(by_class[c]):
                    take[c] += 1
        subset = [rec for c in order for rec in by_class[c][: take[c]]]
        if {int(r.labels[label]) for r in subset} >= set(range(n_classes)):
            return subset
    raise ClassAbsent(f"pool cannot provide all {n_classes} classes")


@dataclass
class SweepRun:
    fraction: float
    repeat: int
    fold: int
    arm: str
    report: MetricReport

    def row(self) -> dict:
        return {
            "fraction": self.fraction,
            "repeat": self.repeat,
            "fold": self.fold,
            "arm": self.arm,
            "task": self.report.task,
            "r2": self.report.r2,
            "rmse": self.report.rmse,
            "auprc_macro": self.report.auprc_macro,
            "n_train": self.report.n_train,
            "n_test": self.report.n_test,
            "seed": self.report.seed,
            "config_hash": self.report.config_hash,
            "pretrained": self.report.pretrained,
        }


# Task table shared with forked sweep workers (index-addressed).
_SWEEP_TASKS: list = []


def _run_sweep_task(index: int) -> SweepRun:
    fraction, repeat, fold, arm, train, val, test_records, run_cfg, encoder, head = _SWEEP_TASKS[index]
    _, _, report = finetune(
        train, test_records, run_cfg, encoder_params=encoder, pl_head=head, val_records=val
    )
    return SweepRun(fraction, repeat, fold, arm, report)


def label_fraction_sweep(
    records,
    manifest: SplitManifest,
    cfg: FinetuneConfig,
    fractions=DEFAULT_FRACTIONS,
    repeats: int = 3,
    folds: int = 5,
    pretrained_encoder: ParamSet | None = None,
    pl_head: ParamSet | None = None,
    min_subset: int = 8,
    jobs: int = 1,
) -> list[SweepRun]:
    """Pretrained-vs-fresh finetuning across the labeled-data ladder.

    Subsets come from the finetune pool, extended with the pretraining
    pool for fractions above 40% (the test split is never touched).
    Independent (fraction, repeat, fold, arm) runs execute in parallel
    when jobs > 1; output order is deterministic either way.
    """
    if any(not 0.0 < f <= 0.8 for f in fractions):
        raise FractionTooSmall("fractions must lie in (0, 0.8]")
    by_id = {rec.id: rec for rec in records}
    fine_pool = [by_id[i] for i in manifest.finetune_ids]
    big_pool = fine_pool + [by_id[i] for i in manifest.pretrain_ids]
    test_records = [by_id[i] for i in manifest.test_ids]

    tasks = []
    for fraction in fractions:
        n_sample = int(round(fraction * len(records)))
        if n_sample < min_subset:
            raise FractionTooSmall(
                f"fraction {fraction} yields {n_sample} < {min_subset} records"
            )
        pool = fine_pool if n_sample <= len(fine_pool) else big_pool
        for repeat in range(repeats):
            subset = sample_subset(
                pool,
                n_sample,
                derive_seed("sweep-subset", cfg.seed, fraction, repeat),
                task=cfg.task,
                label=cfg.label if cfg.task == "classification" else CLASS_LABEL,
                n_classes=cfg.n_classes,
            ) if cfg.task == "classification" else sample_subset(
                pool, n_sample, derive_seed("sweep-subset", cfg.seed, fraction, repeat)
            )
            fold_order = make_rng("sweep-folds", cfg.seed, fraction, repeat).permutation(len(subset))
            for fold in range(folds):
                if folds > 1:
                    val_idx = set(int(i) for i in fold_order[fold::folds])
                    train = [subset[i] for i in range(len(subset)) if i not in val_idx]
                    val = [subset[i] for i in sorted(val_idx)]
                else:
                    train, val = subset, None
                for arm in ("pretrained", "fresh"):
                    if arm == "pretrained" and pretrained_encoder is None:
                        continue
                    run_cfg = replace(
                        cfg, seed=derive_seed("sweep-run", cfg.seed, fraction, repeat, fold, arm)
                    )
                    tasks.append(
                        (
                            fraction, repeat, fold, arm, train, val, test_records, run_cfg,
                            pretrained_encoder if arm == "pretrained" else None,
                            pl_head if arm == "pretrained" else None,
                        )
                    )

    global _SWEEP_TASKS
    _SWEEP_TASKS = tasks
    try:
        if jobs > 1:
            import multiprocessing

            with multiprocessing.get_context("fork").Pool(jobs) as worker_pool:
                return worker_pool.map(_run_sweep_task, range(len(tasks)))
        return [_run_sweep_task(i) for i in range(len(tasks))]
    finally:
        _SWEEP_TASKS = []


SWEEP_COLUMNS = (
    "fraction", "repeat", "fold", "arm", "task", "r2", "rmse",
    "auprc_macro", "n_train", "n_test", "seed", "config_hash", "pretrained",
)


def write_sweep_csv(runs, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for run in runs:
            writer.writerow({k: _csv_value(v) for k, v in run.row().items()})


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def read_sweep_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append(row)
    return rows


def summarize_sweep(runs) -> list[dict]:
    """Mean and std of the headline metric per (fraction, arm)."""
    groups: dict[tuple, list[float]] = {}
    for run in runs:
        groups.setdefault((run.fraction, run.arm), []).append(run.report.headline())
    out = []
    for (fraction, arm), values in sorted(groups.items()):
        arr = np.asarray(values, dtype=np.float64)
        out.append(
            {
                "fraction": fraction,
                "arm": arm,
                "metric_mean": float(arr.mean()),
                "metric_std": float(arr.std()),
                "n_runs": len(values),
            }
        )
    return out


ABLATION_KNOBS = ("context_frac", "target_frac", "n_targets", "algorithm")
ABLATION_COLUMNS = ("value", "r2_mean", "r2_std", "rmse_mean", "rmse_std")


def ablation_run(
    records,
    manifest: SplitManifest,
    knob: str,
    values,
    pre_cfg: PretrainConfig,
    ft_cfg: FinetuneConfig,
    n_labels: int = 64,
    n_seeds: int = 3,
) -> dict:
    """One table row per knob value plus the no-pretraining reference row.

    Every row reports mean and std of test R2 and RMSE over n_seeds
    scarce-label finetuning runs.
    """
    if knob not in ABLATION_KNOBS:
        raise ShapeMismatch(f"unknown ablation knob {knob!r}")
    by_id = {rec.id: rec for rec in records}
    pre_records = [by_id[i] for i in manifest.pretrain_ids]
    fine_pool = [by_id[i] for i in manifest.finetune_ids]
    test_records = [by_id[i] for i in manifest.test_ids]

    def scarce(seed_i):
        return sample_subset(fine_pool, n_labels, derive_seed("ablate-subset", ft_cfg.seed, seed_i))

    def run_arm(seed_i, encoder_params):
        run_cfg = replace(ft_cfg, seed=derive_seed("ablate-run", ft_cfg.seed, knob, seed_i))
        _, _, report = finetune(scarce(seed_i), test_records, run_cfg, encoder_params=encoder_params)
        return report

    def stats(reports):
        r2s = np.array([rep.r2 for rep in reports])
        rmses = np.array([rep.rmse for rep in reports])
        return {
            "r2_mean": float(r2s.mean()),
            "r2_std": float(r2s.std()),
            "rmse_mean": float(rmses.mean()),
            "rmse_std": float(rmses.std()),
        }

    rows = []
    fresh = [run_arm(i, None) for i in range(n_seeds)]
    rows.append({"value": "no_pretraining", "italic": True, **stats(fresh)})

    for value in values:
        reports = []
        for i in range(n_seeds):
            cfg_i = replace(
                pre_cfg,
                **{knob: value},
                seed=derive_seed("ablate-pre", pre_cfg.seed, knob, value, i),
            )
            result = pretrain(pre_records, cfg_i)
            cfg_run = replace(ft_cfg, seed=derive_seed("ablate-run", ft_cfg.seed, knob, value, i))
            _, _, report = finetune(
                scarce(i),
                test_records,
                cfg_run,
                encoder_params=result.model.target,
                pl_head=result.model.pl_head,
            )
            reports.append(report)
        rows.append({"value": str(value), "italic": False, **stats(reports)})

    return {"knob": knob, "columns": list(ABLATION_COLUMNS), "rows": rows}


def write_ablation_csv(table, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=("italic",) + ABLATION_COLUMNS)
        writer.writeheader()
        for row in table["rows"]:
            writer.writerow(
                {
                    "italic": row["italic"],
                    **{k: _csv_value(row[k]) for k in ABLATION_COLUMNS},
                }
            )
