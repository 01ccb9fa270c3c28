"""Synthetic datasets and dataset file IO.

Records are stored as JSONL, one record per line:
``{"id", "monomer_a", "monomer_b", "stoichiometry": [fa, fb],
"architecture", "labels": {name: number}}``. Graphs are rebuilt on read.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .chem import parse_monomer
from .errors import InvalidCount, IoFailure, LabelMissing, SchemaViolation
from .polymer import ARCHITECTURES, PolymerGraph, build_polymer, graph_statistics
from .rng import make_rng

# Two disjoint monomer libraries sized so polymer graphs land at 16-30
# heavy atoms, each mixing aromatic and aliphatic chemistry. Family A is
# the pretraining chemistry, family B a held-out chemistry for transfer
# experiments.
MONOMER_LIBRARY_A = (
    "[*]CC([*])c1ccccc1",
    "[*]c1ccc(-c2ccc([*])cc2)cc1",
    "[*]c1ccc2cc([*])ccc2c1",
    "[*]OC(=O)c1ccc([*])cc1",
    "[*]c1ccc(-c2ccc([*])s2)s1",
    "[*]CC([*])c1ccc(C#N)cc1",
    "[*]Nc1ccc(Cc2ccc([*])cc2)cc1",
    "[*]c1ccc(S(=O)(=O)c2ccc([*])cc2)cc1",
    "[*]CCCCCCCCCC[*]",
    "[*]CC(C)CC(C)CC[*]",
    "[*]CCOCCOCC[*]",
    "[*]CC([*])C(=O)OCCCC",
    "[*]CCSCCSCC[*]",
    "[*]CC(CC)CC(CC)C[*]",
    "[*]CCC(=O)OCCC[*]",
    "[*]CCN(C)CCN(C)CC[*]",
)

MONOMER_LIBRARY_B = (
    "[*]CCCCCCCC[*]",
    "[*]CC(C)(C)CC([*])C",
    "[*]c1ccc(-c2ccc([*])o2)cc1",
    "[*]CC([*])C(=O)Nc1ccccc1",
    "[*]C(=O)c1ccc([*])cc1",
    "[*]CC([*])OC(=O)C",
    "[*]c1cc([*])cc(C)c1",
    "[*]Cc1ccccc1C[*]",
    "[*]CC([*])COCc1ccccc1",
    "[*]c1cnc([*])cn1",
    "[*]CCOC(=O)CCC(=O)OCC[*]",
    "[*]CCC(C)SCC[*]",
)

LIBRARIES = {"A": MONOMER_LIBRARY_A, "B": MONOMER_LIBRARY_B}

# Canonical ratios plus two intermediates; wide enough for variety while
# keeping the stoichiometry-vs-architecture confound mild.
STOICHIOMETRIES = ((0.5, 0.5), (0.25, 0.75), (0.75, 0.25))
STOICH_GRID = ((0.2, 0.8), (0.35, 0.65), (0.5, 0.5), (0.65, 0.35), (0.8, 0.2))

REGRESSION_LABEL = "y"
CLASS_LABEL = "cls"
N_CLASSES = 4


@dataclass
class PolymerRecord:
    id: str
    monomer_a: str
    monomer_b: str
    stoichiometry: tuple[float, float]
    architecture: str
    labels: dict = field(default_factory=dict)
    graph: PolymerGraph | None = None

    def build_graph(self) -> PolymerGraph:
        if self.graph is None:
            self.graph = build_polymer(
                parse_monomer(self.monomer_a),
                parse_monomer(self.monomer_b),
                self.stoichiometry,
                self.architecture,
            )
        return self.graph


def raw_regression_value(g: PolymerGraph) -> float:
    """Smooth label mixing stoichiometry, topology, and stochastic weights."""
    s = graph_statistics(g)
    return (
        2.0 * s["frac_a"]
        + s["mean_degree"]
        + 0.5 * s["aromatic_fraction"]
        + 0.3 * s["stochastic_weight_sq"]
    )


def generate_synthetic_dataset(n: int, seed: int, family: str = "A") -> list[PolymerRecord]:
    """Seeded dataset of n polymers with standardized regression labels
    and their quartile class buckets."""
    if n < 1:
        raise InvalidCount(f"need n >= 1, got {n}")
    library = LIBRARIES[family]
    records = []
    raws = np.zeros(n)
    for i in range(n):
        rng = make_rng("synthetic", family, seed, i)
        ia = int(rng.integers(len(library)))
        ib = int(rng.integers(len(library) - 1))
        if ib >= ia:
            ib += 1
        stoich = STOICH_GRID[int(rng.integers(len(STOICH_GRID)))]
        arch = ARCHITECTURES[int(rng.integers(len(ARCHITECTURES)))]
        rec = PolymerRecord(
            id=f"poly-{family}-{seed}-{i:05d}",
            monomer_a=library[ia],
            monomer_b=library[ib],
            stoichiometry=stoich,
            architecture=arch,
        )
        rec.build_graph()
        raws[i] = raw_regression_value(rec.graph)
        records.append(rec)

    mean = float(raws.mean())
    std = float(raws.std())
    if std == 0.0:
        std = 1.0
    standardized = (raws - mean) / std
    cuts = np.quantile(standardized, [0.25, 0.5, 0.75]) if n > 1 else np.zeros(3)
    for rec, value in zip(records, standardized):
        rec.labels[REGRESSION_LABEL] = float(value)
        rec.labels[CLASS_LABEL] = int(np.searchsorted(cuts, value, side="left"))
    return records


_REQUIRED_FIELDS = ("id", "monomer_a", "monomer_b", "stoichiometry", "architecture", "labels")


def _validate_record(obj, line_no):
    if not isinstance(obj, dict):
        raise SchemaViolation("record is not an object", line=line_no)
    for key in _REQUIRED_FIELDS:
        if key not in obj:
            raise SchemaViolation(f"missing field {key!r}", line=line_no)
    if not isinstance(obj["id"], str):
        raise SchemaViolation("'id' must be a string", line=line_no)
    for key in ("monomer_a", "monomer_b"):
        if not isinstance(obj[key], str):
            raise SchemaViolation(f"{key!r} must be a string", line=line_no)
    st = obj["stoichiometry"]
    if not (isinstance(st, list) and len(st) == 2 and all(isinstance(v, (int, float)) for v in st)):
        raise SchemaViolation("'stoichiometry' must be [fa, fb]", line=line_no)
    if obj["architecture"] not in ARCHITECTURES:
        raise SchemaViolation(f"unknown architecture {obj['architecture']!r}", line=line_no)
    labels = obj["labels"]
    if not isinstance(labels, dict) or not all(
        isinstance(v, (int, float)) for v in labels.values()
    ):
        raise SchemaViolation("'labels' must map names to numbers", line=line_no)


def write_dataset(records, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(
                    json.dumps(
                        {
                            "id": rec.id,
                            "monomer_a": rec.monomer_a,
                            "monomer_b": rec.monomer_b,
                            "stoichiometry": list(rec.stoichiometry),
                            "architecture": rec.architecture,
                            "labels": rec.labels,
                        },
                        sort_keys=True,
                    )
                )
                fh.write("\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_dataset(path, build_graphs: bool = True) -> list[PolymerRecord]:
    records = []
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON: {exc}", line=line_no) from exc
        _validate_record(obj, line_no)
        rec = PolymerRecord(
            id=obj["id"],
            monomer_a=obj["monomer_a"],
            monomer_b=obj["monomer_b"],
            stoichiometry=(float(obj["stoichiometry"][0]), float(obj["stoichiometry"][1])),
            architecture=obj["architecture"],
            labels={k: (int(v) if k == CLASS_LABEL else float(v)) for k, v in obj["labels"].items()},
        )
        if build_graphs:
            rec.build_graph()
        records.append(rec)
    return records


def read_labels_csv(path) -> dict[str, float]:
    """CSV with header ``id,label`` mapping record ids to values."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != ["id", "label"]:
                raise SchemaViolation("label CSV must have header 'id,label'")
            return {row["id"]: float(row["label"]) for row in reader}
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def apply_labels(records, mapping, name: str = REGRESSION_LABEL) -> None:
    for rec in records:
        if rec.id not in mapping:
            raise LabelMissing(rec.id)
        rec.labels[name] = mapping[rec.id]
