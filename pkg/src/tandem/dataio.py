"""Tabular ingestion, preprocessing, and deterministic split generation.

The pipeline is fit-then-apply: ``fit_schema`` learns per-column statistics
(numeric min/max/mean, categorical vocabularies) from designated fitting
rows only, and ``transform`` applies them to any table with the same
columns. Numerics are min-max scaled into [0,1] with mean imputation;
categoricals are one-hot over the fitted vocabulary with unseen or missing
tokens mapping to an all-zero group. ``make_splits`` carves a dataset into
pretraining pool, labeled train/val subsets, and a held-out test set,
class-stratified when integer or token labels are supplied.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

MISSING_TOKENS = {"", "NA"}


class SchemaError(ValueError):
    """Raised when a table or fitting request is structurally unusable."""


class TransformError(ValueError):
    """Raised when a table does not match the schema applied to it."""


class SplitError(ValueError):
    """Raised when split budgets cannot be satisfied."""


@dataclass
class RawTable:
    """Columnar table of raw cells; None marks a missing value."""

    names: list
    columns: list
    target_name: str | None = None
    target: list | None = None

    def __post_init__(self):
        if len(self.names) != len(self.columns):
            raise SchemaError("one name per column required")
        if len(set(self.names)) != len(self.names):
            raise SchemaError("column names must be unique")
        lengths = {len(c) for c in self.columns}
        if self.target is not None:
            lengths.add(len(self.target))
        if len(lengths) > 1:
            raise SchemaError(f"ragged columns: lengths {sorted(lengths)}")

    @property
    def n_rows(self) -> int:
        return len(self.columns[0]) if self.columns else \
            (len(self.target) if self.target is not None else 0)


@dataclass
class FeatureSchema:
    columns: dict
    target: dict | None = None


@dataclass
class DesignMatrix:
    values: np.ndarray
    feature_names: list
    origin: dict
    targets: np.ndarray | None = None
    target_kind: str | None = None


@dataclass
class SplitSpec:
    seed: int
    pretrain_idx: list
    train_idx: list
    val_idx: list
    test_idx: list
    label_budget: int

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed, "label_budget": self.label_budget,
            "pretrain_idx": self.pretrain_idx, "train_idx": self.train_idx,
            "val_idx": self.val_idx, "test_idx": self.test_idx})

    @classmethod
    def from_json(cls, blob: str) -> "SplitSpec":
        doc = json.loads(blob)
        return cls(seed=doc["seed"], pretrain_idx=doc["pretrain_idx"],
                   train_idx=doc["train_idx"], val_idx=doc["val_idx"],
                   test_idx=doc["test_idx"],
                   label_budget=doc["label_budget"])


def load_csv(path, target_column: str | None = None) -> RawTable:
    """Read a comma-delimited UTF-8 file with a header row.

    Empty cells and the literal token NA are missing values. Cells stay
    raw strings; numeric detection happens at schema-fitting time.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path} is empty")
    header = rows[0]
    if len(set(header)) != len(header):
        raise SchemaError(f"duplicate column names in {path}")
    cells = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise SchemaError(f"{path} line {i}: expected {len(header)} "
                              f"cells, got {len(row)}")
        cells.append([None if c in MISSING_TOKENS else c for c in row])
    columns = {name: [row[j] for row in cells]
               for j, name in enumerate(header)}
    target = None
    if target_column is not None:
        if target_column not in columns:
            raise SchemaError(f"target column {target_column!r} "
                              f"not found in {path}")
        target = columns.pop(target_column)
    return RawTable(names=list(columns), columns=list(columns.values()),
                    target_name=target_column, target=target)


def _as_float(cell):
    if isinstance(cell, (int, float)) and not isinstance(cell, bool):
        return float(cell)
    return float(str(cell))


def _all_numeric(values) -> bool:
    try:
        for v in values:
            _as_float(v)
    except ValueError:
        return False
    return True


def _first_appearance(values) -> list:
    seen, vocab = set(), []
    for v in values:
        key = str(v)
        if key not in seen:
            seen.add(key)
            vocab.append(key)
    return vocab


def fit_schema(raw: RawTable, fit_rows) -> FeatureSchema:
    """Column statistics and vocabularies from the fitting rows only."""
    fit_rows = list(fit_rows)
    if not fit_rows:
        raise SchemaError("fit_rows must be non-empty")
    bad = [i for i in fit_rows if not 0 <= i < raw.n_rows]
    if bad:
        raise SchemaError(f"fit row index {bad[0]} out of range")
    columns = {}
    for name, col in zip(raw.names, raw.columns):
        vals = [col[i] for i in fit_rows if col[i] is not None]
        if not vals:
            raise SchemaError(f"column {name!r} has no observed values "
                              f"among the fitting rows")
        if _all_numeric(vals):
            nums = [_as_float(v) for v in vals]
            columns[name] = {"kind": "numeric", "min": min(nums),
                             "max": max(nums),
                             "mean": float(np.mean(nums))}
        else:
            columns[name] = {"kind": "categorical",
                             "vocab": _first_appearance(vals)}
    target = None
    if raw.target is not None:
        tvals = [raw.target[i] for i in fit_rows
                 if raw.target[i] is not None]
        if not tvals:
            raise SchemaError("target has no observed values among the "
                              "fitting rows")
        if _all_numeric(tvals):
            target = {"kind": "regression"}
        else:
            target = {"kind": "classification",
                      "vocab": _first_appearance(tvals)}
    return FeatureSchema(columns=columns, target=target)


def _numeric_feature(name, col, spec):
    lo, hi, mean = spec["min"], spec["max"], spec["mean"]
    out = np.empty(len(col))
    for i, cell in enumerate(col):
        if cell is None:
            v = mean
        else:
            try:
                v = _as_float(cell)
            except ValueError:
                raise TransformError(f"column {name!r} row {i}: "
                                     f"{cell!r} is not numeric") from None
        out[i] = 0.0 if hi <= lo else min(max((v - lo) / (hi - lo), 0.0), 1.0)
    return out


def _encode_targets(raw: RawTable, spec: dict):
    if spec["kind"] == "regression":
        out = np.empty(raw.n_rows)
        for i, cell in enumerate(raw.target):
            if cell is None:
                raise TransformError(f"missing target in row {i}")
            try:
                out[i] = _as_float(cell)
            except ValueError:
                raise TransformError(f"target row {i}: {cell!r} is not "
                                     f"numeric") from None
        return out, "regression"
    index = {tok: j for j, tok in enumerate(spec["vocab"])}
    out = np.empty(raw.n_rows, dtype=np.int64)
    for i, cell in enumerate(raw.target):
        if cell is None:
            raise TransformError(f"missing target in row {i}")
        key = str(cell)
        if key not in index:
            raise TransformError(f"target row {i}: label {key!r} was never "
                                 f"seen during fitting")
        out[i] = index[key]
    return out, "classification"


def transform(raw: RawTable, schema: FeatureSchema) -> DesignMatrix:
    """Apply a fitted schema; every numeric feature lands in [0,1]."""
    if raw.names != list(schema.columns):
        raise TransformError(f"columns {raw.names} do not match schema "
                             f"columns {list(schema.columns)}")
    blocks, names, origin = [], [], {}
    for name, col in zip(raw.names, raw.columns):
        spec = schema.columns[name]
        if spec["kind"] == "numeric":
            blocks.append(_numeric_feature(name, col, spec)[:, None])
            names.append(name)
            origin[name] = name
        else:
            vocab = spec["vocab"]
            index = {tok: j for j, tok in enumerate(vocab)}
            block = np.zeros((len(col), len(vocab)))
            for i, cell in enumerate(col):
                if cell is not None and str(cell) in index:
                    block[i, index[str(cell)]] = 1.0
            blocks.append(block)
            for tok in vocab:
                fname = f"{name}={tok}"
                names.append(fname)
                origin[fname] = name
    values = np.hstack(blocks) if blocks else np.zeros((raw.n_rows, 0))
    targets, kind = None, None
    if raw.target is not None:
        if schema.target is None:
            raise TransformError("table has a target but the schema was "
                                 "fit without one")
        targets, kind = _encode_targets(raw, schema.target)
    return DesignMatrix(values=values, feature_names=names, origin=origin,
                        targets=targets, target_kind=kind)


def _largest_remainder(budget: int, avail: list) -> list:
    """Integer allocation proportional to avail, summing to budget."""
    total = sum(avail)
    exact = [budget * a / total for a in avail]
    base = [int(np.floor(e)) for e in exact]
    order = sorted(range(len(avail)),
                   key=lambda i: (-(exact[i] - base[i]), i))
    leftover = budget - sum(base)
    for i in order:
        if leftover == 0:
            break
        if base[i] < avail[i]:
            base[i] += 1
            leftover -= 1
    # capacity-capped classes can leave a remainder; spill it anywhere open
    for i in order:
        while leftover > 0 and base[i] < avail[i]:
            base[i] += 1
            leftover -= 1
    return base


def make_splits(n: int, targets, pretrain_per_class: int, label_budget: int,
                val_frac: float, seed: int) -> SplitSpec:
    """Deterministic pretrain / train / val / test index partition.

    With integer or token targets the pretraining pool takes exactly
    pretrain_per_class rows from each class and the labeled budget is
    spread across classes by largest-remainder proportional allocation.
    Without targets (or with real-valued ones) no stratification applies
    and pretrain_per_class is the total pool size.
    """
    if not 0 < val_frac < 1:
        raise SplitError(f"val_frac must lie in (0,1), got {val_frac}")
    if pretrain_per_class < 0 or label_budget < 0:
        raise SplitError("budgets must be non-negative")
    if targets is not None and len(targets) != n:
        raise SplitError(f"{len(targets)} targets for {n} rows")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    stratify = targets is not None \
        and np.asarray(targets).dtype.kind in ("i", "u", "U", "S", "O", "b")
    pretrain, labeled, test = [], [], []
    if stratify:
        y = np.asarray(targets)
        classes = np.unique(y)
        remainders = []
        for c in classes:
            idx = np.flatnonzero(y == c)
            if len(idx) < pretrain_per_class:
                raise SplitError(f"class {c} has {len(idx)} rows, "
                                 f"needs {pretrain_per_class}")
            perm = rng.permutation(idx)
            pretrain.extend(perm[:pretrain_per_class])
            remainders.append(perm[pretrain_per_class:])
        avail = [len(r) for r in remainders]
        if label_budget > sum(avail):
            raise SplitError(f"label budget {label_budget} exceeds the "
                             f"{sum(avail)} rows left after pretraining")
        if label_budget > 0:
            quotas = _largest_remainder(label_budget, avail)
        else:
            quotas = [0] * len(avail)
        for rem, q in zip(remainders, quotas):
            labeled.extend(rem[:q])
            test.extend(rem[q:])
    else:
        if pretrain_per_class > n:
            raise SplitError(f"pretraining pool {pretrain_per_class} "
                             f"exceeds {n} rows")
        perm = rng.permutation(n)
        pretrain = list(perm[:pretrain_per_class])
        rest = perm[pretrain_per_class:]
        if label_budget > len(rest):
            raise SplitError(f"label budget {label_budget} exceeds the "
                             f"{len(rest)} rows left after pretraining")
        labeled = list(rest[:label_budget])
        test = list(rest[label_budget:])
    labeled = rng.permutation(np.array(labeled, dtype=np.int64)) \
        if labeled else np.array([], dtype=np.int64)
    n_val = int(np.floor(val_frac * len(labeled) + 0.5))
    return SplitSpec(
        seed=seed,
        pretrain_idx=[int(i) for i in pretrain],
        train_idx=[int(i) for i in labeled[n_val:]],
        val_idx=[int(i) for i in labeled[:n_val]],
        test_idx=[int(i) for i in test],
        label_budget=label_budget)


def schema_to_json(schema: FeatureSchema) -> str:
    return json.dumps({"columns": schema.columns, "target": schema.target})


def schema_from_json(blob: str) -> FeatureSchema:
    doc = json.loads(blob)
    return FeatureSchema(columns=doc["columns"], target=doc["target"])


TARGET_MARKER = "__target__"


def save_design_matrix(dm: DesignMatrix, path) -> None:
    """CSV cache: feature columns plus an optional __target__<kind> column.
    Floats are written with full round-trip precision."""
    header = list(dm.feature_names)
    if dm.targets is not None:
        header.append(f"{TARGET_MARKER}{dm.target_kind}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dm.values.shape[0]):
            row = [repr(float(v)) for v in dm.values[i]]
            if dm.targets is not None:
                t = dm.targets[i]
                row.append(str(int(t)) if dm.target_kind == "classification"
                           else repr(float(t)))
            writer.writerow(row)


def load_design_matrix(path) -> DesignMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path} is empty")
    header = rows[0]
    kind = None
    if header and header[-1].startswith(TARGET_MARKER):
        kind = header[-1][len(TARGET_MARKER):]
        header = header[:-1]
    n, d = len(rows) - 1, len(header)
    values = np.empty((n, d))
    targets = np.empty(n, dtype=np.int64 if kind == "classification"
                       else np.float64) if kind else None
    for i, row in enumerate(rows[1:]):
        values[i] = [float(c) for c in row[:d]]
        if kind:
            targets[i] = int(row[d]) if kind == "classification" \
                else float(row[d])
    origin = {name: name.split("=")[0] for name in header}
    return DesignMatrix(values=values, feature_names=header, origin=origin,
                        targets=targets, target_kind=kind)
