"""Downstream metrics, rank aggregation, and performance profiles.

Results from many runs are collected into a ResultTable (rows = datasets,
columns = methods). mean_rank summarises a table by average best-first rank;
dolan_more turns it into performance profiles: for each method, the fraction
of datasets on which it is within a factor tau of the best method.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

# uniform shift applied to lower-is-better cells before ratio formation;
# keeps near-zero denominators finite without reordering any column
RATIO_SHIFT = 1e-12


class MetricError(ValueError):
    """Raised for malformed metric inputs or result tables."""


def _paired(pred, true):
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape or pred.ndim != 1:
        raise MetricError(
            f"prediction/target shape mismatch: {pred.shape} vs {true.shape}"
        )
    if pred.size == 0:
        raise MetricError("empty prediction array")
    return pred, true


def accuracy(pred, true):
    """Fraction of exact label matches."""
    pred, true = _paired(pred, true)
    return float(np.mean(pred == true))


def mse(pred, true):
    """Mean squared error."""
    pred, true = _paired(pred, true)
    diff = pred.astype(float) - true.astype(float)
    return float(np.mean(diff * diff))


@dataclass
class ResultTable:
    """Metric values per (dataset, method); NaN marks a missing cell.

    Rows with missing cells are excluded from ranking and profiles, so a
    method that never ran on a dataset cannot distort the comparison.
    """

    datasets: list
    methods: list
    values: np.ndarray
    higher_is_better: bool = True
    stds: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        shape = (len(self.datasets), len(self.methods))
        if self.values.shape != shape:
            raise MetricError(
                f"values shape {self.values.shape} does not match {shape}"
            )
        if len(set(self.methods)) != len(self.methods):
            raise MetricError("duplicate method names")
        if len(set(self.datasets)) != len(self.datasets):
            raise MetricError("duplicate dataset names")
        if self.stds is not None:
            self.stds = np.asarray(self.stds, dtype=float)
            if self.stds.shape != shape:
                raise MetricError(
                    f"stds shape {self.stds.shape} does not match {shape}"
                )

    def complete_rows(self):
        """Boolean mask of rows with no missing cell."""
        return ~np.isnan(self.values).any(axis=1)

    def subset(self, methods):
        """Restrict to the named method columns, in the given order."""
        try:
            cols = [self.methods.index(m) for m in methods]
        except ValueError as exc:
            raise MetricError(f"unknown method: {exc}") from exc
        return ResultTable(
            datasets=list(self.datasets),
            methods=list(methods),
            values=self.values[:, cols],
            higher_is_better=self.higher_is_better,
            stds=None if self.stds is None else self.stds[:, cols],
        )


@dataclass
class ProfileCurve:
    """Per-method fraction-of-datasets values over a tau grid."""

    taus: np.ndarray
    methods: list = field(default_factory=list)
    fractions: np.ndarray = None
    n_shifted: int = 0

    def __post_init__(self):
        self.taus = np.asarray(self.taus, dtype=float)
        self.fractions = np.asarray(self.fractions, dtype=float)
        if self.fractions.shape != (self.taus.size, len(self.methods)):
            raise MetricError(
                f"fractions shape {self.fractions.shape} does not match "
                f"({self.taus.size}, {len(self.methods)})"
            )


def _row_ranks(vals, higher_is_better):
    # best-first ranks with average ties
    key = -vals if higher_is_better else vals
    order = np.argsort(key, kind="stable")
    ranks = np.empty(vals.size)
    i = 0
    while i < vals.size:
        j = i
        while j + 1 < vals.size and key[order[j + 1]] == key[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _complete_values(table):
    mask = table.complete_rows()
    if not mask.any():
        raise MetricError("every row has a missing cell")
    return table.values[mask]

def mean_rank(table):
    """Mean best-first rank per method over the complete rows.

    Ties share the average of their rank positions. Returns an array aligned
    with table.methods.
    """
    vals = _complete_values(table)
    ranks = [_row_ranks(row, table.higher_is_better) for row in vals]
    return np.mean(ranks, axis=0)


def _ratio_table(table):
    vals = _complete_values(table)
    if table.higher_is_better:
        if (vals <= 0.0).any():
            raise MetricError("non-positive cell in a higher-is-better table")
        best = vals.max(axis=1, keepdims=True)
        return best / vals, 0
    n_shifted = int((vals < RATIO_SHIFT).sum())
    vals = vals + RATIO_SHIFT
    best = vals.min(axis=1, keepdims=True)
    return vals / best, n_shifted


def dolan_more(table, taus=None):
    """Performance profiles over a tau grid (tau >= 1).

    Ratio to the best method is best/value for higher-is-better metrics and
    value/best otherwise; curve(tau) is the fraction of complete rows whose
    ratio is at most tau. With taus=None a linear grid from 1 to the largest
    observed ratio is used, so every curve ends at 1.
    """
    ratios, n_shifted = _ratio_table(table)
    if taus is None:
        taus = np.linspace(1.0, max(ratios.max(), 1.0), 101)
    taus = np.asarray(taus, dtype=float)
    if taus.size == 0 or (taus < 1.0).any():
        raise MetricError("tau grid must be non-empty with every tau >= 1")
    taus = np.sort(taus)
    fractions = np.mean(ratios[None, :, :] <= taus[:, None, None], axis=1)
    return ProfileCurve(
        taus=taus,
        methods=list(table.methods),
        fractions=fractions,
        n_shifted=n_shifted,
    )


_STD_SUFFIX = "__std"
_ORIENT_PREFIX = "# higher_is_better="


def save_result_table(table, path):
    """Write a ResultTable as CSV; orientation rides in a comment line."""
    with open(path, "w", newline="") as fh:
        fh.write(f"{_ORIENT_PREFIX}{str(table.higher_is_better).lower()}\n")
        writer = csv.writer(fh)
        header = ["dataset"] + list(table.methods)
        if table.stds is not None:
            header += [m + _STD_SUFFIX for m in table.methods]
        writer.writerow(header)
        for i, name in enumerate(table.datasets):
            row = [name] + [_cell(v) for v in table.values[i]]
            if table.stds is not None:
                row += [_cell(v) for v in table.stds[i]]
            writer.writerow(row)


def _cell(v):
    return "" if np.isnan(v) else repr(float(v))


def _parse_cell(text):
    return np.nan if text == "" else float(text)


def load_result_table(path):
    higher = True
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith(_ORIENT_PREFIX):
            higher = first[len(_ORIENT_PREFIX) :].strip() == "true"
            rows = list(csv.reader(fh))
        else:
            rows = list(csv.reader([first])) + list(csv.reader(fh))
    if not rows or rows[0][:1] != ["dataset"]:
        raise MetricError(f"{path}: missing result table header")
    header = rows[0][1:]
    methods = [c for c in header if not c.endswith(_STD_SUFFIX)]
    has_stds = len(methods) != len(header)
    datasets, values, stds = [], [], []
    for row in rows[1:]:
        if len(row) != len(header) + 1:
            raise MetricError(f"{path}: ragged row {row[:1]}")
        datasets.append(row[0])
        cells = [_parse_cell(c) for c in row[1:]]
        values.append(cells[: len(methods)])
        if has_stds:
            stds.append(cells[len(methods) :])
    return ResultTable(
        datasets=datasets,
        methods=methods,
        values=np.array(values, dtype=float).reshape(len(datasets), len(methods)),
        higher_is_better=higher,
        stds=np.array(stds, dtype=float) if has_stds else None,
    )


def save_profile_curve(curve, path):
    """Emit (tau, per-method fraction) rows as CSV for external plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau"] + list(curve.methods))
        for i, tau in enumerate(curve.taus):
            writer.writerow([repr(float(tau))] + [repr(float(v)) for v in curve.fractions[i]])
