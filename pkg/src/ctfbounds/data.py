"""Mixed observational and experimental datasets."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .exceptions import ValidationError
from .graph import CausalDiagram

DO_COLUMN = "__do__"

Tag = Tuple[Tuple[str, int], ...]


def canonical_tag(intervention) -> Tag:
    """Sorted ``(name, value)`` pairs; accepts a mapping, pairs, or a tag string."""
    if isinstance(intervention, str):
        return parse_tag(intervention)
    return tuple(sorted((str(k), int(v)) for k, v in dict(intervention or {}).items()))


def parse_tag(text: str, line: int = None) -> Tag:
    where = f" on line {line}" if line is not None else ""
    text = text.strip()
    if not text:
        return ()
    out = {}
    for part in text.split(";"):
        name, sep, val = part.partition("=")
        name = name.strip()
        if not sep or not name:
            raise ValidationError(f"malformed intervention {part!r}{where}")
        try:
            v = int(val)
        except ValueError:
            raise ValidationError(f"non-integer intervention value {val!r}{where}") from None
        if name in out:
            raise ValidationError(f"variable {name!r} intervened twice{where}")
        out[name] = v
    return tuple(sorted(out.items()))


def format_tag(tag: Tag) -> str:
    return ";".join(f"{k}={v}" for k, v in tag)


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Joint counts of full endogenous configurations within one regime."""

    tag: Tag
    names: Tuple[str, ...]
    counts: Mapping[Tuple[int, ...], int]
    total: int

    def frequency(self, config: Sequence[int]) -> Fraction:
        if self.total == 0:
            raise ValidationError("empty regime has no frequencies")
        return Fraction(self.counts.get(tuple(config), 0), self.total)

    def frequencies(self) -> Dict[Tuple[int, ...], Fraction]:
        return {k: Fraction(c, self.total) for k, c in self.counts.items()}

    def prob(self, **event) -> float:
        """Marginal frequency of a partial assignment, e.g. ``prob(X=1, Y=0)``."""
        idx = [(self.names.index(k), int(v)) for k, v in event.items()]
        hit = sum(c for cfg, c in self.counts.items() if all(cfg[i] == v for i, v in idx))
        return hit / self.total


class Dataset:
    """Rows of full endogenous assignments with their intervention tags.

    Parameters
    ----------
    diagram : CausalDiagram
    values : int array of shape (n, n_endogenous), columns in diagram order
    tags : sequence of canonical tags, one per row
    """

    def __init__(self, diagram: CausalDiagram, values: np.ndarray, tags: Sequence[Tag]):
        self.diagram = diagram
        self.values = np.asarray(values, dtype=np.int64).reshape(len(tags), len(diagram.names))
        self.values.setflags(write=False)
        self.tags = tuple(tags)
        self._validate()
        index: Dict[Tag, List[int]] = {}
        for i, t in enumerate(self.tags):
            index.setdefault(t, []).append(i)
        self.regime_index = {t: np.asarray(ix, dtype=np.int64) for t, ix in index.items()}

    def _validate(self, lines: Sequence[int] = None):
        d = self.diagram
        cards = np.array([d.card(n) for n in d.names])
        for i, (row, tag) in enumerate(zip(self.values, self.tags)):
            where = f"line {lines[i]}" if lines is not None else f"row {i}"
            bad = np.flatnonzero((row < 0) | (row >= cards))
            if bad.size:
                j = bad[0]
                raise ValidationError(f"{where}: value {row[j]} out of range for {d.names[j]}")
            for k, v in tag:
                if k not in d.index:
                    raise ValidationError(f"{where}: unknown intervened variable {k!r}")
                if row[d.index[k]] != v:
                    raise ValidationError(f"{where}: {k} is {row[d.index[k]]} but the row was generated under do({k}={v})")

    @classmethod
    def from_arrays(cls, diagram, values, interventions: Iterable) -> "Dataset":
        return cls(diagram, values, [canonical_tag(i) for i in interventions])

    @classmethod
    def empty(cls, diagram) -> "Dataset":
        return cls(diagram, np.zeros((0, len(diagram.names)), dtype=np.int64), [])

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        if not parts:
            raise ValidationError("nothing to concatenate")
        diagram = parts[0].diagram
        values = np.concatenate([p.values for p in parts], axis=0)
        tags = [t for p in parts for t in p.tags]
        return cls(diagram, values, tags)

    def __len__(self):
        return len(self.tags)

    def __eq__(self, other):
        return (isinstance(other, Dataset) and self.diagram == other.diagram
                and self.tags == other.tags and np.array_equal(self.values, other.values))

    def __repr__(self):
        sizes = {format_tag(t) or "obs": len(ix) for t, ix in self.regime_index.items()}
        return f"Dataset(n={len(self)}, regimes={sizes})"

    @property
    def regimes(self) -> Tuple[Tag, ...]:
        return tuple(self.regime_index)

    def regime_sizes(self) -> Dict[Tag, int]:
        return {t: len(ix) for t, ix in self.regime_index.items()}

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.diagram.index[name]]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.diagram, self.values[rows], [self.tags[i] for i in rows])

    def empirical(self, tag=()) -> EmpiricalDistribution:
        tag = canonical_tag(tag)
        if tag not in self.regime_index:
            raise ValidationError(f"no rows for regime {format_tag(tag) or 'observational'!r}")
        rows = self.values[self.regime_index[tag]]
        counts = Counter(map(tuple, rows.tolist()))
        return EmpiricalDistribution(tag, self.diagram.names, dict(counts), len(rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(self.diagram.names) + [DO_COLUMN])
        for row, tag in zip(self.values.tolist(), self.tags):
            w.writerow(row + [format_tag(tag)])
        return buf.getvalue()

    def save_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def empirical(dataset: Dataset, tag=()) -> EmpiricalDistribution:
    return dataset.empirical(tag)


def parse_csv(text: str, diagram: CausalDiagram) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValidationError("CSV file is empty (missing header)") from None
    expected = list(diagram.names) + [DO_COLUMN]
    if [h.strip() for h in header] != expected:
        raise ValidationError(f"CSV header {header} does not match expected {expected}")
    values, tags, lines = [], [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(expected):
            raise ValidationError(f"line {lineno}: expected {len(expected)} fields, found {len(rec)}")
        try:
            values.append([int(x) for x in rec[:-1]])
        except ValueError:
            raise ValidationError(f"line {lineno}: non-integer value") from None
        tags.append(parse_tag(rec[-1], lineno))
        lines.append(lineno)
    arr = np.asarray(values, dtype=np.int64).reshape(len(values), len(diagram.names))
    ds = Dataset.__new__(Dataset)
    ds.diagram, ds.values, ds.tags = diagram, arr, tuple(tags)
    ds._validate(lines)
    return Dataset(diagram, arr, tags)


def load_csv(path, diagram: CausalDiagram) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_csv(fh.read(), diagram)
