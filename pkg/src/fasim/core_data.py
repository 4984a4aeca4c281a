"""Data containers, the rank-based response transform, and the seeding contract.

Everything here is immutable after construction and safe to share across
threads; operations are pure functions of their inputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .exceptions import CsvParseError, InvalidInputError

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """One step of the SplitMix64 mixer (Steele, Lea & Flood 2014)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class SeedSpec:
    """Counter-based randomness identity.

    The pair (root_seed, stream_id) keys a Philox counter-based generator, so
    identical pairs reproduce identical sequences regardless of platform,
    run, or parallel schedule.  `derive` folds extra tags into a fresh root
    (SplitMix64 chain) so that independent purposes (data generation,
    bootstrap multipliers, fold permutations, ...) never share a stream.
    """

    root_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.root_seed <= _MASK64) or not (0 <= self.stream_id <= _MASK64):
            raise InvalidInputError("root_seed and stream_id must be unsigned 64-bit integers")

    def rng(self) -> np.random.Generator:
        key = (self.root_seed & _MASK64) | ((self.stream_id & _MASK64) << 64)
        return np.random.Generator(np.random.Philox(key=key))

    def with_stream(self, stream_id: int) -> "SeedSpec":
        return replace(self, stream_id=stream_id)

    def derive(self, *tags: int) -> "SeedSpec":
        """New SeedSpec whose root folds in stream_id and the given tags."""
        x = _splitmix64(self.root_seed)
        for t in (self.stream_id, *tags):
            x = _splitmix64(x ^ _splitmix64(t & _MASK64))
        return SeedSpec(root_seed=x, stream_id=0)


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, order="C", copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Observed covariates X (n x p) and response Y (length n).

    Invariants: n >= 2, p >= 1, all entries finite, rows of X match Y.
    """

    X: np.ndarray
    Y: np.ndarray
    names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        X = _readonly(np.atleast_2d(self.X))
        Y = _readonly(np.asarray(self.Y, dtype=np.float64).ravel())
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if X.ndim != 2:
            raise InvalidInputError("X must be a 2-d matrix")
        n, p = X.shape
        if n < 2 or p < 1:
            raise InvalidInputError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if Y.shape[0] != n:
            raise InvalidInputError(f"X has {n} rows but Y has length {Y.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("X contains non-finite entries")
        if not np.all(np.isfinite(Y)):
            raise InvalidInputError("Y contains non-finite entries")
        if self.names is not None:
            names = tuple(str(s) for s in self.names)
            if len(names) != p:
                raise InvalidInputError(f"expected {p} column names, got {len(names)}")
            object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class TransformedResponse:
    """Empirical-CDF transform of the response: values_i = rank_i/n - 1/2.

    rank_i counts #{j : Y_j <= Y_i}; ties therefore receive the maximal
    count, exactly the indicator-sum definition.
    """

    values: np.ndarray
    ranks: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))
        ranks = np.array(self.ranks, dtype=np.int64, copy=True)
        ranks.setflags(write=False)
        object.__setattr__(self, "ranks", ranks)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def rank_transform(Y: np.ndarray) -> TransformedResponse:
    """Map Y_i to F_n(Y_i) - 1/2 where F_n is the empirical CDF of Y.

    Invariant under any strictly increasing transformation of Y, which is
    what confers robustness to heavy tails and response outliers.
    """
    Y = np.asarray(Y, dtype=np.float64).ravel()
    if Y.size < 1:
        raise InvalidInputError("Y must have length >= 1")
    if not np.all(np.isfinite(Y)):
        raise InvalidInputError("Y contains non-finite entries")
    n = Y.size
    sorted_Y = np.sort(Y)
    ranks = np.searchsorted(sorted_Y, Y, side="right")
    values = ranks / n - 0.5
    return TransformedResponse(values=values, ranks=ranks)


def center_columns(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Subtract column means; returns (centered matrix, means)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidInputError("X must be 2-d with at least 2 rows")
    means = X.mean(axis=0)
    return X - means, means


def load_csv(
    path,
    response: Optional[str] = None,
    response_index: Optional[int] = None,
) -> Dataset:
    """Read a UTF-8, '.'-decimal CSV with a header row into a Dataset.

    Exactly one of `response` (column name) or `response_index` (0-based
    position) designates Y; remaining columns form X in file order.  Any
    unparsable cell rejects the whole file, naming the offending data row
    (1-based, excluding the header).
    """
    if (response is None) == (response_index is None):
        raise InvalidInputError("specify exactly one of response or response_index")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError("empty file: missing header row") from None
        header = [h.strip() for h in header]
        if response is not None:
            try:
                ycol = header.index(response)
            except ValueError:
                raise InvalidInputError(
                    f"response column {response!r} not found in header {header}"
                ) from None
        else:
            ycol = int(response_index)
            if not (0 <= ycol < len(header)):
                raise InvalidInputError(
                    f"response index {ycol} out of range for {len(header)} columns"
                )
        rows = []
        for rownum, row in enumerate(reader, start=1):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) != len(header):
                raise CsvParseError(
                    f"row {rownum}: expected {len(header)} cells, got {len(row)}"
                )
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise CsvParseError(f"row {rownum}: unparsable cell {bad!r}") from None
    if len(rows) < 2:
        raise InvalidInputError(f"need at least 2 data rows, got {len(rows)}")
    data = np.asarray(rows, dtype=np.float64)
    Y = data[:, ycol]
    X = np.delete(data, ycol, axis=1)
    names = tuple(h for i, h in enumerate(header) if i != ycol)
    return Dataset(X=X, Y=Y, names=names)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False
