"""Sparse-text classification data, synthetic data, and agent partitions."""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import InvalidParameterError, ParseError

A9A_URL = "https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets/binary/a9a"


@dataclass
class SparseDataset:
    """Rows of ``(label, {index: value})`` with 1-based feature indices.

    ``labels`` are in {0, 1}; ``features`` holds one ``(indices, values)`` pair
    of arrays per row, indices strictly increasing.
    """

    labels: np.ndarray
    features: list
    n_features: int

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        if not isinstance(other, SparseDataset):
            return NotImplemented
        return (
            self.n_features == other.n_features
            and np.array_equal(self.labels, other.labels)
            and len(self.features) == len(other.features)
            and all(np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
                    for a, b in zip(self.features, other.features))
        )

    def subset(self, rows):
        rows = np.asarray(rows, dtype=int)
        return SparseDataset(self.labels[rows], [self.features[r] for r in rows], self.n_features)

    def dense(self):
        """``(X, y)`` with ``X`` of shape (N, n_features)."""
        X = np.zeros((len(self), self.n_features))
        for r, (idx, val) in enumerate(self.features):
            X[r, idx - 1] = val
        return X, self.labels.astype(float)

    @classmethod
    def from_dense(cls, X, y):
        X = np.asarray(X, dtype=float)
        feats = []
        for row in X:
            nz = np.flatnonzero(row)
            feats.append((nz + 1, row[nz].copy()))
        return cls(np.asarray(y, dtype=np.int8), feats, X.shape[1])


def _parse_label(tok, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"bad label {tok!r}", lineno) from None
    if v == 1:
        return 1
    if v in (-1, 0):
        return 0
    raise ParseError(f"label must be one of -1, 0, +1, got {tok!r}", lineno)


def parse_libsvm(stream, n_features=None):
    """Parse ``label idx:val idx:val ...`` lines.

    Labels -1/+1 (or 0/1) map to 0/1. Blank lines and ``#`` comments are
    skipped. ``n_features`` forces the feature count (e.g. 123); otherwise the
    largest index seen is used.
    """
    if isinstance(stream, (str, os.PathLike)):
        with open(stream, encoding="utf-8") as fh:
            return parse_libsvm(fh, n_features)
    labels, feats = [], []
    max_idx = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        labels.append(_parse_label(toks[0], lineno))
        idx = np.empty(len(toks) - 1, dtype=np.int64)
        val = np.empty(len(toks) - 1)
        prev = 0
        for k, tok in enumerate(toks[1:]):
            key, sep, value = tok.partition(":")
            if not sep:
                raise ParseError(f"malformed token {tok!r}", lineno)
            try:
                j = int(key)
            except ValueError:
                raise ParseError(f"non-integer index in {tok!r}", lineno) from None
            try:
                v = float(value)
            except ValueError:
                raise ParseError(f"non-numeric value in {tok!r}", lineno) from None
            if j < 1:
                raise ParseError(f"indices are 1-based, got {j}", lineno)
            if j <= prev:
                raise ParseError(f"indices not increasing at {tok!r}", lineno)
            prev = j
            idx[k] = j
            val[k] = v
        max_idx = max(max_idx, prev)
        feats.append((idx, val))
    if n_features is None:
        n_features = max_idx
    elif max_idx > n_features:
        raise ParseError(f"feature index {max_idx} exceeds n_features={n_features}")
    return SparseDataset(np.asarray(labels, dtype=np.int8), feats, int(n_features))


def format_libsvm(d):
    """Serialize back to the sparse-text format (labels written as -1/+1)."""
    out = io.StringIO()
    for label, (idx, val) in zip(d.labels, d.features):
        parts = ["+1" if label == 1 else "-1"]
        parts += [f"{j}:{v!r}" for j, v in zip(idx.tolist(), val.tolist())]
        out.write(" ".join(parts) + "\n")
    return out.getvalue()


def train_test_split(d, train_fraction, seed):
    """Shuffle under ``seed``; first ``ceil(f * N)`` rows train, rest test."""
    if not 0 < train_fraction < 1:
        raise InvalidParameterError("train_fraction must lie in (0, 1)")
    n = len(d)
    if n == 0:
        raise InvalidParameterError("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(n)
    cut = math.ceil(train_fraction * n)
    return d.subset(order[:cut]), d.subset(order[cut:])


@dataclass(frozen=True)
class Partition:
    """Agent index for every row; shard sizes differ by at most one."""

    assignment: np.ndarray
    seed: int
    n_agents: int = field(default=0)

    def shards(self):
        return [np.flatnonzero(self.assignment == i) for i in range(self.n_agents)]

    def sizes(self):
        return np.bincount(self.assignment, minlength=self.n_agents)


def partition(d, n_agents, seed):
    """Random equal-size (+-1) shards; ``d`` may be a dataset or a row count."""
    n = d if isinstance(d, (int, np.integer)) else len(d)
    if n_agents < 1:
        raise InvalidParameterError("n_agents must be >= 1")
    if n < n_agents:
        raise InvalidParameterError(f"{n} rows cannot fill {n_agents} shards")
    order = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.arange(n) % n_agents
    return Partition(assignment, int(seed), int(n_agents))


def synth_logreg(rng, N, d, true_w):
    """``x ~ N(0, I_d)``, ``y ~ Bernoulli(sigmoid(true_w . x))``."""
    if N < 1 or d < 1:
        raise InvalidParameterError("N and d must be >= 1")
    true_w = np.broadcast_to(np.asarray(true_w, dtype=float), (d,))
    X = rng.standard_normal((N, d))
    y = (rng.random(N) < expit(X @ true_w)).astype(np.int8)
    return SparseDataset.from_dense(X, y)


def find_dataset(name, search=None):
    """Locate ``name`` directly or under ``$DULA_DATA_DIR``; None if absent."""
    p = Path(name)
    if p.is_file():
        return p
    roots = [search] if search else []
    if os.environ.get("DULA_DATA_DIR"):
        roots.append(os.environ["DULA_DATA_DIR"])
    for root in roots:
        q = Path(root) / p.name
        if q.is_file():
            return q
    return None
