"""Pairwise prediction similarity and Fleiss' kappa agreement between algorithms."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import CoverageError

KINDS = ("unweighted", "weighted", "code", "kappa_summary")


def _jaccard(x, y) -> tuple[float, bool]:
    x = np.asarray(x) != 0
    y = np.asarray(y) != 0
    if x.shape != y.shape:
        raise ValueError("vectors differ in length")
    union = int(np.count_nonzero(x | y))
    if union == 0:
        return 1.0, True
    return int(np.count_nonzero(x & y)) / union, False


def _weighted(u, v) -> tuple[float, bool]:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError("vectors differ in length")
    denom = float(np.sum(np.abs(u) + np.abs(v)))
    if denom == 0:
        return 1.0, True
    return 1.0 - float(np.sum(np.abs(u - v))) / denom, False


def unweighted_similarity(x, y) -> float:
    """Jaccard index of two binary prediction vectors; 1 when both are all-negative."""
    return _jaccard(x, y)[0]


def weighted_similarity(u, v) -> float:
    """One minus the normalized L1 distance between two utility traces; 1 when both are zero."""
    return _weighted(u, v)[0]


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    algorithm_ids: tuple[str, ...]
    values: np.ndarray
    kind: str
    ordering_key: str = "algorithm id"
    # (i, j) cells whose value was set by convention rather than computed
    flagged: tuple[tuple[int, int], ...] = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown matrix kind {self.kind!r}")

    def __getitem__(self, pair: tuple[str, str]) -> float:
        a, b = pair
        return float(self.values[self.algorithm_ids.index(a), self.algorithm_ids.index(b)])

    def to_csv(self, fmt: str = "{:.12g}") -> str:
        rows = ["," + ",".join(self.algorithm_ids)]
        for aid, row in zip(self.algorithm_ids, self.values):
            rows.append(aid + "," + ",".join(fmt.format(v) for v in row))
        return "\n".join(rows) + "\n"


def rank_order(algorithm_ids, ranking: Mapping[str, float] | None = None) -> list[str]:
    """Sort ids by descending ranking score, ties and unranked ids by id."""
    ids = sorted(algorithm_ids)
    if ranking is None:
        return ids
    return sorted(ids, key=lambda a: (-ranking.get(a, -np.inf), a))


def _vector(item) -> np.ndarray:
    for attr in ("labels", "values"):
        if hasattr(item, attr):
            return np.asarray(getattr(item, attr), dtype=np.float64)
    return np.asarray(item, dtype=np.float64)


def _concatenate(bundle: Mapping[str, Mapping[str, object]], order: Sequence[str]) -> tuple[list[str], np.ndarray]:
    """Stack each algorithm's per-patient vectors, concatenated over the shared patient set."""
    patients = sorted({pid for streams in bundle.values() for pid in streams})
    missing = [(a, p) for a in order for p in patients if p not in bundle[a]]
    if missing:
        raise CoverageError(missing)
    vectors = {a: [_vector(bundle[a][p]) for p in patients] for a in order}
    if order:
        ref = [len(v) for v in vectors[order[0]]]
        bad = [(a, p) for a in order for p, v, n in zip(patients, vectors[a], ref) if len(v) != n]
        if bad:
            raise CoverageError(bad, f"per-patient lengths disagree for {len(bad)} (algorithm, patient) pairs")
    rows = [np.concatenate(vectors[a]) if patients else np.empty(0) for a in order]
    return patients, np.vstack(rows) if rows else np.empty((0, 0))


def similarity_matrix(
    bundle: Mapping[str, Mapping[str, object]],
    kind: str = "unweighted",
    ranking: Mapping[str, float] | None = None,
    ordering_key: str | None = None,
) -> SimilarityMatrix:
    """Pairwise similarity of every algorithm pair over a cohort.

    ``bundle`` maps algorithm id to ``{patient_id: vector}``; vectors are binary
    predictions (``unweighted``) or utility traces (``weighted``). Per-patient
    vectors are concatenated before a single global ratio is taken.
    """
    if kind not in ("unweighted", "weighted"):
        raise ValueError("kind must be 'unweighted' or 'weighted'")
    order = rank_order(bundle, ranking)
    patients, X = _concatenate(bundle, order)
    n = len(order)
    if kind == "unweighted":
        B = (X != 0).astype(np.int64)
        inter = B @ B.T
        counts = B.sum(axis=1)
        union = counts[:, None] + counts[None, :] - inter
        with np.errstate(invalid="ignore", divide="ignore"):
            M = inter / union
        zero = union == 0
    else:
        M = np.empty((n, n))
        zero = np.zeros((n, n), dtype=bool)
        absX = np.abs(X)
        for i in range(n):
            M[i, i] = 1.0
            zero[i, i] = not absX[i].any()
            for j in range(i + 1, n):
                value, degenerate = _weighted(X[i], X[j])
                M[i, j] = M[j, i] = value
                zero[i, j] = zero[j, i] = degenerate
    M[zero] = 1.0
    flagged = [(int(i), int(j)) for i, j in zip(*np.nonzero(zero))]
    if ordering_key is None:
        ordering_key = "ranking score desc" if ranking is not None else "algorithm id"
    return SimilarityMatrix(
        tuple(order), M, kind, ordering_key, tuple(flagged),
        {"aggregation": "concatenated", "patients": len(patients), "zero_denominator_cells": len(flagged)},
    )


def _kappa_with_flag(predictions) -> tuple[float, bool]:
    ratings = np.asarray(predictions)
    if ratings.ndim != 2:
        raise ValueError("predictions must be a (raters, windows) matrix")
    n, m = ratings.shape
    if n < 2 or m < 1:
        raise ValueError("need at least 2 raters and 1 window")
    positives = np.count_nonzero(ratings, axis=0).astype(np.float64)
    counts = np.stack([n - positives, positives], axis=1)  # windows x categories
    per_window = (np.sum(counts * counts, axis=1) - n) / (n * (n - 1))
    p_bar = float(np.mean(per_window))
    proportions = counts.sum(axis=0) / (n * m)
    p_e = float(np.sum(proportions * proportions))
    if p_e == 1.0:
        return 1.0, True
    return (p_bar - p_e) / (1.0 - p_e), False


def fleiss_kappa(predictions) -> float:
    """Two-category Fleiss' kappa; raters are rows, hourly windows are columns.

    Defined as 1 when every window is unanimous in a single category, where the
    textbook formula is 0/0.
    """
    return _kappa_with_flag(predictions)[0]


@dataclass(frozen=True, eq=False)
class KappaDistribution:
    patient_ids: tuple[str, ...]
    kappas: np.ndarray
    degenerate: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray

    def to_csv(self) -> str:
        lines = ["patient_id,kappa"]
        lines += [f"{pid},{k:.12g}" for pid, k in zip(self.patient_ids, self.kappas)]
        return "\n".join(lines) + "\n"

    def histogram_csv(self) -> str:
        lines = ["bin_left,bin_right,count"]
        lines += [
            f"{lo:.6g},{hi:.6g},{c}"
            for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts)
        ]
        return "\n".join(lines) + "\n"


def kappa_distribution(
    bundle: Mapping[str, Mapping[str, object]],
    algorithms: Sequence[str],
    bins: int = 20,
) -> KappaDistribution:
    """Per-patient Fleiss' kappa among ``algorithms``, plus a histogram on [-1, 1]."""
    if len(algorithms) < 2:
        raise ValueError("kappa needs at least two algorithms")
    patients = sorted({pid for a in algorithms for pid in bundle[a]})
    missing = [(a, p) for a in algorithms for p in patients if p not in bundle[a]]
    if missing:
        raise CoverageError(missing)
    kappas, flags = [], []
    for pid in patients:
        rows = [_vector(bundle[a][pid]) for a in algorithms]
        if len({len(r) for r in rows}) > 1:
            raise CoverageError([(a, pid) for a in algorithms], f"prediction lengths disagree for {pid}")
        k, flag = _kappa_with_flag(np.vstack(rows))
        kappas.append(k)
        flags.append(flag)
    kappas = np.array(kappas)
    counts, edges = np.histogram(kappas, bins=bins, range=(-1.0, 1.0))
    return KappaDistribution(tuple(patients), kappas, np.array(flags, dtype=bool), edges, counts)
