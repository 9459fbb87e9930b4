"""Pairwise MMD between ensembles and agglomerative clustering of their
kernel mean embeddings."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from ensemble_rkhs.rkhs import KernelConfig, SampleSet, gram_matrix, mmd_from_grams

LINKAGES = ("average", "single", "complete")


@dataclass
class DistanceMatrix:
    """Squared-MMD distances; ``raw`` keeps the unfloored estimates."""

    labels: List[str]
    d: np.ndarray
    raw: Optional[np.ndarray] = None
    diagonal: str = "zero"

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        n = len(self.labels)
        if self.d.shape != (n, n):
            raise ValueError("matrix shape does not match labels")
        if len(set(self.labels)) != n:
            raise ValueError("labels must be distinct")
        if not np.array_equal(self.d, self.d.T):
            raise ValueError("distance matrix must be exactly symmetric")

    def to_csv(self, path, raw: bool = False) -> None:
        m = self.raw if raw and self.raw is not None else self.d
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([""] + list(self.labels))
            for lab, row in zip(self.labels, m):
                w.writerow([lab] + [repr(float(v)) for v in row])


@dataclass
class Dendrogram:
    """Merge list; leaves are 0..N-1 and merge k creates cluster N + k."""

    n_leaves: int
    merges: List[tuple] = field(default_factory=list)  # (a, b, height)
    members: List[tuple] = field(default_factory=list)  # sorted leaves of each merged cluster
    labels: Optional[List[str]] = None

    @property
    def heights(self) -> np.ndarray:
        return np.array([m[2] for m in self.merges])

    def to_json(self, path=None) -> str:
        text = json.dumps({
            "n_leaves": self.n_leaves,
            "labels": self.labels,
            "merges": [{"a": a, "b": b, "height": h, "members": list(mem)}
                       for (a, b, h), mem in zip(self.merges, self.members)],
        }, indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["merge", "a", "b", "height", "members"])
            for k, ((a, b, h), mem) in enumerate(zip(self.merges, self.members)):
                w.writerow([k, a, b, repr(float(h)), " ".join(str(i) for i in mem)])


def pairwise_mmd(sets: Sequence[SampleSet], cfg: KernelConfig,
                 labels: Optional[Sequence[str]] = None) -> DistanceMatrix:
    if len(sets) < 2:
        raise ValueError("need at least two sample sets")
    grid, q = sets[0].time_grid, sets[0].q
    for s in sets:
        if len(s) < 2:
            raise ValueError("each sample set needs at least two trajectories")
        if s.time_grid != grid or s.q != q:
            raise ValueError("sample sets must share time grid and output dimension")
    labels = list(labels) if labels is not None else [str(i + 1) for i in range(len(sets))]
    within = [gram_matrix(s, s, cfg) for s in sets]
    n = len(sets)
    raw = np.zeros((n, n))
    for i, j in combinations(range(n), 2):
        raw[i, j] = raw[j, i] = mmd_from_grams(within[i], within[j],
                                               gram_matrix(sets[i], sets[j], cfg))
    return DistanceMatrix(labels, np.maximum(raw, 0.0), raw, "zero")


def _linkage_distance(d, ca, cb, linkage):
    vals = [d[i, j] for i in ca for j in cb]
    if linkage == "average":
        return math.fsum(vals) / len(vals)
    if linkage == "single":
        return min(vals)
    return max(vals)


def agglomerative_cluster(matrix: DistanceMatrix, linkage: str = "average") -> Dendrogram:
    """Bottom-up merging; ties go to the lexicographically smallest (id_a, id_b)."""
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}")
    d = matrix.d
    n = d.shape[0]
    clusters = {i: (i,) for i in range(n)}
    dendro = Dendrogram(n, labels=list(matrix.labels))
    next_id = n
    while len(clusters) > 1:
        best = None
        ids = sorted(clusters)
        for a, b in combinations(ids, 2):
            h = _linkage_distance(d, clusters[a], clusters[b], linkage)
            if best is None or h < best[2]:
                best = (a, b, h)
        a, b, h = best
        merged = tuple(sorted(clusters.pop(a) + clusters.pop(b)))
        clusters[next_id] = merged
        dendro.merges.append((a, b, float(h)))
        dendro.members.append(merged)
        next_id += 1
    return dendro


def cut_clusters(dendrogram: Dendrogram, k: int) -> List[int]:
    """Undo the last k-1 merges; clusters are numbered by their smallest leaf."""
    n = dendrogram.n_leaves
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    groups = {i: (i,) for i in range(n)}
    for idx, (a, b, _) in enumerate(dendrogram.merges[: n - k]):
        groups[n + idx] = groups.pop(a) + groups.pop(b)
    labels = [0] * n
    for c, members in enumerate(sorted(groups.values(), key=min)):
        for leaf in members:
            labels[leaf] = c
    return labels
