"""Gaussian-RBF kernel on trajectory space, unbiased squared MMD and the
Hoeffding-type two-sample test."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from ensemble_rkhs.ensemble import AggregatedTrajectory, TimeGrid


@dataclass(frozen=True)
class KernelConfig:
    """rho(x, y) = exp(-sigma * sum_a int_0^T |x_a - y_a|^2 ds), trapezoid in time."""

    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma >= 0 or not math.isfinite(self.sigma):
            raise ValueError("sigma must be a finite non-negative number")


@dataclass
class SampleSet:
    """Ordered sample of aggregated trajectories on one grid; ``values`` is (I, N+1, q)."""

    time_grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        if self.values.ndim != 3 or self.values.shape[1] != self.time_grid.n_steps + 1:
            raise ValueError(f"sample values of shape {self.values.shape} do not fit the grid")

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[AggregatedTrajectory]) -> "SampleSet":
        if not trajectories:
            raise ValueError("empty sample set")
        grid = trajectories[0].time_grid
        if any(tr.time_grid != grid for tr in trajectories):
            raise ValueError("trajectories must share one time grid")
        return cls(grid, np.stack([tr.values for tr in trajectories]))

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, i) -> AggregatedTrajectory:
        return AggregatedTrajectory(self.time_grid, self.values[i])

    @property
    def q(self) -> int:
        return self.values.shape[2]

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.time_grid, self.values[np.asarray(idx)])


class Decision(str, enum.Enum):
    ACCEPT_NULL = "AcceptNull"
    REJECT_NULL = "RejectNull"


@dataclass(frozen=True)
class TestResult:
    mmd2: float
    threshold: float
    alpha: float
    I: int
    sigma: float
    decision: Decision

    __test__ = False  # not a pytest class

    @property
    def accepted(self) -> bool:
        return self.decision is Decision.ACCEPT_NULL

    def to_dict(self) -> dict:
        return {
            "mmd2": self.mmd2,
            "mmd2_floored": max(self.mmd2, 0.0),
            "threshold": self.threshold,
            "alpha": self.alpha,
            "I": self.I,
            "sigma": self.sigma,
            "decision": self.decision.value,
        }


def _check_compatible(a_grid, a_q, b_grid, b_q):
    if a_grid != b_grid or a_q != b_q:
        raise ValueError("trajectories must share time grid and output dimension")


def trajectory_sq_distance(x: AggregatedTrajectory, y: AggregatedTrajectory) -> float:
    _check_compatible(x.time_grid, x.q, y.time_grid, y.q)
    w = x.time_grid.trapezoid_weights()
    return float(np.sum(w * np.sum((x.values - y.values) ** 2, axis=1)))


def gaussian_kernel(x: AggregatedTrajectory, y: AggregatedTrajectory, cfg: KernelConfig) -> float:
    return math.exp(-cfg.sigma * trajectory_sq_distance(x, y))


def sq_distance_matrix(s1: SampleSet, s2: SampleSet) -> np.ndarray:
    _check_compatible(s1.time_grid, s1.q, s2.time_grid, s2.q)
    w = np.repeat(s1.time_grid.trapezoid_weights(), s1.q)
    a = s1.values.reshape(len(s1), -1)
    b = s2.values.reshape(len(s2), -1)
    return cdist(a, b, "sqeuclidean", w=w)


def gram_matrix(s1: SampleSet, s2: SampleSet, cfg: KernelConfig) -> np.ndarray:
    return np.exp(-cfg.sigma * sq_distance_matrix(s1, s2))


def _offdiag_mean(k: np.ndarray) -> float:
    n = k.shape[0]
    k = k.copy()
    np.fill_diagonal(k, 0.0)
    return math.fsum(k.ravel()) / (n * (n - 1))


def mmd_from_grams(kxx: np.ndarray, kyy: np.ndarray, kxy: np.ndarray) -> float:
    """Unbiased MMD^2 from precomputed Gram blocks (exactly rounded sums, so
    the value does not depend on sample order or on argument order)."""
    n1, n2 = kxy.shape
    if n1 < 2 or n2 < 2:
        raise ValueError("the unbiased estimator needs at least two samples per set")
    return _offdiag_mean(kxx) + _offdiag_mean(kyy) - 2.0 * math.fsum(kxy.ravel()) / (n1 * n2)


def mmd_unbiased(s1: SampleSet, s2: SampleSet, cfg: KernelConfig) -> float:
    if len(s1) < 2 or len(s2) < 2:
        raise ValueError("the unbiased estimator needs at least two samples per set")
    return mmd_from_grams(gram_matrix(s1, s1, cfg), gram_matrix(s2, s2, cfg),
                          gram_matrix(s1, s2, cfg))


def required_samples(C: float, eps: float, alpha: float) -> int:
    """Smallest integer I with I > -(16 C^2 / eps^2) ln(alpha)."""
    if C <= 0 or eps <= 0 or not 0 < alpha <= 1:
        raise ValueError("need C > 0, eps > 0 and 0 < alpha <= 1")
    bound = -16.0 * C ** 2 / eps ** 2 * math.log(alpha)
    return max(int(math.floor(bound)) + 1, 1)


def test_threshold(C: float, alpha: float, I: int) -> float:
    """Acceptance bound 4 C sqrt(-ln(alpha) / I)."""
    if C <= 0 or not 0 < alpha < 1 or I < 1:
        raise ValueError("need C > 0, 0 < alpha < 1 and I >= 1")
    return 4.0 * C * math.sqrt(-math.log(alpha) / I)


test_threshold.__test__ = False


def decide(mmd2: float, threshold: float) -> Decision:
    return Decision.ACCEPT_NULL if mmd2 <= threshold else Decision.REJECT_NULL


def two_sample_test(s1: SampleSet, s2: SampleSet, cfg: KernelConfig,
                    C: float = 1.0, alpha: float = 0.05) -> TestResult:
    """Test P = Q; C = 1 bounds the Gaussian kernel."""
    if len(s1) != len(s2):
        raise ValueError("the acceptance bound assumes equal sample sizes")
    I = len(s1)
    h = mmd_unbiased(s1, s2, cfg)
    thr = test_threshold(C, alpha, I)
    return TestResult(h, thr, alpha, I, cfg.sigma, decide(h, thr))


two_sample_test.__test__ = False


def gram_to_csv(k: np.ndarray, path, labels=None) -> None:
    labels = list(labels) if labels is not None else [str(i) for i in range(k.shape[1])]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + labels)
        for lab, row in zip(labels if k.shape[0] == k.shape[1] else range(k.shape[0]), k):
            w.writerow([lab] + [repr(float(v)) for v in row])
