"""Random piecewise-constant control signals and their convolution moments."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np

from ensemble_rkhs.ensemble import TimeGrid

_TOL = 1e-9


def _integer_ratio(num: float, den: float, what: str) -> int:
    r = num / den
    if abs(r - round(r)) > _TOL * max(1.0, abs(r)) or round(r) < 1:
        raise ValueError(f"{what}: {num} is not a positive integer multiple of {den}")
    return int(round(r))


@dataclass
class ControlSignal:
    """Piecewise-constant u(t); ``values`` is (pieces, m)."""

    piece_width: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] < 1 or not self.piece_width > 0:
            raise ValueError("a control signal needs at least one piece of positive width")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("control values must be finite")

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> float:
        return self.piece_width * self.values.shape[0]

    def step_values(self, grid: TimeGrid) -> np.ndarray:
        """Control value on each integration step of ``grid``, shape (N, m)."""
        r = _integer_ratio(self.piece_width, grid.dt, "piece width vs dt")
        if grid.T > self.T * (1 + _TOL):
            raise ValueError(f"signal horizon {self.T} shorter than grid horizon {grid.T}")
        return self.values[np.arange(grid.n_steps) // r]


@dataclass(frozen=True)
class SignalSpec:
    """Distribution of controls: i.i.d. uniform piece values in a box."""

    m: int
    piece_width: float
    T: float
    box_lo: tuple
    box_hi: tuple
    seed: int = 0

    def __post_init__(self):
        lo = np.broadcast_to(np.asarray(self.box_lo, dtype=float), (self.m,))
        hi = np.broadcast_to(np.asarray(self.box_hi, dtype=float), (self.m,))
        if np.any(lo > hi):
            raise ValueError("box_lo must be <= box_hi componentwise")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        object.__setattr__(self, "box_lo", tuple(lo.tolist()))
        object.__setattr__(self, "box_hi", tuple(hi.tolist()))
        _integer_ratio(self.T, self.piece_width, "horizon vs piece width")

    @property
    def pieces(self) -> int:
        return int(round(self.T / self.piece_width))


def generate_signals(spec: SignalSpec, count: int, offset: int = 0) -> List[ControlSignal]:
    """Draw ``count`` signals; signal i uses the stream seeded by (seed, offset + i),
    so prefixes are stable when ``count`` grows."""
    if count < 1:
        raise ValueError("count must be >= 1")
    lo, hi = np.asarray(spec.box_lo), np.asarray(spec.box_hi)
    out = []
    for i in range(offset, offset + count):
        rng = np.random.default_rng([spec.seed, i])
        out.append(ControlSignal(spec.piece_width, rng.uniform(lo, hi, size=(spec.pieces, spec.m))))
    return out


def stack_step_values(signals: Sequence[ControlSignal], grid: TimeGrid) -> np.ndarray:
    return np.stack([s.step_values(grid) for s in signals])


def evaluate_signal(signal: ControlSignal, t: float) -> np.ndarray:
    """Right-continuous lookup; t = T maps to the last piece."""
    if t < 0 or t > signal.T * (1 + _TOL):
        raise ValueError(f"t={t} outside [0, {signal.T}]")
    idx = min(int(math.floor(t / signal.piece_width + _TOL)), signal.values.shape[0] - 1)
    return signal.values[idx].copy()


def signals_to_csv(signals: Sequence[ControlSignal], path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        m = signals[0].m if signals else 1
        w.writerow(["signal", "piece", "t_start"] + [f"u{c}" for c in range(m)])
        for i, s in enumerate(signals):
            for p, row in enumerate(s.values):
                w.writerow([i, p, repr(p * s.piece_width)] + [repr(float(v)) for v in row])


@dataclass
class LambdaTable:
    """Lambda_ij(t_k) = int_0^t_k (t_k - s)^j u_i(s) ds; ``values`` is (S, J, N+1)."""

    time_grid: TimeGrid
    values: np.ndarray

    @property
    def J(self) -> int:
        return self.values.shape[1]

    @property
    def n_signals(self) -> int:
        return self.values.shape[0]

    def scaled(self, factor: float) -> "LambdaTable":
        return LambdaTable(self.time_grid, factor * self.values)


def lambda_table(signals: Sequence[ControlSignal], J: int, grid: TimeGrid) -> LambdaTable:
    """Exact convolution moments of scalar piecewise-constant signals.

    Over one grid step of width h with constant value c,
      Lambda_j(t + h) = sum_l binom(j, l) h^(j-l) Lambda_l(t) + c h^(j+1) / (j+1),
    which is the per-piece antiderivative carried forward knot by knot.
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    if any(s.m != 1 for s in signals):
        raise NotImplementedError("convolution moments are implemented for scalar inputs only")
    c = stack_step_values(signals, grid)[:, :, 0]
    S, N = c.shape
    h = grid.dt
    shift = np.zeros((J, J))
    for j in range(J):
        for l in range(j + 1):
            shift[j, l] = math.comb(j, l) * h ** (j - l)
    fresh = np.array([h ** (j + 1) / (j + 1) for j in range(J)])
    lam = np.zeros((S, J, N + 1))
    cur = np.zeros((S, J))
    for k in range(N):
        cur = cur @ shift.T + c[:, k, None] * fresh
        lam[:, :, k + 1] = cur
    return LambdaTable(grid, lam)
