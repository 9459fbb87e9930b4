"""Ensemble systems, fixed-step simulation under broadcast control, and
aggregated (moment / integral) measurements."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ensemble_rkhs.errors import NumericalError, SimulationDivergenceError

DEFAULT_C_TRAJ = 1.0e6


@dataclass(frozen=True)
class IndexSet:
    """Closed interval K = [lo, hi] of index values."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or not self.lo < self.hi:
            raise ValueError(f"degenerate index set [{self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return float(self.hi - self.lo)

    def contains(self, betas) -> bool:
        betas = np.asarray(betas, dtype=float)
        return bool(np.all((betas >= self.lo) & (betas <= self.hi)))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_N = T with step dt."""

    T: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("T and dt must be positive")
        ratio = self.T / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"T={self.T} is not an integer multiple of dt={self.dt}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_steps + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


class SystemKind(enum.Enum):
    LINEAR_IN_INDEX = "linear"
    GENERIC = "generic"


# rhs(t, betas[P], x[..., P, n], u[..., m]) -> [..., P, n]
RHS = Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
# matrix-valued function of the index: betas[P] -> [P, r, c]
MatrixField = Callable[[np.ndarray], np.ndarray]


@dataclass
class EnsembleSystem:
    """A family of ODEs dX/dt = F(t, beta, X, u) over an index set.

    ``rhs`` and ``initial_condition`` are vectorized over the index points:
    ``initial_condition(betas)`` returns a ``(P, n)`` array. For
    ``LINEAR_IN_INDEX`` systems, ``A``, ``B``, ``C`` map ``betas`` to stacked
    matrices and the rhs is A(beta) x + B(beta) u.
    """

    index_set: IndexSet
    state_dim: int
    input_dim: int
    rhs: RHS
    initial_condition: Callable[[np.ndarray], np.ndarray]
    kind: SystemKind = SystemKind.GENERIC
    A: Optional[MatrixField] = None
    B: Optional[MatrixField] = None
    C: Optional[MatrixField] = None
    name: str = ""

    @classmethod
    def linear(cls, index_set, A, B, C=None, initial_condition=None, name=""):
        n = np.asarray(A(np.array([index_set.lo]))).shape[-1]
        m = np.asarray(B(np.array([index_set.lo]))).shape[-1]
        if initial_condition is None:
            def initial_condition(betas):
                return np.zeros((len(betas), n))

        def rhs(t, betas, x, u):
            return _linear_rhs(A(betas), B(betas), x, u)

        return cls(index_set, n, m, rhs, initial_condition,
                   SystemKind.LINEAR_IN_INDEX, A, B, C, name)

    @property
    def is_linear(self) -> bool:
        return self.kind is SystemKind.LINEAR_IN_INDEX

    def with_initial_condition(self, initial_condition) -> "EnsembleSystem":
        if self.is_linear:
            return EnsembleSystem.linear(self.index_set, self.A, self.B, self.C,
                                         initial_condition, self.name)
        return EnsembleSystem(self.index_set, self.state_dim, self.input_dim, self.rhs,
                              initial_condition, self.kind, name=self.name)

    def with_index_set(self, index_set: IndexSet) -> "EnsembleSystem":
        return EnsembleSystem(index_set, self.state_dim, self.input_dim, self.rhs,
                              self.initial_condition, self.kind, self.A, self.B, self.C,
                              self.name)


def _linear_rhs(Ab, Bb, x, u):
    return (np.einsum("pij,...pj->...pi", Ab, x)
            + np.einsum("pij,...j->...pi", Bb, u))


@dataclass
class StateTrajectoryField:
    """X(t_k, beta_i) for one control signal; ``values`` is (N+1, P, n)."""

    time_grid: TimeGrid
    betas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[:2] != (self.time_grid.n_steps + 1, len(self.betas)):
            raise ValueError(f"values shape {self.values.shape} does not match grid/betas")
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("state field contains non-finite values")


@dataclass
class AggregatedTrajectory:
    """A q-component measurement Y(t_k); ``values`` is (N+1, q)."""

    time_grid: TimeGrid
    values: np.ndarray
    c_traj: float = field(default=DEFAULT_C_TRAJ, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != self.time_grid.n_steps + 1:
            raise ValueError("trajectory length does not match its time grid")
        check_bounded(self.values, self.c_traj)

    @property
    def q(self) -> int:
        return self.values.shape[1]


def check_bounded(values: np.ndarray, c_traj: float = DEFAULT_C_TRAJ) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericalError("aggregated trajectory contains non-finite values")
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    if peak >= c_traj:
        raise NumericalError(f"aggregated trajectory sup-norm {peak:.4g} exceeds C_traj={c_traj:.4g}")


def sample_index_points(index_set: IndexSet, count: int, mode: str = "uniform",
                        seed: Optional[int] = None) -> np.ndarray:
    """Draw ``count`` index points from K.

    ``mode="uniform"`` draws i.i.d. uniform points (reproducible from ``seed``);
    ``mode="grid"`` returns the midpoints lo + (k + 1/2) |K| / count.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if mode == "uniform":
        rng = np.random.default_rng(seed)
        return rng.uniform(index_set.lo, index_set.hi, size=count)
    if mode == "grid":
        return index_set.lo + (np.arange(count) + 0.5) * index_set.length / count
    raise ValueError(f"unknown sampling mode {mode!r}")


def _vector_field(system: EnsembleSystem, betas: np.ndarray):
    if system.is_linear:
        Ab = np.asarray(system.A(betas), dtype=float)
        Bb = np.asarray(system.B(betas), dtype=float)
        return lambda t, x, u: _linear_rhs(Ab, Bb, x, u)
    return lambda t, x, u: system.rhs(t, betas, x, u)


def simulate_batch(system: EnsembleSystem, controls: np.ndarray, betas,
                   grid: TimeGrid, x0: Optional[np.ndarray] = None) -> np.ndarray:
    """Classical RK4 for many control signals at once.

    ``controls`` holds the control value for every integration step, shape
    (S, N, m); it is held constant within each step. Returns (S, N+1, P, n).
    """
    betas = np.asarray(betas, dtype=float)
    controls = np.asarray(controls, dtype=float)
    S, N, m = controls.shape
    if N != grid.n_steps:
        raise ValueError(f"controls cover {N} steps, grid has {grid.n_steps}")
    if m != system.input_dim:
        raise ValueError(f"system expects {system.input_dim} inputs, got {m}")
    f = _vector_field(system, betas)
    if x0 is None:
        x0 = system.initial_condition(betas)
    x = np.broadcast_to(np.asarray(x0, dtype=float), (S, len(betas), system.state_dim)).copy()
    out = np.empty((S, N + 1, len(betas), system.state_dim))
    out[:, 0] = x
    h = grid.dt
    for k in range(N):
        t = k * h
        u = controls[:, k]
        k1 = f(t, x, u)
        k2 = f(t + 0.5 * h, x + 0.5 * h * k1, u)
        k3 = f(t + 0.5 * h, x + 0.5 * h * k2, u)
        k4 = f(t + h, x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            bad = np.argwhere(~np.isfinite(x))[0]
            raise SimulationDivergenceError(float(betas[bad[1]]), k + 1, (k + 1) * h)
        out[:, k + 1] = x
    return out


def simulate_system(system: EnsembleSystem, signal, betas, grid: TimeGrid) -> StateTrajectoryField:
    """Integrate every index point of ``system`` under one broadcast ``signal``."""
    controls = signal.step_values(grid)[None]
    values = simulate_batch(system, controls, betas, grid)[0]
    return StateTrajectoryField(grid, np.asarray(betas, dtype=float), values)


def _sorted_by_beta(values: np.ndarray, betas: np.ndarray) -> np.ndarray:
    order = np.argsort(betas, kind="stable")
    return values[..., order, :]


def moments_array(values: np.ndarray, betas, orders: Sequence[int]) -> np.ndarray:
    """Moment aggregation on raw arrays: (..., N+1, P, n) -> (..., N+1, len(orders)*n).

    Components are ordered moment-order major, state component minor.
    """
    orders = list(orders)
    if not orders or any(a < 1 for a in orders) or any(b <= a for a, b in zip(orders, orders[1:])):
        raise ValueError("orders must be a non-empty, strictly increasing list of positive integers")
    values = _sorted_by_beta(np.asarray(values, dtype=float), np.asarray(betas, dtype=float))
    P = values.shape[-2]
    parts = [np.sum(values if a == 1 else values ** a, axis=-2) / P for a in orders]
    return np.concatenate(parts, axis=-1)


def integral_output_array(values: np.ndarray, betas, C: MatrixField, index_set: IndexSet) -> np.ndarray:
    """|K| * mean_i C(beta_i) X(t, beta_i), the sampled version of the output integral."""
    betas = np.asarray(betas, dtype=float)
    order = np.argsort(betas, kind="stable")
    Cb = np.asarray(C(betas[order]), dtype=float)
    values = np.asarray(values, dtype=float)[..., order, :]
    y = np.einsum("pqn,...pn->...pq", Cb, values)
    return index_set.length * np.sum(y, axis=-2) / len(betas)


def aggregate_moments(states: StateTrajectoryField, orders: Sequence[int],
                      c_traj: float = DEFAULT_C_TRAJ) -> AggregatedTrajectory:
    return AggregatedTrajectory(states.time_grid,
                                moments_array(states.values, states.betas, orders), c_traj)


def aggregate_observation(states: StateTrajectoryField,
                          observe: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
                          normalization: str = "mean",
                          index_set: Optional[IndexSet] = None,
                          c_traj: float = DEFAULT_C_TRAJ) -> AggregatedTrajectory:
    """Generic aggregation hook.

    ``observe(t, betas, x)`` maps times (N+1,), betas (P,) and states
    (N+1, P, n) to observations (N+1, P, q). ``normalization="mean"`` averages
    over index points; ``"integral"`` additionally multiplies by |K|.
    """
    order = np.argsort(states.betas, kind="stable")
    betas = states.betas[order]
    obs = np.asarray(observe(states.time_grid.times, betas, states.values[:, order, :]), dtype=float)
    y = np.sum(obs, axis=1) / len(betas)
    if normalization == "integral":
        if index_set is None:
            raise ValueError("integral normalization needs the index set")
        y = index_set.length * y
    elif normalization != "mean":
        raise ValueError(f"unknown normalization {normalization!r}")
    return AggregatedTrajectory(states.time_grid, y, c_traj)


def calibrate(sample: AggregatedTrajectory, null_run: AggregatedTrajectory) -> AggregatedTrajectory:
    """Subtract the null-input measurement, cancelling the free response of linear ensembles."""
    if sample.time_grid != null_run.time_grid or sample.values.shape != null_run.values.shape:
        raise ValueError("sample and null run must share time grid and output dimension")
    return AggregatedTrajectory(sample.time_grid, sample.values - null_run.values, sample.c_traj)
