"""Aggregated Markov parameters, linear baseline outputs, the MMD gradient
flow over them, and scalar realization through the moment generating function."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ensemble_rkhs.ensemble import EnsembleSystem, IndexSet
from ensemble_rkhs.errors import FlowDivergenceError
from ensemble_rkhs.rkhs import KernelConfig, SampleSet, gram_matrix
from ensemble_rkhs.signals import LambdaTable


@dataclass
class MarkovParams:
    """Truncated sequence eta_0 .. eta_{J-1}."""

    eta: np.ndarray

    def __post_init__(self):
        self.eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if self.eta.ndim != 1 or self.eta.size < 1:
            raise ValueError("eta must be a non-empty vector")
        if not np.all(np.isfinite(self.eta)):
            raise ValueError("eta must be finite")

    @property
    def J(self) -> int:
        return self.eta.size

    @classmethod
    def zeros(cls, J: int) -> "MarkovParams":
        return cls(np.zeros(J))


@dataclass
class FlowResult:
    eta_path: np.ndarray  # (iters + 1, J)
    h_path: np.ndarray  # (iters + 1,)
    step_path: np.ndarray  # step actually taken at each iteration

    @property
    def final(self) -> MarkovParams:
        return MarkovParams(self.eta_path[-1])

    def to_csv(self, path) -> None:
        J = self.eta_path.shape[1]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "h"] + [f"eta_{j}" for j in range(J)])
            for k, (h, eta) in enumerate(zip(self.h_path, self.eta_path)):
                w.writerow([k, repr(float(h))] + [repr(float(e)) for e in eta])


def simpson_nodes(lo: float, hi: float, panels: int):
    """Nodes and weights of composite Simpson with ``panels`` panels (2*panels+1 nodes)."""
    if panels < 1:
        raise ValueError("need at least one panel")
    x = np.linspace(lo, hi, 2 * panels + 1)
    h = (hi - lo) / (2 * panels)
    w = np.full(x.size, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return x, w * h / 3.0


def aggregated_markov_parameters(system: EnsembleSystem, J: int = 10,
                                 quad_points: int = 200) -> MarkovParams:
    """eta_j = (1/j!) int_K C(b) A(b)^j B(b) db by composite Simpson."""
    if not system.is_linear or system.C is None:
        raise ValueError("Markov parameters need a linear-in-index system with an output map C")
    betas, w = simpson_nodes(system.index_set.lo, system.index_set.hi, quad_points)
    A = np.asarray(system.A(betas), dtype=float)
    B = np.asarray(system.B(betas), dtype=float)
    C = np.asarray(system.C(betas), dtype=float)
    if B.shape[-1] != 1 or C.shape[-2] != 1:
        raise ValueError("only scalar input and output (m = q = 1) are supported")
    v = B
    eta = np.empty(J)
    for j in range(J):
        eta[j] = np.dot(w, (C @ v)[:, 0, 0]) / math.factorial(j)
        v = A @ v
    return MarkovParams(eta)


def baseline_outputs(eta: MarkovParams, table: LambdaTable) -> SampleSet:
    """Y_i(t) = sum_{j<J} eta_j Lambda_ij(t), one trajectory per tabulated signal."""
    if table.J < eta.J:
        raise ValueError(f"table holds {table.J} orders, eta needs {eta.J}")
    y = np.einsum("j,sjt->st", eta.eta, table.values[:, :eta.J, :])
    return SampleSet(table.time_grid, y[:, :, None])


class MMDObjective:
    """h(S1, S2(eta)) and its gradient for the linear baseline.

    All time integrals are reduced once to inner products of the Lambda
    series (and of S1 against them), so each evaluation costs O(S^2 J^2)
    independent of the grid length.
    """

    def __init__(self, s1: SampleSet, table: LambdaTable, cfg: KernelConfig, J: int):
        if s1.q != 1:
            raise ValueError("the gradient flow works on scalar measurements")
        if s1.time_grid != table.time_grid:
            raise ValueError("S1 and the Lambda table must share a time grid")
        if len(s1) < 2 or table.n_signals < 2:
            raise ValueError("need at least two trajectories on each side")
        if table.J < J:
            raise ValueError(f"table holds {table.J} orders, eta needs {J}")
        self.sigma = cfg.sigma
        self.J = J
        w = table.time_grid.trapezoid_weights()
        S = table.n_signals
        lam = table.values[:, :J, :].reshape(S * J, -1)
        y1 = s1.values[:, :, 0]
        lam_w = lam * w
        self.S, self.n = S, len(s1)
        self.G = (lam_w @ lam.T).reshape(S, J, S, J)
        self.N1 = (y1 * w) @ lam.T
        self.N1 = self.N1.reshape(self.n, S, J)
        self.q11 = np.einsum("at,t,at->a", y1, w, y1)
        k11 = gram_matrix(s1, s1, cfg)
        np.fill_diagonal(k11, 0.0)
        self.c11 = k11.sum() / (self.n * (self.n - 1))

    def __call__(self, eta: np.ndarray, with_grad: bool = True):
        eta = np.asarray(eta, dtype=float)
        S, n, sig = self.S, self.n, self.sigma
        M = np.einsum("j,ajbk->abk", eta, self.G)  # M[a,b,k] = <Y2_a, Lambda_bk>
        P = M @ eta  # <Y2_a, Y2_b>
        pd = np.diag(P)
        d22 = np.maximum(pd[:, None] + pd[None, :] - 2.0 * P, 0.0)
        R = self.N1 @ eta  # <Y1_a, Y2_b>
        d12 = np.maximum(self.q11[:, None] + pd[None, :] - 2.0 * R, 0.0)
        k22 = np.exp(-sig * d22)
        np.fill_diagonal(k22, 0.0)
        k12 = np.exp(-sig * d12)
        h = self.c11 + k22.sum() / (S * (S - 1)) - 2.0 * k12.sum() / (n * S)
        if not with_grad:
            return h
        m_diag = M[np.arange(S), np.arange(S), :]  # (S, J)
        r = k22.sum(axis=1)
        g22 = (-4.0 * sig / (S * (S - 1))) * (r @ m_diag - np.einsum("ab,abk->k", k22, M))
        g12 = (-4.0 * sig / (n * S)) * (np.einsum("ab,abk->k", k12, self.N1)
                                         - k12.sum(axis=0) @ m_diag)
        return h, g22 + g12


def mmd_gradient(eta: MarkovParams, s1: SampleSet, table: LambdaTable,
                 cfg: KernelConfig) -> np.ndarray:
    if table.n_signals != len(s1):
        raise ValueError("the baseline set must pair one signal with each S1 trajectory")
    return MMDObjective(s1, table, cfg, eta.J)(eta.eta)[1]


def gradient_flow(eta0: MarkovParams, s1: SampleSet, table: LambdaTable, cfg: KernelConfig,
                  step: float, iters: int, guard: bool = True,
                  max_halvings: int = 60) -> FlowResult:
    """Forward-Euler descent eta <- eta - step * grad h(eta).

    With ``guard`` on, a step that would increase h is halved until it does
    not (the nominal step is retried at the next iteration); if no halving
    helps, eta is kept.
    """
    if step < 0 or iters < 1:
        raise ValueError("need step >= 0 and iters >= 1")
    if table.n_signals != len(s1):
        raise ValueError("the baseline set must pair one signal with each S1 trajectory")
    obj = MMDObjective(s1, table, cfg, eta0.J)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is checked explicitly
        return _euler(obj, eta0.eta.copy(), step, iters, guard, max_halvings)


def _euler(obj, eta, step, iters, guard, max_halvings):
    h, g = obj(eta)
    if not math.isfinite(h):
        raise FlowDivergenceError(0)
    etas, hs, steps = [eta.copy()], [h], [0.0]
    for k in range(1, iters + 1):
        eps = step
        trial = eta - eps * g
        h_new, g_new = obj(trial)
        if guard:
            halvings = 0
            while not h_new <= h and halvings < max_halvings:
                eps *= 0.5
                halvings += 1
                trial = eta - eps * g
                h_new, g_new = obj(trial)
            if not h_new <= h:
                eps, trial, h_new, g_new = 0.0, eta, h, g
        if not (math.isfinite(h_new) and np.all(np.isfinite(trial))):
            raise FlowDivergenceError(k)
        eta, h, g = trial, h_new, g_new
        etas.append(eta.copy())
        hs.append(h)
        steps.append(eps)
    return FlowResult(np.array(etas), np.array(hs), np.array(steps))


def mgf_eval(eta: MarkovParams, s: float) -> float:
    """Partial sum sum_{j<J} eta_j s^j."""
    return float(np.polynomial.polynomial.polyval(s, eta.eta))


@dataclass
class Realization:
    coefficients: np.ndarray  # a_0 .. a_d of A(b) = sum_k a_k b^k
    residual: float
    converged: bool
    iterations: int

    def to_json(self, path=None) -> str:
        text = json.dumps({
            "coefficients": [float(c) for c in self.coefficients],
            "residual": self.residual,
            "converged": self.converged,
            "iterations": self.iterations,
        }, indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text


def realize_scalar_field(eta: MarkovParams, degree: int, index_set: IndexSet,
                         quad_points: int = 200, max_iter: int = 200,
                         tol: float = 1e-13) -> Realization:
    """Fit a polynomial A(b) (with B = C = 1) to the Markov parameters.

    Minimizes sum_j (j! eta_j - int_K A^j)^2, i.e. the weighted misfit with
    weights (j!)^2, by Gauss-Newton with backtracking. Only the distribution
    of A over K is identifiable, so e.g. an affine field and its mirror image
    are equally good answers.
    """
    if degree < 0:
        raise ValueError("degree must be >= 0")
    J = eta.J
    betas, w = simpson_nodes(index_set.lo, index_set.hi, quad_points)
    basis = np.vander(betas, degree + 1, increasing=True)  # (Q, d+1)
    target = eta.eta * np.array([math.factorial(j) for j in range(J)], dtype=float)
    powers = np.arange(J)

    def residual(a):
        A = basis @ a
        return (A[None, :] ** powers[:, None]) @ w - target, A

    def gauss_newton(a):
        r, A = residual(a)
        cost = float(r @ r)
        converged = cost < tol ** 2
        it = 0
        while not converged and it < max_iter:
            it += 1
            # d/da_k int A^j = int j A^(j-1) b^k
            dA = np.zeros((J, betas.size))
            dA[1:] = powers[1:, None] * A[None, :] ** (powers[1:, None] - 1)
            jac = (dA * w) @ basis
            delta = np.linalg.lstsq(jac, -r, rcond=None)[0]
            t = 1.0
            while True:
                r_new, A_new = residual(a + t * delta)
                c_new = float(r_new @ r_new)
                if c_new < cost or t < 1e-10:
                    break
                t *= 0.5
            if not c_new < cost:
                break
            a, r, A = a + t * delta, r_new, A_new
            small_step = np.linalg.norm(t * delta) <= tol * (1.0 + np.linalg.norm(a))
            cost = c_new
            converged = cost < tol ** 2 or small_step
        return a, cost, converged, it

    # A = 0 makes the Jacobian rank one, so also start from an affine field
    # whose mean and spread match the first two moments (both orientations)
    starts = [np.zeros(degree + 1)]
    length = index_set.length
    if J >= 3 and degree >= 1 and target[0] > 0:
        mean = target[1] / target[0]
        spread = math.sqrt(max(target[2] / target[0] - mean ** 2, 0.0) * 12.0) / length
        mid = 0.5 * (index_set.lo + index_set.hi)
        for sign in (1.0, -1.0):
            a0 = np.zeros(degree + 1)
            a0[0], a0[1] = mean - sign * spread * mid, sign * spread
            starts.append(a0)
    best = None
    total = 0
    for a0 in starts:
        run = gauss_newton(a0)
        total += run[3]
        if best is None or run[1] < best[1]:
            best = run
    a, cost, converged, _ = best
    it = total
    return Realization(a, math.sqrt(cost), bool(converged), it)
