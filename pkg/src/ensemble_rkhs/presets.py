"""Named ensembles and polynomial-in-index linear systems."""
from __future__ import annotations

from typing import Dict, Optional, Sequence

import numpy as np

from ensemble_rkhs.ensemble import EnsembleSystem, IndexSet

ROT = np.array([[0.0, -1.0], [1.0, 0.0]])
EYE2 = np.eye(2)
CLUSTER_K = IndexSet(-10.0, 10.0)


def polynomial_field(coeffs: Sequence) -> callable:
    """beta -> sum_k coeffs[k] * beta**k, stacked over index points."""
    mats = [np.atleast_2d(np.asarray(c, dtype=float)) for c in coeffs]
    if not mats or any(m.shape != mats[0].shape for m in mats):
        raise ValueError("polynomial coefficients must be equally shaped matrices")
    stack = np.stack(mats)

    def field(betas):
        betas = np.asarray(betas, dtype=float)
        powers = betas[:, None] ** np.arange(len(mats))[None, :]
        return np.einsum("pk,krc->prc", powers, stack)

    return field


def constant_ic(x0) -> callable:
    x0 = np.asarray(x0, dtype=float)
    return lambda betas: np.tile(x0, (len(betas), 1))


def random_box_ic(lo, hi, seed: int = 0) -> callable:
    """X0(beta) uniform in [lo, hi]^n, drawn from a stream keyed by the bits of beta
    so the same beta always gets the same initial state."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)

    def ic(betas):
        out = np.empty((len(betas), lo.size))
        for i, b in enumerate(np.asarray(betas, dtype=float)):
            key = int(np.float64(b).view(np.uint64))
            out[i] = np.random.default_rng([seed, key]).uniform(lo, hi)
        return out

    return ic


def polynomial_system(index_set: IndexSet, A: Sequence, B: Sequence,
                      C: Optional[Sequence] = None, x0=None, name: str = "") -> EnsembleSystem:
    Af, Bf = polynomial_field(A), polynomial_field(B)
    n = Af(np.array([index_set.lo])).shape[-1]
    Cf = polynomial_field(C) if C is not None else polynomial_field([np.eye(n)])
    if x0 is None:
        ic = constant_ic(np.zeros(n))
    elif callable(x0):
        ic = x0
    else:
        ic = constant_ic(x0)
    return EnsembleSystem.linear(index_set, Af, Bf, Cf, ic, name)


def _table6(j: int) -> EnsembleSystem:
    zero = np.zeros((2, 2))
    if j in (1, 2, 3):
        A = [zero, ROT]
    elif j in (4, 5, 6):
        A = [zero, 2.0 * ROT]
    elif j in (7, 8):
        A = [np.array([[0.0, 10.0], [10.0, 0.0]]), ROT]
    elif j == 9:
        A = [zero, EYE2]
    else:
        raise KeyError(j)
    if j in (2, 5, 8):
        x0 = [0.0, 1.0]
    elif j in (3, 6):
        x0 = random_box_ic([0.0, 0.0], [1.0, 1.0], seed=j)
    else:
        x0 = [1.0, 0.0]
    return polynomial_system(CLUSTER_K, A, [EYE2], [EYE2], x0, name=f"table6:{j}")


def _ex3() -> EnsembleSystem:
    return polynomial_system(IndexSet(0.5, 1.0), [np.zeros((2, 2)), ROT],
                             [[[1.0], [0.0]]], [[[1.0, 0.0]]], None, name="ex3")


PRESETS: Dict[str, dict] = {
    **{f"table6:{j}": {
        "build": (lambda j=j: _table6(j)),
        "observation": "moments",
        "description": desc,
    } for j, desc in [
        (1, "rotation beta, X0 = (1, 0)"),
        (2, "rotation beta, X0 = (0, 1)"),
        (3, "rotation beta, X0 random in [0,1]^2"),
        (4, "rotation 2 beta, X0 = (1, 0)"),
        (5, "rotation 2 beta, X0 = (0, 1)"),
        (6, "rotation 2 beta, X0 random in [0,1]^2"),
        (7, "[[0, 10 - beta], [10 + beta, 0]], X0 = (1, 0)"),
        (8, "[[0, 10 - beta], [10 + beta, 0]], X0 = (0, 1)"),
        (9, "beta * I, X0 = (1, 0)"),
    ]},
    "ex3": {
        "build": _ex3,
        "observation": "integral",
        "description": "rotation beta on [0.5, 1], u on x1 only, y = int x1 dbeta, X0 = 0",
    },
}


def get_preset(name: str) -> EnsembleSystem:
    try:
        return PRESETS[name]["build"]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None
