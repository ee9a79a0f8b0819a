"""Discrete entropic optimal transport in the log domain."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, xlogy

from .kernels import CostFamily, cost_c_eta, quadratic_cost, as_points

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 1_000_000


class ZeroEntry(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    points: np.ndarray  # (n, d)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size != pts.shape[0]:
            raise ValueError("one weight per support point is required")
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        if len({tuple(p) for p in pts}) != pts.shape[0]:
            raise ValueError("support points must be distinct")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def dimension(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True, eq=False)
class CostMatrix:
    values: np.ndarray
    source: str = "custom"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("cost matrix must be two-dimensional")
        if not np.all(np.isfinite(v)):
            raise ValueError("cost matrix entries must be finite")
        object.__setattr__(self, "values", v)


@dataclass(eq=False)
class Coupling:
    """Entropic plan in Gibbs form ``mu_i nu_j exp((u_i + v_j - c_ij) / eta)``."""

    plan: np.ndarray
    eta: float
    u: np.ndarray
    v: np.ndarray
    iterations: int
    marginal_error: float
    converged: bool

    def log_density(self, cost: CostMatrix) -> np.ndarray:
        """``log dpi/dm`` reconstructed from the duals."""
        return (self.u[:, None] + self.v[None, :] - cost.values) / self.eta


def build_cost(fam, mu: DiscreteMeasure, nu: DiscreteMeasure, eta: float | None = None,
               source: str | None = None) -> CostMatrix:
    """Materialise ``c(x_i, y_j)`` for a cost family at ``eta`` or a plain function."""
    X = mu.points[:, None, :]
    Y = nu.points[None, :, :]
    if isinstance(fam, CostFamily):
        if eta is None:
            raise ValueError("a cost family needs eta")
        vals = cost_c_eta(fam, eta, X, Y)
        if source is None:
            source = "free-gaussian" if fam.dom == "free" else fam.dom.kind
    else:
        vals = np.asarray(fam(X, Y), dtype=float)
        vals = np.broadcast_to(vals, (mu.size, nu.size)).copy()
        source = source or "custom"
    return CostMatrix(vals, source)


def marginal_errors(plan, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    return float(max(np.max(np.abs(plan.sum(axis=1) - mu.weights)),
                     np.max(np.abs(plan.sum(axis=0) - nu.weights))))


def sinkhorn(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostMatrix, eta: float,
             tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
             init: tuple[np.ndarray, np.ndarray] | None = None) -> Coupling:
    """Log-domain Sinkhorn for ``min <c, pi> + eta KL(pi | mu x nu)``.

    One iteration updates ``u`` (rows exact) then ``v`` (columns exact); the
    loop stops once the row violation after the column update is below
    ``tol``.  Hitting ``max_iter`` returns the last iterate with
    ``converged=False``.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    C = cost.values
    if C.shape != (mu.size, nu.size):
        raise ValueError("cost matrix shape does not match the marginals")
    log_mu = np.log(mu.weights)
    log_nu = np.log(nu.weights)
    if init is None:
        u = np.zeros(mu.size)
        v = np.zeros(nu.size)
    else:
        u = np.array(init[0], dtype=float)
        v = np.array(init[1], dtype=float)
    it = 0
    err = np.inf
    while it < max_iter:
        it += 1
        u = -eta * logsumexp(log_nu[None, :] + (v[None, :] - C) / eta, axis=1)
        v = -eta * logsumexp(log_mu[:, None] + (u[:, None] - C) / eta, axis=0)
        log_plan = log_mu[:, None] + log_nu[None, :] + (u[:, None] + v[None, :] - C) / eta
        row = np.exp(logsumexp(log_plan, axis=1))
        err = float(np.max(np.abs(row - mu.weights)))
        if err < tol:
            break
    plan = np.exp(log_mu[:, None] + log_nu[None, :] + (u[:, None] + v[None, :] - C) / eta)
    err = marginal_errors(plan, mu, nu)
    return Coupling(plan, float(eta), u, v, it, err, err < tol)


def objective(plan, cost: CostMatrix, mu: DiscreteMeasure, nu: DiscreteMeasure, eta: float) -> float:
    """``<c, pi> + eta KL(pi | mu x nu)``."""
    m = mu.weights[:, None] * nu.weights[None, :]
    kl = np.sum(xlogy(plan, plan) - xlogy(plan, m))
    return float(np.sum(cost.values * plan) + eta * kl)


def cyclical_invariance_residual(coupling: Coupling, cost: CostMatrix,
                                 cycle: Sequence[tuple[int, int]]) -> float:
    """Absolute log-residual of the cyclical invariance identity along ``cycle``.

    ``cycle`` lists ``(i_1, j_1), ..., (i_k, j_k)``; the shifted pairs are
    ``(i_l, j_{l+1})`` with ``j_{k+1} = j_1``.
    """
    ii = np.array([p[0] for p in cycle])
    jj = np.array([p[1] for p in cycle])
    jn = np.roll(jj, -1)
    logd = coupling.log_density(cost)
    if np.any(coupling.plan[ii, jj] <= 0) or np.any(coupling.plan[ii, jn] <= 0):
        raise ZeroEntry("plan density vanishes on the cycle")
    C = cost.values
    lhs = np.sum(logd[ii, jj]) + np.sum(C[ii, jj] - C[ii, jn]) / coupling.eta
    return float(abs(lhs - np.sum(logd[ii, jn])))


def plan_family(mu: DiscreteMeasure, nu: DiscreteMeasure, fam, etas: Sequence[float],
                tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                warm_start: bool = True) -> list[Coupling]:
    """Solve the eta-scaled problem with cost ``c_eta`` for each eta in turn.

    ``fam`` is a :class:`CostFamily` (cost rebuilt per eta) or a fixed cost
    function.  Duals are carried over from the previous eta when
    ``warm_start`` is set.
    """
    out = []
    init = None
    for eta in etas:
        if not eta > 0:
            raise ValueError("etas must be positive")
        cost = build_cost(fam, mu, nu, eta)
        cp = sinkhorn(mu, nu, cost, eta, tol, max_iter, init)
        out.append(cp)
        if warm_start:
            init = (cp.u, cp.v)
    return out


def tv_distance(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def monotone_plan(mu: DiscreteMeasure, nu: DiscreteMeasure) -> np.ndarray:
    """North-west corner plan on sorted 1-D supports (the quadratic-cost optimum)."""
    if mu.dimension != 1 or nu.dimension != 1:
        raise ValueError("monotone plan needs one-dimensional supports")
    oi = np.argsort(mu.points[:, 0], kind="stable")
    oj = np.argsort(nu.points[:, 0], kind="stable")
    a = mu.weights[oi].copy()
    b = nu.weights[oj].copy()
    plan = np.zeros((mu.size, nu.size))
    i = j = 0
    while i < a.size and j < b.size:
        m = min(a[i], b[j])
        plan[oi[i], oj[j]] += m
        a[i] -= m
        b[j] -= m
        if a[i] <= 1e-15:
            i += 1
        if b[j] <= 1e-15:
            j += 1
    return plan


__all__ = [
    "DiscreteMeasure", "CostMatrix", "Coupling", "build_cost", "sinkhorn", "objective",
    "cyclical_invariance_residual", "plan_family", "tv_distance", "monotone_plan",
    "marginal_errors", "quadratic_cost", "as_points",
]
