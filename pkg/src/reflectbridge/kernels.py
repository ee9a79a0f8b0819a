"""Transition densities of free and reflected Brownian motion, the induced
cost family ``c_eta = -eta log q_eta(1, x, y)``, and empirical checks of the
two-sided Gaussian bounds on the Neumann heat kernel.

Point arguments carry the spatial dimension on the last axis.  For a
one-dimensional kernel a plain array of shape ``(n,)`` is read as ``n``
points.  The 1-D helpers :func:`halfline_density` and
:func:`interval_density` are elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from . import domains
from .domains import Domain

LOG_2PI = np.log(2.0 * np.pi)
MIN_IMAGES = 3
FREE = "free"


class LogUnderflow(ArithmeticError):
    def __init__(self, msg, pair=None):
        super().__init__(msg)
        self.pair = pair


def quadratic_cost(x, y):
    """``|x - y|^2 / 2`` over the last axis."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return 0.5 * np.sum(diff * diff, axis=-1)


@dataclass(frozen=True)
class KernelSpec:
    """Which transition density to use: free Gaussian, orthant or box."""

    dom: Domain | str = FREE
    eta: float = 1.0
    series_tol: float = 1e-14
    dimension: Optional[int] = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not 0 < self.series_tol <= 1e-6:
            raise ValueError("series_tol must lie in (0, 1e-6]")
        if self.dom != FREE and self.dom.kind == "polytope":
            raise ValueError("closed-form kernels exist only for half-lines and boxes")

    @property
    def dim(self) -> int:
        if self.dom == FREE:
            return self.dimension or 1
        return self.dom.dimension


@dataclass(frozen=True)
class CostFamily:
    """The eta-indexed costs ``c_eta`` together with their limit cost."""

    dom: Domain | str = FREE
    series_tol: float = 1e-14
    dimension: Optional[int] = None
    limit_cost: Callable = field(default=quadratic_cost)

    def spec(self, eta: float) -> KernelSpec:
        return KernelSpec(self.dom, eta, self.series_tol, self.dimension)

    @property
    def dim(self) -> int:
        return self.spec(1.0).dim


def as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        return x[..., None]
    if x.shape[-1] != d:
        raise domains.DimensionMismatch(f"points have dimension {x.shape[-1]}, expected {d}")
    return x


def pair_grid(xs, ys, d: int = 1):
    """Broadcastable ``(n, 1, d)`` and ``(1, m, d)`` views of two point sets."""
    xs = as_points(xs, d)
    ys = as_points(ys, d)
    return xs.reshape(-1, 1, d), ys.reshape(1, -1, d)


# ----------------------------------------------------------------- free kernel

def gauss_log_density(t, eta, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 0 and y.ndim == 0:
        x, y = x[None], y[None]
    var = eta * t
    d = np.broadcast_shapes(x.shape, y.shape)[-1]
    diff = x - y
    return -np.sum(diff * diff, axis=-1) / (2.0 * var) - 0.5 * d * (LOG_2PI + np.log(var))


def gauss_density(t, eta, x, y):
    """``(2 pi eta t)^{-d/2} exp(-|x - y|^2 / (2 eta t))``; scalars are 1-D points."""
    if not t > 0:
        raise ValueError("t must be positive")
    return np.exp(gauss_log_density(t, eta, x, y))


# ----------------------------------------------------------- half-line kernel

def halfline_log_density(t, eta, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    var = eta * t
    terms = np.stack(np.broadcast_arrays(-(x - y) ** 2, -(x + y) ** 2), axis=-1) / (2.0 * var)
    return logsumexp(terms, axis=-1) - 0.5 * (LOG_2PI + np.log(var))


def halfline_density(t, eta, x, y):
    """Reflected kernel on ``[0, inf)``: direct plus mirrored Gaussian term."""
    if not t > 0:
        raise ValueError("t must be positive")
    return np.exp(halfline_log_density(t, eta, x, y))


# ------------------------------------------------------------ interval kernel

def image_count(var: float, tol: float) -> int:
    """Number of image pairs per side so the discarded tail is below ``tol``.

    For ``x, y`` in ``[0, 1]`` each of the four image families beyond index
    ``N`` sits at distances at least ``2N, 2N + 2, ...``; bounding that sum
    by its first term plus half the Gaussian tail integral, and the retained
    sum from below by the density at distance 1, gives a cutoff valid for
    every pair.
    """
    sd = np.sqrt(var)
    log_floor = np.log(tol) + norm.logpdf(1.0 / sd) - np.log(sd)
    n = MIN_IMAGES
    while True:
        log_tail = np.log(4.0) + np.logaddexp(norm.logpdf(2 * n / sd) - np.log(sd),
                                              np.log(0.5) + norm.logsf(2 * n / sd))
        if log_tail < log_floor:
            return n
        n += 1


def interval_log_density(t, eta, x, y, tol: float = 1e-14):
    """Log of the image-series kernel of reflected BM on ``[0, 1]`` (elementwise)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    var = eta * t
    n_img = image_count(var, tol)
    shifts = 2.0 * np.arange(-n_img, n_img + 1)
    xe = x[..., None]
    ye = y[..., None]
    direct = -((xe + shifts - ye) ** 2)
    mirror = -((-xe + shifts - ye) ** 2)
    terms = np.concatenate(np.broadcast_arrays(direct, mirror), axis=-1) / (2.0 * var)
    return logsumexp(terms, axis=-1) - 0.5 * (LOG_2PI + np.log(var))


def interval_density(t, eta, x, y, tol: float = 1e-14):
    """``sum_n p_+(t, x + 2n, y)`` truncated symmetrically at relative tail ``tol``."""
    if not t > 0:
        raise ValueError("t must be positive")
    return np.exp(interval_log_density(t, eta, x, y, tol))


# ----------------------------------------------------------------- box kernel

def box_log_density(t, eta, x, y, dom: Domain, tol: float = 1e-14):
    """Product of affinely rescaled interval kernels, one per coordinate."""
    x = as_points(x, dom.dimension)
    y = as_points(y, dom.dimension)
    width = dom.upper - dom.lower
    xu = (x - dom.lower) / width
    yu = (y - dom.lower) / width
    out = 0.0
    for k in range(dom.dimension):
        out = out + interval_log_density(t, eta / width[k] ** 2, xu[..., k], yu[..., k], tol) \
            - np.log(width[k])
    return out


def box_density(t, eta, x, y, dom: Domain, tol: float = 1e-14):
    if not t > 0:
        raise ValueError("t must be positive")
    return np.exp(box_log_density(t, eta, x, y, dom, tol))


def log_density(spec: KernelSpec, t, x, y):
    """Log transition density at time ``t`` for the kernel named by ``spec``."""
    if not t > 0:
        raise ValueError("t must be positive")
    d = spec.dim
    x = as_points(x, d)
    y = as_points(y, d)
    if spec.dom == FREE:
        return gauss_log_density(t, spec.eta, x, y)
    if spec.dom.kind == "half_line":
        lo = spec.dom.lower
        return np.sum(halfline_log_density(t, spec.eta, x - lo, y - lo), axis=-1)
    return box_log_density(t, spec.eta, x, y, spec.dom, spec.series_tol)


def density(spec: KernelSpec, t, x, y):
    return np.exp(log_density(spec, t, x, y))


# ------------------------------------------------------------------ cost family

def cost_c_eta(fam: CostFamily, eta: float, x, y):
    """``-eta log q_eta(1, x, y)``, evaluated from the log kernel."""
    logq = log_density(fam.spec(eta), 1.0, x, y)
    bad = ~np.isfinite(logq)
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0]
        raise LogUnderflow(f"kernel log-density is not finite at pair index {idx.tolist()}",
                           pair=tuple(idx.tolist()))
    return -eta * logq


def sup_deviation(fam: CostFamily, eta: float, xs, ys=None):
    """Shift-optimal sup distance between ``c_eta`` and the limit cost on a pair grid.

    Returns ``(shift, sup)`` where ``shift = -(max + min) / 2`` of
    ``c_eta - c`` over all pairs ``xs x ys`` and ``sup`` is the resulting
    ``max |c_eta + shift - c|``.
    """
    ys = xs if ys is None else ys
    X, Y = pair_grid(xs, ys, fam.dim)
    diff = cost_c_eta(fam, eta, X, Y) - fam.limit_cost(X, Y)
    hi, lo = float(np.max(diff)), float(np.min(diff))
    return -(hi + lo) / 2.0, (hi - lo) / 2.0


def ceta_slice(fam: CostFamily, eta: float, x0, ys, shift: float = 0.0):
    """``(c_eta(x0, y) + shift, c(x0, y))`` along a set of ``y`` values."""
    d = fam.dim
    ys = as_points(ys, d)
    x = np.broadcast_to(as_points(x0, d), ys.shape)
    return cost_c_eta(fam, eta, x, ys) + shift, fam.limit_cost(x, ys)


# ---------------------------------------------------------------- bound checks

@dataclass
class BoundReport:
    """Result of an empirical bound check; all constants are fitted on the grid."""

    kind: str
    etas: list
    ratio_min: list
    ratio_max: list
    argmin: list
    argmax: list
    constants: dict
    flags: dict
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "etas": [float(e) for e in self.etas],
            "ratio_min": [float(v) for v in self.ratio_min],
            "ratio_max": [float(v) for v in self.ratio_max],
            "argmin": [list(map(int, a)) for a in self.argmin],
            "argmax": [list(map(int, a)) for a in self.argmax],
            "constants": {k: _jsonable(v) for k, v in self.constants.items()},
            "flags": {k: bool(v) for k, v in self.flags.items()},
            "notes": list(self.notes),
        }


def _jsonable(v):
    if v is None:
        return None
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(u) for u in v]
    return float(v)


def _grid_points(dom: Domain | str, n: int, lower=None, upper=None, d=1):
    if dom != FREE and dom.kind == "box":
        lower = dom.lower if lower is None else lower
        upper = dom.upper if upper is None else upper
        d = dom.dimension
    if lower is None:
        lower, upper = np.zeros(d), np.ones(d)
    axes = [np.linspace(lower[k], upper[k], n) for k in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _unravel(flat_index, shape):
    return list(np.unravel_index(int(flat_index), shape))


STABILITY_RTOL = 0.10


def check_upper_bound(fam: CostFamily, etas, n_grid: int = 101, delta: float = 0.1) -> BoundReport:
    """Fit the constant of the Gaussian upper bound with inflated variance ``(1 + delta) eta``.

    For each ``eta`` two constants are fitted over the pair grid:

    ``raw``         max of ``p_eta(1,x,y) exp(|x-y|^2 / (2 (1+delta) eta))``
    ``normalised``  the same times ``(2 pi eta)^{d/2}``, i.e. the constant in
                    front of a Gaussian of variance ``(1 + delta) eta`` up to
                    the factor ``(1 + delta)^{d/2}``.

    The raw constant necessarily grows like ``eta^{-d/2}`` (the kernel at
    ``x = y`` does), so stability is judged on the normalised constant.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    etas = sorted((float(e) for e in etas), reverse=True)
    d = fam.dim
    pts = _grid_points(fam.dom, n_grid, d=d)
    X, Y = pts[:, None, :], pts[None, :, :]
    sq = np.sum((X - Y) ** 2, axis=-1)
    raw, normed, rmin, rmax, amin, amax = [], [], [], [], [], []
    for eta in etas:
        log_ratio = log_density(fam.spec(eta), 1.0, X, Y) + sq / (2.0 * (1.0 + delta) * eta)
        i_max, i_min = int(np.argmax(log_ratio)), int(np.argmin(log_ratio))
        raw.append(float(np.exp(log_ratio.flat[i_max])))
        normed.append(float(np.exp(log_ratio.flat[i_max] + 0.5 * d * (LOG_2PI + np.log(eta)))))
        rmax.append(raw[-1])
        rmin.append(float(np.exp(log_ratio.flat[i_min])))
        amax.append(_unravel(i_max, log_ratio.shape))
        amin.append(_unravel(i_min, log_ratio.shape))
    finite = bool(np.all(np.isfinite(raw)))
    if len(etas) >= 2:
        a, b = normed[-2], normed[-1]
        variation = abs(a - b) / max(a, b)
        raw_variation = abs(raw[-2] - raw[-1]) / max(raw[-2], raw[-1])
    else:
        variation = raw_variation = 0.0
    stable = finite and variation < STABILITY_RTOL
    notes = []
    if delta == 0:
        notes.append("delta = 0 is outside the hypothesis of the bound (delta > 0 required)")
    if not stable:
        notes.append("fitted constant is not stable between the two smallest eta")
    return BoundReport(
        kind="upper",
        etas=etas,
        ratio_min=rmin,
        ratio_max=rmax,
        argmin=amin,
        argmax=amax,
        constants={
            "delta": delta,
            "c_hat": max(raw),
            "c_hat_per_eta": raw,
            "c_hat_normalised": max(normed),
            "c_hat_normalised_per_eta": normed,
            "variation_normalised": variation,
            "variation_raw": raw_variation,
        },
        flags={"finite": finite, "stable": stable, "delta_positive": delta > 0,
               "pass": stable and delta > 0},
        notes=notes,
    )


def check_lower_bound(fam: CostFamily, etas, eps: float, n_grid: int = 101,
                      beta: float = 1.0) -> BoundReport:
    """Interior half-Gaussian lower bound and its global extension on a box.

    ``eta0_hat`` is the largest tested ``eta`` such that
    ``min p^r / p >= 1/2`` over the inner grid for it and every smaller tested
    ``eta``.  For the global form
    ``alpha exp(-(|x-y|^2 + beta eps) / (2 eta (1 - eps)))`` the largest
    admissible ``alpha`` on the closure grid is reported for the given
    ``beta``.
    """
    if fam.dom == FREE or fam.dom.kind != "box":
        raise ValueError("the lower-bound check needs a box domain")
    inner = domains.inner_shrink(fam.dom, eps)
    lo, hi = inner.bounds()
    d = fam.dim
    pts = _grid_points(fam.dom, n_grid, lo, hi)
    X, Y = pts[:, None, :], pts[None, :, :]
    full = _grid_points(fam.dom, n_grid)
    FX, FY = full[:, None, :], full[None, :, :]
    fsq = np.sum((FX - FY) ** 2, axis=-1)
    etas = sorted((float(e) for e in etas), reverse=True)
    rmin, rmax, amin, amax, alphas = [], [], [], [], []
    for eta in etas:
        log_ratio = log_density(fam.spec(eta), 1.0, X, Y) - gauss_log_density(1.0, eta, X, Y)
        i_min, i_max = int(np.argmin(log_ratio)), int(np.argmax(log_ratio))
        rmin.append(float(np.exp(log_ratio.flat[i_min])))
        rmax.append(float(np.exp(log_ratio.flat[i_max])))
        amin.append(_unravel(i_min, log_ratio.shape))
        amax.append(_unravel(i_max, log_ratio.shape))
        if eps < 1:
            log_alpha = log_density(fam.spec(eta), 1.0, FX, FY) \
                + (fsq + beta * eps) / (2.0 * eta * (1.0 - eps))
            alphas.append(float(np.exp(np.min(log_alpha))))
        else:
            alphas.append(None)
    eta0 = None
    for eta, r in sorted(zip(etas, rmin)):
        if r >= 0.5:
            eta0 = eta
        else:
            break
    diam = domains.diameter(fam.dom)
    in_range = 0 < eps < min(0.5, diam)
    return BoundReport(
        kind="lower",
        etas=etas,
        ratio_min=rmin,
        ratio_max=rmax,
        argmin=amin,
        argmax=amax,
        constants={"eps": eps, "beta_hat": beta, "eta0_hat": eta0, "alpha_hat_per_eta": alphas},
        flags={
            "eta0_exists": eta0 is not None,
            "eps_in_range": in_range,
            "alpha_positive": all(a is not None and a > 0 for a in alphas),
            "pass": eta0 is not None and all(a is not None and a > 0 for a in alphas),
        },
    )
