"""Skorokhod maps, reflected Euler-Maruyama simulation and RBM bridge sampling.

Random numbers come from counter-based Philox streams keyed by
``(seed, stream)``.  Simulation splits the paths into fixed-size blocks and
gives block ``k`` the stream ``k``, so the output depends only on the seed and
the configuration, never on execution order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import domains
from .domains import Domain

BLOCK_SIZE = 8192
BRIDGE_GRID = 4001


class KernelUnderflow(ArithmeticError):
    """A transition density fell below the representable range."""


@dataclass(frozen=True)
class Path:
    times: np.ndarray
    points: np.ndarray  # shape (len(times), d)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if t.ndim != 1 or t.size == 0 or t[0] != 0.0:
            raise ValueError("path times must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("path times must be strictly increasing")
        if pts.shape[0] != t.size:
            raise ValueError("one point per time is required")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", pts)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[self.seed % 2**64, self.stream % 2**64]))

    def substream(self, index: int) -> "RngStream":
        """Independent child stream; the child key mixes parent stream and index."""
        return RngStream(self.seed, (self.stream << 20) + index + 1)


def point_mass(x0) -> Callable[[np.random.Generator, int], np.ndarray]:
    """Initial-law sampler for a Dirac mass at ``x0``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))

    def sample(rng, n):
        return np.broadcast_to(x0, (n, x0.size)).copy()

    return sample


@dataclass(frozen=True)
class SdeConfig:
    """Reflected SDE ``dX = f(t, X) dt + sqrt(eta) dW`` with normal reflection."""

    eta: float
    x0_sampler: Callable[[np.random.Generator, int], np.ndarray]
    drift: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    n_steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("eta must be nonnegative")
        if int(self.n_steps) < 1:
            raise ValueError("n_steps must be at least 1")
        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool):
            raise TypeError("seed must be an integer")


def skorokhod_map_halfline(path: Path) -> Path:
    """Reflect a one-dimensional path at 0: ``f - min(running_min(f), 0)``."""
    if path.dimension != 1:
        raise ValueError("the half-line Skorokhod map is one-dimensional")
    f = path.points[:, 0]
    g = f - np.minimum(np.minimum.accumulate(f), 0.0)
    return Path(path.times, g[:, None])


def fold_box(x, dom: Domain) -> np.ndarray:
    """Coordinate-wise triangle-wave fold of ``x`` into a box.

    This is the identification made by the method of images: every mirror
    image of a point folds back onto it.
    """
    if dom.kind != "box":
        raise ValueError("fold_box needs a box domain")
    x = np.asarray(x, dtype=float)
    lo, hi = dom.lower, dom.upper
    if x.ndim == 0:
        lo, hi = lo[0], hi[0]
    width = hi - lo
    r = np.mod((x - lo) / width, 2.0)
    r = np.where(r > 1.0, 2.0 - r, r)
    return lo + width * r


def skorokhod_map_convex(path: Path, dom: Domain) -> Path:
    """Step-wise projection solution of the discretised Skorokhod problem."""
    f = path.points
    g = np.empty_like(f)
    g[0] = domains.project_closure(dom, f[0])
    inc = np.diff(f, axis=0)
    for k in range(inc.shape[0]):
        g[k + 1] = domains.project_closure(dom, g[k] + inc[k])
    return Path(path.times, g)


def simulate_reflected_endpoints(dom: Domain, cfg: SdeConfig, n_paths: int,
                                 t_end: float = 1.0, scheme: str = "auto") -> np.ndarray:
    """Simulate ``n_paths`` reflected paths and return the ``X_{t_end}`` sample.

    ``scheme`` is ``"fold"`` (exact in law, drift-free boxes only),
    ``"projection"`` (Euler step followed by projection) or ``"auto"``.
    Returns an array of shape ``(n_paths, d)``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    if scheme == "auto":
        scheme = "fold" if (dom.kind == "box" and cfg.drift is None) else "projection"
    if scheme == "fold" and (dom.kind != "box" or cfg.drift is not None):
        raise ValueError("the fold scheme needs a box domain and zero drift")
    dt = t_end / cfg.n_steps
    scale = np.sqrt(cfg.eta * dt)
    root = RngStream(cfg.seed)
    out = np.empty((n_paths, dom.dimension))
    for blk, start in enumerate(range(0, n_paths, BLOCK_SIZE)):
        n = min(BLOCK_SIZE, n_paths - start)
        rng = root.substream(blk).generator()
        x = np.asarray(cfg.x0_sampler(rng, n), dtype=float).reshape(n, dom.dimension)
        x = domains.project_closure(dom, x)
        if cfg.eta > 0:
            noise = rng.standard_normal((cfg.n_steps, n, dom.dimension))
        for k in range(cfg.n_steps):
            if cfg.eta > 0:
                x = x + scale * noise[k]
            if cfg.drift is not None:
                x = x + np.asarray(cfg.drift(k * dt, x)) * dt
            if scheme == "fold":
                x = fold_box(x, dom)
            else:
                x = domains.project_closure(dom, x)
        out[start:start + n] = x
    return out


def sample_rbm_bridge(dom: Domain, eta: float, x, y, times, rng: RngStream,
                      grid_size: int = BRIDGE_GRID, return_mass: bool = False):
    """Sample a reflected Brownian bridge from ``x`` at 0 to ``y`` at 1 on a box.

    Each interior time is drawn from the one-step Doob transform of the image
    series kernel, coordinate by coordinate (the box kernel factorises), by
    inverse-CDF sampling on a ``grid_size`` quadrature grid.

    With ``return_mass`` the quadrature mass of every step's conditional
    density is returned as well; it is 1 up to quadrature error.
    """
    from .kernels import interval_log_density

    if dom.kind != "box":
        raise ValueError("bridge sampling is implemented for boxes")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    times = np.asarray(times, dtype=float).ravel()
    if times.size and (times[0] <= 0 or times[-1] >= 1 or np.any(np.diff(times) <= 0)):
        raise ValueError("bridge times must be increasing inside (0, 1)")
    gen = rng.generator()
    width = dom.upper - dom.lower
    grid = np.linspace(0.0, 1.0, grid_size)
    pts = [x]
    masses = []
    cur = (x - dom.lower) / width
    yu = (y - dom.lower) / width
    t_prev = 0.0
    log_floor = np.log(1e-300)
    for t in times:
        nxt = np.empty_like(cur)
        for k in range(dom.dimension):
            eta_k = eta / width[k] ** 2
            log_den = interval_log_density(1.0 - t_prev, eta_k, cur[k], yu[k])
            if log_den < log_floor:
                raise KernelUnderflow(f"bridge kernel q({1.0 - t_prev:g}, x, y) underflows; "
                                      "lower eta or shorten the horizon")
            log_w = (interval_log_density(t - t_prev, eta_k, cur[k], grid)
                     + interval_log_density(1.0 - t, eta_k, grid, yu[k]) - log_den)
            w = np.exp(log_w)
            cdf = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(grid))])
            masses.append(cdf[-1])
            u = gen.uniform() * cdf[-1]
            nxt[k] = _invert_cdf(grid, w, cdf, u)
        cur = nxt
        pts.append(dom.lower + width * cur)
        t_prev = t
    pts.append(y)
    path = Path(np.concatenate([[0.0], times, [1.0]]), np.array(pts))
    return (path, np.array(masses)) if return_mass else path


def _invert_cdf(grid, w, cdf, u):
    # piecewise-linear density => quadratic CDF on each cell
    i = int(np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, grid.size - 2))
    h = grid[i + 1] - grid[i]
    a, b = w[i], w[i + 1]
    r = u - cdf[i]
    slope = (b - a) / h
    if abs(slope) * h < 1e-12 * max(a, 1e-300):
        s = r / a if a > 0 else 0.5 * h
    else:
        disc = max(a * a + 2.0 * slope * r, 0.0)
        s = (np.sqrt(disc) - a) / slope
    return grid[i] + min(max(s, 0.0), h)
