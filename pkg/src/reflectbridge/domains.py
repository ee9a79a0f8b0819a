"""Convex constraint sets: half-lines (orthants), boxes and bounded polytopes.

All operations are pure functions on immutable :class:`Domain` values. Points
are arrays whose last axis is the spatial dimension; a bare scalar is read as
a point in one dimension.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import linprog

DEFAULT_TOL = 1e-12

KINDS = ("half_line", "box", "polytope")


class DomainError(ValueError):
    """Invalid domain description or an operation the domain cannot support."""


class DimensionMismatch(DomainError):
    pass


class EmptyInnerDomain(DomainError):
    pass


class UnboundedDomain(DomainError):
    pass


class AmbiguousNormal(DomainError):
    """Raised at corners and edges, where more than one face is active."""

    def __init__(self, point, faces):
        super().__init__(f"point {np.asarray(point).tolist()} lies on faces {list(faces)}; "
                         "the inward normal is not unique")
        self.faces = tuple(faces)


@dataclass(frozen=True, eq=False)
class Domain:
    """Closed convex set ``{x : A x <= b}`` tagged with its geometric kind.

    Use the :func:`half_line`, :func:`box` and :func:`polytope` constructors
    rather than building this directly.
    """

    kind: str
    dimension: int
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    A: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown domain kind {self.kind!r}")
        if self.dimension < 1:
            raise DomainError("dimension must be a positive integer")

    @property
    def bounded(self) -> bool:
        return self.kind != "half_line"

    def halfspaces(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(A, b)`` with rows scaled to unit normals."""
        if self.kind == "polytope":
            return self.A, self.b
        eye = np.eye(self.dimension)
        if self.kind == "half_line":
            return -eye, -self.lower
        return np.vstack([-eye, eye]), np.concatenate([-self.lower, self.upper])

    def to_json(self) -> dict[str, Any]:
        if self.kind == "half_line":
            return {"kind": "half_line", "dimension": self.dimension, "lower": self.lower.tolist()}
        if self.kind == "box":
            return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        return {"kind": "polytope", "A": self.A.tolist(), "b": self.b.tolist()}

    def __repr__(self):
        return f"Domain({json.dumps(self.to_json())})"


def half_line(dimension: int = 1, lower=None) -> Domain:
    """The orthant ``[lower, inf)^d``; ``lower`` defaults to the origin."""
    lo = np.zeros(dimension) if lower is None else np.atleast_1d(np.asarray(lower, dtype=float))
    if lo.shape != (dimension,):
        raise DomainError("half_line lower corner must have one entry per dimension")
    return Domain("half_line", dimension, lower=lo)


def box(lower, upper) -> Domain:
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    if lo.ndim != 1 or lo.shape != hi.shape:
        raise DomainError("box lower and upper must be vectors of equal length")
    if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
        raise DomainError("box bounds must be finite")
    if not np.all(lo < hi):
        raise DomainError("box requires lower[k] < upper[k] in every coordinate")
    return Domain("box", lo.size, lower=lo, upper=hi)


def polytope(A, b) -> Domain:
    """Bounded polytope ``{x : A x <= b}`` with nonempty interior."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if A.shape[0] != b.size:
        raise DomainError("polytope needs one right-hand side per half-space")
    norms = np.linalg.norm(A, axis=1)
    if np.any(norms == 0):
        raise DomainError("polytope half-space with zero normal")
    dom = Domain("polytope", A.shape[1], A=A / norms[:, None], b=b / norms)
    # bounded: every direction must be blocked by some face
    for sign in (1.0, -1.0):
        for k in range(dom.dimension):
            c = np.zeros(dom.dimension)
            c[k] = -sign
            res = linprog(c, A_ub=dom.A, b_ub=dom.b, bounds=[(None, None)] * dom.dimension,
                          method="highs")
            if res.status == 3:
                raise DomainError("polytope is unbounded")
            if res.status != 0:
                raise DomainError("polytope is empty")
    if inradius(dom) <= 0:
        raise DomainError("polytope has empty interior")
    return dom


def from_json(spec) -> Domain:
    """Build a domain from its JSON description (dict or JSON string)."""
    if isinstance(spec, str):
        spec = json.loads(spec)
    if not isinstance(spec, dict):
        raise DomainError("domain description must be a JSON object")
    kind = spec.get("kind")
    try:
        if kind == "box":
            return box(_field(spec, "lower"), _field(spec, "upper"))
        if kind == "half_line":
            dim = int(spec.get("dimension", len(spec.get("lower", [0]))))
            return half_line(dim, spec.get("lower"))
        if kind == "polytope":
            return polytope(_field(spec, "A"), _field(spec, "b"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise DomainError(f"domain field has invalid value: {exc}") from exc
    raise DomainError(f"domain field 'kind' must be one of {KINDS}, got {kind!r}")


def _field(spec, name):
    if name not in spec:
        raise DomainError(f"domain field {name!r} is missing")
    return spec[name]


def _points(dom: Domain, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.shape[-1] != dom.dimension:
        raise DimensionMismatch(f"point dimension {x.shape[-1]} does not match domain "
                                f"dimension {dom.dimension}")
    return x


def _restore(x_in, out):
    return out[..., 0] if np.ndim(x_in) == 0 else out


def boundary_distance(dom: Domain, x) -> np.ndarray:
    """Signed distance to the boundary: positive inside, negative outside.

    Inside a convex polytope this equals ``min_i (b_i - a_i x)`` for unit
    normals ``a_i``; outside it is only a lower bound on the true distance
    (the sign is what callers rely on).
    """
    p = _points(dom, x)
    A, b = dom.halfspaces()
    return np.min(b - p @ A.T, axis=-1)


def contains(dom: Domain, x, tol: float = DEFAULT_TOL):
    """True where ``x`` lies in the closure of ``dom`` inflated by ``tol``."""
    p = _points(dom, x)
    gap = np.linalg.norm(p - project_closure(dom, p), axis=-1)
    out = gap <= tol
    return bool(out) if out.ndim == 0 else out


def project_closure(dom: Domain, x) -> np.ndarray:
    """Euclidean projection onto the closure of ``dom`` (vectorised over points)."""
    p = _points(dom, x)
    if dom.kind == "box":
        out = np.clip(p, dom.lower, dom.upper)
    elif dom.kind == "half_line":
        out = np.maximum(p, dom.lower)
    else:
        out = _project_polytope(dom.A, dom.b, p)
    return _restore(x, out)


def _project_polytope(A, b, p, tol=DEFAULT_TOL):
    """Active-set enumeration: the first KKT-consistent face set wins.

    Subsets are tried in order of size, so interior points keep the empty set.
    """
    flat = p.reshape(-1, p.shape[-1])
    out = np.full_like(flat, np.nan)
    todo = np.ones(flat.shape[0], dtype=bool)
    d = flat.shape[1]
    m = A.shape[0]
    scale = max(1.0, float(np.max(np.abs(b))))
    for size in range(0, min(d, m) + 1):
        for active in itertools.combinations(range(m), size):
            if not todo.any():
                break
            q = flat[todo]
            if size == 0:
                cand = q
                lam_ok = np.ones(q.shape[0], dtype=bool)
            else:
                As = A[list(active)]
                G = As @ As.T
                if abs(np.linalg.det(G)) < 1e-14:
                    continue
                # minimise |y - q|^2 subject to As y = bs
                lam = np.linalg.solve(G, (q @ As.T - b[list(active)]).T).T
                cand = q - lam @ As
                lam_ok = np.all(lam >= -tol * scale, axis=1)
            feas = np.all(cand @ A.T <= b + tol * scale, axis=1)
            ok = lam_ok & feas
            idx = np.flatnonzero(todo)[ok]
            out[idx] = cand[ok]
            todo[idx] = False
    return out.reshape(p.shape)


def vertices(dom: Domain) -> np.ndarray:
    """Vertices of a bounded domain (box corners or polytope vertex enumeration)."""
    if not dom.bounded:
        raise UnboundedDomain("half_line has no vertex set spanning it")
    if dom.kind == "box":
        return np.array(list(itertools.product(*zip(dom.lower, dom.upper))))
    A, b = dom.A, dom.b
    found = []
    for rows in itertools.combinations(range(A.shape[0]), dom.dimension):
        As = A[list(rows)]
        if abs(np.linalg.det(As)) < 1e-12:
            continue
        v = np.linalg.solve(As, b[list(rows)])
        if np.all(A @ v <= b + 1e-9 * max(1.0, np.max(np.abs(b)))):
            if not any(np.allclose(v, w, atol=1e-12) for w in found):
                found.append(v)
    return np.array(found)


def diameter(dom: Domain) -> float:
    """``sup |x - y|`` over the domain; exact for boxes and polytopes."""
    if not dom.bounded:
        raise UnboundedDomain("diameter of a half_line is infinite")
    if dom.kind == "box":
        return float(np.linalg.norm(dom.upper - dom.lower))
    v = vertices(dom)
    diff = v[:, None, :] - v[None, :, :]
    return float(np.max(np.linalg.norm(diff, axis=-1)))


def inradius(dom: Domain) -> float:
    """Radius of the largest ball contained in the domain."""
    if dom.kind == "half_line":
        return float("inf")
    if dom.kind == "box":
        return float(np.min(dom.upper - dom.lower) / 2)
    d = dom.dimension
    # Chebyshev centre: maximise r with a_i x + r <= b_i (rows are unit normals)
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_ub = np.hstack([dom.A, np.ones((dom.A.shape[0], 1))])
    res = linprog(c, A_ub=A_ub, b_ub=dom.b, bounds=[(None, None)] * d + [(0, None)],
                  method="highs")
    if res.status != 0:
        return 0.0
    return float(res.x[-1])


@dataclass(frozen=True, eq=False)
class InnerDomain:
    """The open set of points of ``parent`` farther than ``epsilon`` from its boundary."""

    parent: Domain
    epsilon: float
    shrunk: Domain = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.parent.dimension

    def contains(self, x):
        out = boundary_distance(self.parent, x) > self.epsilon
        return bool(out) if np.ndim(out) == 0 else out

    def project_closure(self, x):
        return project_closure(self.shrunk, x)

    def bounds(self):
        """``(lower, upper)`` of the shrunken box (box parents only)."""
        if self.shrunk.kind != "box":
            raise DomainError("bounds are only defined for box domains")
        return self.shrunk.lower.copy(), self.shrunk.upper.copy()


def inner_shrink(dom: Domain, eps: float) -> InnerDomain:
    """Shrink ``dom`` by ``eps``; raises :class:`EmptyInnerDomain` past the inradius."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    if dom.bounded and eps >= inradius(dom):
        raise EmptyInnerDomain(f"eps={eps} is not below the inradius {inradius(dom)}")
    if dom.kind == "box":
        shrunk = Domain("box", dom.dimension, lower=dom.lower + eps, upper=dom.upper - eps)
    elif dom.kind == "half_line":
        shrunk = Domain("half_line", dom.dimension, lower=dom.lower + eps)
    else:
        shrunk = Domain("polytope", dom.dimension, A=dom.A, b=dom.b - eps)
    return InnerDomain(dom, float(eps), shrunk)


def inward_normal(dom: Domain, x, tol: float = 1e-9) -> np.ndarray:
    """Unit inward normal at a boundary point lying on exactly one face."""
    p = _points(dom, x)
    if p.ndim != 1:
        raise DomainError("inward_normal takes a single point")
    A, b = dom.halfspaces()
    slack = b - A @ p
    if np.any(slack < -tol):
        raise DomainError(f"point {p.tolist()} is outside the domain")
    active = np.flatnonzero(np.abs(slack) <= tol)
    if active.size == 0:
        raise DomainError(f"point {p.tolist()} is not on the boundary")
    if active.size > 1:
        raise AmbiguousNormal(p, active.tolist())
    n = -A[active[0]]
    return n / np.linalg.norm(n)
