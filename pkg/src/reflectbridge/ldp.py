"""Exact discrete OT, Kantorovich potentials and the large-deviation rate function.

The rate function is available in two forms: the dual form
``I = c - (-psi (+) psi^c)`` built from a Kantorovich potential, and a
lower approximation obtained by enumerating short cycles through the OT
support.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .eot import CostMatrix, Coupling, DiscreteMeasure

MAX_PAIRS = 10_000
MAX_ENUM_N = 8
ENUM_CAP = 1_000_000
FEAS_TOL = 1e-9


class SizeLimit(ValueError):
    pass


class OutOfRegion(ValueError):
    """The pair lies outside ``X0 x Y0``; the extended rate there is +inf."""


class InfeasiblePotentials(ArithmeticError):
    def __init__(self, msg, components=None):
        super().__init__(msg)
        self.components = components


@dataclass(frozen=True)
class SupportSet:
    pairs: tuple[tuple[int, int], ...]
    X0: tuple[int, ...]
    Y0: tuple[int, ...]

    @classmethod
    def from_plan(cls, plan, rel_tol: float = 1e-12) -> "SupportSet":
        plan = np.asarray(plan)
        thr = rel_tol * float(np.max(plan))
        pairs = tuple((int(i), int(j)) for i, j in zip(*np.nonzero(plan > thr)))
        return cls(pairs, tuple(sorted({i for i, _ in pairs})), tuple(sorted({j for _, j in pairs})))

    def __contains__(self, pair) -> bool:
        return tuple(pair) in set(self.pairs)


@dataclass(eq=False)
class OtSolution:
    plan: np.ndarray
    value: float
    support: SupportSet
    method: str


@dataclass(eq=False)
class DualPotentials:
    """``psi`` on the X-support, ``psi_c`` its c-transform on the Y-support.

    ``components`` lists the connected components of the support graph as
    ``(rows, cols)``; with more than one component the potentials are not
    unique and the reported ones are a centred choice (see
    :func:`kantorovich_potentials`).
    """

    psi: np.ndarray
    psi_c: np.ndarray
    anchor: int
    components: list
    dual_value: float

    @property
    def unique(self) -> bool:
        return len(self.components) == 1


def plan_value(plan, cost: CostMatrix) -> float:
    """Correctly rounded ``<c, plan>`` (independent of summation order)."""
    return math.fsum((np.asarray(plan) * cost.values).ravel().tolist())


def _is_uniform_square(mu: DiscreteMeasure, nu: DiscreteMeasure) -> bool:
    n = mu.size
    return n == nu.size and np.all(mu.weights == 1.0 / n) and np.all(nu.weights == 1.0 / n)


def exact_ot(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostMatrix,
             method: str = "auto") -> OtSolution:
    """Unregularised discrete OT.

    ``method`` is ``"enumerate"`` (permutations; uniform square instances with
    ``n <= 8``), ``"transport"`` (simplex on the transportation LP) or
    ``"auto"``.
    """
    n, m = mu.size, nu.size
    if n * m > MAX_PAIRS:
        raise SizeLimit(f"n*m = {n * m} exceeds {MAX_PAIRS}")
    if method == "auto":
        method = "enumerate" if (_is_uniform_square(mu, nu) and n <= MAX_ENUM_N) else "transport"
    if method == "enumerate":
        if not _is_uniform_square(mu, nu) or n > MAX_ENUM_N:
            raise SizeLimit("enumeration needs uniform weights and n = m <= 8")
        plan = _enumerate(cost.values, n)
    elif method == "transport":
        plan = _transport(mu.weights, nu.weights, cost.values)
    else:
        raise ValueError(f"unknown method {method!r}")
    return OtSolution(plan, plan_value(plan, cost), SupportSet.from_plan(plan), method)


def _enumerate(C, n):
    best, best_perm = math.inf, None
    w = 1.0 / n
    for perm in itertools.permutations(range(n)):
        val = math.fsum(C[i, perm[i]] * w for i in range(n))
        if val < best:
            best, best_perm = val, perm
    plan = np.zeros((n, n))
    plan[np.arange(n), best_perm] = 1.0 / n
    return plan


def _transport(a, b, C):
    n, m = C.shape
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None),
                  method="highs-ds")
    if res.status != 0:
        raise ArithmeticError(f"transportation LP failed: {res.message}")
    plan = np.clip(res.x.reshape(n, m), 0.0, None)
    support = plan > 1e-12 * plan.max()
    polished = _peel_flows(a, b, support)
    return polished if polished is not None else np.where(support, plan, 0.0)


def _peel_flows(a, b, support):
    """Recompute basic flows exactly by leaf elimination on a support forest."""
    a = a.astype(float).copy()
    b = b.astype(float).copy()
    live = support.copy()
    plan = np.zeros(support.shape)
    while live.any():
        rows = np.flatnonzero(live.sum(axis=1) == 1)
        if rows.size:
            i = rows[0]
            j = int(np.flatnonzero(live[i])[0])
            f = a[i]
        else:
            cols = np.flatnonzero(live.sum(axis=0) == 1)
            if not cols.size:
                return None  # support contains a cycle
            j = cols[0]
            i = int(np.flatnonzero(live[:, j])[0])
            f = b[j]
        if f < -1e-12:
            return None
        plan[i, j] = f
        a[i] -= f
        b[j] -= f
        live[i, j] = False
    if np.max(np.abs(a)) > 1e-12 or np.max(np.abs(b)) > 1e-12:
        return None
    return plan


def brute_force_ot_value(cost: CostMatrix) -> tuple[float, tuple[int, ...]]:
    """Minimum over permutations of ``sum_i c[i, s(i)] / n`` for uniform square instances."""
    C = cost.values
    n = C.shape[0]
    best, best_perm = math.inf, None
    w = 1.0 / n
    for perm in itertools.permutations(range(n)):
        val = math.fsum(C[i, perm[i]] * w for i in range(n))
        if val < best:
            best, best_perm = val, perm
    return best, best_perm


# ------------------------------------------------------------------ potentials

def c_transform(psi, cost: CostMatrix) -> np.ndarray:
    """``psi^c(y_j) = min_i c(x_i, y_j) + psi(x_i)``."""
    return np.min(cost.values + np.asarray(psi)[:, None], axis=0)


def c_transform_x(phi, cost: CostMatrix) -> np.ndarray:
    """Back-transform ``psi(x_i) = max_j phi(y_j) - c(x_i, y_j)``."""
    return np.max(np.asarray(phi)[None, :] - cost.values, axis=1)


def _components(support: SupportSet, n, m):
    parent = list(range(n + m))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in support.pairs:
        ra, rb = find(i), find(n + j)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, tuple[list, list]] = {}
    for node in range(n + m):
        r = find(node)
        rows, cols = groups.setdefault(r, ([], []))
        (rows if node < n else cols).append(node if node < n else node - n)
    comps = [g for g in groups.values() if g[0] and g[1]]
    comps.sort(key=lambda g: min(g[0]))
    return comps


def _min_mean_cycle(W):
    """Karp's minimum mean cycle weight on a complete digraph (``W[a, a]`` ignored)."""
    K = W.shape[0]
    Wm = W.copy()
    np.fill_diagonal(Wm, np.inf)
    D = np.full((K + 1, K), np.inf)
    D[0] = 0.0
    for k in range(1, K + 1):
        D[k] = np.min(D[k - 1][:, None] + Wm, axis=0)
    with np.errstate(invalid="ignore"):
        ratios = np.array([[(D[K, v] - D[k, v]) / (K - k) if np.isfinite(D[k, v]) else -np.inf
                            for k in range(K)] for v in range(K)])
    return float(np.min(np.max(ratios, axis=1)))


def kantorovich_potentials(sol: OtSolution, cost: CostMatrix, mu: DiscreteMeasure,
                           nu: DiscreteMeasure) -> DualPotentials:
    """Potentials from complementary slackness on the OT support.

    Inside each connected component of the support graph the equalities
    ``-psi_i + phi_j = c_ij`` fix the potentials once ``psi = 0`` at the
    component's smallest row.  Components are then offset against each
    other: among all feasible offsets, the one maximising the smallest
    cross-component slack is chosen (a minimum-mean-cycle problem), and
    offsets are pinned by shortest paths from the first component.
    ``psi_c`` is the c-transform of the result.
    """
    C = cost.values
    n, m = C.shape
    comps = _components(sol.support, n, m)
    psi = np.full(n, np.nan)
    phi = np.full(m, np.nan)
    adj_r = {i: [] for i in range(n)}
    adj_c = {j: [] for j in range(m)}
    for i, j in sol.support.pairs:
        adj_r[i].append(j)
        adj_c[j].append(i)
    for rows, _ in comps:
        root = min(rows)
        psi[root] = 0.0
        stack = [("r", root)]
        while stack:
            side, k = stack.pop()
            if side == "r":
                for j in adj_r[k]:
                    if np.isnan(phi[j]):
                        phi[j] = C[k, j] + psi[k]
                        stack.append(("c", j))
            else:
                for i in adj_c[k]:
                    if np.isnan(psi[i]):
                        psi[i] = phi[k] - C[i, k]
                        stack.append(("r", i))
    if np.any(np.isnan(psi)) or np.any(np.isnan(phi)):
        raise InfeasiblePotentials("support does not cover every support point")
    K = len(comps)
    if K > 1:
        W = np.empty((K, K))
        for a, (rows_a, _) in enumerate(comps):
            for b, (_, cols_b) in enumerate(comps):
                block = C[np.ix_(rows_a, cols_b)] + psi[rows_a][:, None] - phi[cols_b][None, :]
                W[a, b] = np.min(block)
        s_star = _min_mean_cycle(W)
        if s_star < -FEAS_TOL:
            raise InfeasiblePotentials("no feasible offsets between support components; "
                                       "the support is not cyclically monotone",
                                       components=comps)
        Ws = W - s_star
        np.fill_diagonal(Ws, 0.0)
        dist = Ws[0].copy()
        dist[0] = 0.0
        for _ in range(K):  # Bellman-Ford on a complete graph
            dist = np.minimum(dist, np.min(dist[:, None] + Ws, axis=0))
        for a, (rows_a, cols_a) in enumerate(comps):
            psi[rows_a] += dist[a]
            phi[cols_a] += dist[a]
    psi_c = c_transform(psi, cost)
    slack = C + psi[:, None] - psi_c[None, :]
    if np.min(slack) < -FEAS_TOL:
        raise InfeasiblePotentials("potentials violate dual feasibility", components=comps)
    tight = max((abs(slack[i, j]) for i, j in sol.support.pairs), default=0.0)
    if tight > FEAS_TOL:
        raise InfeasiblePotentials("complementary slackness fails on the support",
                                   components=comps)
    dual = math.fsum((-psi * mu.weights).tolist() + (psi_c * nu.weights).tolist())
    return DualPotentials(psi, psi_c, int(min(comps[0][0])), comps, dual)


# -------------------------------------------------------------- rate function

def rate_dual(pair, cost: CostMatrix, duals: DualPotentials,
              support: SupportSet | None = None) -> float:
    """``c_ij - (-psi_i + psi^c_j)`` on ``X0 x Y0``."""
    i, j = pair
    if support is not None and (i not in support.X0 or j not in support.Y0):
        raise OutOfRegion(f"pair {pair} is outside X0 x Y0")
    return float(cost.values[i, j] + duals.psi[i] - duals.psi_c[j])


def rate_matrix(cost: CostMatrix, duals: DualPotentials, support: SupportSet | None = None):
    """Dual-form rate on every pair, ``+inf`` outside ``X0 x Y0``."""
    I = cost.values + duals.psi[:, None] - duals.psi_c[None, :]
    if support is not None:
        mask = np.zeros_like(I, dtype=bool)
        mask[np.ix_(list(support.X0), list(support.Y0))] = True
        I = np.where(mask, I, np.inf)
    return I


def _tuples(n_support, length):
    total = n_support ** length
    if total > ENUM_CAP:
        raise SizeLimit(f"{n_support}^{length} tuples exceed the cap {ENUM_CAP}")
    if length == 0:
        return np.zeros((1, 0), dtype=int)
    grids = np.indices((n_support,) * length).reshape(length, -1).T
    return grids


def rate_enum(pair, cost: CostMatrix, support: SupportSet, k_max: int = 3,
              form: str = "cycle") -> tuple[float, tuple]:
    """Best cycle improvement through ``pair`` using support points, ``k <= k_max``.

    ``form="cycle"`` uses the shift ``y_i -> y_{i+1}``; ``form="permutation"``
    maximises over all permutations of the targets (only for ``k_max <= 3``).
    Returns ``(value, tuple_of_pairs)``; the value is at least 0, attained by
    the degenerate 2-cycle through ``pair`` itself.
    """
    if k_max < 2:
        raise ValueError("k_max must be at least 2")
    if form == "permutation" and k_max > 3:
        raise ValueError("the permutation form is enumerated only for k_max <= 3")
    C = cost.values
    sup = np.array(support.pairs, dtype=int)
    i0, j0 = pair
    best, best_tuple = -math.inf, None
    for k in range(2, k_max + 1):
        idx = _tuples(len(sup), k - 1)
        xs = np.column_stack([np.full(len(idx), i0), sup[idx, 0]])
        ys = np.column_stack([np.full(len(idx), j0), sup[idx, 1]])
        base = C[xs, ys].sum(axis=1)
        if form == "cycle":
            perms = [tuple(list(range(1, k)) + [0])]
        else:
            perms = list(itertools.permutations(range(k)))
        for p in perms:
            val = base - C[xs, ys[:, list(p)]].sum(axis=1)
            a = int(np.argmax(val))
            if val[a] > best:
                best = float(val[a])
                best_tuple = tuple(zip(xs[a].tolist(), ys[a].tolist()))
    return best, best_tuple


def monotonicity_gap(support, cost: CostMatrix, k_max: int = 3) -> tuple[float, tuple]:
    """Largest ``sum c(x_i, y_i) - sum c(x_i, y_{i+1})`` over support cycles.

    Zero (up to rounding) exactly when the support is c-cyclically monotone up
    to cycle length ``k_max``.
    """
    pairs = support.pairs if isinstance(support, SupportSet) else tuple(map(tuple, support))
    if k_max > 4:
        raise ValueError("k_max must be at most 4")
    C = cost.values
    sup = np.array(pairs, dtype=int)
    best, best_tuple = 0.0, (pairs[0],) if pairs else ()
    for k in range(2, k_max + 1):
        idx = _tuples(len(sup), k)
        xs, ys = sup[idx, 0], sup[idx, 1]
        val = C[xs, ys].sum(axis=1) - C[xs, np.roll(ys, -1, axis=1)].sum(axis=1)
        a = int(np.argmax(val))
        if val[a] > best:
            best = float(val[a])
            best_tuple = tuple(zip(xs[a].tolist(), ys[a].tolist()))
    return best, best_tuple


@dataclass(eq=False)
class RateReport:
    I_dual: np.ndarray
    I_enum: dict = field(default_factory=dict)  # k_max -> matrix

    def rows(self, mu: DiscreteMeasure, nu: DiscreteMeasure):
        n, m = self.I_dual.shape
        for i in range(n):
            for j in range(m):
                yield (i, j, mu.points[i], nu.points[j], self.I_dual[i, j],
                       *(self.I_enum[k][i, j] for k in sorted(self.I_enum)))


def rate_report(cost: CostMatrix, sol: OtSolution, duals: DualPotentials,
                k_values: Sequence[int] = (2, 3)) -> RateReport:
    I = rate_matrix(cost, duals, sol.support)
    enum = {}
    for k in k_values:
        M = np.empty_like(I)
        for i, j in np.ndindex(I.shape):
            M[i, j] = rate_enum((i, j), cost, sol.support, k)[0]
        enum[k] = M
    return RateReport(I, enum)


# ------------------------------------------------------------------ LDP table

@dataclass
class LdpRow:
    eta: float
    set_id: str
    eta_log_prob: float
    neg_inf_rate: float
    gap: float


@dataclass
class LdpTable:
    rows: list
    extrapolated: dict  # set_id -> linear-in-eta limit from the two smallest etas


def ldp_table(plans: Sequence[Coupling], I: np.ndarray,
              sets: Mapping[str, Sequence[tuple[int, int]]]) -> LdpTable:
    """Tabulate ``eta log pi_eta(A)`` against ``-inf_A I`` along an eta ladder."""
    if not sets:
        raise ValueError("at least one set is required")
    rows = []
    series: dict[str, list] = {}
    for cp in plans:
        for sid, pairs in sets.items():
            if not pairs:
                raise ValueError(f"set {sid!r} is empty")
            ii = [p[0] for p in pairs]
            jj = [p[1] for p in pairs]
            mass = float(np.sum(cp.plan[ii, jj]))
            val = cp.eta * math.log(mass) if mass > 0 else -math.inf
            target = -float(np.min(I[ii, jj]))
            gap = abs(val - target) if np.isfinite(val) else math.inf
            rows.append(LdpRow(cp.eta, sid, val, target, gap))
            series.setdefault(sid, []).append((cp.eta, val))
    extra = {}
    for sid, pts in series.items():
        pts = sorted(pts)
        if len(pts) >= 2 and all(np.isfinite(v) for _, v in pts[:2]):
            (e1, y1), (e2, y2) = pts[0], pts[1]
            extra[sid] = y1 - e1 * (y2 - y1) / (e2 - e1)
        elif pts:
            extra[sid] = pts[0][1]
    return LdpTable(rows, extra)
