import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from reflectbridge import domains, eot
from reflectbridge.eot import (
    CostMatrix, DiscreteMeasure, ZeroEntry, build_cost, cyclical_invariance_residual,
    monotone_plan, objective, plan_family, sinkhorn, tv_distance,
)
from reflectbridge.kernels import FREE, CostFamily, quadratic_cost


def random_instance(rng, n, m, d=1):
    mu = DiscreteMeasure(rng.uniform(size=(n, d)), _weights(rng, n))
    nu = DiscreteMeasure(rng.uniform(size=(m, d)), _weights(rng, m))
    return mu, nu


def _weights(rng, n):
    w = rng.uniform(0.2, 1.0, n)
    w /= w.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return w


def test_measure_validation():
    with pytest.raises(ValueError):
        DiscreteMeasure([0.0, 1.0], [0.5, 0.6])
    with pytest.raises(ValueError):
        DiscreteMeasure([0.0, 0.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        DiscreteMeasure([0.0, 1.0], [1.0, 0.0])
    assert DiscreteMeasure.uniform([[0.0], [1.0]]).dimension == 1


def test_constant_cost_gives_product_plan():
    rng = np.random.default_rng(0)
    mu, nu = random_instance(rng, 4, 5)
    cp = sinkhorn(mu, nu, CostMatrix(np.full((4, 5), 3.0)), 0.1)
    np.testing.assert_allclose(cp.plan, np.outer(mu.weights, nu.weights), atol=1e-15)


def closed_2x2(C, eta):
    """Uniform 2x2: plan [[a, 1/2-a], [1/2-a, a]] with a^2/(1/2-a)^2 = exp(-D/eta)."""
    D = C[0, 0] + C[1, 1] - C[0, 1] - C[1, 0]
    r = np.exp(-D / (2 * eta))
    return 0.5 * r / (1 + r)


def test_2x2_closed_form_and_golden_section():
    mu = DiscreteMeasure.uniform([0.0, 1.0])
    nu = DiscreteMeasure.uniform([0.2, 0.9])
    cost = build_cost(quadratic_cost, mu, nu)
    eta = 0.3
    cp = sinkhorn(mu, nu, cost, eta, tol=1e-13)
    a = closed_2x2(cost.values, eta)

    def obj(t):
        P = np.array([[t, 0.5 - t], [0.5 - t, t]])
        return objective(P, cost, mu, nu, eta)

    gs = minimize_scalar(obj, bracket=(1e-6, 0.25, 0.5 - 1e-6), method="golden", tol=1e-12).x
    assert gs == pytest.approx(a, abs=1e-7)
    assert cp.plan[0, 0] == pytest.approx(a, abs=1e-12)
    assert cp.plan[0, 1] == pytest.approx(0.5 - a, abs=1e-12)


def test_random_instances_converge_with_invariance():
    rng = np.random.default_rng(7)
    for _ in range(10):
        n, m = rng.integers(2, 9, size=2)
        mu, nu = random_instance(rng, n, m)
        cost = build_cost(CostFamily(domains.box([0.0], [1.0])), mu, nu, 0.05)
        cp = sinkhorn(mu, nu, cost, 0.05)
        assert cp.converged and cp.marginal_error < 1e-9
        for _ in range(20):
            k = int(rng.integers(2, 4))
            cyc = list(zip(rng.integers(0, n, k), rng.integers(0, m, k)))
            assert cyclical_invariance_residual(cp, cost, cyc) < 1e-6


def test_plan_log_density_consistent():
    rng = np.random.default_rng(2)
    mu, nu = random_instance(rng, 3, 4)
    cost = build_cost(quadratic_cost, mu, nu)
    cp = sinkhorn(mu, nu, cost, 0.2)
    m = np.outer(mu.weights, nu.weights)
    np.testing.assert_allclose(np.log(cp.plan / m), cp.log_density(cost), atol=1e-12)


def test_zero_entry_raises():
    cp = eot.Coupling(np.array([[0.5, 0.0], [0.0, 0.5]]), 0.1, np.zeros(2), np.zeros(2), 1, 0.0, True)
    with pytest.raises(ZeroEntry):
        cyclical_invariance_residual(cp, CostMatrix(np.zeros((2, 2))), [(0, 0), (1, 1)])


def test_max_iter_flags_nonconvergence():
    rng = np.random.default_rng(3)
    mu, nu = random_instance(rng, 5, 5)
    cp = sinkhorn(mu, nu, build_cost(quadratic_cost, mu, nu), 0.01, max_iter=1)
    assert not cp.converged and cp.iterations == 1


def test_deterministic_bytes():
    rng = np.random.default_rng(4)
    mu, nu = random_instance(rng, 6, 7)
    cost = build_cost(quadratic_cost, mu, nu)
    a = sinkhorn(mu, nu, cost, 0.05)
    b = sinkhorn(mu, nu, cost, 0.05)
    assert a.plan.tobytes() == b.plan.tobytes()


def test_warm_start_ladder_approaches_monotone_plan():
    k = np.arange(8)
    mu = DiscreteMeasure.uniform((k + 0.5) / 8)
    w = 1 + k / 8
    nu = DiscreteMeasure(0.1 + 0.8 * ((k + 0.5) / 8) ** 2, w / w.sum())
    fam = CostFamily(domains.box([0.0], [1.0]))
    etas = [0.2, 0.1, 0.05, 0.02, 0.01]
    warm = plan_family(mu, nu, fam, etas)
    cold = plan_family(mu, nu, fam, etas, warm_start=False)
    assert all(c.converged for c in warm)
    assert sum(c.iterations for c in warm) <= sum(c.iterations for c in cold)
    mono = monotone_plan(mu, nu)
    tvs = [tv_distance(c.plan, mono) for c in warm]
    assert all(b < a for a, b in zip(tvs, tvs[1:]))


def test_free_family_equals_quadratic_up_to_constant():
    mu = DiscreteMeasure.uniform([0.0, 0.4, 1.0])
    nu = DiscreteMeasure.uniform([0.1, 0.5])
    c1 = build_cost(CostFamily(FREE, dimension=1), mu, nu, 0.1).values
    c2 = build_cost(quadratic_cost, mu, nu).values
    diff = c1 - c2
    assert np.ptp(diff) < 1e-14
