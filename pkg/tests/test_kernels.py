import math

import mpmath as mp
import numpy as np
import pytest
from scipy.integrate import quad

from reflectbridge import domains, kernels
from reflectbridge.kernels import (
    FREE, CostFamily, KernelSpec, LogUnderflow, box_density, ceta_slice, check_lower_bound,
    check_upper_bound, cost_c_eta, density, halfline_density, image_count, interval_density,
    interval_log_density, sup_deviation,
)

UNIT = domains.box([0.0], [1.0])
FIG_LADDER = [0.2, 0.1, 0.05, 0.02, 0.01]


def mp_interval_density(t, eta, x, y, n_img=30):
    """Direct image series in high precision, used as an independent oracle."""
    var = mp.mpf(t) * mp.mpf(eta)
    s = mp.mpf(0)
    for n in range(-n_img, n_img + 1):
        for z in (mp.mpf(y) - mp.mpf(x) - 2 * n, mp.mpf(y) + mp.mpf(x) - 2 * n):
            s += mp.exp(-z * z / (2 * var))
    return s / mp.sqrt(2 * mp.pi * var)


def test_gauss_and_halfline_values():
    assert kernels.gauss_density(1.0, 1.0, 0.0, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))
    v = halfline_density(1.0, 0.5, 0.2, 0.7)
    ref = (math.exp(-0.25 / 1.0) + math.exp(-0.81 / 1.0)) / math.sqrt(math.pi)
    assert v == pytest.approx(ref, rel=1e-14)


def test_halfline_normalised():
    val, _ = quad(lambda y: halfline_density(1.0, 0.3, 0.4, y), 0, np.inf)
    assert val == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("eta,x,y", [(0.01, 0.3, 0.35), (0.1, 0.0, 1.0), (1.0, 0.2, 0.9),
                                     (5.0, 0.5, 0.5), (0.002, 0.999, 0.998)])
def test_interval_density_matches_mp_oracle(eta, x, y):
    mp.mp.dps = 30
    ref = float(mp_interval_density(1.0, eta, x, y))
    assert interval_density(1.0, eta, x, y) == pytest.approx(ref, rel=1e-13)


def test_uniform_limit_and_image_count():
    assert interval_density(1.0, 100.0, 0.3, 0.7) == pytest.approx(1.0, abs=1e-12)
    assert image_count(1e4, 1e-14) > image_count(1.0, 1e-14) >= 3


def test_interval_symmetry():
    rng = np.random.default_rng(0)
    x, y = rng.uniform(size=50), rng.uniform(size=50)
    np.testing.assert_allclose(interval_density(0.7, 0.3, x, y), interval_density(0.7, 0.3, y, x),
                               rtol=1e-14)
    # reflection about 1/2 is a symmetry of the interval
    np.testing.assert_allclose(interval_density(0.7, 0.3, x, y),
                               interval_density(0.7, 0.3, 1 - x, 1 - y), rtol=1e-12)


def test_normalisation_random():
    rng = np.random.default_rng(1)
    for _ in range(10):
        eta = 10 ** rng.uniform(-3, 2)
        x = rng.uniform()
        val, _ = quad(lambda y: interval_density(1.0, eta, x, y), 0, 1, points=[x], limit=200,
                      epsabs=1e-13)
        assert val == pytest.approx(1.0, abs=1e-8)


def test_box_density_rescales():
    dom = domains.box([0.0], [2.0])
    # q on [0, 2] equals q on [0, 1] with eta/4, divided by the width
    assert box_density(1.0, 0.4, 0.6, 1.2, dom) == pytest.approx(
        interval_density(1.0, 0.1, 0.3, 0.6) / 2, rel=1e-14)
    sq = domains.box([0.0, 0.0], [1.0, 1.0])
    v = box_density(1.0, 0.1, np.array([0.2, 0.3]), np.array([0.5, 0.9]), sq)
    assert v == pytest.approx(interval_density(1, .1, .2, .5) * interval_density(1, .1, .3, .9))


def test_density_dispatch():
    assert density(KernelSpec(FREE, 0.3), 1.0, 0.1, 0.4) == pytest.approx(
        kernels.gauss_density(1.0, 0.3, 0.1, 0.4))
    assert density(KernelSpec(domains.half_line(1), 0.3), 1.0, 0.1, 0.4) == pytest.approx(
        halfline_density(1.0, 0.3, 0.1, 0.4))
    with pytest.raises(ValueError):
        KernelSpec(domains.polytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1]), 0.1)


def test_chapman_kolmogorov_small():
    grid = np.linspace(0, 1, 2001)
    t, eta, x, y = 0.8, 0.2, 0.1, 0.75
    integrand = interval_density(t / 2, eta, x, grid) * interval_density(t / 2, eta, grid, y)
    lhs = np.trapezoid(integrand, grid)
    assert lhs == pytest.approx(interval_density(t, eta, x, y), rel=1e-6)


def test_cost_underflow_raises():
    fam = CostFamily(FREE, dimension=1)
    with pytest.raises(LogUnderflow):
        # exp(-1e6) is fine in log space; only infinite separations underflow
        cost_c_eta(fam, 1e-3, np.array([0.0]), np.array([np.inf]))


def test_free_family_is_exact():
    fam = CostFamily(FREE, dimension=1)
    pts = np.linspace(0, 1, 51)
    for eta in (0.1, 0.01):
        _, dev = sup_deviation(fam, eta, pts)
        assert dev < 1e-12


def test_fig1_trend_and_values():
    fam = CostFamily(UNIT)
    pts = np.linspace(0, 1, 201)
    sups = [sup_deviation(fam, eta, pts)[1] for eta in FIG_LADDER]
    assert all(b < a for a, b in zip(sups, sups[1:]))
    # at small eta the worst pair is the doubled corner: deviation eta*log(2)
    assert sups[-1] == pytest.approx(0.01 * math.log(2), rel=1e-9)


def test_fig1_slice_against_mp_oracle():
    fam = CostFamily(UNIT)
    pts = np.linspace(0, 1, 201)
    shift, _ = sup_deviation(fam, 0.01, pts)
    assert shift == pytest.approx(0.020767937403493182517, abs=1e-14)
    ce, cl = ceta_slice(fam, 0.01, 0.3, pts, shift)
    assert np.max(np.abs(ce - cl)) < 0.0069314718055994531 + 1e-12


def test_upper_bound_report():
    fam = CostFamily(UNIT)
    rep = check_upper_bound(fam, [1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01], n_grid=51)
    c = rep.constants
    assert rep.flags["finite"] and rep.flags["stable"] and rep.flags["pass"]
    # raw constant tracks the diagonal value of the kernel, ~ (2 pi eta)^(-1/2)
    assert c["variation_raw"] > 0.25
    assert c["variation_normalised"] < 0.10
    js = rep.to_json()
    assert js["kind"] == "upper" and len(js["etas"]) == 7


def test_upper_bound_free_kernel_constant():
    fam = CostFamily(FREE, dimension=1)
    rep = check_upper_bound(fam, [0.1, 0.02], n_grid=21)
    assert rep.constants["c_hat"] == pytest.approx((2 * math.pi * 0.02) ** -0.5, rel=1e-12)


def test_upper_bound_delta_zero_flagged():
    rep = check_upper_bound(CostFamily(UNIT), [0.1, 0.05, 0.02, 0.01], n_grid=51, delta=0.0)
    assert not rep.flags["pass"] and not rep.flags["delta_positive"]
    assert any("delta = 0" in n for n in rep.notes)


def test_lower_bound_report():
    fam = CostFamily(UNIT)
    rep = check_lower_bound(fam, [1, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01], eps=0.2, n_grid=51)
    assert rep.constants["eta0_hat"] == 1.0
    assert min(rep.ratio_min) >= 1.0 - 1e-12
    assert rep.flags["pass"]
    with pytest.raises(domains.EmptyInnerDomain):
        check_lower_bound(fam, [0.1], eps=0.5)
