import numpy as np
import pytest
from numpy.testing import assert_allclose

from mkgscatter import scri
from mkgscatter.conformal import ConformalChart, conformal_factor_check, cone_to_scri, push_data_to_cone
from mkgscatter.nullframe import Point
from mkgscatter.sphere import SphereGrid, lm_index

CHART = ConformalChart(-1.0)


def test_worked_example():
    p = Point(-0.25, 0.25)  # (t, r) = (0, 1/2)
    assert CHART.T_star == -2.5
    assert CHART.u_star(p.u) == 1.0 and CHART.v_star(p.v) == 1.5
    assert_allclose(CHART.Lambda(p.u, p.v), 6.0)
    assert_allclose((p.t - CHART.T_star) ** 2 - p.r**2, 6.0)
    q = CHART.map_point(p)
    assert_allclose([q.u, q.v], [1 / 6, 1 / 4], rtol=1e-15)
    assert_allclose([q.t, q.r], [5 / 12, 1 / 12], rtol=1e-14)
    Xt = CHART.map_cartesian(p.cartesian())
    assert_allclose(Xt, [5 / 12, 0, 0, 1 / 12], rtol=1e-14)


def test_cone_and_infinity():
    _, vt = CHART.to_tilde(-1.0, 5.0)
    assert vt == 1.0
    ut, _ = CHART.to_tilde(0.0, 1e12)
    assert ut < 1e-11


def test_roundtrip_and_relations():
    rng = np.random.default_rng(0)
    u = rng.uniform(-1, 4, 200)
    v = u + rng.uniform(0.01, 30, 200)
    ut, vt = CHART.to_tilde(u, v)
    u2, v2 = CHART.from_tilde(ut, vt)
    assert_allclose(u2, u, atol=1e-12)
    assert_allclose(v2, v, atol=1e-11)
    r, rt = v - u, vt - ut
    assert_allclose(CHART.Lambda(u, v), r / rt, rtol=1e-11)
    assert np.all(np.diff(CHART.to_tilde(np.sort(u), 50.0)[1]) < 0)


def test_domain_errors():
    with pytest.raises(ValueError):
        CHART.to_tilde(-1.5, 2.0)
    with pytest.raises(ValueError):
        CHART.from_tilde(0.0, 0.5)
    with pytest.raises(ValueError):
        CHART.from_tilde(0.2, 1.5)


def test_conformal_factor_is_harmonic():
    X = np.array([0.0, 0.5, 0.0, 0.0])
    res = [abs(conformal_factor_check(CHART, X, h)) for h in (2e-2, 1e-2)]
    assert abs(conformal_factor_check(CHART, X, 1e-3)) < 1e-5
    assert 3.5 < res[0] / res[1] < 4.5
    # negative control: box Lambda = -2 - 6 = -8
    assert_allclose(conformal_factor_check(CHART, X, 1e-2, power=1), -8.0, rtol=1e-8)


@pytest.mark.parametrize("which", ["Lbar_tilde", "L_tilde"])
def test_frame_relations(which):
    # test function of (u~, v~); compare tilde derivative with the physical one
    f = lambda ut, vt: np.sin(3 * ut) * np.cos(2 * vt) + ut * vt**2
    u0, v0 = -0.3, 2.0
    ut, vt = CHART.to_tilde(u0, v0)
    g = lambda u, v: f(*CHART.to_tilde(u, v))
    errs = []
    for h in (1e-2, 5e-3):
        if which == "Lbar_tilde":
            tilde = (f(ut + h, vt) - f(ut - h, vt)) / (2 * h)
            phys = -4 * CHART.v_star(v0) ** 2 * (g(u0, v0 + h) - g(u0, v0 - h)) / (2 * h)
        else:
            tilde = (f(ut, vt + h) - f(ut, vt - h)) / (2 * h)
            phys = -4 * CHART.u_star(u0) ** 2 * (g(u0 + h, v0) - g(u0 - h, v0)) / (2 * h)
        errs.append(abs(tilde - phys))
    assert errs[1] < 1e-3
    assert errs[0] / errs[1] > 3.5


def _data():
    g = SphereGrid(2)
    d = scri.ScatteringData.zeros(g, np.linspace(-1.5, 3, 901))
    d.Phi[:, lm_index(1, 0)] = np.exp(-(d.u**2) / 0.1)
    d.Abar_e[:, lm_index(1, 0)] = np.exp(-((d.u - 0.2) ** 2) / 0.1)
    return d


def test_push_zero_data():
    d = scri.ScatteringData.zeros(SphereGrid(2), np.linspace(-1.5, 3, 101))
    cone = push_data_to_cone(d, CHART, 65)
    assert not cone.phi.any() and not cone.alpha_e.any()


def test_push_arithmetic_at_u0():
    d = _data()
    # u = 0 -> u* = 5/4 -> v~ = 1/5, a node of the 161-point grid
    cone = push_data_to_cone(d, CHART, 161)
    k = 32
    assert_allclose(cone.v[k], 0.2)
    assert_allclose(cone.phi[k, lm_index(1, 0)], 5 * d.Phi[300, lm_index(1, 0)], rtol=1e-12)
    assert_allclose(cone.alpha_e[k, lm_index(1, 0)], -125 / 4 * d.Abar_e[300, lm_index(1, 0)],
                    rtol=1e-12)
    assert_allclose(cone.v_cut, 1 / (4 * 4.25))
    assert not cone.phi[cone.v < cone.v_cut].any()


def test_push_inverse_recovers_samples():
    d = _data()
    cone = push_data_to_cone(d, CHART, 257)
    u, e, b, phi = cone_to_scri(cone)
    idx = lm_index(1, 0)
    assert_allclose(phi[:, idx], np.exp(-(u**2) / 0.1), atol=1e-5)
    assert_allclose(e[:, idx], np.exp(-((u - 0.2) ** 2) / 0.1), atol=1e-5)


def test_push_rejects_undecayed_data():
    d = _data()
    d.Phi[:, 0] = 1.0
    with pytest.raises(ValueError):
        push_data_to_cone(d, CHART)
    d2 = scri.ScatteringData.zeros(SphereGrid(2), np.linspace(-0.5, 3, 101))
    with pytest.raises(ValueError):
        push_data_to_cone(d2, CHART)
