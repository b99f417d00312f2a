"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Convergence orders are least-squares slopes of log(error) against log(h) over
N = 65, 129, 257. Quantities already at round-off (< 1e-12) on every grid count as
converged, since no truncation error is left to measure.
"""

import math

import numpy as np
import pytest
import sympy as sp
from scipy.integrate import quad

from mkgscatter import conedata as cdm
from mkgscatter import diagnostics as dg
from mkgscatter import evolve as ev
from mkgscatter import nullframe as nf
from mkgscatter import scri
from mkgscatter.conformal import ConformalChart, push_data_to_cone
from mkgscatter.scri import ScatteringData
from mkgscatter.sphere import SphereGrid, ScalarField, angular_op, lm_index

CHART = ConformalChart(-1.0)
LEVELS = (65, 129, 257)
DEFAULT_N = 129
MIN_ORDER = 1.8
ROUNDOFF = 1e-12


def _record(log, k, ok, detail):
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    log.append(line)
    assert ok, line


def _order(Ns, errs):
    h = 1.0 / (np.asarray(Ns, dtype=float) - 1)
    return float(np.polyfit(np.log(h), np.log(np.asarray(errs, dtype=float)), 1)[0])


def _converges(Ns, errs):
    errs = np.asarray(errs, dtype=float)
    return bool(errs.max() < ROUNDOFF or _order(Ns, errs) >= MIN_ORDER)


@pytest.fixture(scope="module")
def canonical():
    d = scri.canonical_data()
    runs = {}
    for N in (33, *LEVELS):
        cone = cdm.assemble_cone_state(push_data_to_cone(d, CHART, N))
        runs[N] = ev.evolve_march(cone, ev.EvolutionConfig(N=N))
    return d, runs


# -- 1: null frame -----------------------------------------------------------------
_PAIRS = [
    ("T", "S"), ("T", "K"), ("S", "K"), ("Lbar", "S"), ("Lbar", "K"), ("L", "S"),
    ("L", "K"), ("Lbar", "T"), ("L", "T"), ("Lbar", "L"), ("e1", "S"), ("e2", "K"),
    ("e1", "T"), ("Omega23", "Omega31"), ("Omega12", "Omega23"), ("Omega31", "Omega12"),
    ("Lbar", "Omega12"), ("L", "Omega23"), ("K", "Omega31"), ("S", "Omega12"),
]
_C8 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])


def _jacobian(Z, X, h=5e-3):
    """d_a Z^mu by the eighth-order central stencil, columns indexed by a."""
    E = np.eye(4)
    return np.stack([sum(c * Z(X + k * h * E[a]) for c, k in zip(_C8, range(-4, 5))) / h
                     for a in range(4)], axis=1)


def _random_point(rng):
    X = rng.normal(size=4)
    X[1:] *= rng.uniform(1, 3) / np.linalg.norm(X[1:])
    return X


def test_criterion_1_null_frame_exactness(acceptance_log):
    rng = np.random.default_rng(11)
    rt = 0.0
    for _ in range(2000):
        X = _random_point(rng)
        M = rng.normal(size=(4, 4))
        F = M - M.T
        rt = max(rt, np.abs(nf.null_recompose(nf.null_decompose(F, X), X) - F).max())
    comm = 0.0
    for z1, z2 in _PAIRS:
        Z1, Z2 = nf.vector_field(z1), nf.vector_field(z2)
        table = nf.vectorfield_commutator(z1, z2)
        n = 0
        while n < 10:
            X = _random_point(rng)
            if np.hypot(X[1], X[2]) < 0.3 * np.linalg.norm(X[1:]):
                continue  # keep the angular frame away from its polar singularity
            n += 1
            bracket = _jacobian(Z2, X) @ Z1(X) - _jacobian(Z1, X) @ Z2(X)
            rhs = sum((c(X) * nf.vector_field(t)(X) for t, c in table.items()), np.zeros(4))
            comm = max(comm, np.abs(bracket - rhs).max())
    _record(acceptance_log, 1, rt < 1e-10 and comm < 1e-10,
            f"round trip {rt:.1e}, commutator table {comm:.1e} (tol 1e-10)")


# -- 2: sphere operators -----------------------------------------------------------
def test_criterion_2_sphere_operators(acceptance_log):
    g = SphereGrid(4)
    worst = 0.0
    for l in range(g.l_max + 1):
        for m in range(-l, l + 1):
            c = np.zeros(g.ncoef, dtype=complex)
            c[lm_index(l, m)] = 1.0
            f = ScalarField(g, c)
            lap = angular_op("laplacian", f)
            worst = max(worst, np.abs(lap.samples() + l * (l + 1) * f.samples()).max())
    area = abs(g.integrate(np.ones(g.npts)) - 4 * math.pi)
    _record(acceptance_log, 2, worst < 1e-10 and area < 1e-12,
            f"eigenvalue error {worst:.1e} (tol 1e-10), area error {area:.1e} (tol 1e-12)")


# -- 3: compatibility ----------------------------------------------------------------
def test_criterion_3_compatibility(acceptance_log):
    d = ScatteringData.zeros(SphereGrid(2), np.linspace(-6, 6, 1201))
    d.Phi[:, 0] = math.sqrt(4 * math.pi) * np.exp(-d.u**2) * np.exp(1j * d.u)
    q0, aniso = scri.compute_charge(d)
    oracle = -quad(lambda x: math.exp(-2 * x * x), -np.inf, np.inf)[0]
    err = max(abs(q0 - oracle), abs(q0 + math.sqrt(math.pi / 2)))
    mag = ScatteringData.zeros(SphereGrid(2), np.linspace(-6, 6, 1201))
    mag.Abar_b[:, lm_index(2, 0)] = np.exp(-(mag.u / 0.5) ** 2)
    rejected = not scri.check_compatibility(mag).passed
    _record(acceptance_log, 3, err < 1e-6 and aniso < 1e-8 and rejected,
            f"q0 error {err:.1e} (tol 1e-6), anisotropy {aniso:.1e} (tol 1e-8), "
            f"magnetic control rejected={rejected}")


# -- 4: cone hierarchy ---------------------------------------------------------------
def test_criterion_4_cone_closed_forms(acceptance_log):
    g = SphereGrid(3)
    v = np.linspace(0, 1, 257)
    zeros = np.zeros((v.size, g.ncoef), dtype=complex)
    c = 0.7 - 0.2j
    worst = 0.0
    for power, exact in ((0, v / 2), (1, v**2 / 3)):
        a = zeros.copy()
        a[:, lm_index(2, 1)] = c * v**power
        e, _ = cdm.solve_slashedA(v, a, a)
        got = e[1:, lm_index(2, 1)]
        worst = max(worst, np.max(np.abs(got - c * exact[1:]) / np.abs(c * exact[1:])))
    k = 0.6
    phi = zeros.copy()
    phi[:, 0] = k * np.exp(1j * v) * np.sqrt(4 * np.pi)
    A = cdm.solve_A_ubarL(g, v, zeros, zeros, cdm.current_L(g, v, phi))
    exact = k**2 * v[1:] ** 2 / 9
    worst = max(worst, np.max(np.abs(A[1:, 0] / np.sqrt(4 * np.pi) - exact) / exact))
    _record(acceptance_log, 4, worst < 1e-8, f"max relative error {worst:.1e} (tol 1e-8)")


# -- 5: linear oracle ----------------------------------------------------------------
def _spherical_wave():
    """(F(t + r) - F(t - r)) / r with its axis limit, as a function of (u~, v~)."""
    t, r = sp.symbols("t r")
    F = lambda s: sp.exp(-(((s - 1) * 4) ** 2))
    e = (F(t + r) - F(t - r)) / r
    fn = sp.lambdify((t, r), e, "numpy")
    axis = sp.lambdify(t, sp.limit(e, r, 0), "numpy")

    def exact(u, v):
        T, R = u + v, v - u
        out = np.empty_like(T, dtype=float)
        m = R > 1e-12
        out[m] = fn(T[m], R[m])
        out[~m] = axis(T[~m])
        return out

    return exact


def test_criterion_5_dalembert_oracle(acceptance_log):
    g = SphereGrid(4)
    exact = _spherical_wave()
    Ns = (33, 65, 129, 257)
    errs = []
    for N in Ns:
        v = np.linspace(0, 1, N)
        z = np.zeros((N, g.ncoef), dtype=complex)
        cone = cdm.ConeData(g, v, z, z, z, z, z, z, z, z)
        psi0 = np.zeros((N, 5, g.ncoef), dtype=complex)
        psi0[:, 4, 0] = exact(0 * v, v)
        st = ev.evolve_march(cone, ev.EvolutionConfig(N=N, nonlinear=False), psi0=psi0)
        uu, vv = np.meshgrid(st.u, st.v, indexing="ij")
        err = np.abs(st.psi[:, :, 4, 0] - exact(uu, vv))
        errs.append(float(err[st.valid()].max()))
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    ok = all(abs(q - 4.0) <= 0.3 for q in ratios)
    _record(acceptance_log, 5, ok,
            "L-inf ratios " + ", ".join(f"{q:.2f}" for q in ratios) + " (target 4.0 +- 0.3)")


# -- 6: gauge propagation ------------------------------------------------------------
def test_criterion_6_gauge_propagation(acceptance_log, canonical):
    d, runs = canonical
    lam = [ev.gauge_monitor(runs[N]).max_lambda for N in LEVELS]
    order = _order(LEVELS, lam)
    bumped = []
    for N in LEVELS[:2]:
        cone = cdm.assemble_cone_state(push_data_to_cone(d, CHART, N))
        cone.A_ubarL = cone.A_ubarL.copy()
        cone.A_ubarL[:, 0] += 1e-2 * np.exp(-(((cone.v - 0.5) / 0.1) ** 2)) * np.sqrt(4 * np.pi)
        bumped.append(ev.gauge_monitor(ev.evolve_march(cone, ev.EvolutionConfig(N=N))).max_lambda)
    plateau = bumped[0] / bumped[1]
    ok = order >= MIN_ORDER and bumped[1] > 1e-3 and 0.7 < plateau < 1.4
    _record(acceptance_log, 6, ok,
            f"max|lambda| order {order:.2f} (min {MIN_ORDER}); perturbed control "
            f"{bumped[1]:.1e} with h-ratio {plateau:.2f} (plateau window 0.7-1.4)")


# -- 7: Picard contraction ----------------------------------------------------------
def test_criterion_7_picard(acceptance_log, canonical):
    d, _ = canonical
    cone = cdm.assemble_cone_state(push_data_to_cone(d, CHART, DEFAULT_N))
    cfg = ev.EvolutionConfig(N=DEFAULT_N, mode="picard")
    pst, gaps = ev.evolve_picard(cone, cfg)
    ratios = gaps[1:] / gaps[:-1]
    mst = ev.evolve_march(cone, cfg, n_levels=pst.n_levels)
    diff = ev.slice_norms(pst.psi, mst.psi, cfg.h).max()
    norm = np.sqrt(cfg.h * (np.abs(mst.psi) ** 2).sum(axis=(1, 2, 3))).max()
    bound = 5 * cfg.h**2 * norm
    ok = bool(np.all(ratios[:3] < 1)) and diff < bound
    _record(acceptance_log, 7, ok,
            "gap ratios " + ", ".join(f"{q:.2f}" for q in ratios[:3])
            + f"; Picard vs march {diff:.1e} (bound 5 h^2 |Psi| = {bound:.1e})")


# -- 8: energy identity ------------------------------------------------------------
def test_criterion_8_energy_identity(acceptance_log, canonical):
    _, runs = canonical
    orders = {}
    for kind in ("upper", "lower"):
        spec = dg.MultiplierSpec(kind)
        res = [dg.energy_identity_residual(
            dg.fields_from_state(runs[N], CHART, dg.default_domain(CHART, kind)), spec)["residual"]
            for N in LEVELS]
        orders[kind] = _order(LEVELS, res)
    u = -np.geomspace(1e-3, 1e3, 401)
    up, lo = dg.MultiplierSpec("upper"), dg.MultiplierSpec("lower")
    v = up.split_curve(u)
    jump = float(np.max(np.abs(lo.kappa(u, v) / up.kappa(u, v) - 1)))
    ok = min(orders.values()) >= MIN_ORDER and jump < 1e-12
    _record(acceptance_log, 8, ok,
            f"orders upper {orders['upper']:.2f}, lower {orders['lower']:.2f} (min {MIN_ORDER}); "
            f"kappa jump on split curve {jump:.1e}")


# -- 9: null-structure residuals ----------------------------------------------------
def test_criterion_9_null_structure(acceptance_log, canonical):
    _, runs = canonical
    norms = [dg.residual_norms(dg.null_structure_residuals(dg.fields_from_state(runs[N], CHART)))
             for N in LEVELS]
    status = {}
    for name in dg.RESIDUAL_NAMES:
        errs = [n[name] for n in norms]
        status[name] = ("0" if max(errs) < ROUNDOFF else f"{_order(LEVELS, errs):.2f}",
                        _converges(LEVELS, errs))
    u, v = np.linspace(-3, -1, 21), np.linspace(0.5, 4, 31)
    coul = dg.fields_from_functions(SphereGrid(4, pad=False), u, v,
                                    {"rho": lambda U, V, th, ph: -0.005 / (V - U) ** 2})
    cmax = max(dg.residual_norms(dg.null_structure_residuals(coul)).values())
    ok = all(s[1] for s in status.values()) and cmax < 1e-12
    orders = ", ".join(f"{k} {s[0]}" for k, s in status.items())
    _record(acceptance_log, 9, ok, f"orders [{orders}]; Coulomb max {cmax:.1e} (tol 1e-12)")


# -- 10: round trip ------------------------------------------------------------------
def test_criterion_10_round_trip(acceptance_log, canonical):
    d, runs = canonical
    Ns = sorted(runs)
    errs = [dg.round_trip_error(runs[N], CHART, d)["relative_l2"] for N in Ns]
    default = errs[Ns.index(DEFAULT_N)]
    monotone = all(b < a for a, b in zip(errs, errs[1:]))
    ok = default < 0.05 and monotone
    _record(acceptance_log, 10, ok,
            "relative L2 " + ", ".join(f"N={N}: {e:.1e}" for N, e in zip(Ns, errs))
            + f" (tol 5% at N={DEFAULT_N}, monotone={monotone})")


# -- 11: charge ----------------------------------------------------------------------
def test_criterion_11_charge(acceptance_log, canonical):
    d, runs = canonical
    q0 = scri.compute_charge(d)[0]
    hist = {N: dg.charge_history(runs[N], CHART, dg.charge_times(runs[N], CHART)) for N in LEVELS}
    h = hist[DEFAULT_N]
    gap = np.abs(h["q_slice"] - q0)
    allowed = np.abs(h["cone_flux"]) + 0.05 * abs(q0)
    drift = [float(np.ptp(hist[N]["total"])) for N in LEVELS]
    order = _order(LEVELS, drift)
    ok = bool(np.all(gap <= allowed)) and order >= MIN_ORDER
    _record(acceptance_log, 11, ok,
            f"max |q - q0| - allowed {np.max(gap - allowed):.1e} (must be <= 0); "
            f"drift order {order:.2f} (min {MIN_ORDER})")


# -- 12: decay -----------------------------------------------------------------------
def test_criterion_12_decay(acceptance_log, canonical):
    _, runs = canonical
    fit = dg.decay_fit(runs[DEFAULT_N], CHART)
    in_window = -1.3 <= fit.slope_phi <= -0.7
    phi_ok = fit.no_growth(fit.t_sup_phi)
    alphab_ok = fit.no_growth(fit.t_sup_alphab)
    ok = in_window and phi_ok and alphab_ok
    _record(acceptance_log, 12, ok,
            f"slope {fit.slope_phi:.3f} (window -1.3 to -0.7); late slope of t sup|phi| "
            f"{fit.late_slope(fit.t_sup_phi):.3f} (max 0.3); sup|alphab| "
            f"{fit.sup_alphab.max():.1e}, no growth={alphab_ok}")
