"""Diagnostics of evolved states in physical coordinates.

Physical fields are rebuilt from the compactified solution through the conformal
dictionary.  Physical u depends on v~ alone and v on u~ alone, so a rectangle of tilde
nodes is a rectangle in (u, v).  Derivatives are second-order differences in the
uniform tilde coordinate times the chain-rule factor, and integrals are trapezoid sums
with the matching Jacobian.

Tangent fields on the sphere are carried as (theta-hat, phi-hat) components in a
leading axis of length 2.  Mesh arrays are indexed [v-index, u-index, sphere point].
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.integrate import trapezoid

from .conformal import ConformalChart
from .evolve import UnifiedState, _lagrange_weights, extract_hyperboloid, hyperboloid_curve
from .nullframe import Point, TwoFormNull
from .scri import ScatteringData
from .sphere import SphereGrid

KINDS = ("upper", "lower", "unit")
REPORT_SCHEMA = "mkgscatter-report/1"


# -- multipliers ---------------------------------------------------------------------
@dataclass(frozen=True)
class MultiplierSpec:
    """Weight kappa(u, v) of the multiplier X = kappa K / 2, K = 2u^2 Lbar + 2v^2 L.

    ``upper``: |u|^-eps1, ``lower``: |u|^(-R-eps2) v^R, ``unit``: kappa = 1.
    """

    kind: str = "upper"
    eps1: float = 0.1
    eps2: float = 0.5
    R: float = 8.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not 0 <= self.eps1 < self.eps2 < 1:
            raise ValueError("need 0 <= eps1 < eps2 < 1")
        if self.R <= 0:
            raise ValueError("R must be positive")

    @property
    def eps3(self) -> float:
        return (self.eps2 - self.eps1) / self.R

    def split_curve(self, u):
        """v on the curve separating the two weights, v = |u|^(1 + eps3)."""
        return np.abs(np.asarray(u, dtype=float)) ** (1 + self.eps3)

    def _check(self, u, v):
        if self.kind != "unit" and np.any(np.asarray(u) == 0):
            raise ValueError("weight is singular at u = 0")
        if self.kind == "lower" and np.any(np.asarray(v) <= 0):
            raise ValueError("lower weight needs v > 0")

    def kappa(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        self._check(u, v)
        if self.kind == "unit":
            return np.ones_like(u)
        if self.kind == "upper":
            return np.abs(u) ** -self.eps1
        return np.abs(u) ** (-self.R - self.eps2) * v**self.R

    def dkappa(self, u, v):
        """(Lbar kappa, L kappa) = (d_u kappa, d_v kappa)."""
        u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        self._check(u, v)
        if self.kind == "unit":
            return np.zeros_like(u), np.zeros_like(u)
        a, s = np.abs(u), np.sign(u)
        if self.kind == "upper":
            return -self.eps1 * a ** (-self.eps1 - 1) * s, np.zeros_like(u)
        p = -self.R - self.eps2
        return p * a ** (p - 1) * s * v**self.R, self.R * a**p * v ** (self.R - 1)

    def K_kappa(self, u, v):
        ku, kv = self.dkappa(u, v)
        return 2 * np.asarray(u) ** 2 * ku + 2 * np.asarray(v) ** 2 * kv

    def chi(self, u, v):
        return (np.asarray(u) + np.asarray(v)) * self.kappa(u, v)

    def deformation(self, u, v) -> dict:
        """Frame components of the deformation tensor of X = kappa K / 2."""
        ku, kv = self.dkappa(u, v)
        kap = self.kappa(u, v)
        t = np.asarray(u) + np.asarray(v)
        return {
            "LbLb": -2 * np.asarray(v) ** 2 * ku,
            "LLb": -2 * t * kap - 0.5 * self.K_kappa(u, v),
            "LL": -2 * np.asarray(u) ** 2 * kv,
            "ee": t * kap,
        }

    def vector(self, X) -> np.ndarray:
        """Cartesian components of X = kappa K / 2 at a Cartesian point."""
        X = np.asarray(X, dtype=float)
        p = Point.from_cartesian(X)
        K = np.concatenate([[X[0] ** 2 + X[1:] @ X[1:]], 2 * X[0] * X[1:]])
        return 0.5 * float(self.kappa(p.u, p.v)) * K


# -- pointwise currents --------------------------------------------------------------
@dataclass
class ScalarNull:
    """A scalar with its hatted null derivatives r^-1 D(r f) and angular derivative."""

    f: np.ndarray
    Dh_L: np.ndarray
    Dh_Lb: np.ndarray
    Dslash: np.ndarray  # (2, ...)


def _tan2(x):
    return (np.abs(x) ** 2).sum(axis=0)


def _uv(p):
    if isinstance(p, Point):
        return p.u, p.v
    u, v = p
    return np.asarray(u, dtype=float), np.asarray(v, dtype=float)


def _squares(G: TwoFormNull, f: ScalarNull | None):
    """(|alphab|^2 + |Dh_Lb f|^2, rho^2 + sigma^2 + |Dslash f|^2, |alpha|^2 + |Dh_L f|^2)."""
    lb = _tan2(np.asarray(G.alphab))
    mid = np.asarray(G.rho) ** 2 + np.asarray(G.sigma) ** 2
    lo = _tan2(np.asarray(G.alpha))
    if f is not None:
        lb = lb + np.abs(f.Dh_Lb) ** 2
        mid = mid + _tan2(f.Dslash)
        lo = lo + np.abs(f.Dh_L) ** 2
    return lb, mid, lo


def momentum_flux(G: TwoFormNull, f: ScalarNull | None, spec: MultiplierSpec, p):
    """Null components (J_Lbar, J_L) of the modified multiplier current.

    ``p`` is a Point or a pair of broadcastable (u, v) arrays.  The |f|^2 total
    derivatives are expanded with L|r f|^2 = 2 r^2 Re(conj f Dh_L f), so no
    differentiation is needed.
    """
    u, v = _uv(p)
    r = v - u
    if np.any(r <= 0):
        raise ValueError("momentum flux needs r > 0")
    kap = spec.kappa(u, v)
    lb, mid, lo = _squares(G, f)
    J_Lb = kap * (u * u * lb + v * v * mid)
    J_L = kap * (u * u * mid + v * v * lo)
    if f is not None:
        ku, kv = spec.dkappa(u, v)
        s = u * u + v * v
        c = s * kap / r
        Lb_c = (2 * u * kap + s * ku) / r + s * kap / r**2
        L_c = (2 * v * kap + s * kv) / r - s * kap / r**2
        g2 = r * r * np.abs(f.f) ** 2
        Lb_g2 = 2 * r * r * np.real(np.conj(f.f) * f.Dh_Lb)
        L_g2 = 2 * r * r * np.real(np.conj(f.f) * f.Dh_L)
        J_Lb = J_Lb + (Lb_c * g2 + c * Lb_g2) / (2 * r * r)
        J_L = J_L - (L_c * g2 + c * L_g2) / (2 * r * r)
    return J_Lb, J_L


def divergence_on_solutions(G: TwoFormNull, f: ScalarNull | None, spec: MultiplierSpec, p):
    """Divergence of the multiplier current when (G, f) solve the MKG system."""
    u, v = _uv(p)
    ku, kv = spec.dkappa(u, v)
    lb, mid, lo = _squares(G, f)
    return -0.5 * u * u * kv * lb - 0.5 * v * v * ku * lo - 0.25 * spec.K_kappa(u, v) * mid


def chargeless_decompose(G: TwoFormNull, q0: float, u, r, u_cut: float = -1.0):
    """Split G = G_ring + F[q0] with F[q0] = q0 r^-2 dt ^ dr on {u <= u_cut}."""
    u, r = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(r, dtype=float))
    rho_c = np.where(u <= u_cut, q0 / r**2, 0.0)
    rho_c = np.broadcast_to(rho_c, np.broadcast(rho_c, G.rho).shape)
    zero_t = np.zeros_like(np.asarray(G.alpha, dtype=float))
    coul = TwoFormNull(zero_t.copy(), rho_c.copy(), np.zeros_like(rho_c), zero_t.copy())
    ring = TwoFormNull(np.asarray(G.alphab).copy(), np.asarray(G.rho) - rho_c,
                       np.asarray(G.sigma).copy(), np.asarray(G.alpha).copy())
    return ring, coul


# -- physical fields on a (u, v) rectangle ----------------------------------------------
def _trap_weights(s: np.ndarray) -> np.ndarray:
    w = np.zeros(len(s))
    d = np.abs(np.diff(s)) / 2
    w[:-1] += d
    w[1:] += d
    return w


@dataclass
class PhysicalFields:
    """Null components of (F, phi) on a tensor mesh of physical (u, v).

    ``s_u`` and ``s_v`` are the coordinates in which the mesh is uniform, with
    ``du_ds``, ``dv_ds`` the chain-rule factors.  Scalars have shape (nv, nu, npts).
    """

    grid: SphereGrid
    u: np.ndarray
    v: np.ndarray
    s_u: np.ndarray
    s_v: np.ndarray
    du_ds: np.ndarray
    dv_ds: np.ndarray
    G: TwoFormNull
    f: ScalarNull | None = None
    A: tuple | None = None  # (A_L, A_Lbar, A_tan)
    J: tuple | None = None  # (J_L, J_Lbar, J_tan); from f when None
    meta: dict = field(default_factory=dict)

    @property
    def U(self):
        return self.u[None, :, None]

    @property
    def V(self):
        return self.v[:, None, None]

    @property
    def r(self):
        return self.V - self.U

    @property
    def w_u(self):
        return _trap_weights(self.s_u) * np.abs(self.du_ds)

    @property
    def w_v(self):
        return _trap_weights(self.s_v) * np.abs(self.dv_ds)

    def d_u(self, x):
        return np.gradient(x, self.s_u, axis=-2, edge_order=2) / self.du_ds[:, None]

    def d_v(self, x):
        return np.gradient(x, self.s_v, axis=-3, edge_order=2) / self.dv_ds[:, None, None]

    def core(self) -> "PhysicalFields":
        """The fields on the requested domain, without the derivative halo."""
        if "core" not in self.meta:
            return self
        cv, cu = self.meta["core"]
        sub = lambda x: None if x is None else x[..., cv, cu, :]
        G = TwoFormNull(*(sub(getattr(self.G, k)) for k in ("alphab", "rho", "sigma", "alpha")))
        f = None if self.f is None else ScalarNull(sub(self.f.f), sub(self.f.Dh_L),
                                                   sub(self.f.Dh_Lb), sub(self.f.Dslash))
        A = None if self.A is None else tuple(sub(a) for a in self.A)
        J = None if self.J is None else tuple(sub(a) for a in self.J)
        meta = {k: v for k, v in self.meta.items() if k != "core"}
        return replace(self, u=self.u[cu], v=self.v[cv], s_u=self.s_u[cu], s_v=self.s_v[cv],
                       du_ds=self.du_ds[cu], dv_ds=self.dv_ds[cv], G=G, f=f, A=A, J=J, meta=meta)

    def current(self):
        if self.J is not None:
            return self.J
        if self.f is None:
            z = np.zeros_like(self.G.rho)
            return z, z, np.zeros_like(self.G.alpha)
        f = self.f
        return (np.imag(f.f * np.conj(f.Dh_L)), np.imag(f.f * np.conj(f.Dh_Lb)),
                np.imag(f.f * np.conj(f.Dslash)))


def diagnostics_grid(l_max: int) -> SphereGrid:
    """Sphere grid for band l_max + 1: holds omega x (band l_max) exactly, and its
    Gauss nodes integrate quadratic energies of such fields exactly."""
    return SphereGrid(l_max + 1, pad=False)


@lru_cache(maxsize=8)
def _cartesian_maps(l_src: int):
    """Matrices taking Cartesian coefficients (band l_src) to omega.A and to the (e, b)
    potentials of the tangential part (band l_src + 1)."""
    gd = diagnostics_grid(l_src)
    ks = (l_src + 1) ** 2
    Y = gd.Y[:, :ks].T
    Mw = np.stack([gd.analysis(gd.rhat[a] * Y) for a in range(3)])
    E, B = [], []
    for a in range(3):
        e, b = gd.vector_analysis(gd.that[a] * Y, gd.phat[a] * Y)
        E.append(e)
        B.append(b)
    return gd, Mw, np.stack(E), np.stack(B)


def tilde_null_potential(state_grid: SphereGrid, c: np.ndarray):
    """(A_u~, A_v~, A_e, A_b, phi~) on band l_max + 1 from Cartesian coefficients (..., 5, K)."""
    gd, Mw, E, B = _cartesian_maps(state_grid.l_max)
    cart = c[..., 1:4, :]
    Ar = np.einsum("...ak,akd->...d", cart, Mw)
    Ae = np.einsum("...ak,akd->...d", cart, E)
    Ab = np.einsum("...ak,akd->...d", cart, B)
    A0 = gd.resize(c[..., 0, :], gd.l_max)
    phi = gd.resize(c[..., 4, :], gd.l_max)
    return A0 - Ar, A0 + Ar, Ae, Ab, phi


def block_indices(state: UnifiedState, chart: ConformalChart, domain) -> tuple[int, int, int, int]:
    """Mesh indices (i0, i1, j0, j1) of a physical rectangle (U1, U2, V1, V2).

    Each boundary must fall on a mesh line of the tilde grid.
    """
    U1, U2, V1, V2 = domain
    if not (U1 < U2 and V1 < V2):
        raise ValueError("domain needs U1 < U2 and V1 < V2")
    h = state.h
    ut_hi, vt_hi = chart.to_tilde(U1, V1)
    ut_lo, vt_lo = chart.to_tilde(U2, V2)

    def idx(x, name):
        k = x / h
        if abs(k - round(k)) > 1e-6:
            raise ValueError(f"domain boundary {name} is not on a mesh line")
        return int(round(k))

    i0, i1 = idx(ut_lo, "V2"), idx(ut_hi, "V1")
    j0, j1 = idx(vt_lo, "U2"), idx(vt_hi, "U1")
    _check_block(state, i0, i1, j0, j1)
    return i0, i1, j0, j1


def domain_from_tilde(chart: ConformalChart, ut_lo, ut_hi, vt_lo, vt_hi):
    """Physical (U1, U2, V1, V2) of a tilde rectangle."""
    U2, V2 = chart.from_tilde(ut_lo, vt_lo)
    U1, V1 = chart.from_tilde(ut_hi, vt_hi)
    return float(U1), float(U2), float(V1), float(V2)


def default_domain(chart: ConformalChart, kind: str = "upper"):
    """Default rectangle for the weight ``kind``.

    upper and unit: u~ in [1/16, 3/16], v~ in [1/4, 7/8].  lower: u~ in [5/32, 3/16],
    v~ in [1/2, 7/8], which stays below the split curve v = |u|^(1 + eps3) for U* = -1.
    Both keep one mesh line clear of the data cone v~ = 1, where nested one-sided
    differences lose an order.
    """
    if kind == "lower":
        return domain_from_tilde(chart, 5 / 32, 3 / 16, 1 / 2, 7 / 8)
    return domain_from_tilde(chart, 1 / 16, 3 / 16, 1 / 4, 7 / 8)


def _check_block(state, i0, i1, j0, j1):
    if i0 < 1 or i1 > state.n_levels - 1 or j1 > state.N - 1:
        raise ValueError("domain exits the evolved region")
    if i1 - i0 < 2 or j1 - j0 < 2:
        raise ValueError("domain needs at least three mesh lines in each direction")
    if j0 < i1 + 3:
        raise ValueError("domain comes within three cells of the axis r = 0")


def fields_from_state(state: UnifiedState, chart: ConformalChart, domain=None,
                      halo: int = 1) -> PhysicalFields:
    """Physical null data on a rectangle of the evolved region (default_domain if None).

    The mesh is widened by ``halo`` lines where the evolved region allows, so that
    differences at the domain boundary are centred; ``core()`` drops them again.
    """
    domain = default_domain(chart) if domain is None else domain
    c0 = block_indices(state, chart, domain)
    i0, j1 = max(c0[0] - halo, 1), min(c0[3] + halo, state.N - 1)
    i1, j0 = c0[1] + halo, c0[2] - halo
    if i1 > state.n_levels - 1 or j0 < i1 + 3:
        i1, j0 = c0[1], c0[2]
    h = state.h
    L, N = state.n_levels, state.N
    pi0, pi1 = max(i0 - 1, 0), min(i1 + 1, L - 1)
    pj0, pj1 = max(j0 - 1, 0), min(j1 + 1, N - 1)
    c = state.psi[pi0:pi1 + 1, pj0:pj1 + 1]
    A_ut, A_vt, Ae, Ab, phi = tilde_null_potential(state.grid, c)
    gd = diagnostics_grid(state.grid.l_max)
    ut = np.arange(pi0, pi1 + 1) * h
    vt = np.arange(pj0, pj1 + 1) * h
    rt = (vt[None, :] - ut[:, None])[..., None]
    dU = lambda x: np.gradient(x, h, axis=0, edge_order=2)
    dV = lambda x: np.gradient(x, h, axis=1, edge_order=2)
    sg = lambda x: np.where(gd.ell > 0, x, 0)
    rho_t = 0.5 * (dU(A_vt) - dV(A_ut))
    ra_e, ra_b = dV(rt * Ae) - sg(A_vt), dV(rt * Ab)  # r~ alpha~ (along d_v~)
    rab_e, rab_b = dU(rt * Ae) - sg(A_ut), dU(rt * Ab)  # r~ alphabar~ (along d_u~)
    sig_t = gd.scurl(Ae, Ab) / rt
    g = rt * phi
    dUg, dVg = dU(g), dV(g)

    cut = (slice(i0 - pi0, i1 - pi0 + 1), slice(j0 - pj0, j1 - pj0 + 1))
    syn = lambda x: gd.synthesis(x[cut])
    vsyn = lambda e, b: np.stack(gd.vector_synthesis(e[cut], b[cut]))
    UT = ut[cut[0]][:, None, None]
    VT = vt[cut[1]][None, :, None]
    RT = VT - UT
    lam = 1 / (4 * UT * VT)
    r = RT * lam
    k2 = 16 * UT**2 * VT**2  # Lambda^-2
    G = TwoFormNull(
        alphab=(-16 * UT * VT**3 * vsyn(ra_e, ra_b) / RT).real,
        rho=(-k2 * syn(rho_t)).real,
        sigma=(k2 * syn(sig_t)).real,
        alpha=(-16 * UT**3 * VT * vsyn(rab_e, rab_b) / RT).real,
    )
    a_ut, a_vt = syn(A_ut).real, syn(A_vt).real
    a_tan = vsyn(Ae, Ab).real
    phi_s, g_s = syn(phi), syn(g)
    grad_phi = np.stack(gd.grad_grid(phi[cut]))
    f = ScalarNull(
        f=phi_s / lam,
        Dh_L=-4 * UT**2 * (syn(dUg) + 1j * a_ut * g_s) / r,
        Dh_Lb=-4 * VT**2 * (syn(dVg) + 1j * a_vt * g_s) / r,
        Dslash=k2 * (grad_phi / RT + 1j * a_tan * phi_s),
    )
    A = (-4 * UT**2 * a_ut, -4 * VT**2 * a_vt, a_tan / lam)
    vt_b, ut_b = vt[cut[1]], ut[cut[0]]
    return PhysicalFields(
        grid=gd,
        u=1 / (4 * vt_b) + chart.U_star - 0.25,
        v=1 / (4 * ut_b) + chart.T_star / 2,
        s_u=vt_b, s_v=ut_b,
        du_ds=-1 / (4 * vt_b**2), dv_ds=-1 / (4 * ut_b**2),
        G=G, f=f, A=A,
        meta={"domain": tuple(float(x) for x in domain), "block": c0, "h": h,
              "core": (slice(c0[0] - i0, c0[1] - i0 + 1), slice(c0[2] - j0, c0[3] - j0 + 1))},
    )


def fields_from_functions(grid: SphereGrid, u, v, funcs: dict) -> PhysicalFields:
    """Closed-form fields on a uniform physical mesh.

    ``funcs`` maps names among rho, sigma, alpha, alphab, f, Dh_L, Dh_Lb, Dslash, A_L,
    A_Lb, A_tan to callables of (U, V, theta, phi); tangent fields return a (2, ...)
    stack.  Missing entries are zero, and the scalar part is absent without ``f``.
    """
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    U, V = u[None, :, None], v[:, None, None]
    th, ph = grid.theta[None, None, :], grid.phi[None, None, :]
    shape = (len(v), len(u), grid.npts)

    def ev(name, tangent=False, dtype=float):
        if name not in funcs:
            return np.zeros(((2,) if tangent else ()) + shape, dtype=dtype)
        return np.broadcast_to(funcs[name](U, V, th, ph), ((2,) if tangent else ()) + shape).astype(dtype)

    G = TwoFormNull(ev("alphab", True), ev("rho"), ev("sigma"), ev("alpha", True))
    f = None
    if "f" in funcs:
        f = ScalarNull(ev("f", dtype=complex), ev("Dh_L", dtype=complex),
                       ev("Dh_Lb", dtype=complex), ev("Dslash", True, complex))
    A = (ev("A_L"), ev("A_Lb"), ev("A_tan", True))
    ones = np.ones(1)
    return PhysicalFields(grid, u, v, u, v, ones.repeat(len(u)), ones.repeat(len(v)), G, f, A)


# -- null-structure residuals --------------------------------------------------------
def _sgrad(g: SphereGrid, x):
    return np.stack(g.grad_grid(g.analysis(x)))


def _sdiv(g: SphereGrid, X):
    e, b = g.vector_analysis(X[0], X[1])
    return g.synthesis(g.sdiv(e, b))


def _lap(g: SphereGrid, x):
    return g.synthesis(g.laplacian(g.analysis(x)))


def _star(X):
    return np.stack([-X[1], X[0]])


RESIDUAL_NAMES = ("scalar", "rho_L", "rho_Lbar", "sigma_L", "sigma_Lbar", "alphab_L", "alpha_Lbar")


def null_structure_residuals(pf: PhysicalFields) -> dict:
    """Residuals of the scalar wave equation for r phi and the six Maxwell transport
    equations, as grid samples on the mesh.  The scalar one needs f and A."""
    g, r = pf.grid, pf.r
    G = pf.G
    JL, JLb, Jt = pf.current()
    real = lambda x: np.real(x)
    out = {}
    if pf.f is not None and pf.A is not None:
        AL, ALb, At = pf.A
        rf = r * pf.f.f
        q = pf.d_u(rf) + 1j * ALb * rf
        lhs = pf.d_v(q) + 1j * AL * q
        Aw = r * At
        dsl2 = (_lap(g, rf) + 2j * (Aw * _sgrad(g, rf)).sum(axis=0)
                + 1j * real(_sdiv(g, Aw)) * rf - (Aw**2).sum(axis=0) * rf) / r**2
        out["scalar"] = lhs - dsl2 + 1j * G.rho * rf
    grad_rho, grad_sig = real(_sgrad(g, G.rho)), real(_sgrad(g, G.sigma))
    out["rho_L"] = pf.d_v(r * r * G.rho) + r * real(_sdiv(g, G.alpha)) - r * r * JL
    out["rho_Lbar"] = pf.d_u(r * r * G.rho) - r * real(_sdiv(g, G.alphab)) + r * r * JLb
    out["sigma_L"] = pf.d_v(r * r * G.sigma) + r * real(_sdiv(g, _star(G.alpha)))
    out["sigma_Lbar"] = pf.d_u(r * r * G.sigma) + r * real(_sdiv(g, _star(G.alphab)))
    out["alphab_L"] = pf.d_v(r * G.alphab) + grad_rho - _star(grad_sig) - r * Jt
    out["alpha_Lbar"] = pf.d_u(r * G.alpha) - grad_rho - _star(grad_sig) - r * Jt
    if "core" in pf.meta:
        cv, cu = pf.meta["core"]
        out = {k: v[..., cv, cu, :] for k, v in out.items()}
    return out


def residual_norms(res: dict) -> dict:
    return {k: float(np.abs(v).max()) for k, v in res.items()}


def commute_rotation(pf: PhysicalFields, which: str) -> PhysicalFields:
    """Lie derivative along Omega_which of the Maxwell field and current.

    Rotations fix L, Lbar and r, and commute with the sphere gradient and star, so
    they act on the scalar null components and on the (e, b) potentials of tangent
    fields alone.  The scalar field is dropped: its commuted equation carries extra
    source terms.
    """
    g = pf.grid
    sc = lambda x: g.synthesis(g.omega(g.analysis(x), which)).real
    vec = lambda X: np.stack(g.vector_synthesis(
        *[g.omega(c, which) for c in g.vector_analysis(X[0], X[1])])).real
    G = pf.G
    JL, JLb, Jt = pf.current()
    Gz = TwoFormNull(vec(G.alphab), sc(G.rho), sc(G.sigma), vec(G.alpha))
    meta = dict(pf.meta, commuted=which)
    return replace(pf, G=Gz, f=None, A=None, J=(sc(JL), sc(JLb), vec(Jt)), meta=meta)


# -- energies --------------------------------------------------------------------------
def _sphere_int(g: SphereGrid, x):
    return g.integrate(x)


def energy_identity_residual(pf: PhysicalFields, spec: MultiplierSpec) -> dict:
    """Bulk integral of the divergence against the boundary fluxes on the mesh rectangle.

    With dvol = 2 r^2 du dv domega the identity reads
    int div J = -[int r^2 J_L dv domega]_{U1}^{U2} - [int r^2 J_Lbar du domega]_{V1}^{V2}.
    """
    pf = pf.core()
    U, V, r = pf.U, pf.V, pf.r
    J_Lb, J_L = momentum_flux(pf.G, pf.f, spec, (U, V))
    div = divergence_on_solutions(pf.G, pf.f, spec, (U, V))
    g = pf.grid
    wu, wv = pf.w_u, pf.w_v
    bulk = float(wv @ (_sphere_int(g, 2 * r * r * div)) @ wu)
    flux_u = wv @ _sphere_int(g, r * r * J_L)  # per u column
    flux_v = _sphere_int(g, r * r * J_Lb) @ wu  # per v row
    iu1, iu2 = int(np.argmin(pf.u)), int(np.argmax(pf.u))
    iv1, iv2 = int(np.argmin(pf.v)), int(np.argmax(pf.v))
    boundary = -(flux_u[iu2] - flux_u[iu1]) - (flux_v[iv2] - flux_v[iv1])
    scale = float(abs(flux_u[iu1]) + abs(flux_u[iu2]) + abs(flux_v[iv1]) + abs(flux_v[iv2]))
    return {"bulk": bulk, "boundary": float(boundary), "residual": float(abs(bulk - boundary)),
            "scale": scale}


def flux_energy(pf: PhysicalFields, spec: MultiplierSpec) -> dict:
    """Weighted flux energies of (f, G) and of the current on the corner (U1, V1):
    the incoming piece {v = V1} and the outgoing piece {u = U1} of the rectangle."""
    pf = pf.core()
    U, V, r = pf.U, pf.V, pf.r
    kap = spec.kappa(U, V)
    lb, mid, lo = _squares(pf.G, pf.f)
    JL, JLb, Jt = pf.current()
    g = pf.grid
    iu1, iv1 = int(np.argmin(pf.u)), int(np.argmin(pf.v))
    dens_in = kap * (U * U * lb + V * V * mid) * r * r
    dens_out = kap * (U * U * mid + V * V * lo) * r * r
    cur = kap**2 * U * U * V * V
    jt2 = _tan2(Jt)
    cur_in = cur * (U * U * JLb**2 + V * V * jt2) * r * r
    cur_out = cur * (U * U * jt2 + V * V * JL**2) * r * r
    inc = lambda d: float(_sphere_int(g, d[iv1]) @ pf.w_u)
    out = lambda d: float(pf.w_v @ _sphere_int(g, d[:, iu1]))
    e_in, e_out = inc(dens_in), out(dens_out)
    j_in, j_out = inc(cur_in), out(cur_out)
    return {"kind": spec.kind, "U": float(pf.u[iu1]), "V": float(pf.v[iv1]),
            "incoming": e_in, "outgoing": e_out, "E": e_in + e_out,
            "E_current": j_in + j_out,
            "min_density": float(min(dens_in.min(), dens_out.min()))}


# -- radiation field ---------------------------------------------------------------------
@dataclass
class RadiationProbe:
    u: float
    v: np.ndarray  # physical v of levels 1..n
    rphi: np.ndarray  # (n, ncoef) coefficients on band l_max + 1
    rab_e: np.ndarray
    rab_b: np.ndarray
    limit_phi: np.ndarray
    limit_e: np.ndarray
    limit_b: np.ndarray


def _near_scri_rows(state: UnifiedState, n: int):
    """(r~ phi~, r~ alpha~_e, r~ alpha~_b) on rows 0..n, all columns."""
    gd = diagnostics_grid(state.grid.l_max)
    h = state.h
    c = state.psi[: n + 1]
    _, A_vt, Ae, Ab, phi = tilde_null_potential(state.grid, c)
    rt = (state.v[None, :] - state.u[: n + 1, None])[..., None]
    dV = lambda x: np.gradient(x, h, axis=1, edge_order=2)
    sg = np.where(gd.ell > 0, 1.0, 0.0)
    return rt * phi, dV(rt * Ae) - sg * A_vt, dV(rt * Ab)


def radiation_field_extract(state: UnifiedState, chart: ConformalChart, u_probe: float,
                            n_levels: int = 4, _rows=None) -> RadiationProbe:
    """(r alphabar, r phi) along u = u_probe at the first evolved levels, with the
    two-term Richardson limit 2 f(u~ = h) - f(u~ = 2h) in inverse powers of v."""
    h = state.h
    if state.n_levels < 3:
        raise ValueError("need at least two evolved levels for the limit")
    n = min(n_levels, state.n_levels - 1)
    vt = float(chart.to_tilde(u_probe, chart.T_star / 2 + 1.0)[1])
    x = vt / h
    if x < n + 2 - 1e-9:
        raise ValueError("probe too late: the v-range before the axis is too short")
    rows = _near_scri_rows(state, n) if _rows is None else _rows
    if abs(x - round(x)) < 1e-9:
        pick = lambda a: a[1:n + 1, int(round(x))]
    else:
        j0 = int(np.clip(np.floor(x) - 1, n + 1, state.N - 4))
        idx = np.arange(j0, j0 + 4)
        wts = _lagrange_weights(idx.astype(float), x)
        pick = lambda a: np.tensordot(a[1:n + 1][:, idx], wts, axes=(1, 0))
    g, ae, ab = (pick(a) for a in rows)
    scale = -4 * vt**2  # r alphabar = -r~ alpha~ / (4 u*^2)
    ae, ab = scale * ae, scale * ab
    rich = lambda a: 2 * a[0] - a[1]
    v = np.arange(1, n + 1) * h
    return RadiationProbe(float(u_probe), 1 / (4 * v) + chart.T_star / 2, g, ae, ab,
                          rich(g), rich(ae), rich(ab))


def round_trip_error(state: UnifiedState, chart: ConformalChart, data: ScatteringData,
                     n_levels: int = 4) -> dict:
    """Relative L2(du domega) distance between extracted and input radiation fields.

    Probes sit on the v~ mesh columns whose u lies inside the data interval.
    """
    gd = diagnostics_grid(state.grid.l_max)
    rows = _near_scri_rows(state, min(n_levels, state.n_levels - 1))
    n = rows[0].shape[0] - 1
    js = np.arange(n + 2, state.N)
    u = 1 / (4 * js * state.h) + chart.U_star - 0.25
    keep = (u >= data.u[0]) & (u <= data.u[-1])
    js, u = js[keep], u[keep]
    num = np.zeros(len(js))
    den = np.zeros(len(js))
    phi_in = gd.resize(data.Phi_at(u), gd.l_max)
    e_in, b_in = data.Abar_at(u)
    e_in, b_in = gd.resize(e_in, gd.l_max), gd.resize(b_in, gd.l_max)
    for k, uk in enumerate(u):
        p = radiation_field_extract(state, chart, uk, n_levels, _rows=rows)
        num[k] = (gd.norm2(p.limit_phi - phi_in[k])
                  + gd.vector_norm2(p.limit_e - e_in[k], p.limit_b - b_in[k]))
        den[k] = gd.norm2(phi_in[k]) + gd.vector_norm2(e_in[k], b_in[k])
    order = np.argsort(u)
    w = _trap_weights(u[order])
    num_t, den_t = float(w @ num[order]), float(w @ den[order])
    rel = math.sqrt(num_t / den_t) if den_t > 0 else math.sqrt(num_t)
    return {"relative_l2": rel, "absolute_l2": math.sqrt(num_t), "input_l2": math.sqrt(den_t),
            "n_probes": int(len(u)), "u": u[order], "error_l2": np.sqrt(num[order]),
            "input_norm": np.sqrt(den[order])}


# -- slices of constant t ------------------------------------------------------------------
def slice_delta(chart: ConformalChart, t: float) -> float:
    """Parameter delta of the hyperboloid that is the slice {t} (t - T* = 1/(2 delta))."""
    dt = t - chart.T_star
    if dt < 0.5:
        raise ValueError(f"slice t = {t} lies before the tip of the evolved region")
    return 1 / (2 * dt)


def _slice_samples(state: UnifiedState, chart: ConformalChart, t: float):
    """Physical phi, d_t phi, A_t and alphabar along the slice {t}, on the v~ nodes."""
    gd = diagnostics_grid(state.grid.l_max)
    delta = slice_delta(chart, t)
    vt, ut, vals, dus, dvs = extract_hyperboloid(state, delta)
    A_ut, A_vt, Ae, Ab, phi_c = tilde_null_potential(state.grid, vals)
    _, dA_vt, dAe, dAb, _ = tilde_null_potential(state.grid, dvs)
    U, V = ut[:, None], vt[:, None]
    syn = gd.synthesis
    pt = syn(phi_c)
    pu = syn(gd.resize(dus[:, 4], gd.l_max))
    pv = syn(gd.resize(dvs[:, 4], gd.l_max))
    phi = 4 * U * V * pt
    d_u = -16 * U * V**2 * (pt + V * pv)
    d_v = -16 * U**2 * V * (pt + U * pu)
    A_t = -2 * (V**2 * syn(A_vt).real + U**2 * syn(A_ut).real)
    rt = (vt - ut)[:, None]
    # r~ alpha~ = d_v~(r~ A_tan) - sgrad A_v~ at fixed u~
    sg = np.where(gd.ell > 0, 1.0, 0.0)
    ra = np.stack(gd.vector_synthesis(Ae + rt * dAe - sg * A_vt, Ab + rt * dAb)).real
    with np.errstate(divide="ignore", invalid="ignore"):
        alphab = np.where(rt > 0.5 * state.h, -16 * U * V**3 * ra / rt, 0.0)
    return vt, ut, phi, 0.5 * (d_u + d_v), A_t, alphab


def slice_charge(state: UnifiedState, chart: ConformalChart, t: float) -> float:
    """(1/4 pi) int J_0 dx over the part of the slice {t} inside the evolved region,
    the ball |x| < t - 2 U*."""
    gd = diagnostics_grid(state.grid.l_max)
    vt, ut, phi, dt_phi, A_t, _ = _slice_samples(state, chart, t)
    J0 = np.imag(phi * np.conj(dt_phi)) - A_t * np.abs(phi) ** 2
    r = 1 / (4 * ut) - 1 / (4 * vt)
    dens = r**2 * gd.integrate(J0) / (2 * vt**2)  # dr = dv~ / (2 v~^2)
    return float(trapezoid(dens, vt) / (4 * math.pi))


def cone_flux(state: UnifiedState, chart: ConformalChart, t: float) -> float:
    """(1/4 pi) int r^2 J_L dv domega over the cone u = U* beyond the slice {t}.

    In tilde variables this is -(1/4 pi) int_0^{u~_e} Im(g conj(D_u~ g)) du~ domega,
    g = r~ phi~, on the column v~ = 1.
    """
    gd = diagnostics_grid(state.grid.l_max)
    h = state.h
    ue = float(hyperboloid_curve(slice_delta(chart, t), np.array([1.0]))[0])
    n = int(np.floor(ue / h + 1e-9))
    if n + 2 > state.n_levels - 1:
        raise ValueError("slice leaves the evolved region on the cone")
    m = min(state.n_levels, n + 4)
    col = state.psi[:m, state.N - 1]
    A_ut, _, _, _, phi = tilde_null_potential(state.grid, col)
    ut = np.arange(m) * h
    g = gd.synthesis(phi) * (1 - ut)[:, None]
    dg = np.gradient(g, h, axis=0, edge_order=2)
    X = gd.integrate(np.imag(g * np.conj(dg + 1j * gd.synthesis(A_ut).real * g)))
    part = trapezoid(X[: n + 1], ut[: n + 1])
    x_e = np.interp(ue, ut, X)
    part += 0.5 * (X[n] + x_e) * (ue - ut[n])
    return float(-part / (4 * math.pi))


def charge_history(state: UnifiedState, chart: ConformalChart, ts) -> dict:
    """Slice charges, cone fluxes and their conserved sum at the given times."""
    q = np.array([slice_charge(state, chart, t) for t in ts])
    F = np.array([cone_flux(state, chart, t) for t in ts])
    return {"t": np.asarray(ts, dtype=float), "q_slice": q, "cone_flux": F, "total": q + F}


# -- decay -----------------------------------------------------------------------------------
@dataclass
class DecayFit:
    t: np.ndarray
    sup_phi: np.ndarray
    sup_alphab: np.ndarray
    slope_phi: float
    slope_alphab: float

    @property
    def t_sup_phi(self):
        return self.t * self.sup_phi

    @property
    def t_sup_alphab(self):
        return self.t * self.sup_alphab

    def late_slope(self, y) -> float:
        """Log-log slope of y against t over the later half of the slices."""
        k = len(self.t) // 2
        return _loglog_slope(self.t[k:], np.asarray(y)[k:])

    def no_growth(self, y, max_slope: float = 0.3, floor: float = 1e-12) -> bool:
        """True when y is negligible or grows no faster than t^max_slope late on."""
        y = np.asarray(y)
        return bool(y.max() <= floor or self.late_slope(y) <= max_slope)


def _loglog_slope(t, y):
    y = np.asarray(y)
    if not np.any(y > 0):
        return 0.0
    keep = y > 0
    return float(np.polyfit(np.log(t[keep]), np.log(y[keep]), 1)[0])


def decay_fit(state: UnifiedState, chart: ConformalChart, t_min: float = 1.0,
              n_slices: int = 10, min_cells: int = 4) -> DecayFit:
    """sup over slices {t} of |phi| and |alphab|, with log-log slopes against t.

    Slices run geometrically from t_min to the last slice whose axis point sits
    ``min_cells`` levels above null infinity.
    """
    t_max = chart.T_star + 1 / (2 * min_cells * state.h)
    if t_max <= t_min:
        raise ValueError("evolved region does not reach t_min")
    ts = np.geomspace(t_min, t_max, n_slices)
    sp, sa = [], []
    for t in ts:
        _, _, phi, _, _, ab = _slice_samples(state, chart, t)
        sp.append(float(np.abs(phi).max()))
        sa.append(float(np.sqrt((ab**2).sum(axis=0)).max()))
    sp, sa = np.array(sp), np.array(sa)
    return DecayFit(ts, sp, sa, _loglog_slope(ts, sp), _loglog_slope(ts, sa))


# -- reports ---------------------------------------------------------------------------------
@dataclass
class EnergyReport:
    """Rows (diagnostic, domain, parameters, value, tolerance, pass) and a JSON summary."""

    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add(self, diagnostic, domain, parameters, value, tolerance=None, passed=None):
        tol = None if tolerance is None else float(tolerance)
        ok = None if passed is None else bool(passed)
        self.rows.append((diagnostic, domain, parameters, float(value), tol, ok))

    @property
    def passed(self) -> bool:
        return all(p is not False for *_, p in self.rows)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["diagnostic", "domain", "parameters", "value", "tolerance", "pass"])
            for d, dom, par, val, tol, ok in self.rows:
                w.writerow([d, dom, par, f"{val:.12e}", "" if tol is None else f"{tol:.6e}",
                            "" if ok is None else str(bool(ok)).lower()])

    def write_json(self, path) -> None:
        payload = {"schema": REPORT_SCHEMA, "passed": self.passed, "summary": self.summary}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _fmt_domain(domain) -> str:
    return "u[{:.6g},{:.6g}]x v[{:.6g},{:.6g}]".format(*domain)


def run_diagnostics(state: UnifiedState, chart: ConformalChart, data: ScatteringData | None = None,
                    eps1: float = 0.1, eps2: float = 0.5, R: float = 8.0,
                    q0: float | None = None, domain=None) -> EnergyReport:
    """Residuals, energies, charge and decay for one evolved state."""
    from .evolve import gauge_monitor

    rep = EnergyReport()
    dom0 = default_domain(chart) if domain is None else domain
    pf = fields_from_state(state, chart, dom0)
    res = residual_norms(null_structure_residuals(pf))
    for name in RESIDUAL_NAMES:
        if name in res:
            rep.add(f"residual_{name}", _fmt_domain(dom0), "order=0", res[name])
    res1 = residual_norms(null_structure_residuals(commute_rotation(pf, "12")))
    for name, val in res1.items():
        rep.add(f"residual_{name}", _fmt_domain(dom0), "order=1;Z=Omega12", val)
    for kind in KINDS:
        spec = MultiplierSpec(kind, eps1, eps2, R)
        par = f"kind={kind};eps1={eps1};eps2={eps2};R={R}"
        dk = default_domain(chart, kind) if domain is None else domain
        dom = _fmt_domain(dk)
        pf = fields_from_state(state, chart, dk)
        ei = energy_identity_residual(pf, spec)
        rep.add("energy_identity_residual", dom, par, ei["residual"])
        rep.add("energy_identity_scale", dom, par, ei["scale"])
        fe = flux_energy(pf, spec)
        rep.add("flux_energy", dom, par, fe["E"])
        rep.add("flux_energy_current", dom, par, fe["E_current"])
        rep.add("flux_min_density", dom, par, fe["min_density"], 0.0, fe["min_density"] >= 0)
    gm = gauge_monitor(state)
    rep.add("gauge_max_lambda", "evolved", "", gm.max_lambda)
    rep.add("gauge_wave_residual", "evolved", "r~>=0.05", gm.wave_residual)
    summary = {"residuals": res, "residuals_order1": res1, "gauge_max_lambda": gm.max_lambda}
    if data is not None:
        rt = round_trip_error(state, chart, data)
        rep.add("roundtrip_relative_l2", "scri", "", rt["relative_l2"], 0.05,
                rt["relative_l2"] < 0.05)
        summary["roundtrip"] = rt
    try:
        dec = decay_fit(state, chart)
        trange = f"t=[{dec.t[0]:.4g},{dec.t[-1]:.4g}]"
        quiet = dec.sup_phi.max() <= 1e-12  # nothing to fit for vanishing data
        rep.add("decay_slope_phi", "slices", trange, dec.slope_phi, None,
                quiet or -1.3 <= dec.slope_phi <= -0.7)
        rep.add("decay_late_slope_t_phi", "slices", trange, dec.late_slope(dec.t_sup_phi), 0.3,
                dec.no_growth(dec.t_sup_phi))
        rep.add("decay_max_t_alphab", "slices", trange, dec.t_sup_alphab.max(), None,
                dec.no_growth(dec.t_sup_alphab))
        summary["decay"] = {"t": dec.t, "sup_phi": dec.sup_phi, "sup_alphab": dec.sup_alphab,
                            "slope_phi": dec.slope_phi, "slope_alphab": dec.slope_alphab}
    except ValueError as exc:
        summary["decay"] = {"skipped": str(exc)}
    if q0 is not None:
        ts = charge_times(state, chart)
        ch = charge_history(state, chart, ts)
        tol = np.abs(ch["cone_flux"]) + 0.05 * abs(q0)
        gap = np.abs(ch["q_slice"] - q0)
        for t, g_, tl in zip(ts, gap, tol):
            rep.add("slice_charge_vs_q0", f"t={t:.6g}", "", g_, tl, g_ <= tl)
        rep.add("charge_drift", "slices", "", float(np.ptp(ch["total"])))
        summary["charge"] = dict(ch, q0=q0)
    rep.summary = summary
    return rep


def charge_times(state: UnifiedState, chart: ConformalChart, n: int = 5) -> np.ndarray:
    """Increasing slice times whose cone endpoint u~_e = delta / (2 - delta) lies on mesh
    levels, for u~_e from 1/2 down to a quarter of that."""
    h = state.h
    top = min(0.5, (state.n_levels - 4) * h)
    ks = np.unique(np.round(np.linspace(top / 4, top, n) / h).astype(int))
    ue = ks[::-1] * h
    delta = 2 * ue / (1 + ue)
    return chart.T_star + 1 / (2 * delta)
