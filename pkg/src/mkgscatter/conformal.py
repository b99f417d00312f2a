"""Conformal inversion of the region beyond a light cone onto a bounded double-null chart.

With u* = u - U* + 1/4 and v* = v - T*/2 (T* = 2U* - 1/2), the map is

    u~ = 1/(4 v*),   v~ = 1/(4 u*),   Lambda = 4 u* v* = (t - T*)^2 - r^2,

so the cone {u = U*} lands on {v~ = 1} and future null infinity on {u~ = 0}.
Fields transform as phi~ = Lambda phi, so r phi = r~ phi~.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nullframe import Point
from .scri import ScatteringData
from .sphere import SphereGrid


@dataclass(frozen=True)
class ConformalChart:
    U_star: float = -1.0

    @property
    def T_star(self) -> float:
        return 2 * self.U_star - 0.5

    def u_star(self, u):
        return np.asarray(u, dtype=float) - self.U_star + 0.25

    def v_star(self, v):
        return np.asarray(v, dtype=float) - self.T_star / 2

    def Lambda(self, u, v):
        return 4 * self.u_star(u) * self.v_star(v)

    def to_tilde(self, u, v):
        """(u, v) -> (u~, v~)."""
        us, vs = self.u_star(u), self.v_star(v)
        if np.any(us < 0.25 - 1e-12) or np.any(vs <= 0):
            raise ValueError("point lies outside the chart domain u >= U*")
        return 1 / (4 * vs), 1 / (4 * us)

    def from_tilde(self, ut, vt):
        """(u~, v~) -> (u, v)."""
        ut, vt = np.asarray(ut, dtype=float), np.asarray(vt, dtype=float)
        if np.any(ut <= 0) or np.any(vt > 1 + 1e-12) or np.any(ut > vt + 1e-12):
            raise ValueError("need 0 < u~ <= v~ <= 1")
        return 1 / (4 * vt) + self.U_star - 0.25, 1 / (4 * ut) + self.T_star / 2

    def map_point(self, p: Point) -> Point:
        ut, vt = self.to_tilde(p.u, p.v)
        return Point(float(ut), float(vt), p.omega)

    def inverse_point(self, q: Point) -> Point:
        u, v = self.from_tilde(q.u, q.v)
        return Point(float(u), float(v), q.omega)

    def map_cartesian(self, X) -> np.ndarray:
        """(t, x) -> Lambda^-1 (t - T*, x)."""
        X = np.asarray(X, dtype=float)
        lam = (X[0] - self.T_star) ** 2 - X[1:] @ X[1:]
        return np.concatenate([[X[0] - self.T_star], X[1:]]) / lam


def conformal_factor_check(chart: ConformalChart, X, h: float = 1e-3, power: int = -1) -> float:
    """Second-order finite-difference wave operator of Lambda**power at a Cartesian point."""
    X = np.asarray(X, dtype=float)

    def f(Y):
        return ((Y[0] - chart.T_star) ** 2 - Y[1:] @ Y[1:]) ** power

    f0 = f(X)
    out = 0.0
    for mu, sign in enumerate((-1.0, 1.0, 1.0, 1.0)):
        e = np.zeros(4)
        e[mu] = h
        out += sign * (f(X + e) - 2 * f0 + f(X - e)) / h**2
    return out


@dataclass
class ConeInput:
    """Pushed-forward radiation data on the cone {u~ = 0}, uniform in v~ on [0, 1]."""

    chart: ConformalChart
    grid: SphereGrid
    v: np.ndarray
    alpha_e: np.ndarray
    alpha_b: np.ndarray
    phi: np.ndarray
    v_cut: float

    @property
    def h(self) -> float:
        return float(self.v[1] - self.v[0])


def push_data_to_cone(data: ScatteringData, chart: ConformalChart, n_v: int = 129,
                      tol: float = 1e-8) -> ConeInput:
    """alpha~ = -16 u*^3 Abar(u), phi~ = 4 u* Phi(u) at u* = 1/(4 v~), zero below v~_cut."""
    if data.u[0] > chart.U_star + 1e-12:
        raise ValueError("scattering data do not reach down to U*")
    scale = max(np.abs(data.Phi).max(), np.abs(data.Abar_e).max(), np.abs(data.Abar_b).max())
    ends = max(np.abs(data.Phi[-1]).max(), np.abs(data.Abar_e[-1]).max(), np.abs(data.Abar_b[-1]).max())
    if ends > tol * max(scale, 1e-300):
        raise ValueError("data do not decay at u_max; cone extension by zero would be discontinuous")
    v = np.linspace(0.0, 1.0, n_v)
    v_cut = 1 / (4 * (data.u[-1] - chart.U_star + 0.25))
    live = v >= v_cut
    us = np.zeros_like(v)
    us[live] = 1 / (4 * v[live])
    u = us + chart.U_star - 0.25
    shape = (n_v, data.grid.ncoef)
    phi = np.zeros(shape, dtype=complex)
    ae = np.zeros(shape, dtype=complex)
    ab = np.zeros(shape, dtype=complex)
    u_live = np.minimum(u[live], data.u[-1])
    e_at, b_at = data.Abar_at(u_live)
    phi[live] = 4 * us[live, None] * data.Phi_at(u_live)
    ae[live] = -16 * us[live, None] ** 3 * e_at
    ab[live] = -16 * us[live, None] ** 3 * b_at
    return ConeInput(chart, data.grid, v, ae, ab, phi, float(v_cut))


def cone_to_scri(cone: ConeInput) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Invert the pushforward on live nodes: returns (u, Abar_e, Abar_b, Phi)."""
    live = cone.v >= cone.v_cut
    us = 1 / (4 * cone.v[live])
    u = us + cone.chart.U_star - 0.25
    return (u, cone.alpha_e[live] / (-16 * us[:, None] ** 3),
            cone.alpha_b[live] / (-16 * us[:, None] ** 3), cone.phi[live] / (4 * us[:, None]))
