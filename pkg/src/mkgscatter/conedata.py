"""Lorenz-gauge characteristic data on the cone {u~ = 0, 0 <= v~ <= 1}.

On the cone r = v and the gauge A_L = 0 is imposed.  The remaining components follow
from radial ODEs integrated outward from the vertex:

    d_v (v A_tan) = v alpha                                   (tangential part)
    d_v (v d_v (v A_Lbar)) = 2 d_v (v D) - v^2 J_L,   D = sdiv(A_tan)

with J_L = Im(phi conj(d_v phi)) and zero values at the vertex.  The transverse
derivative Lbar A_L is then fixed by the Lorenz condition.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, trapezoid

from .conformal import ConeInput
from .scri import ddu
from .sphere import SphereGrid, lm_pairs


def _cumint(f: np.ndarray, x: np.ndarray) -> np.ndarray:
    """int_0^x f along axis 0, fourth order, complex-safe."""
    f = np.asarray(f)
    cum = lambda y: cumulative_simpson(y, x=x, axis=0, initial=0)
    if np.iscomplexobj(f):
        return cum(f.real) + 1j * cum(f.imag)
    return cum(f)


def _divide_by_v(f: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(f)
    nz = v > 0
    out[nz] = f[nz] / v[nz, None]
    return out


def solve_slashedA(v: np.ndarray, alpha_e: np.ndarray, alpha_b: np.ndarray):
    """Tangential potential from d_v(v A) = v alpha with (v A)(0) = 0."""
    return (_divide_by_v(_cumint(v[:, None] * alpha_e, v), v),
            _divide_by_v(_cumint(v[:, None] * alpha_b, v), v))


def current_L(grid: SphereGrid, v: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Coefficients of J_L = Im(phi conj(d_v phi)) on the cone (A_L = 0)."""
    s = grid.synthesis(phi)
    ds = grid.synthesis(ddu(phi, v[1] - v[0]))
    return grid.analysis(np.imag(s * np.conj(ds)))


def solve_A_ubarL(grid: SphereGrid, v: np.ndarray, A_e: np.ndarray, A_b: np.ndarray,
                  J_L: np.ndarray) -> np.ndarray:
    """A_Lbar from the second-order radial ODE, both constants fixed at the vertex."""
    D = grid.sdiv(A_e, A_b)
    inner = _divide_by_v(_cumint(v[:, None] ** 2 * J_L, v), v)
    return _divide_by_v(_cumint(2 * D - inner, v), v)


@dataclass
class ConeData:
    grid: SphereGrid
    v: np.ndarray
    A_ubarL: np.ndarray
    A_e: np.ndarray
    A_b: np.ndarray
    phi: np.ndarray
    alpha_e: np.ndarray
    alpha_b: np.ndarray
    J_L: np.ndarray
    LbarA_L: np.ndarray
    v_cut: float = 0.0
    energy: float = 0.0
    residuals: dict | None = None

    @property
    def A_L(self) -> np.ndarray:
        return np.zeros_like(self.A_ubarL)

    @property
    def h(self) -> float:
        return float(self.v[1] - self.v[0])


def transverse_A_L(grid: SphereGrid, v: np.ndarray, A_ubarL, A_e, A_b) -> np.ndarray:
    """Lbar A_L = -L A_Lbar + 2 r^-1 (A_L - A_Lbar) + 2 div A_tan with A_L = 0, r = v."""
    dA = ddu(A_ubarL, v[1] - v[0])
    return -dA + 2 * _divide_by_v(grid.sdiv(A_e, A_b) - A_ubarL, v)


def cone_energy(grid: SphereGrid, v: np.ndarray, fields) -> float:
    """First-order cone energy: sum over fields of int (v^2 |d_v f|^2 + v^2 |f|^2 + |grad f|^2) dv.

    ``fields`` holds (coefficients, kind) with kind 'scalar' or 'oneform_e'/'oneform_b'.
    """
    h = v[1] - v[0]
    lam = grid.ell * (grid.ell + 1.0)
    total = 0.0
    for c, kind in fields:
        weight = lam if kind != "scalar" else np.ones_like(lam)
        dens = (v[:, None] ** 2 * (np.abs(ddu(c, h)) ** 2 + np.abs(c) ** 2)
                + lam * np.abs(c) ** 2) * weight
        total += trapezoid(dens.sum(axis=1), v)
    return float(total)


def ode_residuals(cd: ConeData) -> dict:
    """Discrete residuals of the three cone relations, interior nodes."""
    g, v, h = cd.grid, cd.v, cd.h
    inner = slice(3, -3)
    vv = v[:, None]
    r_tan = ddu(vv * cd.A_e, h) - vv * cd.alpha_e
    w = vv * ddu(vv * cd.A_ubarL, h)
    r_lbar = ddu(w, h) - 2 * ddu(vv * g.sdiv(cd.A_e, cd.A_b), h) + vv**2 * cd.J_L
    lorenz = (cd.LbarA_L + ddu(cd.A_ubarL, h)
              + 2 * _divide_by_v(cd.A_ubarL - g.sdiv(cd.A_e, cd.A_b), v))
    return {
        "tangential": float(np.abs(r_tan[inner]).max()),
        "A_ubarL": float(np.abs(r_lbar[inner]).max()),
        "lorenz": float(np.abs(lorenz[inner]).max()),
    }


def assemble_cone_state(cone: ConeInput) -> ConeData:
    g, v = cone.grid, cone.v
    A_e, A_b = solve_slashedA(v, cone.alpha_e, cone.alpha_b)
    J_L = current_L(g, v, cone.phi)
    A_lb = solve_A_ubarL(g, v, A_e, A_b, J_L)
    cd = ConeData(g, v, A_lb, A_e, A_b, cone.phi.copy(), cone.alpha_e, cone.alpha_b, J_L,
                  transverse_A_L(g, v, A_lb, A_e, A_b), cone.v_cut)
    cd.energy = cone_energy(g, v, [(A_lb, "scalar"), (A_e, "oneform_e"), (A_b, "oneform_b"),
                                   (cd.phi, "scalar")])
    if not np.isfinite(cd.energy):
        raise ValueError("cone energy is not finite")
    cd.residuals = ode_residuals(cd)
    return cd


def to_cartesian(cd: ConeData) -> np.ndarray:
    """Unified unknowns (A_0, A_1, A_2, A_3, phi) as coefficients, shape (5, N, ncoef)."""
    g = cd.grid
    A_r = -0.5 * g.synthesis(cd.A_ubarL).real
    tan = g.to_cartesian(*g.vector_synthesis(cd.A_e, cd.A_b)).real
    cart = tan + A_r[:, None, :] * g.rhat
    out = np.empty((5,) + cd.phi.shape, dtype=complex)
    out[0] = 0.5 * cd.A_ubarL
    for i in range(3):
        out[1 + i] = g.analysis(cart[:, i, :])
    out[4] = cd.phi
    return out


def alpha_from_potential(grid: SphereGrid, v, A_L, A_e, A_b):
    """r alpha = L(r A_tan) - sgrad(A_L) on the cone, returned as alpha."""
    h = v[1] - v[0]
    ge, _ = grid.sgrad(A_L)
    re_ = ddu(v[:, None] * A_e, h) - ge
    rb = ddu(v[:, None] * A_b, h)
    return _divide_by_v(re_, v), _divide_by_v(rb, v)


def gauge_fix_cone(grid: SphereGrid, v, A_L, A_e, A_b):
    """Remove A_L by xi = int_0^v A_L; returns the shifted tangential potential."""
    xi = _cumint(A_L, v)
    ge, _ = grid.sgrad(xi)
    return A_e - _divide_by_v(ge, v), A_b.copy()


def dump_csv(cd: ConeData, path) -> None:
    pairs = lm_pairs(cd.grid.l_max)
    fields = {"A_ubarL": cd.A_ubarL, "A_e": cd.A_e, "A_b": cd.A_b, "phi": cd.phi}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["v", "field", "l", "m", "re", "im"])
        for name, arr in fields.items():
            for k, vv in enumerate(cd.v):
                for j, (l, m) in enumerate(pairs):
                    w.writerow([f"{vv:.12e}", name, l, m, f"{arr[k, j].real:.12e}",
                                f"{arr[k, j].imag:.12e}"])
