"""Manufactured solutions for the unified system in the compactified chart.

Each component of Psi* is a single axisymmetric mode p(t, r) Y_l0 with p = r^l q(t, r^2),
so it is smooth through the axis.  The forcing box Psi* - N[Psi*] is built from exact
symbolic derivatives, and the discrete solution is compared against Psi* directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

from .conedata import ConeData
from .evolve import N_COMP, EvolutionConfig, UnifiedState, evolve_march, unified_source
from .sphere import SphereGrid, lm_index

_t, _r = sp.symbols("t r", positive=True)

# (component, l, complex amplitude, center in t, width)
DEFAULT_MODES = (
    (0, 0, 0.6, 1.0, 0.35),
    (1, 1, 0.5, 0.9, 0.30),
    (2, 2, 0.8, 1.1, 0.40),
    (3, 0, -0.4, 0.8, 0.30),
    (4, 0, 0.7 + 0.5j, 1.0, 0.30),
    (4, 1, 0.4j, 1.2, 0.35),
)


@dataclass
class _Mode:
    comp: int
    l: int
    amp: complex
    p: object
    p_t: object
    p_r: object
    box: object


def _compile(comp, l, amp, center, width) -> _Mode:
    p = _r**l * sp.exp(-((_t - center) ** 2 + _r**2) / width**2)
    box = -sp.diff(p, _t, 2) + sp.diff(p, _r, 2) + 2 * sp.diff(p, _r) / _r - l * (l + 1) * p / _r**2
    f = lambda e: sp.lambdify((_t, _r), sp.simplify(e), "numpy")
    return _Mode(comp, l, complex(amp), f(p), f(sp.diff(p, _t)), f(sp.diff(p, _r)), f(box))


class ManufacturedSolution:
    def __init__(self, grid: SphereGrid, modes=DEFAULT_MODES):
        self.grid = grid
        self.modes = [_compile(*m) for m in modes]

    def _fill(self, u, v, which):
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        t, r = u + v, v - u
        out = np.zeros(u.shape + (N_COMP, self.grid.ncoef), dtype=complex)
        rs = np.where(r > 0, r, 1.0)
        for m in self.modes:
            val = getattr(m, which)(t, rs) * np.ones_like(t)
            if which == "p":
                val = np.where(r > 0, val, val if m.l == 0 else 0.0)
            out[..., m.comp, lm_index(m.l, 0)] += m.amp * val
        return out

    def values(self, u, v):
        """Psi* at (u~, v~) nodes; axis values are the r -> 0 limits."""
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        out = self._fill(u, v, "p")
        on_axis = (v - u) <= 0
        if on_axis.any():
            out[on_axis] = self._fill(u[on_axis], u[on_axis] + 1e-7, "p")
            for m in self.modes:
                if m.l > 0:
                    out[on_axis, m.comp, lm_index(m.l, 0)] = 0
        return out

    def forcing(self, u_c, v_c):
        """box Psi* - N[Psi*] at cell centers, shape (cells, 5, ncoef)."""
        psi = self._fill(u_c, v_c, "p")
        pt = self._fill(u_c, v_c, "p_t")
        pr = self._fill(u_c, v_c, "p_r")
        box = self._fill(u_c, v_c, "box")
        r_c = np.asarray(v_c) - np.asarray(u_c)
        return box - unified_source(self.grid, psi, pt - pr, pt + pr, r_c)

    def cone(self, N: int) -> tuple[ConeData, np.ndarray]:
        v = np.linspace(0.0, 1.0, N)
        z = np.zeros((N, self.grid.ncoef), dtype=complex)
        cd = ConeData(self.grid, v, z, z, z, z, z, z, z, z)
        return cd, self.values(np.zeros_like(v), v)

    def run(self, N: int, u_max: float | None = None) -> tuple[UnifiedState, float]:
        """Evolve with forcing; returns the state and the max nodal error."""
        cfg = EvolutionConfig(N=N, u_max=u_max, forcing=self.forcing)
        cd, psi0 = self.cone(N)
        st = evolve_march(cd, cfg, psi0=psi0)
        uu, vv = np.meshgrid(st.u, st.v, indexing="ij")
        err = np.abs(st.psi - self.values(uu, vv)).max(axis=(2, 3))
        return st, float(err[st.valid()].max())


def convergence_study(grid: SphereGrid, Ns=(33, 65, 129, 257), u_max=None):
    """Errors and successive ratios for the manufactured solution."""
    ms = ManufacturedSolution(grid)
    errs = np.array([ms.run(N, u_max)[1] for N in Ns])
    return np.asarray(Ns), errs, errs[:-1] / errs[1:]
