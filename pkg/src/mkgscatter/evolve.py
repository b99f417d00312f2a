"""Double-null evolution of the Lorenz-gauge system in the compactified chart.

Unknowns are the Cartesian components Psi = (A_0, A_1, A_2, A_3, phi), each a scalar
wave with flat-space box.  Per spectral mode, g = r psi obeys

    d_u d_v g = -l(l+1) g / r^2 - r F,      F = box psi = N[Psi] (+ forcing),

which is integrated on null diamonds of side h.  Nodes are (i, j) with u = i h,
v = j h and j >= i; the axis is j = i.  Cell corners are S = (i, j-1), E = (i, j),
W = (i+1, j-1), N = (i+1, j).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .conedata import ConeData, to_cartesian
from .sphere import SphereGrid

N_COMP = 5
MAGIC = b"MKGS"
SNAPSHOT_VERSION = 1


class ConvergenceError(RuntimeError):
    pass


@dataclass
class EvolutionConfig:
    N: int = 129
    l_max: int = 4
    mode: str = "march"
    cell_fixpoint_tol: float = 1e-12
    max_level_iters: int = 60
    picard_max_iters: int = 40
    picard_tol: float = 1e-11
    delta: float = 0.25
    u_max: float | None = None
    nonlinear: bool = True
    forcing: Callable | None = None

    def __post_init__(self):
        if self.mode not in ("march", "picard"):
            raise ValueError("mode must be 'march' or 'picard'")
        if self.cell_fixpoint_tol <= 0 or self.picard_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.N < 9:
            raise ValueError("need at least 9 nodes along v")

    @property
    def h(self) -> float:
        return 1.0 / (self.N - 1)

    def n_levels(self, slab: bool = False) -> int:
        top = self.delta if slab else (1.0 if self.u_max is None else self.u_max)
        return int(round(min(top, 1.0) / self.h)) + 1


@dataclass
class UnifiedState:
    grid: SphereGrid
    h: float
    psi: np.ndarray  # (levels, N, 5, ncoef); entries with j < i unused
    level_iters: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    meta: dict = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return self.psi.shape[0]

    @property
    def N(self) -> int:
        return self.psi.shape[1]

    @property
    def u(self) -> np.ndarray:
        return np.arange(self.n_levels) * self.h

    @property
    def v(self) -> np.ndarray:
        return np.arange(self.N) * self.h

    def valid(self) -> np.ndarray:
        i = np.arange(self.n_levels)[:, None]
        j = np.arange(self.N)[None, :]
        return j >= i


# -- nonlinear sources ------------------------------------------------------------
def center_derivatives(grid: SphereGrid, psi_c, du, dv, r_c):
    """Samples of phi and its Cartesian gradient at cell centers.

    psi_c, du, dv: (cells, 5, ncoef).  Returns (A (4, cells, npts) real, phi, dphi (4, ...)).
    """
    A = grid.synthesis(psi_c[:, :4]).real.transpose(1, 0, 2)
    phi = grid.synthesis(psi_c[:, 4])
    p_u = grid.synthesis(du[:, 4])
    p_v = grid.synthesis(dv[:, 4])
    p_t = 0.5 * (p_u + p_v)
    p_r = 0.5 * (p_v - p_u)
    gt, gp = grid.grad_grid(psi_c[:, 4])
    ang = grid.to_cartesian(gt, gp) / r_c[:, None, None]  # (cells, 3, npts)
    dphi = np.empty((4,) + phi.shape, dtype=complex)
    dphi[0] = p_t
    for a in range(3):
        dphi[1 + a] = grid.rhat[a] * p_r + ang[:, a]
    return A, phi, dphi


def unified_source(grid: SphereGrid, psi_c, du, dv, r_c) -> np.ndarray:
    """N[Psi]: box A_mu = -Im(phi conj d_mu phi) + A_mu |phi|^2, box phi = -2i A.dphi + A.A phi."""
    A, phi, dphi = center_derivatives(grid, psi_c, du, dv, r_c)
    mod2 = np.abs(phi) ** 2
    out = np.empty_like(psi_c)
    for mu in range(4):
        out[:, mu] = grid.analysis(-np.imag(phi * np.conj(dphi[mu])) + A[mu] * mod2)
    a_dphi = -A[0] * dphi[0] + A[1] * dphi[1] + A[2] * dphi[2] + A[3] * dphi[3]
    a_a = -A[0] ** 2 + A[1] ** 2 + A[2] ** 2 + A[3] ** 2
    out[:, 4] = grid.analysis(-2j * a_dphi + a_a * phi)
    return out


# -- diamond sweep ---------------------------------------------------------------
class _Stepper:
    def __init__(self, grid: SphereGrid, N: int, h: float):
        self.grid, self.N, self.h = grid, N, h
        self.ell = grid.ell.astype(float)
        self.lam = self.ell * (self.ell + 1)
        # nodes with r <= l h are filled from regularity for l >= 2; the plain diamond
        # there feeds back through the S corner and grows level to level
        self.near_axis = np.where(self.ell >= 2, self.ell, 0).astype(float)
        self.fill_points = 3

    def cells(self, i: int):
        """Indices j of the N-corners of cells between rows i and i+1, and k = r_c / h."""
        j = np.arange(i + 2, self.N)
        return j, (j - i - 1).astype(float)

    def centers(self, row_i, row_n, i):
        j, k = self.cells(i)
        S, E, W, Nn = row_i[j - 1], row_i[j], row_n[j - 1], row_n[j]
        h = self.h
        # center value through w = psi / r^l so that psi_c ~ r_c^l near the axis
        ell = self.ell
        kk = k[:, None, None]
        wN, wS, wE = Nn / kk**ell, S / kk**ell, E / (kk + 1) ** ell
        wW = np.where(kk > 1, W / np.maximum(kk - 1, 1) ** ell, 0.5 * (wN + wS))
        psi_c = 0.25 * (wN + wS + wE + wW) * kk**ell
        du = (Nn + W - E - S) / (2 * h)
        dv = (Nn + E - W - S) / (2 * h)
        return psi_c, du, dv, k * h

    def sweep(self, row_i, F, i, prev_rows=()):
        """Row i+1 from row i and center sources F (cells, 5, ncoef).

        ``prev_rows`` are rows i-1, i-2, ... used for the near-axis regularity fill.
        """
        h, ell, lam = self.h, self.ell, self.lam
        j, k = self.cells(i)
        new = np.zeros_like(row_i)
        g_w = np.zeros(row_i.shape[1:], dtype=complex)
        pot = np.where(lam > 0, -h * h * lam, 0.0)
        for c, (jj, kk) in enumerate(zip(j, k)):
            rc, rE, rW = kk * h, (kk + 1) * h, (kk - 1) * h
            g_s = rc * row_i[jj - 1]
            g_e = rE * row_i[jj]
            w_e = row_i[jj] / rE**ell
            w_c = 0.5 * (w_e + g_w / rW ** (ell + 1)) if kk >= 2 else w_e
            g_n = g_w + g_e - g_s + pot * rc ** (ell - 1) * w_c - h * h * rc * F[c]
            fill = self.near_axis[:, None] >= kk  # (ncoef,) broadcast over components
            if fill.any():
                g_n = np.where(fill.T, self._axis_fill(row_i, prev_rows, jj, i, kk) * rc, g_n)
            new[jj] = g_n / rc
            g_w = g_n
        return new

    def _axis_fill(self, row_i, prev_rows, jj, i, kk):
        """psi at (i+1, jj) from w = psi / r^ell, even in r, along the line of constant t."""
        ell = self.ell
        rows = (row_i,) + tuple(prev_rows)
        xs, ys = [], []
        for s, row in enumerate(rows[:self.fill_points]):
            jn = jj + 1 + s  # same t = (i+1+jj) h on row i-s
            if jn >= self.N:
                break
            r = (kk + 2 + 2 * s) * self.h
            xs.append(r * r)
            ys.append(row[jn] / r**ell)
        x0 = (kk * self.h) ** 2
        wts = _lagrange_weights(np.array(xs), x0)
        w0 = sum(wt * y for wt, y in zip(wts, ys))
        return w0 * (kk * self.h) ** ell

    def set_axis(self, row_n, i_next, prev_rows=()):
        """psi on the axis: zero for l >= 1.  For l = 0 a cubic extrapolation along the
        outgoing row, so the axis value carries an O(h^4) error; near the top corner, where
        the row is too short, an extrapolation along the axis in t instead."""
        a = i_next
        row_n[a] = 0
        if self.N - 1 - a >= 4:
            row_n[a, :, 0] = (4 * row_n[a + 1, :, 0] - 6 * row_n[a + 2, :, 0]
                              + 4 * row_n[a + 3, :, 0] - row_n[a + 4, :, 0])
            return
        # previous axis values at t - 2h, t - 4h, ...
        ys = [row[a - 1 - s_, :, 0] for s_, row in enumerate(prev_rows[:3])]
        coef = {1: (1.0,), 2: (2.0, -1.0), 3: (3.0, -3.0, 1.0)}.get(len(ys), ())
        for c, y in zip(coef, ys):
            row_n[a, :, 0] += c * y

def _forcing_at(cfg, st, i):
    if cfg.forcing is None:
        return 0.0
    j, k = st.cells(i)
    u_c = (i + 0.5) * st.h * np.ones_like(k)
    v_c = (j - 0.5) * st.h
    return cfg.forcing(u_c, v_c)


def _as_source(F, st, i):
    if np.ndim(F):
        return F
    n = len(st.cells(i)[0])
    return np.zeros((n, N_COMP, st.grid.ncoef), dtype=complex)


def initial_rows(cone: ConeData, N: int) -> np.ndarray:
    psi0 = to_cartesian(cone).transpose(1, 0, 2)  # (N, 5, ncoef)
    if psi0.shape[0] != N:
        raise ValueError(f"cone has {psi0.shape[0]} nodes, config expects {N}")
    return psi0


def evolve_march(cone: ConeData, cfg: EvolutionConfig, psi0: np.ndarray | None = None,
                 n_levels: int | None = None) -> UnifiedState:
    """March level by level in u~; each level solved by fixed-point iteration on its sources."""
    grid = cone.grid
    N, h = cfg.N, cfg.h
    st = _Stepper(grid, N, h)
    L = cfg.n_levels() if n_levels is None else n_levels
    psi = np.zeros((L, N, N_COMP, grid.ncoef), dtype=complex)
    psi[0] = initial_rows(cone, N) if psi0 is None else psi0
    iters = np.zeros(L, dtype=int)
    for i in range(L - 1):
        row_i = psi[i]
        prev_rows = [psi[i - s] for s in (1, 2) if i - s >= 0]
        axis_rows = [psi[i - s] for s in (0, 1, 2) if i - s >= 0]
        guess = 2 * psi[i] - psi[i - 1] if i >= 1 else psi[i].copy()
        guess[: i + 1] = 0
        st.set_axis(guess, i + 1, axis_rows)
        forcing = _forcing_at(cfg, st, i)
        change = 0.0
        for it in range(cfg.max_level_iters):
            F = forcing
            if cfg.nonlinear:
                F = F + unified_source(grid, *st.centers(row_i, guess, i))
            new = st.sweep(row_i, _as_source(F, st, i), i, prev_rows)
            st.set_axis(new, i + 1, axis_rows)
            change = float(np.max(np.abs(new - guess)))
            scale = 1.0 + float(np.max(np.abs(new)))
            guess = new
            if not cfg.nonlinear or change < cfg.cell_fixpoint_tol * scale:
                break
        else:
            j_bad = i + 2 + int(np.argmax(np.abs(new - guess).max(axis=(1, 2))[i + 2:]))
            raise ConvergenceError(
                f"fixed point did not converge on level u~ = {(i + 1) * h:.6f} "
                f"near v~ = {j_bad * h:.6f} (last change {change:.3e})")
        iters[i + 1] = it + 1
        psi[i + 1] = guess
    return UnifiedState(grid, h, psi, iters, {"mode": "march"})


def slice_norms(state_a: np.ndarray, state_b: np.ndarray, h: float) -> np.ndarray:
    """L2 over (v~, omega, components) of the difference, per level."""
    d = np.abs(state_a - state_b) ** 2
    return np.sqrt(h * d.sum(axis=(1, 2, 3)))


def evolve_picard(cone: ConeData, cfg: EvolutionConfig):
    """Global iteration box Psi_{j+1} = N[Psi_j] on the slab u~ <= delta, Psi_0 = 0."""
    grid = cone.grid
    N, h = cfg.N, cfg.h
    st = _Stepper(grid, N, h)
    L = cfg.n_levels(slab=True)
    prev = np.zeros((L, N, N_COMP, grid.ncoef), dtype=complex)
    base = initial_rows(cone, N)
    gaps = []
    for it in range(cfg.picard_max_iters):
        cur = np.zeros_like(prev)
        cur[0] = base
        for i in range(L - 1):
            F = _forcing_at(cfg, st, i)
            if cfg.nonlinear:
                F = F + unified_source(grid, *st.centers(prev[i], prev[i + 1], i))
            row = st.sweep(cur[i], _as_source(F, st, i), i, [cur[i - s] for s in (1, 2) if i - s >= 0])
            st.set_axis(row, i + 1, [cur[i - s] for s in (0, 1, 2) if i - s >= 0])
            cur[i + 1] = row
        gap = float(slice_norms(cur, prev, h).max())
        gaps.append(gap)
        prev = cur
        norm = float(np.sqrt(h * (np.abs(cur) ** 2).sum(axis=(1, 2, 3))).max())
        if gap <= cfg.picard_tol * max(norm, 1.0):
            break
        if it >= 3 and gaps[-1] >= gaps[-2]:
            raise ConvergenceError(
                f"Picard gaps stopped contracting (ratio {gaps[-1] / gaps[-2]:.3f}); shrink the slab")
    state = UnifiedState(grid, h, prev, np.zeros(L, int), {"mode": "picard"})
    return state, np.array(gaps)


def evolve(cone: ConeData, cfg: EvolutionConfig):
    if cfg.mode == "picard":
        return evolve_picard(cone, cfg)
    return evolve_march(cone, cfg), None


# -- gauge monitor ----------------------------------------------------------------
@dataclass
class GaugeMonitor:
    u_c: np.ndarray
    lam_max: np.ndarray  # per level, max over cells and sphere of |lambda|
    lam_l2: np.ndarray
    wave_residual: float
    transverse_mismatch: float | None = None

    @property
    def max_lambda(self) -> float:
        return float(self.lam_max.max(initial=0.0))


def _lorenz_at_centers(state: UnifiedState, i: int):
    grid = state.grid
    st = _Stepper(grid, state.N, state.h)
    psi_c, du, dv, r_c = st.centers(state.psi[i], state.psi[i + 1], i)
    dt = 0.5 * (du + dv)
    dr = 0.5 * (dv - du)
    lam = -grid.synthesis(dt[:, 0]).real
    for a in range(3):
        gt, gp = grid.grad_grid(psi_c[:, 1 + a])
        ang = grid.to_cartesian(gt, gp)[:, a] / r_c[:, None]
        lam = lam + (grid.rhat[a] * grid.synthesis(dr[:, 1 + a]) + ang).real
    return lam, grid.synthesis(psi_c[:, 4]), r_c


def gauge_monitor(state: UnifiedState, cone: ConeData | None = None,
                  r_min: float = 0.05) -> GaugeMonitor:
    """lambda~ = -d_t A_0 + div A at cell centers, and the residual of its wave equation.

    The residual box lambda - lambda |phi|^2 is formed on diamonds of the center lattice,
    whose own centers are grid nodes at r = k h with k >= 2.  It is reported for
    r~ >= r_min: a second difference of lambda next to the axis picks up the
    non-smooth O(h^2) error of the regularity fill and does not converge pointwise.
    """
    grid, h = state.grid, state.h
    L = state.n_levels
    lam_max = np.zeros(max(L - 1, 0))
    lam_l2 = np.zeros(max(L - 1, 0))
    rows = []
    for i in range(L - 1):
        lam, _, r_c = _lorenz_at_centers(state, i)
        rows.append(lam)
        if lam.size:
            lam_max[i] = np.abs(lam).max()
            lam_l2[i] = np.sqrt(h * grid.integrate(lam**2).sum())
    res = 0.0
    for i in range(len(rows) - 1):
        lo, hi = rows[i], rows[i + 1]  # lo[k-1] is the center at r = k h on level i
        n = min(len(lo) - 1, len(hi) + 1)
        if n < 3:
            continue
        k = np.arange(2, n + 1, dtype=float)
        r = lambda kk: (kk * h)[:, None]
        S, E = lo[k.astype(int) - 1] * r(k), lo[k.astype(int)] * r(k + 1)
        Nn, W = hi[k.astype(int) - 1] * r(k), hi[k.astype(int) - 2] * r(k - 1)
        dudv = (Nn + S - E - W) / h**2
        lam_c = (S + E + Nn + W) / 4 / r(k)
        j = (i + 1 + k).astype(int)
        phi = grid.synthesis(state.psi[i + 1, j, 4])
        lap = grid.synthesis(grid.laplacian(grid.analysis(lam_c))).real
        box = -dudv / r(k) + lap / r(k) ** 2
        keep = k * h >= r_min - 1e-12
        if keep.any():
            res = max(res, float(np.abs(box - lam_c * np.abs(phi) ** 2)[keep].max()))
    mismatch = transverse_check(state, cone) if cone is not None and L >= 3 else None
    return GaugeMonitor((np.arange(L - 1) + 0.5) * h, lam_max, lam_l2, res, mismatch)


def transverse_check(state: UnifiedState, cone: ConeData) -> float:
    """Compare Lbar A_L on the cone from the evolution with the gauge-relation value."""
    g = state.grid
    h = state.h
    # A_L = A_0 + omega . A on rows 0..2, one-sided second-order derivative in u
    def A_L(row):
        A0 = g.synthesis(row[:, 0]).real
        Ar = sum(g.rhat[a] * g.synthesis(row[:, 1 + a]).real for a in range(3))
        return A0 + Ar

    j = np.arange(3, state.N - 1)
    a0, a1, a2 = A_L(state.psi[0][j]), A_L(state.psi[1][j]), A_L(state.psi[2][j])
    d = (-3 * a0 + 4 * a1 - a2) / (2 * h)
    ref = g.synthesis(cone.LbarA_L[j]).real
    return float(np.abs(d - ref).max())


# -- hyperboloid ---------------------------------------------------------------------
def hyperboloid_curve(delta: float, v: np.ndarray) -> np.ndarray:
    """u~ on {t~/(t~^2 - r~^2) = 1/(2 delta)} at given v~ (v~ >= delta)."""
    return delta * v / (2 * v - delta)


def extract_hyperboloid(state: UnifiedState, delta: float | None = None):
    """Psi and (d_u Psi, d_v Psi) along the hyperboloid, one entry per v~ node with v~ >= delta."""
    delta = state.meta.get("delta", 0.25) if delta is None else delta
    h = state.h
    v = state.v
    js = np.nonzero(v >= delta - 1e-12)[0]
    uc = hyperboloid_curve(delta, v[js])
    if uc.max(initial=0) > state.u[-1] + 1e-12:
        raise ValueError("hyperboloid leaves the evolved region")
    vals, dus, dvs = [], [], []
    for j, ut in zip(js, uc):
        x = ut / h
        i0 = int(np.clip(np.floor(x) - 1, 0, max(state.n_levels - 4, 0)))
        i0 = min(i0, j - 3) if j >= 3 else 0
        idx = np.arange(i0, min(i0 + 4, state.n_levels, j + 1))
        col = state.psi[idx, j]
        # Lagrange interpolation in u~ and its derivative
        xs = idx.astype(float)
        wts = _lagrange_weights(xs, x)
        dwt = _lagrange_dweights(xs, x) / h
        vals.append(np.tensordot(wts, col, axes=(0, 0)))
        dus.append(np.tensordot(dwt, col, axes=(0, 0)))
        jj = np.clip([j - 1, j + 1], 0, state.N - 1)
        left = np.tensordot(wts, state.psi[idx, jj[0]], axes=(0, 0))
        right = np.tensordot(wts, state.psi[idx, jj[1]], axes=(0, 0))
        dvs.append((right - left) / ((jj[1] - jj[0]) * h))
    return v[js], uc, np.array(vals), np.array(dus), np.array(dvs)


def _lagrange_weights(xs, x):
    w = np.ones(len(xs))
    for a in range(len(xs)):
        for b in range(len(xs)):
            if a != b:
                w[a] *= (x - xs[b]) / (xs[a] - xs[b])
    return w


def _lagrange_dweights(xs, x):
    n = len(xs)
    out = np.zeros(n)
    for a in range(n):
        tot = 0.0
        for c in range(n):
            if c == a:
                continue
            term = 1 / (xs[a] - xs[c])
            for b in range(n):
                if b not in (a, c):
                    term *= (x - xs[b]) / (xs[a] - xs[b])
            tot += term
        out[a] = tot
    return out


# -- snapshots ---------------------------------------------------------------------
def write_snapshot(path, state: UnifiedState, i: int) -> None:
    """Binary slice: header MKGS, version, N_v, l_max (uint32), u~ (float64); body
    little-endian float64 in (component, v, mode, re/im) order."""
    row = state.psi[i]
    body = np.stack([row.real, row.imag], axis=-1).transpose(1, 0, 2, 3)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", SNAPSHOT_VERSION, state.N, state.grid.l_max))
        fh.write(struct.pack("<d", i * state.h))
        fh.write(np.ascontiguousarray(body, dtype="<f8").tobytes())


def read_snapshot(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError("not an MKGS snapshot")
        version, n_v, l_max = struct.unpack("<III", fh.read(12))
        (u,) = struct.unpack("<d", fh.read(8))
        nc = (l_max + 1) ** 2
        body = np.frombuffer(fh.read(), dtype="<f8").reshape(N_COMP, n_v, nc, 2)
    row = (body[..., 0] + 1j * body[..., 1]).transpose(1, 0, 2)
    return {"version": version, "N_v": n_v, "l_max": l_max, "u": u, "psi": row}


def write_slice_csv(path, state: UnifiedState, i: int) -> None:
    from .sphere import lm_pairs

    names = ("A0", "A1", "A2", "A3", "phi")
    pairs = lm_pairs(state.grid.l_max)
    with open(path, "w") as fh:
        fh.write("u,v,component,l,m,re,im\n")
        for j in range(i, state.N):
            for c, name in enumerate(names):
                for k, (l, m) in enumerate(pairs):
                    z = state.psi[i, j, c, k]
                    fh.write(f"{i * state.h:.12e},{j * state.h:.12e},{name},{l},{m},"
                             f"{z.real:.12e},{z.imag:.12e}\n")
