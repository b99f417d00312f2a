"""Scattering data on future null infinity.

Data live on a truncated interval [u_min, u_max] and are stored per u-node as sphere
coefficients: the complex scalar ``Phi``, the real 1-form ``Abar`` in its
electric/magnetic split, and a connection ``B = B_u du + B_omega``.  The default
connection is the temporal gauge B_u = 0 with B_omega(u_max) = 0.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_simpson, trapezoid
from scipy.interpolate import PchipInterpolator

from .sphere import SphereGrid, lm_index

SCHEMA = "mkgscatter-data/1"
FIELDS = ("Phi", "Abar_electric", "Abar_magnetic")
ROTATION_AXES = {"12": 2, "23": 0, "31": 1}


class ManifestError(ValueError):
    """Raised when a data manifest cannot be parsed."""


@dataclass
class ScatteringData:
    grid: SphereGrid
    u: np.ndarray
    Phi: np.ndarray
    Abar_e: np.ndarray
    Abar_b: np.ndarray
    B_u: np.ndarray | None = None
    B_e: np.ndarray | None = None
    B_b: np.ndarray | None = None
    q0: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        shape = (self.u.size, self.grid.ncoef)
        for name in ("Phi", "Abar_e", "Abar_b"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            setattr(self, name, arr)
        for name in ("B_u", "B_e", "B_b"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(shape, dtype=complex))
        self.Abar_e[:, 0] = 0
        self.Abar_b[:, 0] = 0
        if np.any(np.diff(self.u) <= 0):
            raise ValueError("u grid must be strictly increasing")

    @property
    def du(self) -> float:
        return float(self.u[1] - self.u[0])

    @property
    def nu(self) -> int:
        return self.u.size

    @classmethod
    def zeros(cls, grid: SphereGrid, u) -> "ScatteringData":
        z = np.zeros((len(u), grid.ncoef), dtype=complex)
        return cls(grid, u, z, z.copy(), z.copy())

    def Phi_samples(self) -> np.ndarray:
        return self.grid.synthesis(self.Phi)

    def Abar_samples(self) -> tuple[np.ndarray, np.ndarray]:
        return self.grid.vector_synthesis(self.Abar_e, self.Abar_b)

    def Phi_at(self, u) -> np.ndarray:
        """Coefficients of Phi at arbitrary u by per-mode monotone cubic interpolation."""
        return _pchip(self.u, self.Phi)(u)

    def Abar_at(self, u) -> tuple[np.ndarray, np.ndarray]:
        return _pchip(self.u, self.Abar_e)(u), _pchip(self.u, self.Abar_b)(u)


def _pchip(x, y):
    """Monotone cubic interpolant of complex rows, zero outside the grid."""
    re = PchipInterpolator(x, y.real, axis=0, extrapolate=False)
    im = PchipInterpolator(x, y.imag, axis=0, extrapolate=False)

    def f(t):
        return np.nan_to_num(re(t) + 1j * im(t))

    return f


# -- profiles and manifests ------------------------------------------------------
def smooth_taper(u: np.ndarray, u_min: float, u_max: float, frac: float = 0.1) -> np.ndarray:
    """C-infinity window equal to 1 inside and 0 at both ends, ramping over ``frac``."""
    u = np.asarray(u, dtype=float)
    if frac <= 0:
        return np.ones_like(u)
    w = frac * (u_max - u_min)

    def psi(s):
        s = np.clip(s, 0, None)
        with np.errstate(divide="ignore"):
            return np.where(s > 0, np.exp(-1 / np.where(s > 0, s, 1)), 0.0)

    def ramp(s):
        return psi(s) / (psi(s) + psi(1 - s))

    return ramp((u - u_min) / w) * ramp((u_max - u) / w)


def gaussian_profile(u, center=0.0, width=1.0, amp=1.0, phase=0.0) -> np.ndarray:
    """amp * exp(-((u - center)/width)^2) * exp(i phase u); ``phase`` is a wavenumber."""
    u = np.asarray(u, dtype=float)
    return amp * np.exp(-(((u - center) / width) ** 2)) * np.exp(1j * phase * u)


def table_profile(u, path) -> np.ndarray:
    rows = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    if rows.shape[1] != 3:
        raise ManifestError(f"profile table {path} must have columns u, re, im")
    f = _pchip(rows[:, 0], rows[:, 1] + 1j * rows[:, 2])
    return f(np.asarray(u, dtype=float))


def realify(grid: SphereGrid, c: np.ndarray) -> np.ndarray:
    """Coefficients of Re(f) given those of f (keeps real 1-form potentials real)."""
    ell, em = grid.ell, grid.em
    partner = ell * ell + ell - em
    sign = np.where(em % 2 == 0, 1.0, -1.0)
    return 0.5 * (c + sign * np.conj(c[..., partner]))


def load_manifest(path) -> dict:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(spec, dict):
        raise ManifestError("manifest must be a JSON object")
    spec.setdefault("_base", str(path.parent))
    return spec


CANONICAL_MANIFEST = Path(__file__).with_name("data") / "canonical.json"


def canonical_data() -> ScatteringData:
    """The single-mode Gaussian example shipped with the package."""
    return load_data(CANONICAL_MANIFEST)


def data_from_manifest(spec: dict) -> ScatteringData:
    """Build tapered scattering data from a parsed manifest."""
    try:
        u_min, u_max = float(spec["u_min"]), float(spec["u_max"])
        n_u = int(spec.get("n_u", 401))
        l_max = int(spec.get("l_max", 4))
        frac = float(spec.get("taper", 0.1))
        modes = spec.get("modes", [])
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"bad manifest header: {exc}") from exc
    if not u_min < u_max or n_u < 9:
        raise ManifestError("need u_min < u_max and n_u >= 9")
    grid = SphereGrid(l_max)
    u = np.linspace(u_min, u_max, n_u)
    data = ScatteringData.zeros(grid, u)
    window = smooth_taper(u, u_min, u_max, frac)
    base = Path(spec.get("_base", "."))
    target = {"Phi": data.Phi, "Abar_electric": data.Abar_e, "Abar_magnetic": data.Abar_b}
    for k, mode in enumerate(modes):
        try:
            fld, l, m = mode["field"], int(mode["l"]), int(mode.get("m", 0))
            prof = mode["profile"]
            kind = prof.get("kind", "gaussian")
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ManifestError(f"mode {k}: {exc}") from exc
        if fld not in FIELDS:
            raise ManifestError(f"mode {k}: unknown field {fld!r}")
        if not (0 <= l <= l_max and abs(m) <= l) or (fld != "Phi" and l == 0):
            raise ManifestError(f"mode {k}: (l, m) = ({l}, {m}) not representable")
        if kind == "gaussian":
            args = {key: float(prof[key]) for key in ("center", "width", "amp", "phase") if key in prof}
            values = gaussian_profile(u, **args)
        elif kind == "table":
            values = table_profile(u, base / prof["path"])
        else:
            raise ManifestError(f"mode {k}: unknown profile kind {kind!r}")
        target[fld][:, lm_index(l, m)] += values * window
    data.Abar_e[:] = realify(grid, data.Abar_e)
    data.Abar_b[:] = realify(grid, data.Abar_b)
    data.meta = {"U_star": float(spec.get("U_star", u_min)), "taper": frac}
    return data


def load_data(path) -> ScatteringData:
    return data_from_manifest(load_manifest(path))


# -- u-calculus -------------------------------------------------------------------
def ddu(f: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order finite difference along axis 0 (one-sided stencils at the ends)."""
    f = np.asarray(f)
    out = np.empty_like(f)
    out[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    out[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
    out[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
    out[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * h)
    out[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * h)
    return out


def integral_from_end(f: np.ndarray, u: np.ndarray) -> np.ndarray:
    """I(u) = int_u^{u_max} f du' at every node (fourth-order cumulative Simpson)."""
    f = np.asarray(f)
    cum = lambda y: cumulative_simpson(y[::-1], x=-u[::-1], axis=0, initial=0)[::-1]
    if np.iscomplexobj(f):
        return cum(f.real) + 1j * cum(f.imag)
    return cum(f)


def _check_taper(data: ScatteringData, tol: float = 1e-8):
    ends = np.concatenate([np.abs(data.Phi[[0, -1]]).ravel(),
                           np.abs(data.Abar_e[[0, -1]]).ravel(),
                           np.abs(data.Abar_b[[0, -1]]).ravel()])
    scale = max(np.max(np.abs(data.Phi)), np.max(np.abs(data.Abar_e)),
                np.max(np.abs(data.Abar_b)), 1e-300)
    if ends.max() > tol * scale:
        raise ValueError("data are not tapered at the grid ends; u-integrals not converged")


def _charge_density(data: ScatteringData) -> np.ndarray:
    """Coefficients of Im(Phi conj(D_u Phi)) - sdiv Abar at each u-node."""
    g = data.grid
    phi = data.Phi_samples()
    dphi = ddu(phi, data.du) + 1j * g.synthesis(data.B_u) * phi
    im = g.analysis(np.imag(phi * np.conj(dphi)))
    return im - g.sdiv(data.Abar_e, data.Abar_b)


def compute_charge(data: ScatteringData) -> tuple[float, float]:
    """Total charge as the angular mean of the u-integral, plus its L2 anisotropy."""
    _check_taper(data)
    g = data.grid
    q = trapezoid(_charge_density(data), data.u, axis=0)
    q0 = float((q[0] / math.sqrt(4 * math.pi)).real)
    aniso = float(math.sqrt(g.norm2(np.where(g.ell > 0, q, 0))))
    return q0, aniso


@dataclass
class CompatibilityReport:
    q0: float
    anisotropy: float
    magnetic_sup: float
    magnetic_l2: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.anisotropy < self.tol and self.magnetic_sup < self.tol

    def rows(self):
        return [
            ("q0", self.q0, "", True),
            ("charge_anisotropy", self.anisotropy, self.tol, self.anisotropy < self.tol),
            ("magnetic_integral_sup", self.magnetic_sup, self.tol, self.magnetic_sup < self.tol),
            ("magnetic_integral_l2", self.magnetic_l2, self.tol, self.magnetic_l2 < self.tol),
        ]


def check_compatibility(data: ScatteringData, tol: float = 1e-8) -> CompatibilityReport:
    g = data.grid
    q0, aniso = compute_charge(data)
    # sdiv(*Abar) = l(l+1) b
    mag = trapezoid(g.sdiv(*g.star(data.Abar_e, data.Abar_b)), data.u, axis=0)
    sup = float(np.max(np.abs(g.synthesis(mag))))
    l2 = float(math.sqrt(g.norm2(mag)))
    return CompatibilityReport(q0, aniso, sup, l2, tol)


@dataclass
class ScriFluxes:
    u: np.ndarray
    sigma_inf: np.ndarray
    rho_inf: np.ndarray
    Abar_e: np.ndarray
    Abar_b: np.ndarray

    def fplus(self, k: int) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
        """Components of F+ at node k: (coefficient of the area form, du ^ Abar part)."""
        return self.sigma_inf[k], (self.Abar_e[k], self.Abar_b[k])


def transport_limits(data: ScatteringData) -> ScriFluxes:
    """Integrate the limiting transport of r^2 sigma and r^2 rho back from u_max.

    Terminal values are zero at u_max, so rho_inf(u_min) carries the charge
    distribution over the sphere (mean q0).
    """
    g = data.grid
    src_sigma = g.sdiv(*g.star(data.Abar_e, data.Abar_b))
    sigma = integral_from_end(src_sigma, data.u)
    rho = integral_from_end(_charge_density(data), data.u)
    return ScriFluxes(data.u, sigma, rho, data.Abar_e, data.Abar_b)


def build_connection_B(data: ScatteringData, tol: float = 1e-8) -> ScatteringData:
    """Temporal-gauge connection with dB = F+ and B_omega(u_max) = 0."""
    rep = check_compatibility(data, tol)
    if rep.magnetic_sup >= tol:
        raise ValueError(f"incompatible data: magnetic integral {rep.magnetic_sup:.3e}")
    B_e = -integral_from_end(data.Abar_e, data.u)
    B_b = -integral_from_end(data.Abar_b, data.u)
    return replace(data, B_u=np.zeros_like(data.Phi), B_e=B_e, B_b=B_b, q0=rep.q0)


def gauge_transform(data: ScatteringData, xi: np.ndarray) -> ScatteringData:
    """(B, Phi) -> (B - d xi, e^{i xi} Phi) for real xi given as coefficients per u-node."""
    g = data.grid
    xs = g.synthesis(xi).real
    phi = g.analysis(np.exp(1j * xs) * data.Phi_samples())
    dxi = g.analysis(ddu(xs, data.du))
    e, _ = g.sgrad(xi)
    return replace(data, Phi=phi, B_u=data.B_u - dxi, B_e=data.B_e - e, B_b=data.B_b.copy())


# -- weighted norms ----------------------------------------------------------------
def _rotation_vectors(g: SphereGrid) -> dict[str, np.ndarray]:
    out = {}
    for name, axis in ROTATION_AXES.items():
        ek = np.zeros((3, 1))
        ek[axis] = 1
        out[name] = np.cross(ek.T, g.rhat.T).T
    return out


def angular_words(data: ScatteringData, f: np.ndarray, k_max: int):
    """Yield (length, samples) for D_Omega words of length <= k_max applied to f.

    ``f`` is given as coefficients per u-node.  When B_omega vanishes the words
    are not formed; the caller uses the Casimir identity instead.
    """
    g = data.grid
    Bx = g.to_cartesian(*g.vector_synthesis(data.B_e, data.B_b))
    rots = _rotation_vectors(g)
    B_rot = {k: (Bx * v).sum(axis=-2).real for k, v in rots.items()}
    level = [g.synthesis(f)]
    yield 0, level[0]
    for j in range(1, k_max + 1):
        nxt = []
        for s in level:
            c = g.analysis(s)
            for name in ROTATION_AXES:
                w = g.synthesis(g.omega(c, name)) + 1j * B_rot[name] * s
                nxt.append(w)
                yield j, w
        level = nxt


def _weighted_integral(u, integrand, u_lo, u_hi, weight):
    mask = (u >= u_lo - 1e-12) & (u <= u_hi + 1e-12)
    if mask.sum() < 2:
        return 0.0
    return float(trapezoid(weight(u[mask]) * integrand[mask], u[mask]))


def _japanese(u):
    return np.sqrt(1 + u * u)


def _phi_terms(data, ang_cap, u_range, weight_exp):
    """sum_{n<=3, |beta|<=7-2max(n,1)} int <u>^{w(n)} |D_u^n D_omega^beta Phi|^2."""
    g = data.grid
    u = data.u
    Bu = g.synthesis(data.B_u).real
    total = 0.0
    k_of = lambda n: 7 - 2 * max(n, 1)
    k_all = min(k_of(0), ang_cap)
    if not np.any(data.B_e) and not np.any(data.B_b):
        lam = g.ell * (g.ell + 1.0)
        for n in range(4):
            k = min(k_of(n), ang_cap)
            f = data.Phi
            for _ in range(n):
                f = g.analysis(ddu(g.synthesis(f), data.du) + 1j * Bu * g.synthesis(f))
            mult = sum(lam**j for j in range(k + 1))
            dens = (np.abs(f) ** 2 * mult).sum(axis=1)
            total += _weighted_integral(u, dens, *u_range, lambda x: _japanese(x) ** weight_exp(n))
        return total
    for j, s in angular_words(data, data.Phi, k_all):
        f = s
        for n in range(4):
            if n > 0:
                f = ddu(f, data.du) + 1j * Bu * f
            if j <= min(k_of(n), ang_cap):
                dens = g.integrate(np.abs(f) ** 2)
                total += _weighted_integral(u, dens, *u_range,
                                            lambda x: _japanese(x) ** weight_exp(n))
    return total


def _abar_terms(data, ang_cap, u_range, weight_exp):
    """sum_{n<=2, |beta|<=6-2n} int <u>^{w(n)} |d_u^n L_Omega^beta Abar|^2 (Casimir form)."""
    g = data.grid
    lam = g.ell * (g.ell + 1.0)
    total = 0.0
    e, b = data.Abar_e, data.Abar_b
    for n in range(3):
        if n > 0:
            e, b = ddu(e, data.du), ddu(b, data.du)
        k = min(6 - 2 * n, ang_cap)
        mult = sum(lam**j for j in range(k + 1))
        dens = ((np.abs(e) ** 2 + np.abs(b) ** 2) * lam * mult).sum(axis=1)
        total += _weighted_integral(data.u, dens, *u_range, lambda x: _japanese(x) ** weight_exp(n))
    return total


def sn_norm(data: ScatteringData, U_star: float, ang_cap: int = 3) -> float:
    """Squared SN_{U*} norm, truncated to the data interval.

    Angular derivatives run over ordered words in the three rotation fields, at most
    ``ang_cap`` long.
    """
    if data.nu < 9:
        raise ValueError("u grid too coarse for third u-derivatives")
    rng = (U_star, data.u[-1])
    return (_abar_terms(data, ang_cap, rng, lambda n: 6 + 2 * n)
            + _phi_terms(data, ang_cap, rng, lambda n: 4 + 2 * n))


def weighted_energy_eps1(data: ScatteringData, eps1: float, ang_cap: int = 3) -> float:
    if not 0 <= eps1 < 1:
        raise ValueError("eps1 must lie in [0, 1)")
    past = (data.u[0], 0.0)
    return (sn_norm(data, 0.0, ang_cap)
            + _abar_terms(data, ang_cap, past, lambda n: 2 + 2 * n - eps1)
            + _phi_terms(data, ang_cap, past, lambda n: 2 * n - eps1))


def write_report(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "value", "tolerance", "pass"])
        for q, v, tol, ok in rows:
            w.writerow([q, f"{v:.12e}" if isinstance(v, float) else v, tol, str(bool(ok)).lower()])


