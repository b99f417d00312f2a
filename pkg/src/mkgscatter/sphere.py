"""Spectral calculus on the unit sphere.

Scalars are expanded in orthonormal complex spherical harmonics Y_lm (Condon-Shortley
phase), stored as flat coefficient arrays indexed by ``l*l + l + m``.  Tangent fields
(1-forms) are stored as electric/magnetic coefficient pairs (e, b) with

    X = sum_lm e_lm grad Y_lm + b_lm (rhat x grad Y_lm),

so that the Hodge star is ``(e, b) -> (-b, e)`` and ``star(star(X)) = -X``.  The
orientation is the outward one: star rotates a tangent vector by +90 degrees about
the outward normal.  Grid tangent vectors are carried in the orthonormal
(theta-hat, phi-hat) basis; the quadrature grid never contains a pole.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import sph_harm_y

# star(sgrad Y) = rhat x grad Y; fixed by the l=1 check in tests/test_sphere.py
STAR_SIGN = 1


def n_coeffs(l_max: int) -> int:
    return (l_max + 1) ** 2


def lm_index(l: int, m: int) -> int:
    if abs(m) > l:
        raise ValueError(f"|m| > l for (l, m) = ({l}, {m})")
    return l * l + l + m


def lm_pairs(l_max: int) -> list[tuple[int, int]]:
    return [(l, m) for l in range(l_max + 1) for m in range(-l, l + 1)]


@dataclass(frozen=True)
class SphereGrid:
    """Gauss-Legendre x equispaced grid with dense transforms up to ``l_max``.

    By default the grid is padded with the 3/2 rule so that quadratic products of
    band-limited fields are projected back without aliasing.
    """

    l_max: int
    n_theta: int | None = None
    n_phi: int | None = None
    pad: bool = True

    def __post_init__(self):
        l_grid = math.ceil(3 * self.l_max / 2) if self.pad else self.l_max
        if self.n_theta is None:
            object.__setattr__(self, "n_theta", l_grid + 1)
        if self.n_phi is None:
            object.__setattr__(self, "n_phi", 2 * l_grid + 1)
        if self.n_theta < self.l_max + 1:
            raise ValueError("n_theta must be >= l_max + 1")
        if self.n_phi < 2 * self.l_max + 1:
            raise ValueError("n_phi must be >= 2*l_max + 1")

    # -- geometry ---------------------------------------------------------------
    @cached_property
    def _nodes(self):
        x, w = np.polynomial.legendre.leggauss(self.n_theta)
        theta = np.arccos(x)[::-1]
        w = w[::-1]
        phi = 2 * np.pi * np.arange(self.n_phi) / self.n_phi
        return theta, w, phi

    @property
    def theta(self) -> np.ndarray:
        """Colatitude of every grid point, flattened (theta-major)."""
        return np.repeat(self._nodes[0], self.n_phi)

    @property
    def phi(self) -> np.ndarray:
        return np.tile(self._nodes[2], self.n_theta)

    @property
    def npts(self) -> int:
        return self.n_theta * self.n_phi

    @property
    def ncoef(self) -> int:
        return n_coeffs(self.l_max)

    @cached_property
    def weights(self) -> np.ndarray:
        _, w, _ = self._nodes
        return np.repeat(w, self.n_phi) * (2 * np.pi / self.n_phi)

    @cached_property
    def ell(self) -> np.ndarray:
        return np.array([l for l, _ in lm_pairs(self.l_max)])

    @cached_property
    def em(self) -> np.ndarray:
        return np.array([m for _, m in lm_pairs(self.l_max)])

    @cached_property
    def rhat(self) -> np.ndarray:
        th, ph = self.theta, self.phi
        return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])

    @cached_property
    def that(self) -> np.ndarray:
        th, ph = self.theta, self.phi
        return np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)])

    @cached_property
    def phat(self) -> np.ndarray:
        ph = self.phi
        return np.stack([-np.sin(ph), np.cos(ph), np.zeros_like(ph)])

    # -- transform tables -------------------------------------------------------
    @cached_property
    def _tables(self):
        th, ph = self.theta, self.phi
        Y = np.empty((self.npts, self.ncoef), dtype=complex)
        dth = np.empty_like(Y)
        for k, (l, m) in enumerate(lm_pairs(self.l_max)):
            val, grad = sph_harm_y(l, m, th, ph, diff_n=1)
            Y[:, k] = val
            dth[:, k] = grad[..., 0]
        dph = 1j * self.em[None, :] * Y / np.sin(th)[:, None]
        return Y, dth, dph

    @property
    def Y(self) -> np.ndarray:
        """Values Y_lm at the grid points, shape (npts, ncoef)."""
        return self._tables[0]

    @cached_property
    def _analysis(self) -> np.ndarray:
        return (self.Y.conj() * self.weights[:, None]).T

    @cached_property
    def _lap_eig(self) -> np.ndarray:
        return -(self.ell * (self.ell + 1)).astype(float)

    # -- scalar transforms ------------------------------------------------------
    def analysis(self, f: np.ndarray) -> np.ndarray:
        """Grid samples (..., npts) -> coefficients (..., ncoef)."""
        f = np.asarray(f)
        if f.shape[-1] != self.npts:
            raise ValueError(f"expected {self.npts} grid samples, got {f.shape[-1]}")
        return f @ self._analysis.T

    def synthesis(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c)
        if c.shape[-1] != self.ncoef:
            raise ValueError(f"expected {self.ncoef} coefficients, got {c.shape[-1]}")
        return c @ self.Y.T

    def integrate(self, f: np.ndarray) -> np.ndarray:
        """Quadrature of grid samples over the unit sphere (last axis)."""
        return np.asarray(f) @ self.weights

    # -- angular calculus on coefficients ---------------------------------------
    def laplacian(self, c: np.ndarray) -> np.ndarray:
        return c * self._lap_eig

    def inverse_laplacian(self, c: np.ndarray) -> np.ndarray:
        """Inverse on the mean-free subspace; the l=0 coefficient is dropped."""
        eig = self._lap_eig.copy()
        eig[0] = 1.0
        out = c / eig
        out[..., 0] = 0.0
        return out

    def sgrad(self, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        e = np.array(c, dtype=complex, copy=True)
        e[..., 0] = 0.0
        return e, np.zeros_like(e)

    def sdiv(self, e: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self._lap_eig * e

    def scurl(self, e: np.ndarray, b: np.ndarray) -> np.ndarray:
        return STAR_SIGN * self._lap_eig * b

    def star(self, e: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return -STAR_SIGN * b, STAR_SIGN * e

    def omega(self, c: np.ndarray, which: str) -> np.ndarray:
        """Rotation field Omega_ij = x_i d_j - x_j d_i applied to a scalar.

        ``which`` is one of '12', '23', '31'.  Exact: rotations preserve each l.
        """
        l, m = self.ell, self.em
        out = np.zeros_like(np.asarray(c, dtype=complex))
        if which == "12":
            return 1j * m * c
        # L+/L- ladder coefficients, Omega_23 = i L_x, Omega_31 = i L_y
        cp = np.sqrt(np.maximum(l * (l + 1) - m * (m + 1), 0))
        cm = np.sqrt(np.maximum(l * (l + 1) - m * (m - 1), 0))
        lplus = np.zeros_like(out)
        lminus = np.zeros_like(out)
        for k in range(self.ncoef):
            if m[k] < l[k]:
                lplus[..., k + 1] += cp[k] * c[..., k]
            if m[k] > -l[k]:
                lminus[..., k - 1] += cm[k] * c[..., k]
        if which == "23":
            return 1j * 0.5 * (lplus + lminus)
        if which == "31":
            return 0.5 * (lplus - lminus)
        raise ValueError(f"unknown rotation field {which!r}")

    # -- grid evaluation of derivatives -----------------------------------------
    def grad_grid(self, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(theta-hat, phi-hat) components of grad f on the grid."""
        _, dth, dph = self._tables
        return c @ dth.T, c @ dph.T

    def vector_synthesis(self, e: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ge_t, ge_p = self.grad_grid(e)
        gb_t, gb_p = self.grad_grid(b)
        # rhat x (A_t, A_p) = (-A_p, A_t)
        return ge_t - gb_p, ge_p + gb_t

    @cached_property
    def _vec_analysis(self):
        _, dth, dph = self._tables
        w = self.weights[:, None]
        ll = -self._lap_eig.copy()
        ll[0] = 1.0
        # e_lm = <X, grad Y>/l(l+1), b_lm = <X, rhat x grad Y>/l(l+1)
        et = (dth.conj() * w / ll).T
        ep = (dph.conj() * w / ll).T
        et[0] = 0
        ep[0] = 0
        return et, ep

    def vector_analysis(self, xt: np.ndarray, xp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        et, ep = self._vec_analysis
        e = xt @ et.T + xp @ ep.T
        b = -xt @ ep.T + xp @ et.T
        return e, b

    def to_cartesian(self, xt: np.ndarray, xp: np.ndarray) -> np.ndarray:
        """Tangent components -> Cartesian 3-vectors, shape (..., 3, npts)."""
        return xt[..., None, :] * self.that + xp[..., None, :] * self.phat

    def from_cartesian(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (x * self.that).sum(axis=-2), (x * self.phat).sum(axis=-2)

    def norm2(self, c: np.ndarray) -> np.ndarray:
        """L2 norm squared of a scalar from its coefficients (Parseval)."""
        return (np.abs(c) ** 2).sum(axis=-1)

    def vector_norm2(self, e: np.ndarray, b: np.ndarray) -> np.ndarray:
        ll = -self._lap_eig
        return ((np.abs(e) ** 2 + np.abs(b) ** 2) * ll).sum(axis=-1)

    def resize(self, c: np.ndarray, l_max: int) -> np.ndarray:
        """Zero-pad or truncate coefficients to another band limit."""
        c = np.asarray(c)
        n_new = n_coeffs(l_max)
        out = np.zeros(c.shape[:-1] + (n_new,), dtype=complex)
        n = min(n_new, c.shape[-1])
        out[..., :n] = c[..., :n]
        return out


@dataclass
class ScalarField:
    grid: SphereGrid
    coeffs: np.ndarray

    @classmethod
    def from_samples(cls, grid: SphereGrid, samples) -> "ScalarField":
        return cls(grid, grid.analysis(samples))

    def samples(self) -> np.ndarray:
        return self.grid.synthesis(self.coeffs)


@dataclass
class OneForm:
    grid: SphereGrid
    e: np.ndarray
    b: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.b is None:
            self.b = np.zeros_like(self.e)
        self.e = np.asarray(self.e, dtype=complex).copy()
        self.b = np.asarray(self.b, dtype=complex).copy()
        self.e[..., 0] = 0
        self.b[..., 0] = 0

    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        return self.grid.vector_synthesis(self.e, self.b)


def transform_scalar(grid: SphereGrid, samples) -> ScalarField:
    return ScalarField.from_samples(grid, samples)


def inverse_transform_scalar(field_: ScalarField) -> np.ndarray:
    return field_.samples()


def angular_op(kind: str, fld):
    """Apply one of laplacian, sdiv, scurl, sgrad, star to a ScalarField or OneForm."""
    g = fld.grid
    scalar_in = isinstance(fld, ScalarField)
    if kind == "laplacian" and scalar_in:
        return ScalarField(g, g.laplacian(fld.coeffs))
    if kind == "sgrad" and scalar_in:
        return OneForm(g, *g.sgrad(fld.coeffs))
    if kind in ("sdiv", "scurl") and not scalar_in:
        op = g.sdiv if kind == "sdiv" else g.scurl
        return ScalarField(g, op(fld.e, fld.b))
    if kind == "star" and not scalar_in:
        return OneForm(g, *g.star(fld.e, fld.b))
    raise TypeError(f"operator {kind!r} does not accept {type(fld).__name__}")


def integrate_sphere(fld: ScalarField) -> complex:
    return math.sqrt(4 * math.pi) * complex(fld.coeffs[..., 0])
