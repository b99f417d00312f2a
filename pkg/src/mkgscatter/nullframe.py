"""Double-null geometry of Minkowski space.

Points are handled in Cartesian coordinates X = (t, x, y, z) with metric
diag(-1, 1, 1, 1).  Fields passed to the differential helpers are callables of a
single point; derivatives are fourth-order central differences.  The tangential frame
(e1, e2) is the local (theta-hat, phi-hat) pair and is only ever built pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

ETA = np.diag([-1.0, 1.0, 1.0, 1.0])

ROTATIONS = ("Omega12", "Omega23", "Omega31")
FRAME_TAGS = ("Lbar", "L", "T", "S", "K") + ROTATIONS


@dataclass(frozen=True)
class Point:
    u: float
    v: float
    omega: tuple = (0.0, 0.0, 1.0)

    @property
    def t(self) -> float:
        return self.u + self.v

    @property
    def r(self) -> float:
        return self.v - self.u

    def cartesian(self) -> np.ndarray:
        w = np.asarray(self.omega, dtype=float)
        w = w / np.linalg.norm(w)
        return np.concatenate([[self.t], self.r * w])

    @classmethod
    def from_cartesian(cls, X) -> "Point":
        X = np.asarray(X, dtype=float)
        r = np.linalg.norm(X[1:])
        if r == 0:
            raise ValueError("direction undefined at r = 0")
        return cls((X[0] - r) / 2, (X[0] + r) / 2, tuple(X[1:] / r))


def chi_K(word) -> int:
    """Number of K factors in a word of commuting fields."""
    return sum(1 for z in word if z == "K")


def tangent_frame(omega) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal (theta-hat, phi-hat) at a direction; valid off the z-axis."""
    w = np.asarray(omega, dtype=float)
    w = w / np.linalg.norm(w)
    th = np.arccos(np.clip(w[2], -1, 1))
    ph = np.arctan2(w[1], w[0])
    e1 = np.array([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)])
    e2 = np.array([-np.sin(ph), np.cos(ph), 0.0])
    return e1, e2


def null_frame(X) -> dict[str, np.ndarray]:
    """Upper-index 4-vectors Lbar, L, e1, e2 at a Cartesian point."""
    X = np.asarray(X, dtype=float)
    r = np.linalg.norm(X[1:])
    if r == 0:
        raise ValueError("null frame is degenerate at r = 0")
    w = X[1:] / r
    e1, e2 = tangent_frame(w)
    return {
        "Lbar": np.concatenate([[1.0], -w]),
        "L": np.concatenate([[1.0], w]),
        "e1": np.concatenate([[0.0], e1]),
        "e2": np.concatenate([[0.0], e2]),
    }


def vector_field(tag: str) -> Callable[[np.ndarray], np.ndarray]:
    """Cartesian components of a frame or symmetry field as a function of X."""

    def T(X):
        return np.array([1.0, 0, 0, 0])

    def S(X):
        return np.asarray(X, dtype=float).copy()

    def K(X):
        t, x = X[0], np.asarray(X[1:])
        return np.concatenate([[t * t + x @ x], 2 * t * x])

    def Lbar(X):
        x = np.asarray(X[1:])
        return np.concatenate([[1.0], -x / np.linalg.norm(x)])

    def L(X):
        x = np.asarray(X[1:])
        return np.concatenate([[1.0], x / np.linalg.norm(x)])

    def rotation(i, j):
        def Om(X):
            out = np.zeros(4)
            out[j] = X[i]
            out[i] = -X[j]
            return out

        return Om

    def tangential(k):
        def e(X):
            return np.concatenate([[0.0], tangent_frame(np.asarray(X[1:]))[k]])

        return e

    table = {
        "e1": tangential(0), "e2": tangential(1),
        "T": T, "S": S, "K": K, "Lbar": Lbar, "L": L,
        "Omega12": rotation(1, 2), "Omega23": rotation(2, 3), "Omega31": rotation(3, 1),
    }
    if tag not in table:
        raise ValueError(f"unknown vector field {tag!r}")
    return table[tag]


# [Z1, Z2] as {field: coefficient(X)}; coefficients are functions of the point
def _const(c):
    return lambda X: c


def _u(X):
    return (X[0] - np.linalg.norm(X[1:])) / 2


def _v(X):
    return (X[0] + np.linalg.norm(X[1:])) / 2


_COMMUTATORS = {
    ("T", "S"): {"T": _const(1.0)},
    ("T", "K"): {"S": _const(2.0)},
    ("S", "K"): {"K": _const(1.0)},
    ("Lbar", "S"): {"Lbar": _const(1.0)},
    ("Lbar", "K"): {"Lbar": lambda X: 4 * _u(X)},
    ("L", "S"): {"L": _const(1.0)},
    ("L", "K"): {"L": lambda X: 4 * _v(X)},
    ("e", "S"): {"e": _const(1.0)},
    ("e", "K"): {"e": lambda X: 2 * X[0]},
    ("Omega23", "Omega31"): {"Omega12": _const(-1.0)},
    ("Omega31", "Omega12"): {"Omega23": _const(-1.0)},
    ("Omega12", "Omega23"): {"Omega31": _const(-1.0)},
}
_ZERO_PAIRS = {
    ("Lbar", "T"), ("L", "T"), ("e", "T"), ("Lbar", "L"),
} | {(a, b) for a in ("Lbar", "L", "T", "S", "K") for b in ROTATIONS}


def vectorfield_commutator(z1: str, z2: str) -> dict[str, Callable]:
    """Closed-form commutator [z1, z2] as a combination of frame fields.

    ``e`` stands for either tangential frame field; its commutators with rotations
    depend on the local frame and are not tabulated.
    """
    if z1 == z2:
        return {}
    for tag, other in ((z1, z2), (z2, z1)):
        if tag in ("e1", "e2") and other in ("T", "S", "K"):
            out = vectorfield_commutator("e", other)
            sign = 1.0 if tag == z1 else -1.0
            return {tag: (lambda f: (lambda X: sign * f(X)))(f) for f in out.values()}
    if (z1, z2) in _COMMUTATORS:
        return dict(_COMMUTATORS[(z1, z2)])
    if (z2, z1) in _COMMUTATORS:
        return {k: (lambda f: (lambda X: -f(X)))(f) for k, f in _COMMUTATORS[(z2, z1)].items()}
    if (z1, z2) in _ZERO_PAIRS or (z2, z1) in _ZERO_PAIRS:
        return {}
    raise ValueError(f"commutator [{z1}, {z2}] is not tabulated")


# -- finite differences ---------------------------------------------------------
def partials(f: Callable, X, h: float = 1e-3) -> np.ndarray:
    """Fourth-order central differences of f at X; result[mu] = d_mu f(X)."""
    X = np.asarray(X, dtype=float)
    out = []
    for mu in range(4):
        e = np.zeros(4)
        e[mu] = h
        out.append((-f(X + 2 * e) + 8 * f(X + e) - 8 * f(X - e) + f(X - 2 * e)) / (12 * h))
    return np.array(out)


def directional(f: Callable, vec: np.ndarray, X, h: float = 1e-3):
    return np.tensordot(vec, partials(f, X, h), axes=(0, 0))


def apply_field(tag: str, f: Callable, h: float = 1e-3) -> Callable:
    """Return the function X -> (Z f)(X)."""
    Z = vector_field(tag)
    return lambda X: directional(f, Z(X), X, h)


# -- 2-forms --------------------------------------------------------------------
@dataclass
class TwoFormNull:
    alphab: np.ndarray
    rho: float
    sigma: float
    alpha: np.ndarray

    def as_tuple(self):
        return (self.alphab, self.rho, self.sigma, self.alpha)


def null_decompose(G, X) -> TwoFormNull:
    """Null components of an antisymmetric G_{mu nu} (lower indices) at X."""
    G = np.asarray(G)
    fr = null_frame(X)
    c = lambda a, b: fr[a] @ G @ fr[b]
    return TwoFormNull(
        alphab=np.array([c("Lbar", "e1"), c("Lbar", "e2")]),
        rho=0.5 * c("Lbar", "L"),
        sigma=c("e1", "e2"),
        alpha=np.array([c("L", "e1"), c("L", "e2")]),
    )


def null_recompose(n: TwoFormNull, X) -> np.ndarray:
    fr = null_frame(X)
    low = {k: ETA @ v for k, v in fr.items()}
    # dual coframe: theta^Lbar = -L_mu/2, theta^L = -Lbar_mu/2, theta^e = e_mu
    dual = {"Lbar": -0.5 * low["L"], "L": -0.5 * low["Lbar"], "e1": low["e1"], "e2": low["e2"]}
    pairs = {
        ("Lbar", "L"): 2 * n.rho,
        ("Lbar", "e1"): n.alphab[0], ("Lbar", "e2"): n.alphab[1],
        ("L", "e1"): n.alpha[0], ("L", "e2"): n.alpha[1],
        ("e1", "e2"): n.sigma,
    }
    dtype = np.result_type(*[np.asarray(x) for x in pairs.values()], float)
    G = np.zeros((4, 4), dtype=dtype)
    for (a, b), val in pairs.items():
        G = G + val * (np.outer(dual[a], dual[b]) - np.outer(dual[b], dual[a]))
    return G


def coulomb_twoform(q0: float, region_u: float | None = -1.0) -> Callable:
    """F[q0] = q0 r^-2 dt ^ dr, restricted to {u <= region_u} when given."""

    def F(X):
        X = np.asarray(X, dtype=float)
        r = np.linalg.norm(X[1:])
        G = np.zeros((4, 4))
        if region_u is not None and (X[0] - r) / 2 > region_u:
            return G
        G[0, 1:] = q0 * X[1:] / r**3
        G[1:, 0] = -G[0, 1:]
        return G

    return F


def field_strength(A: Callable, h: float = 1e-3) -> Callable:
    """F_{mu nu} = d_mu A_nu - d_nu A_mu for a lower-index connection A(X)."""

    def F(X):
        dA = partials(A, X, h)
        return dA - dA.T

    return F


def lie_derivative_twoform(tag: str, G: Callable, X, h: float = 1e-3) -> np.ndarray:
    """(L_Z G)_{mu nu} = Z^l d_l G_{mu nu} + G_{l nu} d_mu Z^l + G_{mu l} d_nu Z^l."""
    Z = vector_field(tag)
    X = np.asarray(X, dtype=float)
    dG = partials(G, X, h)
    dZ = partials(Z, X, h)  # dZ[mu, l] = d_mu Z^l
    G0 = np.asarray(G(X))
    return np.tensordot(Z(X), dG, axes=(0, 0)) + dZ @ G0 + (dZ @ G0.T).T


def lie_derivative_oneform(tag: str, w: Callable, X, h: float = 1e-3) -> np.ndarray:
    Z = vector_field(tag)
    X = np.asarray(X, dtype=float)
    dw = partials(w, X, h)
    dZ = partials(Z, X, h)
    return np.tensordot(Z(X), dw, axes=(0, 0)) + dZ @ np.asarray(w(X))


# -- gauge pairs ----------------------------------------------------------------
@dataclass
class GaugePair:
    """Real connection A_mu(X) (lower index) and complex scalar phi(X)."""

    A: Callable
    phi: Callable
    h: float = 1e-3

    def D(self, f: Callable | None = None) -> Callable:
        """X -> D_mu f (all four components); f defaults to phi."""
        f = self.phi if f is None else f
        return lambda X: partials(f, X, self.h) + 1j * np.asarray(self.A(X)) * f(X)

    def Dhat(self, f: Callable | None = None) -> Callable:
        """X -> r^-1 D_mu (r f)."""
        f = self.phi if f is None else f
        rf = lambda X: np.linalg.norm(X[1:]) * f(X)
        Drf = self.D(rf)
        return lambda X: Drf(X) / np.linalg.norm(X[1:])

    def commuted(self, tag: str) -> Callable:
        """phi^(Z) = r^-1 D_Z (r phi)."""
        Z = vector_field(tag)
        Dh = self.Dhat()
        return lambda X: Z(X) @ Dh(X)

    def current(self) -> Callable:
        """J_mu = Im(phi conj(D_mu phi))."""
        D = self.D()
        return lambda X: np.imag(self.phi(X) * np.conj(D(X)))

    def gauge_transform(self, xi: Callable) -> "GaugePair":
        A2 = lambda X: np.asarray(self.A(X)) - partials(xi, X, self.h)
        phi2 = lambda X: np.exp(1j * xi(X)) * self.phi(X)
        return GaugePair(A2, phi2, self.h)


@dataclass
class Current:
    J_Lbar: float
    J_L: float
    slashedJ: np.ndarray


def current_null(J: np.ndarray, X) -> Current:
    fr = null_frame(X)
    return Current(fr["Lbar"] @ J, fr["L"] @ J, np.array([fr["e1"] @ J, fr["e2"] @ J]))


def commuted_current(tag: str, state: GaugePair, F: Callable | None = None) -> Callable:
    """J^(Z)_mu = Im(phi^Z conj(Dhat phi)) + Im(phi conj(Dhat phi^Z)) - |phi|^2 F_{Z mu}."""
    Z = vector_field(tag)
    F = field_strength(state.A, state.h) if F is None else F
    phiZ = state.commuted(tag)
    Dh = state.Dhat()
    DhZ = state.Dhat(phiZ)

    def J(X):
        p = state.phi(X)
        FZ = Z(X) @ np.asarray(F(X))
        return (np.imag(phiZ(X) * np.conj(Dh(X))) + np.imag(p * np.conj(DhZ(X)))
                - abs(p) ** 2 * FZ)

    return J


def commuted_current_oracle(tag: str, state: GaugePair) -> Callable:
    """r^-2 L_Z (r^2 J) by direct Lie differentiation of the 1-form r^2 J."""
    J = state.current()
    r2J = lambda X: (X[1:] @ X[1:]) * J(X)

    def out(X):
        X = np.asarray(X, dtype=float)
        return lie_derivative_oneform(tag, r2J, X, state.h) / (X[1:] @ X[1:])

    return out


def compute_Q(f: Callable, G: Callable, tag: str, A: Callable, X, h: float = 1e-3) -> complex:
    """Q(f, G; Z) = 2i G_{mu nu} Z^nu D^mu f + i nabla^mu (Z^nu G_{mu nu}) f."""
    Z = vector_field(tag)
    X = np.asarray(X, dtype=float)
    Df = partials(f, X, h) + 1j * np.asarray(A(X)) * f(X)
    G0 = np.asarray(G(X))
    W = lambda Y: np.asarray(G(Y)) @ vector_field(tag)(Y)
    dW = partials(W, X, h)  # dW[l, mu] = d_l W_mu
    divW = np.trace(ETA @ dW)
    return 2j * (ETA @ Df) @ (G0 @ Z(X)) + 1j * divW * f(X)


def covariant_box(state: GaugePair, f: Callable, X, h: float | None = None) -> complex:
    """Box_A f = D^mu D_mu f by nested differences."""
    h = state.h if h is None else h
    Df = state.D(f)
    out = 0.0 + 0.0j
    for mu in range(4):
        comp = lambda Y, mu=mu: Df(Y)[mu]
        e = np.zeros(4)
        e[mu] = h
        d = (-comp(X + 2 * e) + 8 * comp(X + e) - 8 * comp(X - e) + comp(X - 2 * e)) / (12 * h)
        out += ETA[mu, mu] * (d + 1j * state.A(X)[mu] * comp(X))
    return out
