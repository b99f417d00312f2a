import numpy as np
import pytest
from numpy.testing import assert_allclose

from mkgscatter import nullframe as nf
from mkgscatter.nullframe import GaugePair, Point, TwoFormNull

X0 = Point(-1.0, 3.0, (0.3, -0.5, 0.8)).cartesian()


def _random_antisym(rng):
    M = rng.normal(size=(4, 4))
    return M - M.T


def test_point_coordinates():
    p = Point(-1.0, 3.0, (0, 0, 2.0))
    assert p.t == 2.0 and p.r == 4.0
    assert_allclose(p.cartesian(), [2, 0, 0, 4])
    q = Point.from_cartesian(p.cartesian())
    assert_allclose([q.u, q.v], [-1, 3])


def test_symmetry_fields_in_null_frame():
    rng = np.random.default_rng(0)
    for _ in range(20):
        X = np.concatenate([rng.normal(size=1), rng.normal(size=3)])
        p = Point.from_cartesian(X)
        Lb, L = nf.vector_field("Lbar")(X), nf.vector_field("L")(X)
        assert_allclose(nf.vector_field("T")(X), (Lb + L) / 2, atol=1e-14)
        assert_allclose(nf.vector_field("S")(X), p.u * Lb + p.v * L, atol=1e-13)
        assert_allclose(nf.vector_field("K")(X), 2 * (p.u**2 * Lb + p.v**2 * L), atol=1e-12)


def test_coulomb_decomposition():
    q = 0.7
    F = nf.coulomb_twoform(q, region_u=None)
    n = nf.null_decompose(F(X0), X0)
    r = np.linalg.norm(X0[1:])
    assert_allclose(n.rho, q / r**2, rtol=1e-14)
    assert_allclose([*n.alphab, n.sigma, *n.alpha], 0, atol=1e-15)


def test_zero_form():
    n = nf.null_decompose(np.zeros((4, 4)), X0)
    assert n.rho == 0 and n.sigma == 0
    assert not n.alpha.any() and not n.alphab.any()


def test_roundtrip_random_forms():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(10_000):
        G = _random_antisym(rng)
        back = nf.null_recompose(nf.null_decompose(G, X0), X0)
        worst = max(worst, np.max(np.abs(back - G)))
    assert worst < 1e-12
    n = TwoFormNull(np.array([1.0, 2]), 3.0, 4.0, np.array([5.0, 6]))
    m = nf.null_decompose(nf.null_recompose(n, X0), X0)
    assert_allclose(np.concatenate([m.alphab, [m.rho, m.sigma], m.alpha]), [1, 2, 3, 4, 5, 6])


def test_degenerate_frame():
    with pytest.raises(ValueError):
        nf.null_decompose(np.zeros((4, 4)), np.array([1.0, 0, 0, 0]))


def test_table_entries():
    assert set(nf.vectorfield_commutator("T", "S")) == {"T"}
    assert nf.vectorfield_commutator("Lbar", "Omega12") == {}
    assert nf.vectorfield_commutator("K", "S")["K"](X0) == -1.0
    with pytest.raises(ValueError):
        nf.vectorfield_commutator("e1", "Omega12")
    assert nf.chi_K(("K", "T", "K")) == 2


def _monomials():
    rng = np.random.default_rng(2)
    out = []
    for _ in range(4):
        powers = rng.integers(0, 3, size=4)
        while powers.sum() > 4 or powers.sum() == 0:
            powers = rng.integers(0, 3, size=4)
        out.append(lambda X, p=powers: np.prod(X ** p))
    out.append(lambda X: X[0] ** 2)
    return out


PAIRS = [
    ("T", "S"), ("T", "K"), ("S", "K"), ("Lbar", "S"), ("Lbar", "K"), ("L", "S"),
    ("L", "K"), ("Lbar", "T"), ("L", "T"), ("Lbar", "L"), ("e1", "S"), ("e2", "K"),
    ("e1", "T"), ("Omega23", "Omega31"), ("Omega12", "Omega23"), ("Omega31", "Omega12"),
    ("Lbar", "Omega12"), ("L", "Omega23"), ("K", "Omega31"), ("S", "Omega12"),
]


def _commutator_error(z1, z2, f, X, h):
    lhs = (nf.apply_field(z1, nf.apply_field(z2, f, h), h)(X)
           - nf.apply_field(z2, nf.apply_field(z1, f, h), h)(X))
    rhs = sum(c(X) * nf.apply_field(tag, f, h)(X)
              for tag, c in nf.vectorfield_commutator(z1, z2).items())
    return abs(lhs - rhs)


@pytest.mark.parametrize("z1,z2", PAIRS)
def test_commutators_on_monomials(z1, z2):
    X = np.array([0.4, 0.9, -0.6, 1.1])
    for f in _monomials():
        assert _commutator_error(z1, z2, f, X, 1e-2) < 1e-7


def test_commutator_sk_on_t_squared():
    f = lambda X: X[0] ** 2
    X = np.array([0.4, 0.9, -0.6, 1.1])
    assert _commutator_error("S", "K", f, X, 1e-2) < 1e-10


def test_commutator_refinement_order():
    # non-polynomial test function exposes the truncation error
    f = lambda X: np.sin(X[0] + 0.3 * X[1]) * np.cos(X[3])
    X = np.array([0.4, 0.9, -0.6, 1.1])
    e1 = _commutator_error("Lbar", "K", f, X, 0.1)
    e2 = _commutator_error("Lbar", "K", f, X, 0.05)
    assert e2 < e1 / 4


def _manufactured():
    A = lambda X: np.array([
        0.3 * np.sin(X[1]) * X[3],
        0.2 * np.cos(X[0] + X[2]),
        0.1 * X[0] * X[1],
        0.4 * np.sin(X[0] - X[3]),
    ])
    phi = lambda X: (1 + 0.5j * X[1]) * np.exp(1j * X[0] - 0.2 * X[1:] @ X[1:])
    return A, phi


def test_covariant_commutator_is_2i_rho():
    A, phi = _manufactured()
    errs = []
    for h in (0.02, 0.01):
        st = GaugePair(A, phi, h)
        Lb, L = nf.vector_field("Lbar"), nf.vector_field("L")
        DL = lambda Y: L(Y) @ st.D()(Y)
        DLb = lambda Y: Lb(Y) @ st.D()(Y)
        lhs = Lb(X0) @ st.D(DL)(X0) - L(X0) @ st.D(DLb)(X0)
        rho = nf.null_decompose(nf.field_strength(A, h)(X0), X0).rho
        errs.append(abs(lhs - 2j * rho * phi(X0)))
    assert errs[0] < 1e-5
    assert errs[1] < errs[0]


def test_gauge_invariance():
    A, phi = _manufactured()
    xi = lambda X: 0.7 * np.sin(X[0] * X[2]) + 0.2 * X[1] ** 2
    st = GaugePair(A, phi)
    st2 = st.gauge_transform(xi)
    assert_allclose(abs(st2.phi(X0)), abs(phi(X0)), rtol=1e-14)
    assert_allclose(np.abs(st2.Dhat()(X0)), np.abs(st.Dhat()(X0)), rtol=1e-9)
    assert_allclose(nf.field_strength(st2.A)(X0), nf.field_strength(A)(X0), atol=1e-9)


@pytest.mark.parametrize("tag", ["T", "S", "K", "Omega12", "Omega23", "Omega31"])
def test_lie_derivative_of_coulomb_vanishes(tag):
    F = nf.coulomb_twoform(1.3, region_u=-1.0)
    X = Point(-2.0, 1.0, (0.2, 0.4, -0.9)).cartesian()
    assert np.max(np.abs(nf.lie_derivative_twoform(tag, F, X))) < 1e-9


def test_lie_derivative_scaling():
    # components homogeneous of degree -3 give L_S G = (-3 + 2) G
    def G(X):
        M = np.zeros((4, 4))
        M[0, 1] = X[2] / (X @ X + X[0] ** 2) ** 2
        M[2, 3] = X[0] / (X @ X + X[0] ** 2) ** 2
        return M - M.T

    X = np.array([0.5, 0.7, -0.2, 0.9])
    assert_allclose(nf.lie_derivative_twoform("S", G, X), -G(X), atol=1e-9)


def test_lie_derivative_axisymmetric():
    def G(X):
        M = np.zeros((4, 4))
        rho2 = X[1] ** 2 + X[2] ** 2
        M[0, 3] = np.exp(-rho2) * X[3]
        M[1, 2] = np.cos(rho2 + X[0])
        return M - M.T

    assert np.max(np.abs(nf.lie_derivative_twoform("Omega12", G, X0))) < 1e-10


def test_current_real_scalar_vanishes():
    st = GaugePair(lambda X: np.zeros(4), lambda X: np.cos(X[0]) * X[1] + 0j)
    for tag in ("T", "S", "K"):
        assert np.max(np.abs(nf.commuted_current(tag, st)(X0))) < 1e-12
    c = nf.current_null(st.current()(X0), X0)
    assert c.J_L == 0 and c.J_Lbar == 0


def test_commuted_current_matches_lie_oracle():
    phi = lambda X: np.exp(1j * (X[0] + np.linalg.norm(X[1:])) / 2) / np.linalg.norm(X[1:])
    st = GaugePair(lambda X: np.zeros(4), phi, 1e-3)
    assert_allclose(nf.commuted_current("T", st)(X0),
                    nf.commuted_current_oracle("T", st)(X0), atol=1e-7)


@pytest.mark.parametrize("tag", ["T", "S", "K", "Omega31"])
def test_commuted_current_general_state(tag):
    A, phi = _manufactured()
    st = GaugePair(A, phi, 2e-3)
    assert_allclose(nf.commuted_current(tag, st)(X0),
                    nf.commuted_current_oracle(tag, st)(X0), atol=1e-6)


def test_rotation_current_of_symmetric_state():
    phi = lambda X: np.exp(1j * X[0] - np.linalg.norm(X[1:]) ** 2)
    st = GaugePair(lambda X: np.zeros(4), phi)
    assert np.max(np.abs(nf.commuted_current("Omega12", st)(X0))) < 1e-10


def test_q_trivial_cases():
    A, phi = _manufactured()
    zero = lambda X: np.zeros((4, 4))
    assert nf.compute_Q(phi, zero, "K", A, X0) == 0
    F = nf.field_strength(A)
    assert nf.compute_Q(lambda X: 0j, F, "S", A, X0) == 0


def test_q_coulomb_time_translation():
    # dense contraction: G_{i0} = -q x_i / r^3 and div vanishes off the origin
    q = 0.9
    F = nf.coulomb_twoform(q, region_u=None)
    f = lambda X: np.exp(1j * X[0]) * np.exp(-np.linalg.norm(X[1:]))
    A = lambda X: np.zeros(4)
    r = np.linalg.norm(X0[1:])
    df_dr = -f(X0)
    expected = -2j * (q / r**2) * df_dr
    assert_allclose(nf.compute_Q(f, F, "T", A, X0), expected, rtol=1e-8)
