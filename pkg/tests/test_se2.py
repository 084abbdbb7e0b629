"""Group arithmetic on SE(2) against matrix-representation oracles."""

import math

import numpy as np
import pytest

from wip import se2

from oracles import se2_exp_matrix, se2_hat, se2_log_matrix, se2_to_matrix

RNG = np.random.default_rng(20240817)


def random_group(scale_xy=5.0, scale_th=6.0):
    x, y = RNG.uniform(-scale_xy, scale_xy, 2)
    th = RNG.uniform(-scale_th, scale_th)
    return se2.GroupElement(x, y, th)


def as_matrix(g):
    return se2_to_matrix(g.x, g.y, g.theta)


def test_compose_matches_matrix_product():
    for _ in range(200):
        a, b = random_group(), random_group()
        got = as_matrix(se2.compose(a, b))
        want = as_matrix(a) @ as_matrix(b)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_inverse_matches_matrix_inverse():
    for _ in range(200):
        g = random_group()
        got = as_matrix(se2.inverse(g))
        want = np.linalg.inv(as_matrix(g))
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_compose_inverse_is_identity():
    for _ in range(200):
        g = random_group()
        e = se2.compose(g, se2.inverse(g))
        assert abs(e.x) < 1e-12 and abs(e.y) < 1e-12
        assert abs(e.theta) < 1e-12


def test_identity_neutral():
    for _ in range(50):
        g = random_group()
        for h in (se2.compose(g, se2.identity), se2.compose(se2.identity, g)):
            assert (h.x, h.y, h.theta) == pytest.approx(
                (g.x, g.y, g.theta), abs=1e-15)


def test_exp_matches_matrix_exponential():
    for _ in range(200):
        xi = se2.AlgebraElement(*RNG.uniform(-4, 4, 3))
        t = RNG.uniform(-2, 2)
        got = as_matrix(se2.exp(xi, t))
        want = se2_exp_matrix(xi.xi1, xi.xi2, xi.xi3, t)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_exp_small_angle_branch():
    # straddle the series/trig switchover
    for w in [0.0, 1e-9, 1e-6, 9.9e-5, 1.01e-4, 1e-3, -1e-5]:
        xi = se2.AlgebraElement(0.7, -0.3, w)
        got = as_matrix(se2.exp(xi))
        want = se2_exp_matrix(0.7, -0.3, w)
        np.testing.assert_allclose(got, want, atol=1e-13)


def test_log_matches_matrix_logarithm():
    for _ in range(200):
        th = RNG.uniform(-0.95 * 2 * math.pi, 0.95 * 2 * math.pi)
        g = se2.GroupElement(RNG.uniform(-5, 5), RNG.uniform(-5, 5), th)
        xi = se2.log(g)
        # principal matrix log agrees only for |theta| < pi
        if abs(th) < math.pi - 1e-3:
            want = se2_log_matrix(g.x, g.y, g.theta)
            got = se2_hat(xi.xi1, xi.xi2, xi.xi3)
            np.testing.assert_allclose(got, want, atol=1e-10)
        # in all cases exp must invert it on the cover
        back = se2.exp(xi)
        assert (back.x, back.y, back.theta) == pytest.approx(
            (g.x, g.y, g.theta), abs=1e-10)


def test_log_domain_error_at_full_turn():
    for th in [2 * math.pi, -2 * math.pi, 7.0]:
        with pytest.raises(se2.DomainError):
            se2.log(se2.GroupElement(1.0, 0.0, th))


def test_exp_log_roundtrip_small_angles():
    for _ in range(200):
        xi = se2.AlgebraElement(RNG.uniform(-3, 3), RNG.uniform(-3, 3),
                                RNG.uniform(-1e-4, 1e-4))
        back = se2.log(se2.exp(xi))
        assert (back.xi1, back.xi2, back.xi3) == pytest.approx(
            (xi.xi1, xi.xi2, xi.xi3), abs=1e-12)


def test_heading_on_cover_not_wrapped():
    g = se2.compose(se2.GroupElement(0, 0, 3.0), se2.GroupElement(0, 0, 3.0))
    assert g.theta == pytest.approx(6.0)  # > pi, stays unwrapped


def test_coadjoint_matrix_consistent_with_action():
    for _ in range(100):
        g = random_group()
        mu = se2.CoAlgebraElement(*RNG.uniform(-2, 2, 3))
        m = np.array(se2.coadjoint_matrix(g))
        got = se2.coadjoint(g, mu)
        want = m @ np.array([mu.mu1, mu.mu2, mu.mu3])
        np.testing.assert_allclose([got.mu1, got.mu2, got.mu3], want,
                                   atol=1e-12)


def test_coadjoint_identity_trivial():
    mu = se2.CoAlgebraElement(0.3, -1.2, 2.0)
    out = se2.coadjoint(se2.identity, mu)
    assert (out.mu1, out.mu2, out.mu3) == (mu.mu1, mu.mu2, mu.mu3)


def test_coadjoint_composes_contravariantly():
    for _ in range(100):
        a, b = random_group(), random_group()
        mu = se2.CoAlgebraElement(*RNG.uniform(-2, 2, 3))
        lhs = se2.coadjoint(se2.compose(a, b), mu)
        rhs = se2.coadjoint(b, se2.coadjoint(a, mu))
        assert (lhs.mu1, lhs.mu2, lhs.mu3) == pytest.approx(
            (rhs.mu1, rhs.mu2, rhs.mu3), abs=1e-10)


def test_coadjoint_preserves_casimir():
    # |linear momentum|^2 is invariant under the coadjoint action
    for _ in range(100):
        g = random_group()
        mu = se2.CoAlgebraElement(*RNG.uniform(-2, 2, 3))
        out = se2.coadjoint(g, mu)
        assert out.mu1**2 + out.mu2**2 == pytest.approx(
            mu.mu1**2 + mu.mu2**2, rel=1e-12)


def test_pairing_invariance_under_adjoint_pair():
    # <Ad*_g mu, xi> = <mu, Ad_g xi>; check with Ad via matrix conjugation
    for _ in range(100):
        g = random_group()
        mu = se2.CoAlgebraElement(*RNG.uniform(-2, 2, 3))
        xi = se2.AlgebraElement(*RNG.uniform(-2, 2, 3))
        gm = as_matrix(g)
        ad = gm @ se2_hat(xi.xi1, xi.xi2, xi.xi3) @ np.linalg.inv(gm)
        ad_xi = se2.AlgebraElement(ad[0, 2], ad[1, 2], ad[1, 0])
        lhs = se2.coadjoint(g, mu).pair(xi)
        rhs = mu.pair(ad_xi)
        assert lhs == pytest.approx(rhs, abs=1e-10)


def test_algebra_vector_space_ops():
    a = se2.AlgebraElement(1.0, 2.0, 3.0)
    b = se2.AlgebraElement(-0.5, 0.25, 1.5)
    s = a + 2.0 * b
    assert (s.xi1, s.xi2, s.xi3) == (0.0, 2.5, 6.0)
