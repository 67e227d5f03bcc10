import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toricvortex.errors import ValidationError
from toricvortex.loopspace import (FourierLoop, GaugeElement, LoopPoint, TangentVec, action_A0,
                                   action_full, antiderivative_mean_zero, apply_gauge, coulomb_gauge,
                                   grad, l2_inner, metric_g0, metric_g1, metric_gr, norm_r,
                                   normalize_by_H, solve_xi)
from toricvortex.toric import TorusAction, adjoint_infinitesimal, infinitesimal_action

from oracles import metric_gr_collocation

TWO_PI = 2 * np.pi
CP2 = TorusAction([[1], [1], [1]], tau=[1])
TRIANGLE = TorusAction([[1, 0], [0, 1], [1, 1]], tau=[1, 1])


def random_loop(rng, bands, scale=1.0, grid_size=0):
    coeffs = [scale * (rng.normal(size=hi - lo + 1) + 1j * rng.normal(size=hi - lo + 1)) for lo, hi in bands]
    return FourierLoop(bands, coeffs, grid_size)


def random_point(rng, action, bands, scale=0.6):
    return LoopPoint(random_loop(rng, bands, scale), rng.normal(size=action.k))


def random_tangent(rng, action, bands):
    return TangentVec(random_loop(rng, bands), rng.normal(size=action.k))


def shifted(p, v, h):
    return LoopPoint(p.z + v.z_hat.scale(h), p.eta + h * v.eta_hat)


# --- loops -----------------------------------------------------------------

def test_loop_validation():
    with pytest.raises(ValidationError):
        FourierLoop(((1, 0),), (np.zeros(0),))
    with pytest.raises(ValidationError):
        FourierLoop(((0, 4),), (np.zeros(5),), grid_size=8)


def test_samples_roundtrip():
    rng = np.random.default_rng(0)
    z = random_loop(rng, ((-2, 1), (0, 3), (-1, -1)))
    back = FourierLoop.from_samples(z.samples(), z.bands, z.grid_size)
    for a, b in zip(z.coeffs, back.coeffs):
        assert np.allclose(a, b, atol=1e-13)


def test_parseval_matches_quadrature():
    rng = np.random.default_rng(1)
    bands = ((-2, 2), (0, 3), (-1, 1))
    for _ in range(20):
        u, v = random_loop(rng, bands), random_loop(rng, bands)
        quad = np.mean(np.sum(np.real(np.conj(u.samples()) * v.samples()), axis=0))
        assert abs(l2_inner(u, v) - quad) <= 1e-12


# --- action functionals ----------------------------------------------------

def test_action_constant_loop():
    c = np.array([0.3 + 0.1j, 1.0, -0.2j])
    p = LoopPoint(FourierLoop.constant(c), np.array([0.7]))
    mu = 0.5 * np.sum(np.abs(c) ** 2)
    assert abs(action_full(CP2, p) - (mu - 1) * 0.7) <= 1e-14
    assert abs(action_A0(CP2, p) - (mu - 1) * 0.7) <= 1e-14


def test_action_zero_loop():
    z = FourierLoop.zeros(((0, 1),) * 3)
    eta_loop = np.array([0.5 + np.cos(TWO_PI * np.arange(z.grid_size) / z.grid_size)])
    assert abs(action_full(CP2, LoopPoint(z, eta_loop)) + 0.5) <= 1e-14
    assert abs(action_A0(CP2, LoopPoint(z, np.array([0.5]))) + 0.5) <= 1e-14


def test_action_single_circle_mode():
    z = FourierLoop(((1, 1), (0, 0), (0, 0)), (np.array([1.0]), np.zeros(1), np.zeros(1)))
    p = LoopPoint(z, np.array([0.0]))
    assert abs(action_full(CP2, p) + np.pi) <= 1e-13
    assert abs(action_A0(CP2, p) + np.pi) <= 1e-13


def test_action_A0_needs_constant_eta():
    z = FourierLoop.zeros(((0, 1),) * 3)
    with pytest.raises(ValidationError):
        action_A0(CP2, LoopPoint(z, np.zeros((1, z.grid_size))))


def test_A0_agrees_with_full_action_for_constant_eta():
    rng = np.random.default_rng(2)
    for _ in range(100):
        p = random_point(rng, TRIANGLE, ((-1, 2), (0, 1), (-2, 0)))
        loop_eta = LoopPoint(p.z, p.eta_samples())
        assert abs(action_A0(TRIANGLE, p) - action_full(TRIANGLE, loop_eta)) <= 1e-12


# --- gauge -----------------------------------------------------------------

def test_coulomb_identity_for_constant_eta():
    rng = np.random.default_rng(3)
    p = random_point(rng, CP2, ((0, 2),) * 3)
    q, h = coulomb_gauge(CP2, p)
    assert h.is_identity
    assert np.allclose(q.eta, p.eta)
    for a, b in zip(q.z.coeffs, p.z.coeffs):
        assert np.allclose(a, b)


def test_coulomb_closed_form_phase():
    z = FourierLoop(((0, 1),) * 2, (np.array([1.0, 0.5]), np.array([0.2j, 0.0])))
    T = z.grid_size
    t = np.arange(T) / T
    v, u = np.array([0.4, -1.0]), np.array([0.3, 0.8])
    eta = v[:, None] + np.cos(TWO_PI * t)[None, :] * u[:, None]
    act = TorusAction([[1, 0], [0, 1]], tau=[1, 1])
    q, h = coulomb_gauge(act, LoopPoint(z, eta))
    assert np.allclose(h.theta, np.sin(TWO_PI * t)[None, :] * u[:, None] / TWO_PI, atol=1e-14)
    assert np.allclose(q.eta, v, atol=1e-14)


def test_gauge_invariance_of_full_action():
    rng = np.random.default_rng(4)
    bands = ((-1, 1), (0, 2), (-1, 0))
    for _ in range(50):
        z = random_loop(rng, bands, 0.6)
        T = z.grid_size
        t = np.arange(T) / T
        eta = rng.normal(size=(2, 1)) + rng.normal(size=(2, 1)) * np.cos(TWO_PI * t) \
            + rng.normal(size=(2, 1)) * np.sin(2 * TWO_PI * t)
        p = LoopPoint(z, eta)
        q, _ = coulomb_gauge(TRIANGLE, p)
        assert abs(action_full(TRIANGLE, q) - action_full(TRIANGLE, p)) <= 1e-10


def test_apply_gauge_with_random_phase_preserves_action():
    rng = np.random.default_rng(5)
    z = random_loop(rng, ((0, 1),) * 3, 0.6)
    T = z.grid_size
    t = np.arange(T) / T
    theta = np.array([0.3 * np.sin(TWO_PI * t) + 0.1 * np.cos(2 * TWO_PI * t)])
    p = LoopPoint(z, np.array([0.9]))
    q = apply_gauge(CP2, p, GaugeElement(theta))
    assert abs(action_full(CP2, q) - action_full(CP2, p)) <= 1e-10


@pytest.mark.parametrize("eta,v,new", [(7.0, 1, 7.0 - TWO_PI), (-0.5, -1, TWO_PI - 0.5), (1.0, 0, 1.0)])
def test_normalize_by_H_shifts(eta, v, new):
    z = FourierLoop(((0, 1),) * 3, (np.ones(2), np.zeros(2), np.zeros(2)))
    q, h = normalize_by_H(CP2, LoopPoint(z, np.array([eta])))
    assert h.winding.tolist() == [v]
    assert abs(q.eta[0] - new) <= 1e-14
    assert q.z.bands[0] == (0 - v, 1 - v)


def test_normalize_by_H_preserves_gradient_norm():
    rng = np.random.default_rng(6)
    for _ in range(10):
        p = random_point(rng, TRIANGLE, ((-1, 1), (0, 2), (0, 1)))
        p = LoopPoint(p.z, p.eta * 5)
        q, _ = normalize_by_H(TRIANGLE, p)
        g_p, g_q = grad(TRIANGLE, p, 0.0), grad(TRIANGLE, q, 0.0)
        assert abs(norm_r(TRIANGLE, p, g_p, 0.0) - norm_r(TRIANGLE, q, g_q, 0.0)) <= 1e-10


# --- xi, gradients, metrics ------------------------------------------------

def test_solve_xi_trivial_cases():
    z = FourierLoop.constant([1.0, 0.5j, 2.0])
    assert np.allclose(solve_xi(CP2, z, 1.0), 0)
    rng = np.random.default_rng(7)
    assert np.allclose(solve_xi(CP2, random_loop(rng, ((0, 2),) * 3), 0.0), 0)


def test_solve_xi_closed_form():
    act = TorusAction([[1]], tau=[1])
    z = FourierLoop(((0, 1),), (np.array([1.0, 1.0]),))
    T = z.grid_size
    t = np.arange(T) / T
    assert np.allclose(solve_xi(act, z, 1.0)[0], np.sin(TWO_PI * t) / TWO_PI, atol=1e-14)


def test_grad_at_zero_loop():
    z = FourierLoop.zeros(((0, 2),) * 3)
    for r in (0.0, 0.5, 1.0):
        g = grad(CP2, LoopPoint(z, np.array([0.3])), r)
        assert np.allclose(g.eta_hat, [-1.0])
        assert all(np.allclose(c, 0) for c in g.z_hat.coeffs)


def test_grad_single_mode_rate():
    # each mode is scaled by (A eta)_j - 2 pi m
    z = FourierLoop(((-1, 2), (0, 0), (1, 1)),
                    (np.array([0.5, 0.0, 0.0, 0.0]), np.array([0.0]), np.array([0.0])))
    eta = np.array([1.3])
    g = grad(CP2, LoopPoint(z, eta), 0.0)
    assert np.allclose(g.z_hat.coeffs[0], [(1.3 + TWO_PI) * 0.5, 0, 0, 0])


@pytest.mark.parametrize("r", [0.0, 0.5, 1.0])
def test_gradient_duality(r):
    rng = np.random.default_rng(8)
    bands = ((0, 2),) * 3
    for _ in range(50):
        p = random_point(rng, CP2, bands)
        v = random_tangent(rng, CP2, bands)
        g = grad(CP2, p, r)
        lhs = metric_gr(CP2, p, g, TangentVec(v.z_hat.embed(g.z_hat.bands), v.eta_hat), r)
        h = 1e-5
        fd = (action_A0(CP2, shifted(p, v, h)) - action_A0(CP2, shifted(p, v, -h))) / (2 * h)
        assert abs(lhs - fd) <= 1e-6 * max(1.0, abs(fd))


@pytest.mark.parametrize("r", [0.5, 1.0])
def test_metric_matches_collocation_oracle(r):
    rng = np.random.default_rng(9)
    bands = ((-1, 1), (0, 2), (0, 1))
    T = 128
    for _ in range(5):
        p = random_point(rng, TRIANGLE, bands)
        u, v = random_tangent(rng, TRIANGLE, bands), random_tangent(rng, TRIANGLE, bands)
        ours = metric_gr(TRIANGLE, p, u, v, r)
        ref = metric_gr_collocation(TRIANGLE.weights, p.z.samples(T), u.z_hat.samples(T), v.z_hat.samples(T),
                                    u.eta_hat, v.eta_hat, r)
        assert abs(ours - ref) <= 1e-9 * max(1.0, abs(ref))


def test_metric_g0_axioms():
    rng = np.random.default_rng(10)
    bands = ((0, 2),) * 3
    p = random_point(rng, CP2, bands)
    zero = TangentVec(FourierLoop.zeros(bands), np.zeros(1))
    unit = TangentVec(FourierLoop(bands, (np.array([0, 1.0, 0]), np.zeros(3), np.zeros(3))), np.zeros(1))
    assert metric_g0(p, zero, random_tangent(rng, CP2, bands)) == 0.0
    assert abs(metric_g0(p, unit, unit) - 1.0) <= 1e-15
    for _ in range(20):
        u, v, w = (random_tangent(rng, CP2, bands) for _ in range(3))
        a, b = rng.normal(size=2)
        comb = TangentVec(u.z_hat.scale(a) + v.z_hat.scale(b), a * u.eta_hat + b * v.eta_hat)
        assert abs(metric_g0(p, u, v) - metric_g0(p, v, u)) <= 1e-14
        assert abs(metric_g0(p, comb, w) - a * metric_g0(p, u, w) - b * metric_g0(p, v, w)) <= 1e-13


def test_g1_equals_g0_at_zero_loop():
    rng = np.random.default_rng(11)
    bands = ((0, 2),) * 3
    p = LoopPoint(FourierLoop.zeros(bands), np.array([0.2]))
    for _ in range(5):
        u, v = random_tangent(rng, CP2, bands), random_tangent(rng, CP2, bands)
        assert abs(metric_g1(CP2, p, u, v) - metric_g0(p, u, v)) <= 1e-12


def _calibrated_c0(rng, action, bands, samples=100):
    """max ||L_z xi||_{L2} / (||z||_{L2} ||xi||_sup) over random mean-zero xi, times 2."""
    worst = 0.0
    for _ in range(samples):
        z = random_loop(rng, bands)
        T = z.grid_size
        t = np.arange(T) / T
        xi = np.array([sum(rng.normal() * np.cos(TWO_PI * m * t + rng.uniform(0, TWO_PI)) for m in (1, 2, 3))
                       for _ in range(action.k)])
        lz = 1j * (action.weights @ xi) * z.samples()
        ratio = np.sqrt(np.mean(np.sum(np.abs(lz) ** 2, axis=0))) / (
            np.sqrt(l2_inner(z, z)) * np.max(np.abs(xi)))
        worst = max(worst, ratio)
    return 2 * worst


def test_metric_sandwich():
    rng = np.random.default_rng(12)
    bands = ((-1, 1), (0, 2), (0, 1))
    c = max(_calibrated_c0(rng, TRIANGLE, bands), 1.0)
    for _ in range(200):
        p = random_point(rng, TRIANGLE, bands, scale=rng.uniform(0.1, 2.0))
        u = random_tangent(rng, TRIANGLE, bands)
        n0 = norm_r(TRIANGLE, p, u, 0.0)
        n1 = norm_r(TRIANGLE, p, u, 1.0)
        assert n1 <= n0 * (1 + 1e-12)
        assert n0 <= c * (1 + np.sqrt(l2_inner(p.z, p.z))) * n1


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=8, max_size=8))
def test_poincare_inequality(coefs):
    T = 64
    t = np.arange(T) / T
    xi = sum(a * np.cos(TWO_PI * (m // 2 + 1) * t) if m % 2 == 0 else a * np.sin(TWO_PI * (m // 2 + 1) * t)
             for m, a in enumerate(coefs))
    xi = np.asarray(xi, float) - np.mean(xi)
    dxi = np.real(np.fft.ifft(np.fft.fft(xi) * 2j * np.pi * np.fft.fftfreq(T, 1.0 / T)))
    assert np.sqrt(np.mean(xi ** 2)) <= np.sqrt(np.mean(dxi ** 2)) + 1e-12


def test_antiderivative_inverts_derivative():
    T = 32
    t = np.arange(T) / T
    x = np.cos(TWO_PI * 3 * t) + 0.5 * np.sin(TWO_PI * t)
    y = antiderivative_mean_zero(x)
    assert np.allclose(y, np.sin(TWO_PI * 3 * t) / (3 * TWO_PI) - 0.5 * np.cos(TWO_PI * t) / TWO_PI, atol=1e-14)


def test_infinitesimal_action_matches_loop_gradient_term():
    # the xi term of the gradient is -L_z xi evaluated pointwise
    rng = np.random.default_rng(13)
    z = random_loop(rng, ((0, 1),) * 3)
    p = LoopPoint(z, np.array([0.0]))
    g1, g0 = grad(CP2, p, 1.0), grad(CP2, p, 0.0)
    T = 64
    xi = solve_xi(CP2, z, 1.0, T)
    diff = g1.z_hat.samples(T) - g0.z_hat.embed(g1.z_hat.bands).samples(T)
    expected = -np.array([infinitesimal_action(CP2, z.samples(T)[:, i], xi[:, i]) for i in range(T)]).T
    assert np.allclose(diff, expected, atol=1e-12)
    # and L* recovers the moment derivative
    w = rng.normal(size=3) + 1j * rng.normal(size=3)
    assert adjoint_infinitesimal(CP2, z.samples(T)[:, 0], w).shape == (1,)
