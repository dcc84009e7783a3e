import numpy as np
import pytest

from pdrecon import iso, quat
from pdrecon.grid import Grid3
from pdrecon.smalg import transition_matrix
from oracles import integrate_rotation_direct


def _setup(d):
    g = d.grid
    H = d.pd.select(["x", "y", "z"]).H
    sigma = d.gamma[..., 0, 0]
    grads = [d.grads[k] for k in "xyz"]
    T, Tinv = iso.transition_field(H)
    return g, H, sigma, grads, T, Tinv


def _true_R(sigma, grads, T):
    S = np.sqrt(sigma)[..., None, None] * np.stack(grads, axis=-1)
    return S @ np.swapaxes(T, -1, -2)


def test_transition_field_constant():
    H = np.broadcast_to(np.diag([4.0, 1, 1]), (3, 3, 3, 3, 3))
    T, Tinv = iso.transition_field(H)
    np.testing.assert_allclose(T, np.broadcast_to(np.diag([0.5, 1, 1]), T.shape))
    np.testing.assert_allclose(T @ Tinv, np.broadcast_to(np.eye(3), T.shape), atol=1e-15)


def test_transition_residual_on_exp1(exp1_small):
    _, H, _, _, T, _ = _setup(exp1_small)
    r = T @ H @ np.swapaxes(T, -1, -2) - np.eye(3)
    assert np.linalg.norm(r, axis=(-2, -1)).max() < 1e-8


def test_connection_constant_is_zero():
    g = Grid3.cube(5)
    H = np.broadcast_to(np.diag([2.0, 3, 1]), g.shape + (3, 3))
    c = iso.connection_field(*iso.transition_field(H), g)
    np.testing.assert_allclose(c.V, 0.0, atol=1e-13)


def test_connection_diagonal_exponential():
    g = Grid3.cube(33)
    x = g.coords()[0] * np.ones(g.shape)
    H = np.zeros(g.shape + (3, 3))
    H[..., 0, 0] = np.exp(2 * x)
    H[..., 1, 1] = H[..., 2, 2] = 1.0
    c = iso.connection_field(*iso.transition_field(H), g)
    V11 = c.V[..., 0, 0, :]
    assert np.abs(V11 - [-1.0, 0, 0]).max() < 5e-3
    other = c.V.copy()
    other[..., 0, 0, :] = 0.0
    assert np.abs(other).max() < 1e-12
    np.testing.assert_array_equal(c.Vs, np.swapaxes(c.Vs, -3, -2))
    np.testing.assert_array_equal(c.Va, -np.swapaxes(c.Va, -3, -2))
    np.testing.assert_array_equal(c.Vs + c.Va, c.V)


def test_step_coefficients_zero_and_b():
    q = np.array([1.0, 0, 0, 0])
    z = np.zeros((3, 3, 3))
    s = iso.step_coefficients(q, z, z, np.zeros(3), 0)
    np.testing.assert_array_equal(s.a, 0.0)
    np.testing.assert_array_equal(s.b, 0.0)
    s = iso.step_coefficients(q, z, z, np.array([6.0, 0, 0]) / 6.0, 1)
    np.testing.assert_array_equal(s.b, [0, 0, 1.0])


def test_constant_sigma_keeps_seed():
    g = Grid3.cube(9)
    H = np.broadcast_to(2.0 * np.eye(3), g.shape + (3, 3))
    rng = np.random.default_rng(0)
    seed = rng.standard_normal((9, 9, 4))
    seed /= np.linalg.norm(seed, axis=-1, keepdims=True)
    res = iso.reconstruct(H, np.full(g.shape, 2.0), seed, g)
    np.testing.assert_allclose(res.q, np.broadcast_to(seed, res.q.shape), atol=1e-14)
    np.testing.assert_allclose(res.sigma, 2.0, rtol=1e-9)


def test_seed_sign_flip_invariance(exp1_small):
    g, H, sigma, grads, T, _ = _setup(exp1_small)
    seed = iso.seed_from_truth(sigma, grads, T)
    a = iso.reconstruct(H, sigma, seed, g)
    flipped = seed.copy()
    flipped[::2] *= -1
    b = iso.reconstruct(H, sigma, flipped, g)
    np.testing.assert_allclose(b.R, a.R, atol=1e-13)
    np.testing.assert_allclose(b.sigma, a.sigma, rtol=1e-9)


def test_true_rotation_is_orthogonal(exp1_small):
    _, _, sigma, grads, T, _ = _setup(exp1_small)
    R = _true_R(sigma, grads, T)
    r = np.swapaxes(R, -1, -2) @ R - np.eye(3)
    assert np.linalg.norm(r, axis=(-2, -1)).max() < 1e-8
    assert np.linalg.det(R).min() > 0


def test_quaternion_matches_direct_oracle(exp1_small):
    g, H, sigma, grads, T, Tinv = _setup(exp1_small)
    conn = iso.connection_field(T, Tinv, g)
    G = iso.log_det_gradient(H, g)
    seed = iso.seed_from_truth(sigma, grads, T)
    q = iso.integrate_rotation(conn, G, seed, g)
    Rq = quat.to_rotation(q, check=False)
    Rd = integrate_rotation_direct(conn.Vs, conn.Va, G, Rq[0], g.spacing[0])
    h = g.spacing[0]
    assert np.linalg.norm(Rq - Rd, axis=(-2, -1)).max() < 5 * h * h


def test_error_grows_away_from_seed_face(exp1_small):
    g, H, sigma, grads, T, _ = _setup(exp1_small)
    res = iso.reconstruct(H, sigma, iso.seed_from_truth(sigma, grads, T), g)
    err = np.linalg.norm(res.R - _true_R(sigma, grads, T), axis=(-2, -1))
    prof = err.mean(axis=(1, 2))
    assert prof[0] < 1e-12
    assert prof[-6:].mean() > prof[1:6].mean()


def test_sigma_reconstruction_accuracy(exp1_small):
    g, H, sigma, grads, T, _ = _setup(exp1_small)
    res = iso.reconstruct(H, sigma, iso.seed_from_truth(sigma, grads, T), g)
    assert np.abs(res.sigma - sigma).sum() / sigma.sum() < 0.02
    assert np.all(res.sigma[g.boundary_mask()] == pytest.approx(sigma[g.boundary_mask()]))


def test_multi_sweep_runs(exp1_small):
    g, H, sigma, grads, T, _ = _setup(exp1_small)
    seed = iso.seed_from_truth(sigma, grads, T)
    back = iso.seed_from_truth(sigma, grads, T, axis="x", sign=-1)
    res = iso.reconstruct(H, sigma, seed, g, sweeps=[("x", -1)], seeds=[back])
    assert np.abs(res.sigma - sigma).sum() / sigma.sum() < 0.02
