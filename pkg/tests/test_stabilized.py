import numpy as np
import pytest
from hypothesis import given, strategies as st

from pdrecon import aniso, stabilized
from pdrecon.aniso import HypothesisViolation
from pdrecon.forward import PowerDensitySet
from pdrecon.grid import Grid3
from pdrecon.phantom import tau_and_anisotropy
from pdrecon.smalg import cofactor3, det3
from conftest import make_data, random_spd

EXTRAS = ["(x+2)(y+2)", "(z+2)(x+2)"]
EXP3_PAIRS = [
    (["x", "y", "z"], ["(x+2)(y+2)", "(y+2)(z+2)"]),
    (["x+1.5(z+2)^2", "y", "z"], ["(y+2)(z+2)", "(z+2)(x+2)"]),
    (["x", "y+1.5(x+2)^2", "z"], ["(x+2)(y+2)", "(y+2)(z+2)"]),
    (["x", "y", "z+1.5(y+2)^2"], ["(y+2)(z+2)", "(z+2)(x+2)"]),
]


@pytest.fixture(scope="module")
def exp3_small():
    keys = sorted({k for b, e in EXP3_PAIRS for k in b + e})
    d = make_data("gamma3", 20, keys)
    return d, [d.pd.select(b, e) for b, e in EXP3_PAIRS]


def _bundle_from(Gp, H=None):
    shape = Gp.shape[:-2]
    if H is None:
        H = np.broadcast_to(np.eye(3), shape + (3, 3))
    return stabilized.BasisBundle("b", H, det3(H), cofactor3(H), np.zeros(shape + (3, 3)), Gp)


def _constant_H_case(n=9, seed=0):
    """Constant det-1 ``H`` with smooth, non-trivial cross densities."""
    rng = np.random.default_rng(seed)
    g = Grid3.cube(n)
    H0 = random_spd(rng, cond=4.0)
    H0 /= np.cbrt(np.linalg.det(H0))
    x, y, z = (c * np.ones(g.shape) for c in g.coords())
    C = rng.standard_normal((2, 3, 3))
    cross = [np.stack([np.sin(np.einsum("a,a...->...", c[i], np.stack([x, y, z]))) + 2 for i in range(3)], -1) for c in C]
    return PowerDensitySet(g, np.broadcast_to(H0, g.shape + (3, 3)).copy(), cross)


def test_unit_det_region_matches_plain_constraints():
    pd = _constant_H_case()
    plain = aniso.constraint_field(aniso.mu_coefficients(pd), pd.H, pd.grid)
    stab = stabilized.stabilized_constraints(pd)
    np.testing.assert_allclose(stab, plain, atol=1e-12 * np.abs(plain).max())


def test_single_unit_det_basis_reduces_to_plain():
    pd = _constant_H_case()
    tau_b = np.exp(0.3 * pd.grid.coords()[0] * np.ones(pd.grid.shape))
    # synthetic cross densities: run the plain steps without the orientation diagnostic
    mats = aniso.constraint_field(aniso.mu_coefficients(pd), pd.H, pd.grid)
    B, _ = aniso.recover_AS(mats, pd.H)
    G = aniso.gamma_tilde(B, pd.H)
    tau = aniso.recover_tau(B, G, pd.H, tau_b, pd.grid)
    res = stabilized.reconstruct([pd], tau_b)
    np.testing.assert_allclose(res.gamma_tilde_M, G, atol=1e-8)
    np.testing.assert_allclose(res.gamma_tilde_H, G, atol=1e-8)
    np.testing.assert_allclose(res.tau, tau, rtol=1e-8)


def test_single_basis_matches_plain_to_second_order(exp2_pair):
    # on general data the two pipelines differentiate different products, so they agree to O(h^2)
    errs = []
    for d in exp2_pair:
        pd = d.pd.select(["x", "y", "z"], EXTRAS)
        tau, _ = tau_and_anisotropy(d.gamma)
        plain = aniso.reconstruct(pd, tau)
        res = stabilized.reconstruct([pd], tau)
        errs.append(np.abs(res.gamma_tilde_M - plain.gamma_tilde).mean())
    h = [d.grid.spacing[0] for d in exp2_pair]
    assert np.log(errs[0] / errs[1]) / np.log(h[0] / h[1]) > 1.6


def test_scaled_constraints_where_det_positive(exp2_pair):
    # Z' = |H|^2 Z up to discretization error that shrinks with h
    errs = []
    for d in exp2_pair:
        pd = d.pd.select(["x", "y", "z"], EXTRAS)
        plain = aniso.constraint_field(aniso.mu_coefficients(pd), pd.H, pd.grid)
        stab = stabilized.stabilized_constraints(pd)
        scaled = det3(pd.H)[..., None, None, None] ** 2 * plain
        errs.append(np.abs(stab - scaled).mean() / np.abs(scaled).mean())
    h = [d.grid.spacing[0] for d in exp2_pair]
    assert np.log(errs[0] / errs[1]) / np.log(h[0] / h[1]) >= 1.5


def test_identity_background_candidate():
    g = Grid3.cube(7)
    x, y, z = (c * np.ones(g.shape) for c in g.coords())
    H = np.broadcast_to(np.eye(3), g.shape + (3, 3)).copy()
    pd = PowerDensitySet(g, H, [np.stack([y + 2, x + 2, 0 * x], -1), np.stack([z + 2, 0 * x, x + 2], -1)])
    b = stabilized.make_bundle(pd)
    np.testing.assert_allclose(b.Gp, np.broadcast_to(np.eye(3) / 3, b.Gp.shape), atol=1e-12)


def test_zero_det_voxel_is_finite():
    pd = _constant_H_case(7)
    H = pd.H.copy()
    H[3, 3, 3] = np.diag([1.0, 1.0, 0.0])
    pd = PowerDensitySet(pd.grid, H, pd.cross)
    mats = stabilized.stabilized_constraints(pd)
    assert np.all(np.isfinite(mats))
    b = stabilized.make_bundle(pd)
    assert np.all(np.isfinite(b.Gp))
    assert np.isnan(b.gamma_tilde()[3, 3, 3]).all()
    assert b.frobenius_of_estimate()[3, 3, 3] == np.inf


def test_exp3_constraints_finite_across_sign_changes(exp3_small):
    d, pds = exp3_small
    dU = det3(np.stack([d.grads[k] for k in EXP3_PAIRS[0][0]], -1))
    assert dU.min() < 0 < dU.max()
    for pd in pds:
        b = stabilized.make_bundle(pd)
        assert np.all(np.isfinite(stabilized.stabilized_constraints(pd)))
        assert np.all(np.isfinite(b.Gp)) and np.all(np.isfinite(b.Bp))
        np.testing.assert_allclose(np.linalg.norm(b.Bp, axis=(-2, -1)), 1.0, atol=1e-12)
        np.testing.assert_array_equal(b.Gp, np.swapaxes(b.Gp, -1, -2))
        # G' is PSD up to rounding: B' cof(H) B'^T with cof(H) PSD
        ev = np.linalg.eigvalsh(b.Gp)
        assert ev[..., 0].min() > -1e-10 * np.abs(ev).max()


def _scalar_ratio(d, pd):
    tau, gt = tau_and_anisotropy(d.gamma)
    DU = np.stack([d.grads[k] for k in pd.labels[:3]], -1)
    AS = np.sqrt(tau)[..., None, None] * gt @ DU
    b = stabilized.make_bundle(pd)
    bb = np.einsum("...ij,...ij->...", b.Bp, AS) / np.einsum("...ij,...ij->...", AS, AS)
    g = np.cbrt(det3(b.Gp))
    detH = det3(pd.H)
    mask = detH > 0.1
    return np.abs(g / (bb ** 2 * detH) - 1.0)[mask]


def test_scalar_identity_against_truth_first_order(exp2_pair):
    errs = [_scalar_ratio(d, d.pd.select(["x", "y", "z"], EXTRAS)).max() for d in exp2_pair]
    h = [d.grid.spacing[0] for d in exp2_pair]
    assert np.log(errs[0] / errs[1]) / np.log(h[0] / h[1]) >= 0.8


def _flipped(bundles, seed, p=0.5):
    rng = np.random.default_rng(seed)
    out = []
    for b in bundles:
        s = np.where(rng.random(b.detH.shape) < p, -1.0, 1.0)[..., None, None]
        Bp = s * b.Bp
        Gp = Bp @ b.cof @ np.swapaxes(Bp, -1, -2)
        Gp = 0.5 * (Gp + np.swapaxes(Gp, -1, -2))
        out.append(stabilized.BasisBundle(b.label, b.H, b.detH, b.cof, Bp, Gp, b.dH))
    return out


def test_sign_gauge_invariance(exp3_small):
    d, pds = exp3_small
    # same code path for both sides; only the signs differ
    bundles = _flipped([stabilized.make_bundle(pd) for pd in pds], 0, p=0.0)
    tau_b, _ = tau_and_anisotropy(d.gamma)
    tau, gM = stabilized.assemble_and_solve(bundles, tau_b, d.grid)
    fl = _flipped(bundles, 5)
    tau2, gM2 = stabilized.assemble_and_solve(fl, tau_b, d.grid)
    np.testing.assert_allclose(tau2, tau, rtol=1e-10)
    np.testing.assert_allclose(gM2, gM, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(stabilized.combine_frobenius(fl), stabilized.combine_frobenius(bundles),
                               rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(stabilized.combine_det_weighted(fl), stabilized.combine_det_weighted(bundles),
                               rtol=1e-12, atol=1e-14)


def test_outputs_have_unit_det(exp3_small):
    d, pds = exp3_small
    tau_b, _ = tau_and_anisotropy(d.gamma)
    res = stabilized.reconstruct(pds, tau_b)
    for G in (res.gamma_tilde_M, res.gamma_tilde_H, res.gamma_tilde_F):
        np.testing.assert_allclose(det3(G), 1.0, atol=1e-8)
    assert np.all(np.isfinite(res.tau))


@given(st.integers(0, 2 ** 31), st.floats(1e3, 1e8))
def test_frobenius_excludes_wild_candidate(seed, wild):
    rng = np.random.default_rng(seed)
    G = random_spd(rng, cond=5.0)
    G /= np.cbrt(np.linalg.det(G))
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    W = Q @ np.diag([wild, wild ** -0.5, wild ** -0.5]) @ Q.T
    bundles = [_bundle_from(s * G[None]) for s in (1.0, 2.5, 0.3)] + [_bundle_from(W[None])]
    out = stabilized.combine_frobenius(bundles)
    np.testing.assert_allclose(out[0], G, rtol=1e-10)


def test_equal_candidates_and_tie_break():
    G = np.diag([2.0, 1.0, 0.5])
    bundles = [_bundle_from(G[None].copy()) for _ in range(3)]
    np.testing.assert_allclose(stabilized.combine_frobenius(bundles)[0], G, rtol=1e-12)
    np.testing.assert_allclose(stabilized.combine_det_weighted(bundles)[0], G, rtol=1e-12)
    # equal Frobenius norms but different tensors: the lowest index is dropped
    A = np.diag([4.0, 1.0, 0.25])
    Bm = np.diag([0.25, 4.0, 1.0])
    Cm = np.diag([1.0, 0.25, 4.0])
    out = stabilized.combine_frobenius([_bundle_from(m[None]) for m in (A, Bm, Cm)])[0]
    ref = Bm + Cm
    np.testing.assert_allclose(out, ref / np.cbrt(np.linalg.det(ref)), rtol=1e-12)


def test_frobenius_needs_two_bases():
    with pytest.raises(ValueError):
        stabilized.combine_frobenius([_bundle_from(np.eye(3)[None])])


def test_det_weighted_single_basis(exp2_small):
    pd = exp2_small.pd.select(["x", "y", "z"], EXTRAS)
    b = stabilized.make_bundle(pd)
    np.testing.assert_allclose(stabilized.combine_det_weighted([b]), b.gamma_tilde(), rtol=1e-12)


def test_det_weighted_rejects_nonpositive():
    G = -np.eye(3)[None]
    with pytest.raises(HypothesisViolation):
        stabilized.combine_det_weighted([_bundle_from(G)])


def test_singular_M_reports_voxel():
    g = Grid3.cube(5)
    Gp = np.broadcast_to(np.eye(3), g.shape + (3, 3)).copy()
    Gp[1, 2, 3] = 0.0
    b = _bundle_from(Gp)
    b.dH = np.zeros(g.shape + (3, 3, 3))
    with pytest.raises(HypothesisViolation) as ei:
        stabilized.assemble_and_solve([b], np.ones(g.shape), g)
    assert ei.value.index == (1, 2, 3)
    assert ei.value.detail["bad_voxels"] == 1
