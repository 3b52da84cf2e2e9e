import numpy as np
import pytest

from featreg.encoder import EncoderConfig, SliceFeatureStack, TokenGrid, encode_volume
from featreg.errors import ChannelMismatch, IncompleteStack, RankDeficient
from featreg.featbank import (
    FeatureBank, ProjectionModel, assemble_feature_volume, build_feature_bank,
    fit_pca, project_rows, project_stack,
)
from featreg.volcore import Spacing, Volume3D


def make_stack(Z, gw, gh, D, seed, mask=None):
    rng = np.random.default_rng(seed)
    slices = [TokenGrid(gw, gh, D, rng.normal(size=(gw * gh, D)))
              for _ in range(Z)]
    if mask is None:
        mask = np.ones(Z, dtype=bool)
    return SliceFeatureStack(Z, slices, np.asarray(mask), stride_k=1)


def pca_oracle(rows, d):
    """Dense covariance eigendecomposition reference."""
    mu = rows.mean(axis=0)
    X = rows - mu
    C = X.T @ X / (rows.shape[0] - 1)
    evals, evecs = np.linalg.eigh(C)
    order = np.argsort(evals)[::-1]
    return mu, evals[order][:d], evecs[:, order][:, :d]


def test_bank_rows_from_encoded_slices_only():
    mask = np.array([True, False, True])
    sf = make_stack(3, 2, 2, 5, seed=0, mask=mask)
    sm = make_stack(3, 2, 2, 5, seed=1, mask=mask)
    bank = build_feature_bank(sf, sm)
    # 2 volumes x 2 encoded slices x 4 tokens
    assert bank.rows.shape == (16, 5)
    assert bank.n_fix == 8
    assert np.array_equal(bank.rows[:4], sf.slices[0].tokens)
    assert np.array_equal(bank.rows[4:8], sf.slices[2].tokens)
    assert np.array_equal(bank.rows[8:12], sm.slices[0].tokens)


def test_bank_channel_mismatch():
    sf = make_stack(2, 2, 2, 5, seed=0)
    sm = make_stack(2, 2, 2, 6, seed=1)
    with pytest.raises(ChannelMismatch):
        build_feature_bank(sf, sm)


def test_pca_matches_eigendecomposition_oracle():
    rng = np.random.default_rng(2)
    # anisotropic data so eigenvalues are well separated
    scales = np.linspace(5.0, 0.2, 12)
    rows = rng.normal(size=(300, 12)) * scales
    model = fit_pca(FeatureBank(rows, 150), d=6)
    mu, evals, evecs = pca_oracle(rows, 6)
    assert np.allclose(model.mean, mu, atol=1e-12)
    assert np.allclose(model.explained_variance, evals, rtol=1e-8)
    # subspaces must agree regardless of per-vector sign: compare projectors
    P_got = model.basis @ model.basis.T
    P_ref = evecs @ evecs.T
    assert np.linalg.norm(P_got - P_ref) <= 1e-8
    # orthonormal basis
    G = model.basis.T @ model.basis
    assert np.allclose(G, np.eye(6), atol=1e-10)


def test_pca_sign_convention_deterministic():
    rng = np.random.default_rng(3)
    rows = rng.normal(size=(50, 8))
    model = fit_pca(FeatureBank(rows, 25), d=4)
    for j in range(4):
        col = model.basis[:, j]
        assert col[np.argmax(np.abs(col))] > 0
    # flipping input order of rows changes nothing
    model2 = fit_pca(FeatureBank(rows.copy(), 25), d=4)
    assert np.array_equal(model.basis, model2.basis)


def test_pca_monotone_reconstruction_error():
    rng = np.random.default_rng(4)
    rows = rng.normal(size=(80, 10)) * np.linspace(3, 0.1, 10)
    prev = np.inf
    for d in range(1, 11):
        model = fit_pca(FeatureBank(rows, 40), d=d)
        rec = model.mean + project_rows(rows, model) @ model.basis.T
        err = float(np.sum((rows - rec) ** 2))
        assert err <= prev + 1e-9
        prev = err


def test_pca_rank_deficient_and_bad_d():
    rows = np.ones((1, 4))
    with pytest.raises(RankDeficient):
        fit_pca(FeatureBank(rows, 1), d=1)
    rows = np.random.default_rng(5).normal(size=(6, 4))
    with pytest.raises(ValueError):
        fit_pca(FeatureBank(rows, 3), d=0)
    with pytest.raises(ValueError):
        fit_pca(FeatureBank(rows, 3), d=5)   # d > D


def test_pca_rank_deficient_tail_variance_near_zero():
    rng = np.random.default_rng(6)
    # rank-2 data embedded in 5 channels
    basis = rng.normal(size=(2, 5))
    rows = rng.normal(size=(40, 2)) @ basis
    model = fit_pca(FeatureBank(rows, 20), d=4)
    assert model.explained_variance[0] > 1e-3
    assert model.explained_variance[2] <= 1e-18
    assert model.explained_variance[3] <= 1e-18
    G = model.basis.T @ model.basis
    assert np.allclose(G, np.eye(4), atol=1e-10)


def test_project_rows_centers_then_projects():
    rng = np.random.default_rng(7)
    rows = rng.normal(size=(30, 6))
    model = fit_pca(FeatureBank(rows, 15), d=3)
    got = project_rows(rows, model)
    assert np.allclose(got, (rows - model.mean) @ model.basis, atol=1e-14)
    assert np.allclose(project_rows(model.mean[None, :], model), 0.0, atol=1e-12)


def test_project_stack_shapes_and_mismatch():
    stack = make_stack(3, 2, 3, 8, seed=8)
    other = make_stack(3, 2, 3, 8, seed=9)
    bank = build_feature_bank(stack, other)
    model = fit_pca(bank, d=4)
    red = project_stack(stack, model)
    assert red.Z == 3
    assert red.D == 4
    assert red.slices[1].tokens.shape == (6, 4)
    wrong = make_stack(3, 2, 3, 5, seed=10)
    with pytest.raises(ChannelMismatch):
        project_stack(wrong, model)


def test_assemble_requires_complete_stack():
    stack = make_stack(3, 2, 2, 4, seed=11, mask=[True, False, True])
    target = Volume3D(np.zeros((2, 2, 3)), Spacing(1, 1, 1))
    with pytest.raises(IncompleteStack):
        assemble_feature_volume(stack, target)


def test_assemble_token_orientation():
    # distinct token values reveal the (gx, gy) -> (x, y) mapping
    gw, gh, Z, D = 3, 2, 2, 1
    slices = []
    for z in range(Z):
        vals = np.arange(gw * gh, dtype=float)[:, None] + 100.0 * z
        slices.append(TokenGrid(gw, gh, D, vals))
    stack = SliceFeatureStack(Z, slices, np.ones(Z, dtype=bool), stride_k=1)
    target = Volume3D(np.zeros((gw, gh, Z)), Spacing(1, 1, 1))
    fv = assemble_feature_volume(stack, target)
    assert fv.data.shape == (gw, gh, Z, 1)
    for z in range(Z):
        for gy in range(gh):
            for gx in range(gw):
                # token n = gy * grid_w + gx lives at voxel (gx, gy, z)
                assert fv.data[gx, gy, z, 0] == gy * gw + gx + 100.0 * z


def test_assemble_resamples_to_target_dims():
    stack = make_stack(4, 2, 2, 3, seed=12)
    target = Volume3D(np.zeros((7, 5, 4)), Spacing(1, 1, 1))
    fv = assemble_feature_volume(stack, target)
    assert fv.data.shape == (7, 5, 4, 3)
    # endpoint alignment: corner voxels equal corner tokens
    assert np.allclose(fv.data[0, 0, 0], stack.slices[0].tokens[0], atol=1e-12)
    last = stack.slices[3].tokens[-1]
    assert np.allclose(fv.data[-1, -1, -1], last, atol=1e-12)
