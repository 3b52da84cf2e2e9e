import numpy as np
import pytest

from featreg import kernels
from featreg.errors import DimsMismatch, NonFiniteLoss
from featreg.registration import (
    RegistrationConfig, candidate_offsets, continuous_refine,
    discrete_convex_search, loss, loss_gradient, regularizer, register,
    similarity_mse,
)
from featreg.synth import generate_case
from featreg.volcore import (
    DisplacementField, FeatureVolume, Spacing, Volume3D,
)


def rand_features(dims, C, seed, sigma=0.0):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=dims + (C,))
    if sigma > 0:
        from scipy.ndimage import gaussian_filter
        for c in range(C):
            data[..., c] = gaussian_filter(data[..., c], sigma, mode="nearest")
    return FeatureVolume(data, Spacing(1, 1, 1))


def test_config_validation():
    RegistrationConfig()
    with pytest.raises(ValueError):
        RegistrationConfig(levels=2)            # list lengths stay at 3
    with pytest.raises(ValueError):
        RegistrationConfig(lambda_=-0.1)
    with pytest.raises(ValueError):
        RegistrationConfig(beta1=1.0)
    with pytest.raises(ValueError):
        RegistrationConfig(step_size=0.0)
    RegistrationConfig(levels=1, capture_radius=[3], quant_step=[1])


def test_candidate_offsets_order_and_count():
    offs = candidate_offsets(2, 1)
    assert offs.shape == (125, 3)
    assert np.array_equal(offs[0], [0, 0, 0])
    # sorted by squared norm, then lexicographically within a norm shell
    n2 = (offs ** 2).sum(axis=1)
    assert np.all(np.diff(n2) >= 0)
    shell = offs[n2 == 1]
    assert np.array_equal(shell, [[-1, 0, 0], [0, -1, 0], [0, 0, -1],
                                  [0, 0, 1], [0, 1, 0], [1, 0, 0]])
    # quantization scales the lattice
    offs2 = candidate_offsets(4, 2)
    assert offs2.shape == (125, 3)
    assert set(np.unique(offs2)) == {-4.0, -2.0, 0.0, 2.0, 4.0}
    assert candidate_offsets(2, 3).shape == (1, 3)  # radius < step: only zero


def test_similarity_and_regularizer_hand_values():
    a = FeatureVolume(np.zeros((2, 2, 2, 1)), Spacing(1, 1, 1))
    b = FeatureVolume(np.full((2, 2, 2, 1), 2.0), Spacing(1, 1, 1))
    assert similarity_mse(a, b) == pytest.approx(4.0)

    vec = np.zeros((2, 2, 2, 3))
    vec[1, :, :, 0] = 3.0   # single x-step of 3 in component 0
    disp = DisplacementField(vec, Spacing(1, 1, 1))
    # four x-edges each contribute 3^2, averaged over 8 voxels
    assert regularizer(disp) == pytest.approx(4 * 9 / 8)


def test_loss_lambda_linearity():
    ff = rand_features((5, 5, 5), 2, seed=0)
    fm = rand_features((5, 5, 5), 2, seed=1)
    vec = np.random.default_rng(2).uniform(-1, 1, size=(5, 5, 5, 3))
    disp = DisplacementField(vec, Spacing(1, 1, 1))
    l0 = loss(ff, fm, disp, RegistrationConfig(lambda_=0.0))
    l2 = loss(ff, fm, disp, RegistrationConfig(lambda_=2.0))
    assert l0.total == pytest.approx(l0.sim)
    assert l2.total == pytest.approx(l2.sim + 2.0 * l2.reg)
    assert l0.sim == pytest.approx(l2.sim)
    assert l0.reg == pytest.approx(l2.reg)


def test_loss_gradient_matches_finite_differences():
    ff = rand_features((6, 6, 6), 2, seed=3, sigma=1.0)
    fm = rand_features((6, 6, 6), 2, seed=4, sigma=1.0)
    rng = np.random.default_rng(5)
    vec = rng.uniform(0.2, 0.8, size=(6, 6, 6, 3)) * rng.choice([-1, 1], size=(6, 6, 6, 3))
    disp = DisplacementField(vec, Spacing(1, 1, 1))
    cfg = RegistrationConfig(lambda_=0.7)
    grad = loss_gradient(ff, fm, disp, cfg)
    h = 1e-3
    for _ in range(20):
        x, y, z = rng.integers(1, 5, size=3)
        a = int(rng.integers(0, 3))
        dv = vec.copy()
        dv[x, y, z, a] += h
        hi = loss(ff, fm, DisplacementField(dv, disp.spacing), cfg).total
        dv[x, y, z, a] -= 2 * h
        lo = loss(ff, fm, DisplacementField(dv, disp.spacing), cfg).total
        ref = (hi - lo) / (2 * h)
        assert abs(grad[x, y, z, a] - ref) / max(abs(ref), 1e-8) <= 1e-4


def test_loss_checks_dims():
    ff = rand_features((4, 4, 4), 2, seed=6)
    fm = rand_features((4, 4, 5), 2, seed=7)
    cfg = RegistrationConfig()
    with pytest.raises(DimsMismatch):
        loss(ff, fm, DisplacementField.zeros((4, 4, 4)), cfg)
    fm2 = rand_features((4, 4, 4), 3, seed=8)
    with pytest.raises(DimsMismatch):
        loss(ff, fm2, DisplacementField.zeros((4, 4, 4)), cfg)


def single_level_cfg(radius, step, cc_iters=0):
    return RegistrationConfig(levels=1, capture_radius=[radius],
                              quant_step=[step], cc_iters=cc_iters)


def test_single_level_search_equals_brute_force():
    ff = rand_features((10, 9, 8), 3, seed=9)
    fm = rand_features((10, 9, 8), 3, seed=10)
    cfg = single_level_cfg(2, 1)
    got = discrete_convex_search(ff, fm, cfg)
    offs = candidate_offsets(2, 1)
    cost = kernels.cost_volume(ff.data, fm.data, offs, None)
    expected = offs[np.argmin(cost, axis=0)]
    assert np.array_equal(got.vectors, expected)


def test_single_level_recovers_integer_translation():
    rng = np.random.default_rng(11)
    from scipy.ndimage import gaussian_filter
    base = np.stack([gaussian_filter(rng.normal(size=(14, 14, 14)), 1.5,
                                     mode="nearest") for _ in range(2)], axis=-1)
    t = (2, -1, 1)
    fix = np.empty_like(base)
    n = 14
    for x in range(n):
        for y in range(n):
            for z in range(n):
                fix[x, y, z] = base[min(max(x + t[0], 0), n - 1),
                                    min(max(y + t[1], 0), n - 1),
                                    min(max(z + t[2], 0), n - 1)]
    ff = FeatureVolume(fix, Spacing(1, 1, 1))
    fm = FeatureVolume(base, Spacing(1, 1, 1))
    got = discrete_convex_search(ff, fm, single_level_cfg(3, 1))
    interior = (slice(3, -3),) * 3
    assert np.all(got.vectors[interior] == np.asarray(t, dtype=float))


def test_coupling_pulls_toward_target():
    ff = rand_features((6, 6, 6), 2, seed=12)
    fm = rand_features((6, 6, 6), 2, seed=13)
    offs = candidate_offsets(2, 1)
    cost = kernels.cost_volume(ff.data, fm.data, offs, None)
    target = np.full((6, 6, 6, 3), 2.0)
    # overwhelming theta: every voxel snaps to the candidate nearest the target
    est = kernels.coupled_argmin(cost, offs, target, 1e12)
    assert np.all(est == 2.0)


def test_identity_pair_gives_zero_field():
    ff = rand_features((12, 12, 12), 2, seed=14, sigma=1.0)
    cfg = RegistrationConfig(levels=2, capture_radius=[2, 2], quant_step=[1, 1])
    got = discrete_convex_search(ff, ff, cfg)
    # zero candidate is listed first, so exact ties resolve to zero offset
    assert np.all(got.vectors == 0.0)


def test_refine_trace_shape_and_start():
    ff = rand_features((6, 6, 6), 2, seed=15)
    fm = rand_features((6, 6, 6), 2, seed=16)
    cfg = RegistrationConfig(refine_iters=5)
    phi0 = DisplacementField.zeros((6, 6, 6))
    _, trace = continuous_refine(ff, fm, phi0, cfg)
    assert len(trace) == 6
    direct = loss(ff, fm, phi0, cfg)
    assert trace[0].total == pytest.approx(direct.total, rel=1e-12)
    for entry in trace:
        assert entry.total == pytest.approx(entry.sim + cfg.lambda_ * entry.reg,
                                            rel=1e-12)


def test_refine_identity_is_fixed_point():
    ff = rand_features((5, 5, 5), 2, seed=17)
    cfg = RegistrationConfig(refine_iters=10)
    phi, trace = continuous_refine(ff, ff, DisplacementField.zeros((5, 5, 5)), cfg)
    assert np.all(phi.vectors == 0.0)
    assert trace[-1].total == 0.0


def test_refine_monotone_at_conservative_step():
    case = generate_case(seed=0, dims=(24, 24, 24), warp_amplitude=2,
                         warp_smoothness=6)
    ff = FeatureVolume(case.fix.data[..., None], case.fix.spacing)
    fm = FeatureVolume(case.mov.data[..., None], case.mov.spacing)
    cfg = RegistrationConfig(lambda_=0.02, levels=2, capture_radius=[2, 2],
                             quant_step=[1, 1], refine_iters=60,
                             step_size=0.02)
    phi0 = discrete_convex_search(ff, fm, cfg)
    _, trace = continuous_refine(ff, fm, phi0, cfg)
    totals = np.array([t.total for t in trace])
    assert np.all(np.diff(totals) <= 1e-9)


def test_refine_nonfinite_loss_reports_iteration():
    # finite inputs whose squared difference overflows: loss is inf at entry
    ff = FeatureVolume(np.full((4, 4, 4, 1), 1e200), Spacing(1, 1, 1))
    fm = FeatureVolume(np.full((4, 4, 4, 1), -1e200), Spacing(1, 1, 1))
    cfg = RegistrationConfig(refine_iters=3)
    with pytest.raises(NonFiniteLoss) as exc:
        continuous_refine(ff, fm, DisplacementField.zeros((4, 4, 4)), cfg)
    assert exc.value.iteration == 0


def test_register_checks_dims():
    a = Volume3D(np.zeros((16, 16, 16)), Spacing(1, 1, 1))
    b = Volume3D(np.zeros((16, 16, 17)), Spacing(1, 1, 1))
    with pytest.raises(DimsMismatch):
        register(a, b)


def test_register_identity_pair_near_zero_field():
    case = generate_case(seed=1, dims=(24, 24, 24), warp_amplitude=2,
                         warp_smoothness=6)
    cfg = RegistrationConfig(lambda_=0.02, levels=2, capture_radius=[2, 2],
                             quant_step=[1, 1], refine_iters=30, step_size=0.05)
    disp, trace = register(case.fix, case.fix, reg_cfg=cfg)
    assert disp.dims == (24, 24, 24)
    mean_norm = float(np.linalg.norm(disp.vectors, axis=-1).mean())
    assert mean_norm <= 0.1
    assert len(trace) == 31
