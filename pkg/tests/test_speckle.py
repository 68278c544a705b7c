import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from hspk.errors import CapacityError, ContractError, DimensionError
from hspk.speckle import (
    MIN_STATS_SAMPLES,
    SpeckleConfig,
    TransmissionMatrix,
    build_tm,
    ks_distance_exponential,
    normalize_speckle,
    propagate,
    simulate_stats,
    slm_image,
    speckle_images,
    stats_check,
)


def unitary_tm(n, seed=0):
    r = np.random.default_rng(seed)
    q, _ = np.linalg.qr(r.standard_normal((n, n)) + 1j * r.standard_normal((n, n)))
    return TransmissionMatrix(q, 0, 0)


def test_build_tm_deterministic():
    a = build_tm(7, 4, 4, 0)
    b = build_tm(7, 4, 4, 0)
    assert a.entries.tobytes() == b.entries.tobytes()
    assert a.shape == (4, 4)


def test_build_tm_entry_variance():
    tm = build_tm(11, 4096, 1024, 0)
    var = np.mean(np.abs(tm.entries) ** 2)
    assert abs(var * 1024 - 1.0) < 0.05
    assert abs(tm.entries.mean()) < 5e-3


def test_config_ids_are_independent():
    a = build_tm(11, 256, 256, 0).entries.ravel()
    b = build_tm(11, 256, 256, 1).entries.ravel()
    corr = np.abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    assert corr < 0.05


def test_build_tm_capacity():
    with pytest.raises(CapacityError):
        build_tm(0, 4096, 4096, max_entries=2**20)
    with pytest.raises(ContractError):
        build_tm(0, 0, 3)


def test_single_mode_propagation():
    tm = TransmissionMatrix(np.array([[1.0 + 0j]]), 0, 0)
    out = propagate(np.array([[1.0]]), tm)
    np.testing.assert_allclose(out, [1.0])


@pytest.mark.parametrize("seed", range(3))
def test_unitary_energy_conservation(seed):
    tm = unitary_tm(64, seed)
    label = np.random.default_rng(seed).random((8, 8))
    assert abs(propagate(label, tm).sum() - 64.0) < 1e-9


def test_propagate_mean_intensity_constant_label():
    tm = build_tm(3, 4096, 1024)
    s = propagate(np.full((32, 32), 0.3), tm)
    assert abs(s.mean() - 1.0) < 0.05
    assert np.all(s >= 0)


def test_propagate_rejects_wrong_size_and_range():
    tm = build_tm(3, 16, 16)
    with pytest.raises(DimensionError):
        propagate(np.zeros((3, 3)), tm)
    with pytest.raises(ContractError):
        propagate(np.full((4, 4), 1.5), tm)


@given(st.floats(0.1, 10.0), st.integers(0, 1000))
def test_propagate_quadratic_scaling(c, seed):
    tm = build_tm(seed, 16, 9)
    label = np.random.default_rng(seed).random((3, 3))
    scaled = TransmissionMatrix(tm.entries * c, 0, 0)
    np.testing.assert_allclose(propagate(label, scaled), c**2 * propagate(label, tm), rtol=1e-12)


def test_propagate_stack_matches_single():
    tm = build_tm(5, 64, 16)
    labels = np.random.default_rng(0).random((3, 4, 4))
    stack = propagate(labels, tm)
    for i in range(3):
        np.testing.assert_allclose(stack[i], propagate(labels[i], tm), rtol=1e-12)


def test_normalize_scale_one_frame_unchanged():
    frame = np.linspace(0, 1, 10_000) ** 2
    frame = frame / np.percentile(frame, 99.9)
    out = normalize_speckle(frame)
    np.testing.assert_allclose(out.ravel(), np.clip(frame, 0, 1), rtol=1e-15)
    assert out.shape == (100, 100)


@given(st.floats(1e-3, 1e3), st.integers(0, 2**31 - 1))
def test_normalize_scale_invariant(c, seed):
    frame = np.random.default_rng(seed).exponential(size=256)
    np.testing.assert_allclose(normalize_speckle(frame * c), normalize_speckle(frame), rtol=1e-12, atol=1e-15)


def test_normalize_clamped_fraction_exponential():
    frame = np.random.default_rng(4).exponential(size=(50, 4096))
    out = normalize_speckle(frame)
    frac = np.mean(out >= 1.0)
    assert abs(frac - 0.001) < 3e-4


def test_normalize_errors():
    with pytest.raises(ContractError):
        normalize_speckle(np.zeros(16))
    with pytest.raises(DimensionError):
        normalize_speckle(np.ones(15))
    with pytest.raises(ContractError):
        normalize_speckle(-np.ones(16))


def test_ks_matches_scipy():
    x = np.random.default_rng(9).exponential(size=5000) * 3.0
    ref = stats.kstest(x / x.mean(), "expon").statistic
    assert abs(ks_distance_exponential(x) - ref) < 1e-12


def test_ks_exponential_samples_small():
    # critical value at 1% for n=10^4 is 1.63 / sqrt(n) = 0.0163
    x = np.random.default_rng(1).exponential(size=10_000)
    assert stats_check(x[None]).ks_distance_exponential < 0.02


def test_ks_constant_samples():
    # after mean scaling a point mass sits at 1: distance = max(1 - e^-1, e^-1)
    rep = stats_check(np.full((1, 10_000), 3.0))
    assert abs(rep.ks_distance_exponential - (1 - np.exp(-1))) < 1e-3
    assert ks_distance_exponential(np.zeros(100)) == 1.0


def test_stats_too_few_samples():
    with pytest.raises(ContractError):
        stats_check(np.ones((1, MIN_STATS_SAMPLES - 1)))


def test_fully_developed_speckle_statistics():
    rep = simulate_stats(SpeckleConfig(), realizations=3, seed=0)
    assert rep.n_samples >= 10_000
    assert rep.ks_distance_exponential < 0.03
    assert abs(rep.contrast - 1.0) < 0.05


def test_slm_area_average():
    label = np.arange(16.0).reshape(4, 4)
    np.testing.assert_array_equal(slm_image(label, 2), [[2.5, 4.5], [10.5, 12.5]])
    np.testing.assert_array_equal(slm_image(label, 4), label)
    with pytest.raises(DimensionError):
        slm_image(label, 3)


def test_cross_configuration_decorrelation():
    cfg = SpeckleConfig(slm_extent=8, camera_extent=16)
    labels = np.random.default_rng(2).random((100, 16, 16))
    a = speckle_images(labels, build_tm(cfg.seed, cfg.n_outputs, cfg.n_inputs, 0), cfg)
    b = speckle_images(labels, build_tm(cfg.seed, cfg.n_outputs, cfg.n_inputs, 1), cfg)
    corr = [np.corrcoef(x.ravel(), y.ravel())[0, 1] for x, y in zip(a, b)]
    assert abs(np.mean(corr)) < 0.1


def test_speckle_deterministic():
    cfg = SpeckleConfig(slm_extent=8, camera_extent=16)
    labels = np.random.default_rng(2).random((3, 16, 16))
    tm = build_tm(cfg.seed, cfg.n_outputs, cfg.n_inputs, 0)
    assert speckle_images(labels, tm, cfg).tobytes() == speckle_images(labels, tm, cfg).tobytes()
