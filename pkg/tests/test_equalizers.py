"""Block equalizers: exact recovery, oracle equivalence, ordering, errors."""

import itertools

import numpy as np
import pytest

from uwa_eq.channel import freq_matrix, make_sliding_plan, synth_cir, SynthCirParams
from uwa_eq.equalizers import (
    CONDITION_LIMIT,
    METHODS,
    ML_MAX_BLOCK,
    SingularChannelError,
    dfe,
    ml_bruteforce,
    mmse,
    sliding_equalize,
    zf,
)
from uwa_eq.signal import QPSK, OfdmConfig


def random_block(rng, b):
    h = rng.normal(size=(b, b)) + 1j * rng.normal(size=(b, b))
    s = QPSK.points[rng.integers(0, 4, b)]
    return h, s


def test_zf_recovers_noiseless():
    rng = np.random.default_rng(0)
    for _ in range(20):
        h, s = random_block(rng, 6)
        assert np.allclose(zf(h @ s, h), s, atol=1e-10)


def test_zf_raises_on_singular():
    h = np.ones((4, 4), dtype=np.complex128)  # rank one
    with pytest.raises(SingularChannelError):
        zf(np.ones(4), h)


def test_mmse_matches_dense_inverse_oracle():
    # independent oracle: explicit (H^H H + vI)^-1 H^H via np.linalg.inv
    rng = np.random.default_rng(1)
    for _ in range(20):
        h, s = random_block(rng, 5)
        y = h @ s + 0.1 * (rng.normal(size=5) + 1j * rng.normal(size=5))
        v = 0.3
        oracle = np.linalg.inv(h.conj().T @ h + v * np.eye(5)) @ h.conj().T @ y
        assert np.allclose(mmse(y, h, v), oracle, atol=1e-10)


def test_mmse_zero_noise_is_zf():
    rng = np.random.default_rng(2)
    h, s = random_block(rng, 6)
    y = h @ s
    assert np.allclose(mmse(y, h, 0.0), zf(y, h), atol=1e-9)
    with pytest.raises(ValueError):
        mmse(y, h, -0.1)


def test_dfe_recovers_noiseless():
    rng = np.random.default_rng(3)
    for _ in range(20):
        h, s = random_block(rng, 6)
        assert np.allclose(dfe(h @ s, h, 0.01), s, atol=1e-12)


def test_dfe_returns_constellation_points():
    rng = np.random.default_rng(4)
    h, s = random_block(rng, 5)
    y = h @ s + 0.5 * (rng.normal(size=5) + 1j * rng.normal(size=5))
    out = dfe(y, h, 0.5)
    assert np.all(np.isin(out, QPSK.points))
    with pytest.raises(ValueError):
        dfe(y, h, -1.0)


def test_dfe_detection_order_is_column_norm():
    # a dominant column must be detected first: give it the only noise-free
    # observation and a tiny interfering column, the strong symbol survives
    h = np.array([[3.0, 0.05], [0.0, 0.05]], dtype=np.complex128)
    s = QPSK.points[[2, 1]]
    y = h @ s
    out = dfe(y, h, 0.0)
    assert out[0] == s[0]


def test_ml_matches_enumeration_oracle():
    # independent oracle: plain python loop over all candidates
    rng = np.random.default_rng(5)
    for _ in range(20):
        h, s = random_block(rng, 3)
        y = h @ s + 0.4 * (rng.normal(size=3) + 1j * rng.normal(size=3))
        best, best_cost = None, np.inf
        for combo in itertools.product(range(4), repeat=3):
            cand = QPSK.points[list(combo)]
            cost = np.sum(np.abs(y - h @ cand) ** 2)
            if cost < best_cost:
                best, best_cost = cand, cost
        assert np.array_equal(ml_bruteforce(y, h), best)


def test_ml_recovers_noiseless_and_guards_size():
    rng = np.random.default_rng(6)
    h, s = random_block(rng, 4)
    assert np.array_equal(ml_bruteforce(h @ s, h), s)
    big = np.eye(ML_MAX_BLOCK + 1, dtype=np.complex128)
    with pytest.raises(ValueError, match="brute-force limit"):
        ml_bruteforce(np.zeros(ML_MAX_BLOCK + 1), big)


def test_ml_tie_breaks_lexicographic():
    # H = 0 makes every candidate cost identical; the first in
    # lexicographic index order is all-index-0
    h = np.zeros((2, 2), dtype=np.complex128)
    out = ml_bruteforce(np.zeros(2), h)
    assert np.array_equal(out, QPSK.points[[0, 0]])


def test_block_shape_validation():
    with pytest.raises(ValueError):
        zf(np.ones(3), np.ones((3, 4)))
    with pytest.raises(ValueError):
        zf(np.ones(2), np.ones((3, 3)))


def test_sliding_equalize_matches_per_block():
    cfg = OfdmConfig(n_subcarriers=32, cp_len=8)
    rng = np.random.default_rng(7)
    cir = synth_cir(SynthCirParams(tap_count=4, doppler_spread=0.02), cfg.symbol_len, rng)
    h = freq_matrix(cir, cfg)
    plan = make_sliding_plan(32, 8)
    s = QPSK.points[rng.integers(0, 4, 32)]
    y = h.h_freq @ s
    out = sliding_equalize(y, h, plan, "mmse", {"noise_var": 0.1})
    manual = np.concatenate([
        mmse(y[sl], h.h_freq[sl, sl], 0.1) for sl in plan.slices()
    ])
    assert np.allclose(out, manual, atol=1e-12)
    # callables work too
    out2 = sliding_equalize(y, h, plan, mmse, {"noise_var": 0.1})
    assert np.allclose(out2, manual, atol=1e-12)


def test_sliding_equalize_unknown_method():
    plan = make_sliding_plan(8, 4)
    with pytest.raises(ValueError, match="unknown method"):
        sliding_equalize(np.ones(8), np.eye(8), plan, "turbo")


def test_sliding_equalize_reports_block_index():
    plan = make_sliding_plan(8, 4)
    h = np.eye(8, dtype=np.complex128)
    h[4:, 4:] = 1.0  # second block is singular
    with pytest.raises(SingularChannelError) as info:
        sliding_equalize(np.ones(8), h, plan, "zf")
    assert info.value.block_index == 1
    assert "block 1" in str(info.value)


def test_sliding_equalize_size_mismatch():
    from uwa_eq.channel import FreqChannelMatrix

    plan = make_sliding_plan(8, 4)
    with pytest.raises(ValueError, match="does not match plan"):
        sliding_equalize(np.ones(8), FreqChannelMatrix(np.eye(4)), plan, "zf")


def test_methods_registry():
    assert set(METHODS) == {"zf", "mmse", "dfe", "ml"}
    assert CONDITION_LIMIT > 1e6
