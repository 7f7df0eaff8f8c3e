import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bdfm.core import FlowFrame
from bdfm.dgm import (
    GravityEmulator,
    InclusionMask,
    build_mask,
    credible_values,
    decompose_tick,
    map_to_dgm,
    standardize,
    summarize_dgm,
    summarize_draws,
)
from bdfm.exceptions import EmptyMask

HAND_F = np.array([[0.0, 1.0, 3.0], [3.0, 4.0, 5.0]])


@pytest.mark.parametrize("method", ["exact", "ordered"])
def test_hand_example(method):
    h, a, b, g = decompose_tick(HAND_F, np.ones((2, 3), bool), method)
    assert h == pytest.approx(8 / 3, abs=1e-12)
    np.testing.assert_allclose(a, [-4 / 3, 4 / 3], atol=1e-12)
    np.testing.assert_allclose(b, [-7 / 6, -1 / 6, 4 / 3], atol=1e-12)
    np.testing.assert_allclose(g, [[-1 / 6, -1 / 6, 1 / 3], [1 / 6, 1 / 6, -1 / 3]], atol=1e-12)


def test_constant_rates():
    phi = np.full((1, 3, 4), np.e**2)
    mask = InclusionMask(np.ones((1, 3, 4), bool))
    out = map_to_dgm(phi, mask)
    assert out.h[0] == pytest.approx(2.0)
    np.testing.assert_allclose(out.a, 0, atol=1e-12)
    np.testing.assert_allclose(out.b, 0, atol=1e-12)
    np.testing.assert_allclose(out.g, 0, atol=1e-12)
    np.testing.assert_allclose(out.gamma, 1, atol=1e-12)


def test_additive_rates_no_affinity(rng):
    u, v = rng.normal(size=3), rng.normal(size=4)
    f = u[:, None] + v[None, :]
    _, _, _, g = decompose_tick(f, np.ones((3, 4), bool))
    np.testing.assert_allclose(g, 0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 0.9))
def test_partial_mask_constraints(seed, density):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(7, 4, 5))  # draws, I, I+1
    mask = rng.random((4, 5)) < density
    if not mask.any():
        mask[0, 0] = True
    h, a, b, g = decompose_tick(f, mask)
    nr, nc = mask.sum(1), mask.sum(0)
    np.testing.assert_allclose(h[:, None, None] + a[:, :, None] + b[:, None, :] + g, f, atol=1e-12)
    np.testing.assert_allclose((a * nr).sum(-1), 0, atol=1e-10)
    np.testing.assert_allclose((b * nc).sum(-1), 0, atol=1e-10)
    gm = np.where(mask, g, 0.0)
    np.testing.assert_allclose(gm.sum(-1), 0, atol=1e-10)
    np.testing.assert_allclose(gm.sum(-2), 0, atol=1e-10)
    assert np.all(a[:, nr == 0] == 0) and np.all(b[:, nc == 0] == 0)


def test_ordered_method_matches_masked_means(rng):
    f = rng.normal(size=(3, 4))
    mask = rng.random((3, 4)) < 0.7
    mask[0, 0] = True
    h, a, b, _ = decompose_tick(f, mask, "ordered")
    assert h == pytest.approx(f[mask].mean())
    for i in range(3):
        if mask[i].any():
            assert a[i] == pytest.approx(f[i, mask[i]].mean() - h)


def test_empty_mask_raises():
    with pytest.raises(EmptyMask):
        decompose_tick(np.zeros((2, 3)), np.zeros((2, 3), bool), t=4)


def test_unknown_method():
    with pytest.raises(ValueError):
        decompose_tick(np.zeros((2, 3)), np.ones((2, 3), bool), "bogus")


def test_mapping_idempotent(rng):
    phi = rng.gamma(3, 2, size=(5, 6, 3, 4))
    mask = InclusionMask(rng.random((6, 3, 4)) < 0.8)
    mask.included[:, 0, 0] = True
    once = map_to_dgm(phi, mask)
    twice = map_to_dgm(once.rates(), mask)
    for name in ("h", "a", "b", "g"):
        np.testing.assert_allclose(getattr(once, name), getattr(twice, name), atol=1e-12)


def test_build_mask_threshold():
    x = np.zeros((2, 3, 3), int)
    x[0, 1, 0] = 4
    x[0, 1, 1] = 3
    x[0, 0, 1] = 100  # inflow row is ignored
    mask = build_mask(x, 3)
    assert mask.included.shape == (2, 2, 3)
    assert mask.included[0, 0, 0] and not mask.included[0, 0, 1]
    assert mask.row_counts[0, 0] == 1 and mask.col_counts[0, 0] == 1


def test_build_mask_matches_elementwise_oracle(rng):
    x = rng.integers(0, 8, size=(5, 4, 4))
    x[:, 0, 0] = 0
    frames = [FlowFrame(t + 1, x[t]) for t in range(5)]
    mask = build_mask(frames, 3)
    for t in range(5):
        for i in range(1, 4):
            for j in range(4):
                assert mask.included[t, i - 1, j] == (x[t, i, j] > 3)
    full = build_mask(np.ones((2, 3, 3), int), 0)
    assert full.included.all()


def test_credible_value_examples(rng):
    assert credible_values(np.array([1.5, 2.0, 3.0])) == 0.0
    assert credible_values(np.array([0.5, 1.5, 0.8, 1.2])) == 0.5
    draws = rng.lognormal(0.2, 0.5, 1000)
    expected = min(stats.lognorm(0.5, scale=np.exp(0.2)).cdf(1), 1 - stats.lognorm(0.5, scale=np.exp(0.2)).cdf(1))
    assert abs(credible_values(draws) - expected) < 0.02
    with pytest.raises(ValueError):
        credible_values(np.array([1.0]))


def test_summaries(rng):
    same = np.full((10, 4), 3.0)
    s = summarize_draws(same)
    np.testing.assert_array_equal(s["lo"], s["hi"])
    exp = rng.exponential(size=10_000)
    s = summarize_draws(exp[:, None])
    assert abs(s["lo"][0] - stats.expon.ppf(0.025)) < 0.03
    assert abs(s["hi"][0] - stats.expon.ppf(0.975)) < 0.03
    z = standardize(np.array([[2.0, 5.0], [4.0, 5.0], [3.0, 5.0]]))
    np.testing.assert_allclose(z[:, 0], [0, 1, 0.5])
    np.testing.assert_allclose(z[:, 1], 0)


def test_summarize_dgm_and_emulator(rng):
    x = rng.integers(0, 20, size=(4, 3, 3))
    x[:, 0, 0] = 0
    phi = rng.gamma(5, 1, size=(50, 4, 2, 3))
    em = GravityEmulator().fit(x)
    sample = em.transform(phi)
    summ = summarize_dgm(sample)
    assert summ["gamma"]["mean"].shape == (4, 2, 3)
    assert summ["mu"]["std_mean"].min() == 0.0
    p = em.credible_values(phi)
    assert p.shape == (4, 2, 3) and np.all((p >= 0) & (p <= 0.5))
