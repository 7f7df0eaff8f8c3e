import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdfm.core import GammaState
from bdfm.gbdm import DiscountSchedule, evolve, filter_series, log_predictive
from bdfm.monitor import (
    Decision,
    MonitorConfig,
    MonitorState,
    alternative_discount,
    protocol_step,
    single_bayes_factor,
    update_monitor,
)


@pytest.mark.parametrize(
    "kwargs", [dict(tau=0), dict(tau=1), dict(run_length=0), dict(alt_discount=1.0), dict(k=-1)]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        MonitorConfig(**kwargs)


def test_bayes_factor_examples():
    pre = GammaState(50, 5)
    assert single_bayes_factor(pre, 10, 1, 0.9, 0.9) == 1.0
    assert single_bayes_factor(pre, 10, 1, 0.95, 0.5) > 1.0
    assert single_bayes_factor(pre, 100, 1, 0.95, 0.5) < 1.0


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 200), st.floats(0.1, 20), st.floats(0.1, 5), st.floats(0.2, 0.99), st.floats(0.05, 0.95))
def test_same_mean_more_diffuse(r, c, m, d_std, ratio):
    d_alt = d_std * ratio
    p0, p1 = evolve(GammaState(r, c), d_std), evolve(GammaState(r, c), d_alt)
    assert m * p0.mean == pytest.approx(m * p1.mean, rel=1e-12)
    var = lambda p: m * p.mean + m**2 * p.var  # noqa: E731  negative-binomial variance
    assert var(p1) > var(p0)


@pytest.mark.parametrize(
    "L, l, H, expected",
    [(1.2, 3, 0.8, (0.8, 1)), (0.5, 2, 0.4, (0.2, 3)), (1.0, 5, 2.0, (2.0, 1))],
)
def test_update_monitor_branches(L, l, H, expected):
    out = update_monitor(MonitorState(L, l), H)
    assert out.L == pytest.approx(expected[0]) and out.l == expected[1]


def test_update_monitor_rejects_nonpositive():
    with pytest.raises(ValueError):
        update_monitor(MonitorState(), 0.0)


def test_alternative_discount_formula():
    cfg = MonitorConfig(alt_discount=0.1)
    sched = DiscountSchedule(0.95, 1.0)
    assert alternative_discount(cfg, sched, 2.0) == pytest.approx(0.1 + 0.9 * math.exp(-2.0))


def _informative_state():
    return GammaState(200.0, 10.0)


def test_outlier_is_rejected_without_update():
    pre = _informative_state()
    sched = DiscountSchedule(0.95)
    cfg = MonitorConfig()
    state = MonitorState(0.7, 2)
    out = protocol_step(pre, 200, 1.0, sched, cfg, state, t=10)
    assert out.decision is Decision.REJECT_OUTLIER
    assert out.record.rejected
    assert out.record.posterior == out.record.prior
    assert out.pending_alt
    assert (out.state.L, out.state.l) == (0.7, 2)
    assert [e.kind for e in state.events] == ["outlier", "intervention"]


def test_rejected_outlier_applies_reduced_discount_next_tick():
    pre = _informative_state()
    sched = DiscountSchedule(0.95)
    cfg = MonitorConfig()
    state = MonitorState()
    first = protocol_step(pre, 200, 1.0, sched, cfg, state, t=10)
    second = protocol_step(first.record.posterior, 20, 1.0, sched, cfg, first.state, t=11,
                           pending_alt=first.pending_alt)
    expected = alternative_discount(cfg, sched, first.record.posterior.r)
    assert second.record.delta_used == pytest.approx(expected)
    assert second.record.intervened


def test_run_length_signal_triggers_adapt_change():
    pre = _informative_state()
    sched = DiscountSchedule(0.95)
    cfg = MonitorConfig(run_length=4)
    x = 30  # mildly unusual: 0.1 < H < 1
    assert 0.1 < single_bayes_factor(pre, x, 1.0, sched(pre.r), alternative_discount(cfg, sched, pre.r)) < 1
    state = MonitorState(0.9, 3)
    out = protocol_step(pre, x, 1.0, sched, cfg, state, t=20)
    assert out.decision is Decision.ADAPT_CHANGE
    assert (out.state.L, out.state.l) == (1.0, 1)
    assert out.record.monitor_l == 4
    delta_alt = alternative_discount(cfg, sched, pre.r)
    prior = evolve(pre, delta_alt)
    assert out.record.prior == prior
    assert out.record.posterior == GammaState(prior.r + x, prior.c + 1.0)
    assert out.record.log_pred == pytest.approx(log_predictive(prior, x, 1.0))
    kinds = [e.kind for e in out.state.events]
    assert "run-length-signal" in kinds and kinds[-1] == "intervention"


def test_burn_in_and_zero_scale_skip_monitoring():
    pre = _informative_state()
    sched = DiscountSchedule(0.95)
    cfg = MonitorConfig()
    out = protocol_step(pre, 500, 1.0, sched, cfg, MonitorState(), t=2)
    assert out.decision is Decision.ACCEPT
    out = protocol_step(pre, 0, 0.0, sched, cfg, MonitorState(), t=8)
    assert out.decision is Decision.ACCEPT
    assert out.record.posterior == out.record.prior


def test_monitor_disabled_equals_plain_filter(rng):
    x = rng.poisson(15, 60)
    a = filter_series(x, None, GammaState(1, 1), DiscountSchedule(0.95))
    b = filter_series(x, None, GammaState(1, 1), DiscountSchedule(0.95), monitor=None)
    assert a.records == b.records


def test_monitor_no_signal_matches_plain_filter():
    # with an unreachable threshold nothing fires, so the update path is unchanged
    rng = np.random.default_rng(3)
    x = rng.poisson(15, 60)
    cfg = MonitorConfig(tau=1e-300, run_length=10_000)
    a = filter_series(x, None, GammaState(1, 1), DiscountSchedule(0.95)).arrays()
    b = filter_series(x, None, GammaState(1, 1), DiscountSchedule(0.95), monitor=cfg).arrays()
    np.testing.assert_array_equal(a["r"], b["r"])
    np.testing.assert_array_equal(a["c"], b["c"])


def test_state_machine_invariants(rng):
    x = np.r_[rng.poisson(20, 60), rng.poisson(100, 50)]
    x[30] = 200
    hist = filter_series(x, None, GammaState(1, 1), DiscountSchedule(0.95), monitor=MonitorConfig())
    arr = hist.arrays()
    monitored = arr["monitor_l"] > 0
    assert np.all(arr["monitor_L"][monitored] > 0)
    l = arr["monitor_l"][monitored]
    assert np.all(np.diff(l) <= 1)
    assert arr["rejected"][30]
    rej = hist.records[30]
    assert rej.posterior == rej.prior


def test_level_shift_recenters_after_intervention():
    rng = np.random.default_rng(5)
    x = np.r_[rng.poisson(20, 60), rng.poisson(100, 50)]
    hist = filter_series(x, None, GammaState(20, 1), DiscountSchedule(0.95), monitor=MonitorConfig())
    arr = hist.arrays()
    assert arr["intervened"][60:64].any()
    prior_mean = arr["prior_r"] / arr["prior_c"]
    assert abs(prior_mean[75] - 100) < 15
