"""Gamma-beta discount model for a single conditionally Poisson series.

Model: ``x_t | phi_t ~ Poisson(m_t * phi_t)`` with the multiplicative
random walk ``phi_t = phi_{t-1} * eta_t / delta_t``,
``eta_t ~ Beta(delta_t r_{t-1}, (1 - delta_t) r_{t-1})``.  Filtering is
fully conjugate: a ``Ga(r, c)`` posterior evolves to the prior
``Ga(delta r, delta c)`` and updates to ``Ga(delta r + x, delta c + m)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_counts, check_scales
from .core import FilterRecord, GammaState, TrajectorySample
from .exceptions import IncompleteHistory, InconsistentZeroScale


@dataclass(frozen=True)
class DiscountSchedule:
    """Adaptive discount ``delta_t = d + (1 - d) exp(-k r_{t-1})``.

    Low-information states (small shape ``r``) are discounted less, so a
    run of zero counts does not collapse the posterior.  ``k = inf``
    gives the fixed discount ``delta_t = d``; ``d = 1`` switches
    discounting off.
    """

    d: float = 0.95
    k: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.d <= 1.0:
            raise ValueError(f"baseline discount must lie in (0, 1], got {self.d}")
        if not self.k > 0:
            raise ValueError(f"decay constant must be positive, got {self.k}")

    @classmethod
    def fixed(cls, delta: float) -> "DiscountSchedule":
        return cls(d=delta, k=math.inf)

    def __call__(self, r_prev: float) -> float:
        return effective_discount(self, r_prev)


def effective_discount(sched: DiscountSchedule, r_prev: float) -> float:
    if not r_prev > 0:
        raise ValueError("previous shape must be positive")
    if sched.d == 1.0 or math.isinf(sched.k):
        return sched.d
    return sched.d + (1.0 - sched.d) * math.exp(-sched.k * r_prev)


def evolve(state: GammaState, delta: float) -> GammaState:
    """Time-``t`` prior from the time-``t-1`` posterior."""
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"discount must lie in (0, 1], got {delta}")
    return GammaState(delta * state.r, delta * state.c)


def update(prior: GammaState, x: int, m: float = 1.0) -> GammaState:
    if m == 0:
        if x != 0:
            raise InconsistentZeroScale(x)
        return prior
    return GammaState(prior.r + x, prior.c + m)


def log_predictive(prior: GammaState, x: int, m: float = 1.0) -> float:
    """Log one-step predictive probability of count ``x``.

    The predictive is negative binomial::

        p(x) = G(r + x) / (G(r) G(x + 1)) * m^x c^r / (c + m)^(r + x)

    for prior ``Ga(r, c)`` (already discounted).  Evaluated entirely in
    log space.
    """
    if m == 0:
        if x != 0:
            raise InconsistentZeroScale(x)
        return 0.0
    r, c = prior.r, prior.c
    out = math.lgamma(r + x) - math.lgamma(r) - math.lgamma(x + 1.0)
    out -= r * math.log1p(m / c)
    if x:
        out += x * (math.log(m) - math.log(c + m))
    return out


def log_predictive_array(r, c, x, m):
    """Vectorised :func:`log_predictive`; ``m == 0`` cells give 0."""
    r, c, x, m = np.broadcast_arrays(*(np.asarray(v, float) for v in (r, c, x, m)))
    out = np.zeros(r.shape)
    pos = m > 0
    rp, cp, xp, mp = r[pos], c[pos], x[pos], m[pos]
    val = gammaln(rp + xp) - gammaln(rp) - gammaln(xp + 1.0) - rp * np.log1p(mp / cp)
    val += np.where(xp > 0, xp * (np.log(mp) - np.log(cp + mp)), 0.0)
    out[pos] = val
    return out


@dataclass
class FilterHistory:
    """Time-ordered filtering records for ticks ``1..T``."""

    initial: GammaState
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def log_mml(self) -> float:
        """Log marginal likelihood excluding ticks rejected as outliers."""
        return math.fsum(rec.log_pred for rec in self.records if not rec.rejected)

    @property
    def log_mml_raw(self) -> float:
        return math.fsum(rec.log_pred for rec in self.records)

    @property
    def last(self) -> GammaState:
        return self.records[-1].posterior if self.records else self.initial

    def arrays(self) -> dict:
        """Column view of the records (``r``, ``c``, ``delta``, ...)."""
        recs = self.records
        return {
            "t": np.array([rec.t for rec in recs], dtype=np.int64),
            "x": np.array([rec.x for rec in recs], dtype=np.int64),
            "m": np.array([rec.m for rec in recs], dtype=float),
            "delta": np.array([rec.delta_used for rec in recs], dtype=float),
            "prior_r": np.array([rec.prior.r for rec in recs], dtype=float),
            "prior_c": np.array([rec.prior.c for rec in recs], dtype=float),
            "r": np.array([rec.posterior.r for rec in recs], dtype=float),
            "c": np.array([rec.posterior.c for rec in recs], dtype=float),
            "log_pred": np.array([rec.log_pred for rec in recs], dtype=float),
            "intervened": np.array([rec.intervened for rec in recs], dtype=bool),
            "rejected": np.array([rec.rejected for rec in recs], dtype=bool),
            "log_bf": np.array([rec.log_bf for rec in recs], dtype=float),
            "monitor_L": np.array([rec.monitor_L for rec in recs], dtype=float),
            "monitor_l": np.array([rec.monitor_l for rec in recs], dtype=np.int64),
        }


class SeriesFilter:
    """Streaming forward filter for one count series.

    Owns mutable state; call :meth:`step` once per tick.  When a
    :class:`~bdfm.monitor.MonitorConfig` is given, every tick goes
    through the Bayes-factor monitoring protocol before the update.
    """

    def __init__(self, init: GammaState, schedule: DiscountSchedule, monitor=None):
        self.schedule = schedule
        self.monitor = monitor
        self.history = FilterHistory(initial=init)
        self.monitor_state = None
        self.events = []
        self.pending_alt = False
        if monitor is not None:
            from .monitor import MonitorState

            self.monitor_state = MonitorState(events=self.events)

    @property
    def t(self) -> int:
        return len(self.history.records)

    @property
    def state(self) -> GammaState:
        return self.history.last

    def next_prior(self) -> GammaState:
        """Evolved prior for the next tick (pending interventions applied)."""
        pre = self.state
        if self.pending_alt:
            from .monitor import alternative_discount

            return evolve(pre, alternative_discount(self.monitor, self.schedule, pre.r))
        return evolve(pre, self.schedule(pre.r))

    def step(self, x: int, m: float = 1.0) -> FilterRecord:
        t = self.t + 1
        pre = self.state
        if self.monitor is not None:
            from .monitor import protocol_step

            try:
                outcome = protocol_step(
                    pre, x, m, self.schedule, self.monitor, self.monitor_state,
                    t=t, pending_alt=self.pending_alt,
                )
            except InconsistentZeroScale as exc:
                raise InconsistentZeroScale(x, t) from exc
            self.monitor_state = outcome.state
            self.pending_alt = outcome.pending_alt
            rec = outcome.record
        else:
            delta = self.schedule(pre.r)
            prior = evolve(pre, delta)
            try:
                lp = log_predictive(prior, x, m)
                post = update(prior, x, m)
            except InconsistentZeroScale as exc:
                raise InconsistentZeroScale(x, t) from exc
            rec = FilterRecord(t, prior, post, delta, float(m), int(x), lp)
        self.history.records.append(rec)
        return rec


def filter_series(
    x: Sequence[int],
    m: Optional[Sequence[float]] = None,
    init: GammaState = GammaState(1.0, 1.0),
    sched: DiscountSchedule = DiscountSchedule(),
    monitor=None,
) -> FilterHistory:
    """Run the forward filter over a whole series."""
    x = check_counts(x)
    m = np.ones(x.shape[0]) if m is None else check_scales(m, x.shape[0])
    filt = SeriesFilter(init, sched, monitor)
    for xt, mt in zip(x.tolist(), m.tolist()):
        filt.step(xt, mt)
    return filt.history


def filter_batch(x, m, r0, c0, d, k=1.0):
    """Vectorised unmonitored filter over broadcast batches.

    ``x`` and ``m`` have time on axis 0; ``r0``, ``c0``, ``d`` and ``k``
    broadcast against the remaining axes.  Returns a dict of arrays with
    keys ``r``, ``c``, ``delta`` and ``log_pred`` (all shaped like ``x``
    after broadcasting) used for fast grid evaluation of marginal
    likelihoods.
    """
    x = np.asarray(x, float)
    m = np.broadcast_to(np.asarray(m, float), x.shape)
    T = x.shape[0]
    batch = np.broadcast_shapes(x.shape[1:], np.shape(r0), np.shape(c0), np.shape(d), np.shape(k))
    r = np.broadcast_to(np.asarray(r0, float), batch).copy()
    c = np.broadcast_to(np.asarray(c0, float), batch).copy()
    d = np.broadcast_to(np.asarray(d, float), batch)
    k = np.broadcast_to(np.asarray(k, float), batch)
    if np.any((m == 0) & (x > 0)):
        raise InconsistentZeroScale(int(x[(m == 0) & (x > 0)][0]))
    out = {key: np.empty((T,) + batch) for key in ("r", "c", "delta", "log_pred")}
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            adapt = np.where(np.isinf(k) | (d == 1.0), 0.0, (1.0 - d) * np.exp(-k * r))
            delta = d + adapt
            pr, pc = delta * r, delta * c
            out["log_pred"][t] = log_predictive_array(pr, pc, x[t], m[t])
            r = pr + x[t]
            c = pc + m[t]
            out["r"][t], out["c"][t], out["delta"][t] = r, c, delta
    return out


def mml(history: FilterHistory) -> float:
    return history.log_mml


def _history_arrays(history: FilterHistory):
    if not history.records:
        raise IncompleteHistory("cannot backward-sample an empty history")
    ts = [rec.t for rec in history.records]
    if ts != list(range(1, len(ts) + 1)):
        raise IncompleteHistory("history ticks are not contiguous from 1")
    arr = history.arrays()
    return arr["r"], arr["c"], arr["delta"]


def backward_sample_arrays(r, c, delta, n_draws, rng):
    """Backward-sample rate paths from filtered shapes/rates.

    ``r``, ``c`` and ``delta`` have time on the last axis; returns draws
    with shape ``(n_draws,) + r.shape``.  ``delta[..., t]`` must be the
    discount actually used when moving into tick ``t``.
    """
    r = np.asarray(r, float)
    c = np.asarray(c, float)
    delta = np.asarray(delta, float)
    out = np.empty((n_draws,) + r.shape)
    for t, phi in iter_backward(r, c, delta, n_draws, rng):
        out[..., t] = phi
    return out


def iter_backward(r, c, delta, n_draws, rng):
    """Yield ``(t_index, phi_t)`` from the last tick back to the first.

    ``phi_t`` has shape ``(n_draws,) + r.shape[:-1]``; indices are
    0-based.  Memory stays proportional to a single tick.
    """
    r = np.asarray(r, float)
    c = np.asarray(c, float)
    delta = np.asarray(delta, float)
    T = r.shape[-1]
    shape = (n_draws,) + r.shape[:-1]
    phi = rng.standard_gamma(np.broadcast_to(r[..., T - 1], shape)) / c[..., T - 1]
    yield T - 1, phi
    for t in range(T - 2, -1, -1):
        dn = delta[..., t + 1]
        eps_shape = np.broadcast_to((1.0 - dn) * r[..., t], shape)
        eps = rng.standard_gamma(eps_shape) / c[..., t]
        phi = dn * phi + eps
        yield t, phi


def backward_sample(history: FilterHistory, rng=None, n_draws: Optional[int] = None):
    """Sample the latent rate path from its full retrospective posterior.

    Draws ``phi_T ~ Ga(r_T, c_T)`` and recurses
    ``phi_t = delta_{t+1} phi_{t+1} + eps_t`` with
    ``eps_t ~ Ga((1 - delta_{t+1}) r_t, c_t)``.  Returns a single
    :class:`TrajectorySample` when ``n_draws`` is ``None``, otherwise an
    array of shape ``(n_draws, T)``.
    """
    rng = _as_generator(rng)
    r, c, delta = _history_arrays(history)
    draws = backward_sample_arrays(r, c, delta, 1 if n_draws is None else n_draws, rng)
    if n_draws is None:
        return TrajectorySample(draws[0])
    return draws


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, np.random.RandomState):
        return np.random.default_rng(rng.randint(0, 2**31 - 1))
    return np.random.default_rng(rng)


class GammaPoissonFilter(BaseEstimator):
    """Estimator wrapper around the discount filter for one series.

    Parameters
    ----------
    discount : float
        Baseline discount ``d``.
    k : float
        Decay constant of the adaptive schedule.
    prior_shape, prior_rate : float
        Initial ``Ga(r0, c0)`` for the latent rate.
    monitor : MonitorConfig or None
        Attach Bayes-factor monitoring and automatic intervention.
    """

    def __init__(self, discount=0.95, k=1.0, prior_shape=1.0, prior_rate=1.0, monitor=None):
        self.discount = discount
        self.k = k
        self.prior_shape = prior_shape
        self.prior_rate = prior_rate
        self.monitor = monitor

    def _make_filter(self):
        sched = DiscountSchedule(self.discount, self.k)
        return SeriesFilter(GammaState(self.prior_shape, self.prior_rate), sched, self.monitor)

    def fit(self, X, m=None):
        self.filter_ = self._make_filter()
        return self.partial_fit(X, m)

    def partial_fit(self, X, m=None):
        if not hasattr(self, "filter_"):
            self.filter_ = self._make_filter()
        x = check_counts(X)
        m = np.ones(x.shape[0]) if m is None else check_scales(m, x.shape[0])
        for xt, mt in zip(x.tolist(), m.tolist()):
            self.filter_.step(xt, mt)
        self.history_ = self.filter_.history
        return self

    @property
    def log_mml_(self):
        check_is_fitted(self, "history_")
        return self.history_.log_mml

    @property
    def filtered_mean_(self):
        check_is_fitted(self, "history_")
        arr = self.history_.arrays()
        return arr["r"] / arr["c"]

    @property
    def events_(self):
        check_is_fitted(self, "history_")
        return list(self.filter_.events)

    def forecast(self, m=1.0):
        """Mean and negative-binomial prior of the next count."""
        check_is_fitted(self, "history_")
        prior = self.filter_.next_prior()
        return m * prior.mean, prior

    def sample_trajectories(self, n_draws=1000, random_state=None):
        check_is_fitted(self, "history_")
        return backward_sample(self.history_, _as_generator(random_state), n_draws)
