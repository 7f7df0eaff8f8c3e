"""Sequential Bayes-factor monitoring with automatic discount intervention.

The standard model at each tick is compared with a synthetic alternative
that differs only in a lower discount factor.  Both one-step predictives
share the same mean; the alternative is more diffuse.  Evidence is
tracked through the single-tick Bayes factor ``H_t``, the local
cumulative Bayes factor ``L_t`` and its run length ``l_t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

from .core import FilterRecord, GammaState
from .gbdm import DiscountSchedule, evolve, log_predictive, update


@dataclass(frozen=True)
class MonitorConfig:
    """Thresholds for the monitoring protocol.

    ``k`` of ``None`` shares the decay constant of the series' discount
    schedule.  Ticks ``1..burn_in`` are filtered without monitoring.
    """

    tau: float = 0.1
    run_length: int = 4
    alt_discount: float = 0.1
    k: float | None = None
    burn_in: int = 3

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if int(self.run_length) < 1:
            raise ValueError("run-length threshold must be >= 1")
        if not 0 < self.alt_discount < 1:
            raise ValueError("alternative discount must lie in (0, 1)")
        if self.k is not None and not self.k > 0:
            raise ValueError("k must be positive")
        if int(self.burn_in) < 0:
            raise ValueError("burn_in must be >= 0")


class Decision(str, Enum):
    ACCEPT = "accept"
    REJECT_OUTLIER = "reject-outlier"
    ADAPT_CHANGE = "adapt-change"


@dataclass(frozen=True)
class MonitorEvent:
    t: int
    kind: str  # outlier | change-signal | run-length-signal | intervention
    log_H: float
    log_L: float
    run_length: int


@dataclass
class MonitorState:
    """Local cumulative Bayes factor ``L``, run length ``l`` and event log."""

    L: float = 1.0
    l: int = 1
    events: list = field(default_factory=list)

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("L must be positive")
        if self.l < 1:
            raise ValueError("run length must be >= 1")

    def reset(self) -> "MonitorState":
        return replace(self, L=1.0, l=1)


@dataclass(frozen=True)
class ProtocolOutcome:
    decision: Decision
    record: FilterRecord
    state: MonitorState
    pending_alt: bool


def alternative_discount(config: MonitorConfig, sched: DiscountSchedule, r_prev: float) -> float:
    k = sched.k if config.k is None else config.k
    d = config.alt_discount
    if math.isinf(k):
        return d
    return d + (1.0 - d) * math.exp(-k * r_prev)


def log_bayes_factor(pre: GammaState, x: int, m: float, delta_std: float, delta_alt: float) -> float:
    """``log H_t`` for the standard discount against the alternative."""
    if delta_alt > delta_std:
        raise ValueError("alternative discount must not exceed the standard one")
    p0 = log_predictive(evolve(pre, delta_std), x, m)
    if delta_alt == delta_std:
        return 0.0
    p1 = log_predictive(evolve(pre, delta_alt), x, m)
    return p0 - p1


def single_bayes_factor(pre: GammaState, x: int, m: float, delta_std: float, delta_alt: float) -> float:
    """Bayes factor ``H_t = p0(x_t) / p1(x_t)``.

    Both predictives come from the same pre-discount state ``pre``
    (the time ``t-1`` posterior) evolved under the two discounts.
    """
    return math.exp(log_bayes_factor(pre, x, m, delta_std, delta_alt))


def update_monitor(state: MonitorState, H: float) -> MonitorState:
    """Advance ``(L, l)``: restart at ``(H, 1)`` when ``L >= 1``, else accumulate."""
    if not H > 0:
        raise ValueError("Bayes factor must be positive")
    if state.L >= 1.0:
        return replace(state, L=H, l=1)
    return replace(state, L=H * state.L, l=state.l + 1)


def protocol_step(
    pre: GammaState,
    x: int,
    m: float,
    sched: DiscountSchedule,
    config: MonitorConfig,
    state: MonitorState,
    t: int,
    pending_alt: bool = False,
) -> ProtocolOutcome:
    """Filter one tick under monitoring.

    * ``H_t <= tau``: reject ``x_t`` as a potential outlier.  The state
      only evolves by discounting, and the reduced discount is applied
      when moving into the next tick.  ``(L, l)`` are left untouched.
    * otherwise update ``(L, l)``; if ``L_t <= tau`` or ``l_t >= r`` the
      tick's prior is re-derived with the reduced discount, updated with
      ``x_t`` and the monitor is reset to ``(1, 1)``.
    * otherwise a routine conjugate update.
    """
    delta_std = sched(pre.r)
    delta_alt = min(alternative_discount(config, sched, pre.r), delta_std)
    delta = delta_alt if pending_alt else delta_std
    intervened = pending_alt
    log_H = log_bayes_factor(pre, x, m, delta_std, delta_alt)

    def routine(decision, st, delta_used, intervened, pending=False, rejected=False, shown=None):
        prior = evolve(pre, delta_used)
        post = prior if rejected else update(prior, x, m)
        shown = shown or st
        rec = FilterRecord(
            t, prior, post, delta_used, float(m), int(x), log_predictive(prior, x, m),
            intervened=intervened, rejected=rejected, log_bf=log_H,
            monitor_L=shown.L, monitor_l=shown.l,
        )
        return ProtocolOutcome(decision, rec, st, pending)

    # zero-scale ticks carry no information about the rate
    if t <= config.burn_in or m == 0:
        return routine(Decision.ACCEPT, state, delta, intervened)

    if log_H <= math.log(config.tau):
        state.events.append(MonitorEvent(t, "outlier", log_H, math.log(state.L), state.l))
        state.events.append(MonitorEvent(t, "intervention", log_H, math.log(state.L), state.l))
        return routine(Decision.REJECT_OUTLIER, state, delta, intervened, pending=True, rejected=True)

    new = update_monitor(state, math.exp(log_H))
    change = new.L <= config.tau
    long_run = new.l >= config.run_length
    if change or long_run:
        log_L = math.log(new.L)
        if change:
            new.events.append(MonitorEvent(t, "change-signal", log_H, log_L, new.l))
        if long_run:
            new.events.append(MonitorEvent(t, "run-length-signal", log_H, log_L, new.l))
        new.events.append(MonitorEvent(t, "intervention", log_H, log_L, new.l))
        return routine(Decision.ADAPT_CHANGE, new.reset(), delta_alt, True, shown=new)
    return routine(Decision.ACCEPT, new, delta, intervened)
