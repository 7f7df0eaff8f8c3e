"""Decoupled dynamic flow models over a whole network.

Every internal node ``j`` gets an inflow filter on ``x[0, j]`` with unit
scale, and every origin ``i >= 1`` gets one transition filter per
destination ``j = 0..I`` on ``x[i, j]``, scaled by the occupancy ratio
``m_it = n_{i,t-1} / n_{i,t-2}``.  Sampled transition rates are
recoupled into multinomial probabilities by normalising over ``j``.

Series are keyed by ``(origin, destination)``: ``(0, j)`` are inflows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import FlowFrame, GammaState, NetworkSpec, derive_occupancies
from .exceptions import AllZeroRates, IncompleteHistory, InconsistentZeroScale, TickMismatch
from .gbdm import DiscountSchedule, SeriesFilter, _as_generator, iter_backward

RATE_FLOOR = 1e-300
WARMUP_FLOOR = 0.5


def series_keys(node_count: int) -> list[tuple[int, int]]:
    """Inflow series first, then transitions in row-major order."""
    keys = [(0, j) for j in range(1, node_count + 1)]
    keys += [(i, j) for i in range(1, node_count + 1) for j in range(node_count + 1)]
    return keys


def scale_factor(n_prev, n_prev2) -> float:
    """Occupancy correction ``n_prev / n_prev2``; 1 when ``n_prev2`` is 0."""
    if n_prev < 0 or n_prev2 < 0:
        raise ValueError("occupancies must be non-negative")
    if n_prev2 == 0:
        return 1.0
    return float(n_prev) / float(n_prev2)


def origin_scales(n_prev, n_prev2, size: int) -> np.ndarray:
    """Scale factors for every origin given the last two occupancy vectors.

    Unknown history gives 1; an origin empty at ``t-1`` gets 0 so that
    only a zero count is consistent with it.
    """
    m = np.ones(size)
    if n_prev is None:
        return m
    for i in range(1, size):
        if n_prev[i] == 0:
            m[i] = 0.0
        elif n_prev2 is not None:
            m[i] = scale_factor(n_prev[i], n_prev2[i])
    return m


def scale_matrix(frames: Sequence[FlowFrame], occupancy_history: Sequence = ()) -> np.ndarray:
    """Scale factors ``(T, I+1)`` that :class:`NetworkModel` would use."""
    hist = [None, None] + [np.asarray(n, dtype=np.int64) for n in occupancy_history][-2:]
    hist += [f.n for f in frames]
    offset = len(hist) - len(frames)
    size = frames[0].x.shape[0] if frames else 0
    return np.array(
        [origin_scales(hist[offset + t - 1], hist[offset + t - 2], size) for t in range(len(frames))]
    ).reshape(len(frames), size)


def recouple_theta(phi) -> np.ndarray:
    """Normalise rate draws over the last axis into transition probabilities."""
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0) or np.any(~np.isfinite(phi)):
        raise ValueError("rates must be finite and non-negative")
    if np.any(np.all(phi == 0, axis=-1)):
        raise AllZeroRates("every rate for an origin underflowed to zero")
    phi = np.maximum(phi, RATE_FLOOR)
    return phi / phi.sum(axis=-1, keepdims=True)


def warmup_priors(frames: Sequence[FlowFrame], floor: float = WARMUP_FLOOR) -> np.ndarray:
    """Prior shapes from the mean count of each cell over a warm-up window.

    With unit prior rates ``c0 = 1`` the shape equals the point estimate.
    Cells are floored at ``floor`` so every prior is proper.
    """
    if len(frames) == 0:
        return None
    mean = np.mean([f.x for f in frames], axis=0)
    return np.maximum(mean, floor)


@dataclass
class StepSummary:
    t: int
    log_pred: np.ndarray
    scale: np.ndarray
    events: list


class NetworkModel:
    """Mutable collection of per-series filters advanced tick by tick.

    Parameters
    ----------
    spec : NetworkSpec
    discounts : array (I+1, I+1) or float
        Baseline discount per series; entry ``[0, 0]`` is ignored.
    k : float
        Decay constant shared by all schedules.
    prior_shapes : array (I+1, I+1) or float
        Initial gamma shapes ``r0``; prior rates are ``c0 = prior_rate``.
    monitor : MonitorConfig, optional
    occupancy_history : sequence of occupancy vectors, optional
        Up to two most recent end-of-tick occupancies preceding tick 1
        (oldest first).
    """

    def __init__(
        self,
        spec: NetworkSpec,
        discounts=0.95,
        k: float = 1.0,
        prior_shapes=1.0,
        prior_rate: float = 1.0,
        monitor=None,
        occupancy_history: Sequence = (),
        fixed_discount: bool = False,
    ):
        self.spec = spec
        size = spec.size
        self.discounts = np.broadcast_to(np.asarray(discounts, float), (size, size)).copy()
        self.prior_shapes = np.broadcast_to(np.asarray(prior_shapes, float), (size, size)).copy()
        self.k = k
        self.prior_rate = prior_rate
        self.monitor = monitor
        self.fixed_discount = fixed_discount
        self.filters = {}
        for key in series_keys(spec.node_count):
            d = float(self.discounts[key])
            sched = DiscountSchedule.fixed(d) if fixed_discount else DiscountSchedule(d, k)
            init = GammaState(self.prior_shapes[key], prior_rate)
            self.filters[key] = SeriesFilter(init, sched, monitor)
        hist = [np.asarray(n, dtype=np.int64) for n in occupancy_history][-2:]
        self.n_prev = hist[-1] if hist else None
        self.n_prev2 = hist[-2] if len(hist) == 2 else None
        self.t = 0

    @property
    def node_count(self) -> int:
        return self.spec.node_count

    def scale_factors(self) -> np.ndarray:
        """Per-origin transition scales for the next tick (index 0 unused)."""
        return origin_scales(self.n_prev, self.n_prev2, self.spec.size)

    def step(self, frame: FlowFrame) -> StepSummary:
        if frame.t != self.t + 1:
            raise TickMismatch(self.t + 1, frame.t)
        if frame.node_count != self.node_count:
            raise ValueError("frame size does not match the network")
        if frame.n is None:
            if self.n_prev is None:
                raise ValueError(f"frame t={frame.t} has no occupancies and none are known")
            frame = derive_occupancies([frame], self.n_prev)[0]
        x = frame.x
        m = self.scale_factors()
        log_pred = np.full((self.spec.size, self.spec.size), np.nan)
        events = []
        for (i, j), filt in self.filters.items():
            mij = 1.0 if i == 0 else m[i]
            n_before = len(filt.events)
            try:
                rec = filt.step(int(x[i, j]), mij)
            except InconsistentZeroScale as exc:
                raise InconsistentZeroScale(
                    f"{x[i, j]} (series {i}->{j}, origin empty at t-1)", frame.t
                ) from exc
            log_pred[i, j] = rec.log_pred
            events.extend(((i, j), ev) for ev in filt.events[n_before:])
        self.n_prev2, self.n_prev = self.n_prev, np.asarray(frame.n, dtype=np.int64)
        self.t = frame.t
        return StepSummary(frame.t, log_pred, m, events)

    def history_arrays(self):
        """Stack filtered ``r``, ``c`` and ``delta`` as ``(S, T)`` arrays."""
        if self.t == 0:
            raise IncompleteHistory("no ticks processed yet")
        cols = {"r": [], "c": [], "delta": []}
        for filt in self.filters.values():
            arr = filt.history.arrays()
            for key in cols:
                cols[key].append(arr[key])
        return {key: np.vstack(val) for key, val in cols.items()}

    def log_mml(self) -> np.ndarray:
        out = np.full((self.spec.size, self.spec.size), np.nan)
        for key, filt in self.filters.items():
            out[key] = filt.history.log_mml
        return out

    def events(self):
        return [(key, ev) for key, filt in self.filters.items() for ev in filt.events]


def _split_series(flat, node_count):
    """Split ``(..., S)`` series values into inflow and transition blocks."""
    I = node_count
    inflow = flat[..., :I]
    trans = flat[..., I:].reshape(flat.shape[:-1] + (I, I + 1))
    return inflow, trans


def forecast_one_step(model: NetworkModel, n_draws: int, rng=None) -> np.ndarray:
    """Simulate complete flow matrices for the next tick.

    Returns an int array ``(n_draws, I+1, I+1)``: row 0 holds Poisson
    inflows, rows ``1..I`` multinomial transitions with
    ``n_{t}[i]`` trials drawn from recoupled sampled rates.
    """
    if model.t < 1 or model.n_prev is None:
        raise IncompleteHistory("forecasting needs at least one processed tick")
    rng = _as_generator(rng)
    I = model.node_count
    priors = [f.next_prior() for f in model.filters.values()]
    r = np.array([p.r for p in priors])
    c = np.array([p.c for p in priors])
    phi = rng.standard_gamma(np.broadcast_to(r, (n_draws, r.size))) / c
    inflow_phi, trans_phi = _split_series(phi, I)
    out = np.zeros((n_draws, I + 1, I + 1), dtype=np.int64)
    out[:, 0, 1:] = rng.poisson(inflow_phi)
    theta = recouple_theta(trans_phi)
    trials = np.broadcast_to(model.n_prev[1:], (n_draws, I))
    out[:, 1:, :] = rng.multinomial(trials, theta)
    return out


@dataclass
class NetworkPosteriorSample:
    """Retrospective draws aligned by draw index across all series.

    ``inflow`` has shape ``(D, T, I)``; ``phi`` and ``theta`` have shape
    ``(D, T, I, I+1)`` with ``phi[..., i-1, j]`` the rate for ``i -> j``.
    """

    inflow: np.ndarray
    phi: np.ndarray
    theta: np.ndarray


def iter_smoothed_ticks(model: NetworkModel, n_draws: int, rng=None) -> Iterator:
    """Yield ``(t, inflow_t, phi_t)`` backwards from ``T`` to 1.

    Streams one tick at a time so memory stays at ``n_draws * S``.
    """
    rng = _as_generator(rng)
    arr = model.history_arrays()
    for t_idx, phi in iter_backward(arr["r"], arr["c"], arr["delta"], n_draws, rng):
        inflow, trans = _split_series(phi, model.node_count)
        yield t_idx + 1, inflow, trans


def smooth_network(model: NetworkModel, n_draws: int, rng=None) -> NetworkPosteriorSample:
    """Backward-sample every series and recouple transition probabilities."""
    I, T = model.node_count, model.t
    inflow = np.empty((n_draws, T, I))
    phi = np.empty((n_draws, T, I, I + 1))
    for t, inf_t, phi_t in iter_smoothed_ticks(model, n_draws, rng):
        inflow[:, t - 1] = inf_t
        phi[:, t - 1] = phi_t
    return NetworkPosteriorSample(inflow, phi, recouple_theta(phi))


def _as_frames(X, n0=None, start: int = 1) -> list[FlowFrame]:
    if len(X) and isinstance(X[0], FlowFrame):
        frames = list(X)
    else:
        arr = np.asarray(X)
        if arr.ndim != 3:
            raise ValueError("expected FlowFrames or a (T, I+1, I+1) count array")
        frames = [FlowFrame(start + t, arr[t]) for t in range(arr.shape[0])]
    if frames and frames[0].n is None:
        if n0 is None:
            raise ValueError("occupancies missing: pass n0 to derive them")
        frames = derive_occupancies(frames, n0)
    return frames


class DynamicFlowModel(BaseEstimator):
    """Estimator interface to the decoupled network flow model.

    Parameters
    ----------
    inflow_discount, transition_discount : float or array
        Baseline discounts; arrays are shaped ``(I,)`` and ``(I, I+1)``.
    k : float
    prior_shapes : array (I+1, I+1), float or None
        Initial shapes; ``None`` uses 1.0 everywhere.
    prior_rate : float
    monitor : MonitorConfig or None
    labels : sequence of str, optional
    """

    def __init__(
        self,
        inflow_discount=0.95,
        transition_discount=0.95,
        k=1.0,
        prior_shapes=None,
        prior_rate=1.0,
        monitor=None,
        labels=None,
    ):
        self.inflow_discount = inflow_discount
        self.transition_discount = transition_discount
        self.k = k
        self.prior_shapes = prior_shapes
        self.prior_rate = prior_rate
        self.monitor = monitor
        self.labels = labels

    def _build(self, node_count, occupancy_history=()):
        size = node_count + 1
        disc = np.full((size, size), np.nan)
        disc[0, 1:] = np.broadcast_to(self.inflow_discount, (node_count,))
        disc[1:, :] = np.broadcast_to(self.transition_discount, (node_count, size))
        shapes = 1.0 if self.prior_shapes is None else self.prior_shapes
        spec = NetworkSpec(node_count, tuple(self.labels or ()))
        return NetworkModel(
            spec, disc, self.k, shapes, self.prior_rate, self.monitor, occupancy_history
        )

    def fit(self, X, n0=None):
        """Filter a full sequence of frames from scratch."""
        frames = _as_frames(X, n0)
        history = () if n0 is None else (n0,)
        self.model_ = self._build(frames[0].node_count, history)
        return self.partial_fit(frames)

    def partial_fit(self, X, n0=None):
        """Continue filtering with further frames (streaming use)."""
        last = getattr(self, "model_", None)
        n_known = n0 if last is None or last.n_prev is None else last.n_prev
        frames = _as_frames(X, n_known, 1 if last is None else last.t + 1)
        if last is None:
            history = () if n0 is None else (n0,)
            self.model_ = self._build(frames[0].node_count, history)
        for frame in frames:
            self.model_.step(frame)
        return self

    @property
    def log_mml_(self):
        check_is_fitted(self, "model_")
        return self.model_.log_mml()

    def filtered_mean(self) -> np.ndarray:
        """On-line posterior means ``(T, I+1, I+1)``; ``[:, 0, 0]`` is nan."""
        check_is_fitted(self, "model_")
        m = self.model_
        out = np.full((m.t, m.spec.size, m.spec.size), np.nan)
        for key, filt in m.filters.items():
            arr = filt.history.arrays()
            out[:, key[0], key[1]] = arr["r"] / arr["c"]
        return out

    def forecast(self, n_draws=1000, random_state=None):
        check_is_fitted(self, "model_")
        return forecast_one_step(self.model_, n_draws, random_state)

    def sample_posterior(self, n_draws=1000, random_state=None) -> NetworkPosteriorSample:
        check_is_fitted(self, "model_")
        return smooth_network(self.model_, n_draws, random_state)
