"""Grid posterior over the baseline discount of a series."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import betaln, logsumexp
from sklearn.base import BaseEstimator

from ._validation import check_counts, check_scales
from .core import GammaState
from .gbdm import filter_batch

BETA_PRIOR = (19.0, 1.0, 0.9, 0.999)


def beta_truncated_log_prior(d, a=19.0, b=1.0, lo=0.9, hi=0.999):
    """Log ``Beta(a, b)`` density on ``[lo, hi]``, ``-inf`` outside.

    The truncation constant is omitted; it cancels on normalisation over
    a grid.
    """
    if not 0 < lo < hi < 1:
        raise ValueError("need 0 < lo < hi < 1")
    d = np.asarray(d, dtype=float)
    inside = (d >= lo) & (d <= hi)
    with np.errstate(divide="ignore"):
        val = (a - 1.0) * np.log(d) + (b - 1.0) * np.log1p(-d) - betaln(a, b)
    out = np.where(inside, val, -np.inf)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DiscountGrid:
    values: tuple
    log_prior: tuple

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("grid must be a non-empty 1-d sequence")
        if np.any(np.diff(vals) <= 0):
            raise ValueError("grid values must be strictly ascending")
        if np.any((vals <= 0) | (vals >= 1)):
            raise ValueError("grid values must lie in (0, 1)")
        lp = np.asarray(self.log_prior, dtype=float)
        if lp.shape != vals.shape:
            raise ValueError("one prior weight per grid value")
        if np.any(np.isnan(lp)) or np.any(lp == np.inf) or not np.any(np.isfinite(lp)):
            raise ValueError("prior weights must be finite for at least one value")
        object.__setattr__(self, "values", tuple(vals.tolist()))
        object.__setattr__(self, "log_prior", tuple(lp.tolist()))

    @classmethod
    def default(cls, lo=0.90, hi=0.999, n=10, prior=BETA_PRIOR):
        return cls.from_values(np.linspace(lo, hi, n), prior)

    @classmethod
    def from_values(cls, values, prior=BETA_PRIOR):
        """Grid with a truncated-beta prior, or flat prior when ``prior`` is None."""
        values = np.asarray(values, dtype=float)
        if prior is None:
            lp = np.zeros_like(values)
        else:
            lp = beta_truncated_log_prior(values, *prior)
        return cls(tuple(values), tuple(np.atleast_1d(lp)))


@dataclass(frozen=True)
class DiscountPosterior:
    values: np.ndarray
    log_mml: np.ndarray
    log_prior: np.ndarray
    probs: np.ndarray

    @property
    def mode_index(self) -> int:
        return int(np.argmax(self.probs))

    @property
    def mode(self) -> float:
        return float(self.values[self.mode_index])

    @property
    def mean(self) -> float:
        return float(np.dot(self.probs, self.values))


def posterior_from_log_mml(values, log_mml, log_prior) -> DiscountPosterior:
    values = np.asarray(values, float)
    log_mml = np.asarray(log_mml, float)
    log_prior = np.asarray(log_prior, float)
    lp = log_mml + log_prior
    probs = np.exp(lp - logsumexp(lp, axis=-1, keepdims=True))
    probs /= probs.sum(axis=-1, keepdims=True)
    return DiscountPosterior(values, log_mml, log_prior, probs)


def select_discount(
    x: Sequence[int],
    m: Optional[Sequence[float]] = None,
    init: GammaState = GammaState(1.0, 1.0),
    grid: Optional[DiscountGrid] = None,
    k: float = 1.0,
) -> DiscountPosterior:
    """Posterior over ``grid`` from unmonitored filter runs at each value."""
    grid = grid or DiscountGrid.default()
    x = check_counts(x)
    m = np.ones(x.shape[0]) if m is None else check_scales(m, x.shape[0])
    values = np.asarray(grid.values)
    out = filter_batch(x[:, None], m[:, None], init.r, init.c, values, k)
    log_mml = out["log_pred"].sum(axis=0)
    return posterior_from_log_mml(values, log_mml, grid.log_prior)


def select_discount_many(x, m, r0, c0, grid: Optional[DiscountGrid] = None, k: float = 1.0):
    """Grid posteriors for many series at once.

    ``x`` and ``m`` have shape ``(T, S)``; ``r0`` and ``c0`` broadcast to
    ``(S,)``.  Returns a :class:`DiscountPosterior` whose arrays carry a
    leading series axis.
    """
    grid = grid or DiscountGrid.default()
    values = np.asarray(grid.values)
    x = np.asarray(x, float)
    m = np.broadcast_to(np.asarray(m, float), x.shape)
    r0 = np.asarray(r0, float)[..., None]
    c0 = np.asarray(c0, float)[..., None]
    out = filter_batch(x[..., None], m[..., None], r0, c0, values, k)
    log_mml = out["log_pred"].sum(axis=0)
    return posterior_from_log_mml(values, log_mml, np.broadcast_to(grid.log_prior, log_mml.shape))


class DiscountSelector(BaseEstimator):
    """Pick the baseline discount of a series by grid marginal likelihood.

    Parameters
    ----------
    grid : sequence of float or None
        Candidate discounts; ``None`` uses 10 points on [0.90, 0.999].
    prior : tuple (a, b, lo, hi) or None
        Truncated beta prior; ``None`` is flat over the grid.
    k : float
    prior_shape, prior_rate : float
        Initial gamma state of every grid run.
    """

    def __init__(self, grid=None, prior=BETA_PRIOR, k=1.0, prior_shape=1.0, prior_rate=1.0):
        self.grid = grid
        self.prior = prior
        self.k = k
        self.prior_shape = prior_shape
        self.prior_rate = prior_rate

    def fit(self, X, m=None):
        values = np.linspace(0.90, 0.999, 10) if self.grid is None else self.grid
        grid = DiscountGrid.from_values(values, self.prior)
        self.posterior_ = select_discount(
            X, m, GammaState(self.prior_shape, self.prior_rate), grid, self.k
        )
        self.discount_ = self.posterior_.mode
        return self


def averaged_filtered_mean(x, m, init: GammaState, posterior: DiscountPosterior, k=1.0):
    """Grid-averaged on-line posterior mean of the rate, weighted by ``probs``."""
    x = check_counts(x)
    m = np.ones(x.shape[0]) if m is None else check_scales(m, x.shape[0])
    out = filter_batch(x[:, None], m[:, None], init.r, init.c, posterior.values, k)
    return (out["r"] / out["c"]) @ posterior.probs

