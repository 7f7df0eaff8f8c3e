"""Map sampled flow rates onto a dynamic gravity model.

Each rate is decomposed on the log scale as
``log phi_ijt = h_t + a_it + b_jt + g_ijt`` (baseline, origin,
destination and affinity effects) for origins ``i = 1..I`` and
destinations ``j = 0..I``.  Identification uses zero-sum constraints
restricted to the node pairs whose observed count exceeds a sparsity
threshold; excluded pairs still receive an affinity, which absorbs
whatever the main effects do not explain.

Two decompositions are available:

``"exact"`` (default)
    least-squares additive fit on the included cells.  Included
    affinities sum to zero along every row and column, and the main
    effects sum to zero when weighted by inclusion counts.
``"ordered"``
    one pass of masked means: ``h`` = mean, ``a`` = row mean - ``h``,
    ``b`` = column mean - ``h``.  Identical to ``"exact"`` on a full
    mask; with a partial mask the affinity sums are not exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_flow_tensor, check_positive_draws
from .core import FlowFrame
from .exceptions import EmptyMask

DEFAULT_SPARSITY = 3


@dataclass(frozen=True, eq=False)
class InclusionMask:
    """Per-tick set of origin/destination pairs used for identification.

    ``included`` has shape ``(T, I, I+1)``: row ``k`` is origin ``k+1``.
    """

    included: np.ndarray
    d_sparse: float = DEFAULT_SPARSITY

    @property
    def row_counts(self) -> np.ndarray:
        return self.included.sum(axis=2)

    @property
    def col_counts(self) -> np.ndarray:
        return self.included.sum(axis=1)

    @property
    def n_ticks(self) -> int:
        return self.included.shape[0]


def _counts_tensor(frames) -> np.ndarray:
    if len(frames) and isinstance(frames[0], FlowFrame):
        return np.stack([f.x for f in frames])
    return check_flow_tensor(frames)


def build_mask(frames, d_sparse: float = DEFAULT_SPARSITY) -> InclusionMask:
    """Include pair ``(i, j)`` at tick ``t`` iff ``x_ijt > d_sparse``.

    The inflow row (origin 0) never takes part in the mapping.
    """
    if d_sparse < 0:
        raise ValueError("sparsity threshold must be non-negative")
    x = _counts_tensor(frames)
    return InclusionMask(x[:, 1:, :] > d_sparse, d_sparse)


@dataclass
class DgmSample:
    """Log-scale gravity-model effects for a batch of draws.

    Shapes: ``h`` ``(..., T)``, ``a`` ``(..., T, I)``, ``b``
    ``(..., T, I+1)``, ``g`` ``(..., T, I, I+1)``.  ``empty_rows`` and
    ``empty_cols`` flag origins/destinations with no included pair at a
    tick (their main effect is set to 0).
    """

    h: np.ndarray
    a: np.ndarray
    b: np.ndarray
    g: np.ndarray
    empty_rows: np.ndarray
    empty_cols: np.ndarray

    @property
    def mu(self):
        return np.exp(self.h)

    @property
    def alpha(self):
        return np.exp(self.a)

    @property
    def beta(self):
        return np.exp(self.b)

    @property
    def gamma(self):
        return np.exp(self.g)

    def log_rates(self) -> np.ndarray:
        return self.h[..., None, None] + self.a[..., :, None] + self.b[..., None, :] + self.g

    def rates(self) -> np.ndarray:
        return self.mu[..., None, None] * self.alpha[..., :, None] * self.beta[..., None, :] * self.gamma


def _design_pinv(mask: np.ndarray) -> np.ndarray:
    I, J = mask.shape
    rows, cols = np.nonzero(mask)
    X = np.zeros((rows.size, I + J))
    X[np.arange(rows.size), rows] = 1.0
    X[np.arange(rows.size), I + cols] = 1.0
    return np.linalg.pinv(X)


def decompose_tick(log_phi, mask, method: str = "exact", t: int | None = None):
    """Gravity decomposition of one tick.

    Parameters
    ----------
    log_phi : array (..., I, I+1)
        Log rates; leading axes are draws.
    mask : bool array (I, I+1)

    Returns
    -------
    h, a, b, g : arrays shaped (...), (..., I), (..., I+1), (..., I, I+1)
    """
    f = np.asarray(log_phi, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    n_rows = mask.sum(axis=1)
    n_cols = mask.sum(axis=0)
    N = int(mask.sum())
    if N == 0:
        raise EmptyMask(t)
    if method == "ordered":
        fm = np.where(mask, f, 0.0)
        h = fm.sum(axis=(-2, -1)) / N
        with np.errstate(invalid="ignore", divide="ignore"):
            a = np.where(n_rows > 0, fm.sum(axis=-1) / n_rows - h[..., None], 0.0)
            b = np.where(n_cols > 0, fm.sum(axis=-2) / n_cols - h[..., None], 0.0)
    elif method == "exact":
        I = mask.shape[0]
        coef = f[..., mask] @ _design_pinv(mask).T
        u, v = coef[..., :I], coef[..., I:]
        u_bar = (u @ n_rows) / N
        v_bar = (v @ n_cols) / N
        h = u_bar + v_bar
        a = np.where(n_rows > 0, u - u_bar[..., None], 0.0)
        b = np.where(n_cols > 0, v - v_bar[..., None], 0.0)
    else:
        raise ValueError(f"unknown decomposition method {method!r}")
    g = f - h[..., None, None] - a[..., :, None] - b[..., None, :]
    return h, a, b, g


def map_to_dgm(phi, mask: InclusionMask, method: str = "exact") -> DgmSample:
    """Decompose rate trajectories ``phi`` of shape ``(..., T, I, I+1)``."""
    phi = check_positive_draws(phi)
    T = phi.shape[-3]
    if mask.included.shape != phi.shape[-3:]:
        raise ValueError(
            f"mask shape {mask.included.shape} does not match rates {phi.shape[-3:]}"
        )
    f = np.log(phi)
    parts = [decompose_tick(f[..., t, :, :], mask.included[t], method, t=t + 1) for t in range(T)]
    h = np.stack([p[0] for p in parts], axis=-1)
    a = np.stack([p[1] for p in parts], axis=-2)
    b = np.stack([p[2] for p in parts], axis=-2)
    g = np.stack([p[3] for p in parts], axis=-3)
    return DgmSample(h, a, b, g, mask.row_counts == 0, mask.col_counts == 0)


def credible_values(gamma_draws) -> np.ndarray:
    """``min(P(gamma <= 1), P(gamma > 1))`` per cell from draws on axis 0."""
    draws = np.asarray(gamma_draws, dtype=float)
    if draws.shape[0] < 2:
        raise ValueError("need at least two draws per cell")
    cdf_at_one = np.mean(draws <= 1.0, axis=0)
    return np.minimum(cdf_at_one, 1.0 - cdf_at_one)


def summarize_draws(draws, axis: int = 0, level: float = 0.95) -> dict:
    """Pointwise mean and central interval over ``axis``."""
    draws = np.asarray(draws, dtype=float)
    if draws.shape[axis] < 2:
        raise ValueError("need at least two draws")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [tail, 1.0 - tail], axis=axis)
    return {"mean": draws.mean(axis=axis), "lo": lo, "hi": hi}


def standardize(means, time_axis: int = 0) -> np.ndarray:
    """Max-min scale each trajectory to [0, 1] across ticks (flat -> 0)."""
    means = np.asarray(means, dtype=float)
    lo = means.min(axis=time_axis, keepdims=True)
    span = means.max(axis=time_axis, keepdims=True) - lo
    return np.divide(means - lo, span, out=np.zeros_like(means), where=span > 0)


def summarize_dgm(sample: DgmSample, standardized: bool = True) -> dict:
    """Per-tick mean and 95% interval for ``mu``, ``alpha``, ``beta``, ``gamma``.

    Draws are on axis 0.  When ``standardized`` each parameter also gets
    ``std_mean``: its posterior mean trajectory scaled to [0, 1].
    """
    out = {}
    for name in ("mu", "alpha", "beta", "gamma"):
        summ = summarize_draws(getattr(sample, name), axis=0)
        if standardized:
            summ["std_mean"] = standardize(summ["mean"], time_axis=0)
        out[name] = summ
    return out


class GravityEmulator(BaseEstimator):
    """Fit the inclusion mask on observed counts, transform rate draws.

    Parameters
    ----------
    d_sparse : float
        Pairs with counts ``<= d_sparse`` are left out of the
        identification sums.
    method : {"exact", "ordered"}
    """

    def __init__(self, d_sparse=DEFAULT_SPARSITY, method="exact"):
        self.d_sparse = d_sparse
        self.method = method

    def fit(self, X: Sequence, y=None):
        self.mask_ = build_mask(X, self.d_sparse)
        return self

    def transform(self, phi) -> DgmSample:
        check_is_fitted(self, "mask_")
        return map_to_dgm(phi, self.mask_, self.method)

    def credible_values(self, phi) -> np.ndarray:
        return credible_values(self.transform(phi).gamma)
