"""Shared domain types and the network indexing convention.

Node 0 is always the reserved ``External`` node; internal nodes are
indexed ``1..I``.  A flow matrix ``x`` has shape ``(I+1, I+1)`` with
``x[i, j]`` the count of moves from ``i`` to ``j`` during one tick, and
``x[0, 0]`` is unobserved and fixed at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import NegativeOccupancy

EXTERNAL = 0


@dataclass(frozen=True)
class NetworkSpec:
    """Size and labelling of a network with ``I`` internal nodes."""

    node_count: int
    labels: tuple = ()

    def __post_init__(self):
        if int(self.node_count) < 1:
            raise ValueError("a network needs at least one internal node")
        object.__setattr__(self, "node_count", int(self.node_count))
        labels = tuple(self.labels) or tuple(
            f"node{i}" for i in range(1, self.node_count + 1)
        )
        if len(labels) != self.node_count:
            raise ValueError(
                f"expected {self.node_count} labels, got {len(labels)}"
            )
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        """Matrix dimension ``I + 1`` including the External node."""
        return self.node_count + 1

    def label(self, index: int) -> str:
        return "External" if index == EXTERNAL else self.labels[index - 1]


def _frozen_array(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FlowFrame:
    """One tick of network flows.

    ``n`` is the occupancy vector at the end of tick ``t`` (length
    ``I+1``; entry 0 is ignored) or ``None`` when not yet derived.
    """

    t: int
    x: np.ndarray
    n: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.x)
        if x.ndim != 2 or x.shape[0] != x.shape[1]:
            raise ValueError("flow matrix must be square")
        if np.any(x < 0):
            raise ValueError(f"negative flow count at t={self.t}")
        if x[0, 0] != 0:
            raise ValueError("x[0, 0] (External -> External) must be 0")
        object.__setattr__(self, "x", _frozen_array(x, np.int64))
        if self.n is not None:
            n = np.asarray(self.n)
            if n.shape != (x.shape[0],):
                raise ValueError("occupancy vector must have length I+1")
            if np.any(n[1:] < 0):
                raise ValueError(f"negative occupancy at t={self.t}")
            object.__setattr__(self, "n", _frozen_array(n, np.int64))

    @property
    def node_count(self) -> int:
        return self.x.shape[0] - 1

    def with_occupancy(self, n) -> "FlowFrame":
        return FlowFrame(self.t, self.x, n)

    def __eq__(self, other):
        if not isinstance(other, FlowFrame):
            return NotImplemented
        if self.t != other.t or not np.array_equal(self.x, other.x):
            return False
        if self.n is None or other.n is None:
            return self.n is None and other.n is None
        return np.array_equal(self.n[1:], other.n[1:])

    __hash__ = None


@dataclass(frozen=True)
class GammaState:
    """Gamma distribution ``Ga(r, c)`` with shape ``r`` and rate ``c``."""

    r: float
    c: float

    def __post_init__(self):
        r, c = float(self.r), float(self.c)
        if not (r > 0 and c > 0 and math.isfinite(r) and math.isfinite(c)):
            raise ValueError(f"invalid gamma state (r={r}, c={c})")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "c", c)

    @property
    def mean(self) -> float:
        return self.r / self.c

    @property
    def var(self) -> float:
        return self.r / self.c**2


@dataclass(frozen=True)
class FilterRecord:
    """Archive of one filtering tick.

    ``prior`` is the evolved (post-discount) state used for the update and
    ``log_pred`` the log predictive density of ``x`` under it.  The
    monitoring fields are ``nan``/``0`` when no monitor is attached.
    """

    t: int
    prior: GammaState
    posterior: GammaState
    delta_used: float
    m: float
    x: int
    log_pred: float
    intervened: bool = False
    rejected: bool = False
    log_bf: float = math.nan
    monitor_L: float = math.nan
    monitor_l: int = 0


@dataclass(frozen=True, eq=False)
class TrajectorySample:
    """One sampled path of a latent process over ticks ``1..T``."""

    values: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, float))

    def __len__(self):
        return self.values.shape[0]


def derive_occupancies(
    frames: Sequence[FlowFrame], n0: Sequence[int]
) -> list[FlowFrame]:
    """Fill in end-of-tick occupancies from flows.

    Applies ``n_t[i] = n_{t-1}[i] + sum_j x[j, i] - sum_j x[i, j]`` for
    every internal node, starting from ``n0``.

    Raises
    ------
    NegativeOccupancy
        If the recursion drives any node below zero.
    """
    n = np.array(n0, dtype=np.int64).copy()
    out = []
    for frame in frames:
        x = frame.x
        if n.shape != (x.shape[0],):
            raise ValueError("initial occupancy must have length I+1")
        n = n + x.sum(axis=0) - x.sum(axis=1)
        n[0] = 0
        bad = np.flatnonzero(n[1:] < 0)
        if bad.size:
            raise NegativeOccupancy(int(bad[0]) + 1, frame.t)
        out.append(frame.with_occupancy(n))
    return out


def check_dense_ticks(frames: Sequence[FlowFrame], start: int = 1) -> None:
    """Ticks must run ``start, start+1, ...`` without gaps."""
    for k, frame in enumerate(frames):
        if frame.t != start + k:
            raise ValueError(
                f"ticks must be dense from {start}: position {k} has t={frame.t}"
            )
