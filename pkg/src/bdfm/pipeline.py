"""End-to-end run: ingest, warm-up priors, discount selection, filtering,
streamed backward sampling, recoupling, gravity mapping and export.

Backward samples are consumed one tick at a time.  The per-tick draws
feed every summary directly and only the first few draws are retained,
so memory stays proportional to ``draws * series`` whatever ``T`` is.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from .core import FlowFrame, GammaState
from .dgm import build_mask, decompose_tick, standardize
from .discount_select import DiscountGrid, select_discount_many
from .exceptions import FlowModelError, StageError
from .gbdm import DiscountSchedule, SeriesFilter, iter_backward
from .io import FlowData, RunConfig, ingest_flows, write_table
from .netflow import (
    RATE_FLOOR,
    NetworkModel,
    _split_series,
    recouple_theta,
    scale_matrix,
    series_keys,
    warmup_priors,
)

STAGES = ("select", "filter", "smooth", "emulate", "export")


@contextmanager
def _stage(name):
    try:
        yield
    except (FlowModelError, ValueError, OSError, FloatingPointError) as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(name, exc) from exc


@dataclass
class PipelineResult:
    """Everything a run produces.

    Tick-indexed arrays cover the filtered window only; ``tick_offset``
    converts their 0-based index to the input tick (``t + tick_offset + 1``).
    Interval summaries are dicts with ``mean``, ``lo`` and ``hi``.
    """

    config: RunConfig
    data: FlowData
    tick_offset: int
    prior_shapes: np.ndarray
    discounts: np.ndarray
    discount_grid: Optional[np.ndarray] = None
    discount_probs: dict = field(default_factory=dict)
    discount_log_mml: dict = field(default_factory=dict)
    model: Optional[NetworkModel] = None
    smoothed: dict = field(default_factory=dict)
    theta: dict = field(default_factory=dict)
    dgm: dict = field(default_factory=dict)
    mask: Optional[np.ndarray] = None
    credible: Optional[np.ndarray] = None
    samples: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)


def _occupancy_history(data: FlowData, warmup: int):
    ns = ([] if data.n0 is None else [data.n0]) + [f.n for f in data.frames[:warmup]]
    return ns[-2:]


def _window(frames, start):
    return [FlowFrame(k + 1, f.x, f.n) for k, f in enumerate(frames[start:])]


def _series_matrix(frames, occupancy_history, I):
    """Counts and scales as ``(T, S)`` arrays in series-key order."""
    keys = series_keys(I)
    x = np.stack([f.x for f in frames]).astype(float)
    scales = scale_matrix(frames, occupancy_history)
    counts = np.stack([x[:, i, j] for i, j in keys], axis=1)
    m = np.stack([np.ones(len(frames)) if i == 0 else scales[:, i] for i, _ in keys], axis=1)
    return counts, m


def build_model(config: RunConfig, I, discounts, prior_shapes, occupancy_history, labels=()):
    from .core import NetworkSpec

    spec = NetworkSpec(I, labels)
    model = NetworkModel(
        spec, discounts, config.k, prior_shapes, 1.0, config.monitor_config(),
        occupancy_history,
    )
    for key in series_keys(I):
        if f"{key[0]}-{key[1]}" in config.monitor_overrides:
            sched = DiscountSchedule(float(discounts[key]), config.k)
            init = GammaState(float(prior_shapes[key]), 1.0)
            model.filters[key] = SeriesFilter(init, sched, config.monitor_config(key))
    return model


def _interval(draws, level):
    """Mean and central interval over axis 0 of a ``(D, n)`` array.

    Matches ``np.quantile`` with linear interpolation, but sorts each
    column once on a contiguous copy, which is much faster than a
    multi-point partition for thousands of columns.
    """
    D = draws.shape[0]
    ordered = np.sort(np.ascontiguousarray(draws.T), axis=1)
    tail = (1.0 - level) / 2.0
    bounds = []
    for q in (tail, 1.0 - tail):
        pos = q * (D - 1)
        lo = int(np.floor(pos))
        hi = min(lo + 1, D - 1)
        frac = pos - lo
        bounds.append(ordered[:, lo] + frac * (ordered[:, hi] - ordered[:, lo]))
    return draws.mean(axis=0), bounds[0], bounds[1]


def run_pipeline(config: RunConfig, stages=STAGES, data: Optional[FlowData] = None) -> PipelineResult:
    """Run the requested stages and return the collected results.

    ``data`` bypasses reading ``config.input``.  ``"emulate"`` implies
    ``"smooth"``.  Errors are re-raised as :class:`StageError` naming
    the failing stage.
    """
    stages = set(stages)
    unknown = stages - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages {sorted(unknown)}")
    if "emulate" in stages:
        stages.add("smooth")

    with _stage("ingest"):
        if data is None:
            config.check_paths()
            data = ingest_flows(config.input)
        if len(data.frames) <= config.warmup:
            raise ValueError(f"{len(data.frames)} ticks leave nothing after a warm-up of {config.warmup}")
    I = data.network.node_count
    size = I + 1

    with _stage("warmup"):
        W = int(config.warmup)
        shapes = warmup_priors(data.frames[:W]) if W else np.ones((size, size))
        history = _occupancy_history(data, W)
        frames = _window(data.frames, W)
    discounts = np.full((size, size), float(config.discount_default))
    result = PipelineResult(config, data, W, shapes, discounts)

    keys = series_keys(I)
    if "select" in stages:
        with _stage("select"):
            prior = None if config.grid_prior == "flat" else (
                config.prior_a, config.prior_b, config.grid_lo, config.grid_hi)
            grid = DiscountGrid.default(config.grid_lo, config.grid_hi, config.grid_n, prior)
            counts, m = _series_matrix(frames, history, I)
            r0 = np.array([shapes[key] for key in keys])
            post = select_discount_many(counts, m, r0, 1.0, grid, config.k)
            result.discount_grid = post.values
            for s, key in enumerate(keys):
                discounts[key] = post.values[np.argmax(post.probs[s])]
                result.discount_probs[key] = post.probs[s]
                result.discount_log_mml[key] = post.log_mml[s]

    with _stage("filter"):
        model = build_model(config, I, discounts, shapes, history, data.network.labels)
        for frame in frames:
            model.step(frame)
        result.model = model

    if "smooth" in stages:
        with _stage("smooth"):
            _smooth_and_emulate(result, frames, "emulate" in stages)

    if "export" in stages:
        with _stage("export"):
            result.files = export_results(result, config.out)
    return result


def _smooth_and_emulate(result: PipelineResult, frames, emulate: bool):
    config, model = result.config, result.model
    I, T, D = model.node_count, model.t, int(config.draws)
    K = min(int(config.sample_draws), D)
    level = config.interval
    S = len(model.filters)
    rng = np.random.default_rng(config.seed)

    smoothed = {key: np.empty((T, S)) for key in ("mean", "lo", "hi")}
    theta = {key: np.empty((T, I, I + 1)) for key in ("mean", "lo", "hi")}
    samples = {"phi": np.empty((K, T, I, I + 1))}
    if emulate:
        mask = build_mask(frames, config.d_sparse).included
        shapes = {"mu": (T,), "alpha": (T, I), "beta": (T, I + 1), "gamma": (T, I, I + 1)}
        dgm = {name: {key: np.empty(shp) for key in ("mean", "lo", "hi")} for name, shp in shapes.items()}
        credible = np.empty((T, I, I + 1))
        for name, shp in (("h", (T,)), ("a", (T, I)), ("b", (T, I + 1)), ("g", (T, I, I + 1))):
            samples[name] = np.empty((K,) + shp)

    arr = model.history_arrays()
    for t, phi in iter_backward(arr["r"], arr["c"], arr["delta"], D, rng):
        _, trans = _split_series(phi, I)
        th = recouple_theta(trans)
        blocks = {"phi": phi, "theta": th}
        if emulate:
            log_phi = np.log(np.maximum(trans, RATE_FLOOR))
            h, a, b, g = decompose_tick(log_phi, mask[t], config.dgm_method, t=t + 1)
            for name, part in (("mu", h), ("alpha", a), ("beta", b), ("gamma", g)):
                blocks[name] = np.exp(part)
            below = np.mean(g <= 0.0, axis=0)
            credible[t] = np.minimum(below, 1.0 - below)
            for name, part in (("h", h), ("a", a), ("b", b), ("g", g)):
                samples[name][:, t] = part[:K]
        samples["phi"][:, t] = trans[:K]
        # one sort per tick covers every summarised quantity
        flat = [blk.reshape(D, -1) for blk in blocks.values()]
        mean, lo, hi = _interval(np.concatenate(flat, axis=1), level)
        start = 0
        for name, blk in zip(blocks, flat):
            stop = start + blk.shape[1]
            target = {"phi": smoothed, "theta": theta}.get(name) or dgm[name]
            shape = target["mean"].shape[1:]
            for key, val in (("mean", mean), ("lo", lo), ("hi", hi)):
                target[key][t] = val[start:stop].reshape(shape)
            start = stop

    result.smoothed = smoothed
    result.theta = theta
    result.samples = samples
    if emulate:
        for summ in dgm.values():
            summ["std_mean"] = standardize(summ["mean"], time_axis=0)
        result.dgm = dgm
        result.mask = mask
        result.credible = credible


# ---------------------------------------------------------------------------
# export


def _grid(*sizes):
    """Row-major index columns for a table over the given axis sizes."""
    return [g.ravel() for g in np.meshgrid(*[np.arange(n) for n in sizes], indexing="ij")]


def _filtered_columns(result: PipelineResult) -> dict:
    tail = (1.0 - result.config.interval) / 2.0
    keys = list(result.model.filters)
    arrs = [filt.history.arrays() for filt in result.model.filters.values()]
    T = arrs[0]["t"].size
    # rows are ordered by tick, then series
    stack = {name: np.stack([a[name] for a in arrs], axis=1).ravel() for name in arrs[0]}
    r, c = stack["r"], stack["c"]
    origin = np.tile([k[0] for k in keys], T)
    dest = np.tile([k[1] for k in keys], T)
    return {
        "t": stack["t"] + result.tick_offset, "origin": origin, "dest": dest,
        "x": stack["x"], "m": stack["m"], "delta": stack["delta"], "r": r, "c": c,
        "mean": r / c,
        "lo": stats.gamma.ppf(tail, r, scale=1.0 / c),
        "hi": stats.gamma.isf(tail, r, scale=1.0 / c),
        "log_pred": stack["log_pred"],
        "intervened": stack["intervened"], "rejected": stack["rejected"],
    }


def _cell_columns(summary, off, keys) -> dict:
    T = summary["mean"].shape[0]
    t, s = _grid(T, len(keys))
    keys = np.asarray(keys)
    out = {"t": t + 1 + off, "origin": keys[s, 0], "dest": keys[s, 1]}
    for name in ("mean", "lo", "hi"):
        out[name] = summary[name].reshape(T, -1).ravel()
    return out


def _dgm_columns(dgm, off) -> dict:
    parts = []
    for name, summ in dgm.items():
        T = summ["mean"].shape[0]
        shape = summ["mean"].shape[1:]
        idx = _grid(T, *shape)
        n = idx[0].size
        i = (idx[1] + 1).astype(str) if name in ("alpha", "gamma") else np.full(n, "")
        j = idx[-1].astype(str) if name in ("beta", "gamma") else np.full(n, "")
        cols = {"t": idx[0] + 1 + off, "param": np.full(n, name), "i": i, "j": j}
        for key in ("mean", "lo", "hi", "std_mean"):
            cols[key] = summ[key].ravel()
        parts.append(cols)
    return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}


def _sample_columns(samples, off, I) -> dict:
    phi = samples["phi"]
    K, T = phi.shape[:2]
    k, t, i, j = _grid(K, T, I, I + 1)
    out = {"draw": k, "t": t + 1 + off, "origin": i + 1, "dest": j, "phi": phi.ravel()}
    if "g" in samples:
        out["h"] = samples["h"][k, t]
        out["a"] = samples["a"][k, t, i]
        out["b"] = samples["b"][k, t, j]
        out["g"] = samples["g"].ravel()
    else:
        for name in ("h", "a", "b", "g"):
            out[name] = [""] * k.size
    return out


def monitor_columns(events, offset: int = 0) -> dict:
    """Monitor event log as export columns; one row per event."""
    return {
        "t": np.array([ev.t + offset for _, ev in events], dtype=np.int64),
        "origin": np.array([key[0] for key, _ in events], dtype=np.int64),
        "dest": np.array([key[1] for key, _ in events], dtype=np.int64),
        "kind": [ev.kind for _, ev in events],
        "log_H": np.array([ev.log_H for _, ev in events], dtype=float),
        "log_L": np.array([ev.log_L for _, ev in events], dtype=float),
        "run_length": np.array([ev.run_length for _, ev in events], dtype=np.int64),
    }


def export_results(result: PipelineResult, out_dir) -> dict:
    """Write CSV summaries and ``manifest.json``; return ``{name: rows}``.

    Every CSV starts with a ``#bdfm-<kind> v1`` line.  Nothing written
    depends on wall-clock time or the output location, so identical runs
    give byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    off = result.tick_offset
    model = result.model
    I = model.node_count
    trans_keys = [(i, j) for i in range(1, I + 1) for j in range(I + 1)]
    tables = {"filtered": _filtered_columns(result)}

    tables["monitor"] = monitor_columns(model.events(), off)
    if result.discount_grid is not None:
        keys = np.asarray(list(result.discount_probs))
        grid = result.discount_grid
        s, g = _grid(len(keys), grid.size)
        chosen = np.array([result.discounts[tuple(k)] for k in keys])
        tables["discount"] = {
            "origin": keys[s, 0], "dest": keys[s, 1], "d": grid[g],
            "log_mml": np.stack(list(result.discount_log_mml.values())).ravel(),
            "prob": np.stack(list(result.discount_probs.values())).ravel(),
            "selected": grid[g] == chosen[s],
        }
    if result.smoothed:
        tables["smoothed"] = _cell_columns(result.smoothed, off, series_keys(I))
        tables["theta"] = _cell_columns(result.theta, off, trans_keys)
    if result.dgm:
        tables["dgm"] = _dgm_columns(result.dgm, off)
        cols = _cell_columns({"mean": result.credible, "lo": result.credible, "hi": result.credible}, off, trans_keys)
        tables["credible"] = {
            "t": cols["t"], "origin": cols["origin"], "dest": cols["dest"],
            "included": result.mask.ravel(), "p": result.credible.ravel(),
        }
    if result.samples and result.samples["phi"].shape[0]:
        tables["samples"] = _sample_columns(result.samples, off, I)

    files = {name: write_table(out / f"{name}.csv", name, cols) for name, cols in tables.items()}
    config = asdict(result.config)
    config.pop("out")
    manifest = {
        "format": "bdfm-results",
        "version": 1,
        "nodes": I,
        "labels": list(model.spec.labels),
        "ticks": [off + 1, off + model.t],
        "draws": int(result.config.draws),
        "seed": int(result.config.seed),
        "config": config,
        "files": {name: {"path": f"{name}.csv", "rows": rows} for name, rows in files.items()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return files
