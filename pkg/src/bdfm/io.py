"""Flow files, run configuration, model snapshots and result exports.

Flow files are line-oriented UTF-8 text with sections introduced by
versioned headers::

    #meta v1
    nodes,3
    labels,A,B,C
    #occupancy v1
    0,1,12
    #flows v1
    1,0,2,5

Flow lines are ``t,origin,dest,count`` (0 is the External node) and
occupancy lines ``t,node,count``; ``t = 0`` gives the initial
occupancy.  Cells that are not listed are zero.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import FilterRecord, FlowFrame, GammaState, NetworkSpec, derive_occupancies
from .exceptions import InvalidSpec, ParseError, UnsupportedVersion
from .gbdm import DiscountSchedule, SeriesFilter
from .monitor import MonitorConfig, MonitorEvent, MonitorState
from .netflow import NetworkModel

FORMAT_VERSION = 1
_HEADER = re.compile(r"^#(\w+)\s+v(\d+)\s*$")
_SECTIONS = ("meta", "flows", "occupancy")


# ---------------------------------------------------------------------------
# flow files


@dataclass
class FlowData:
    """Parsed flow file: dense frames plus network and initial occupancy."""

    frames: list
    network: NetworkSpec
    n0: Optional[np.ndarray] = None


def _ints(parts, lineno, n):
    if len(parts) != n:
        raise ParseError(lineno, f"expected {n} comma-separated fields, got {len(parts)}")
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise ParseError(lineno, "fields must be integers") from None


def _read_sections(lines):
    section = None
    out = {name: [] for name in _SECTIONS}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        head = _HEADER.match(line)
        if head:
            name, version = head.group(1), int(head.group(2))
            if name not in _SECTIONS:
                raise ParseError(lineno, f"unknown section {name!r}")
            if version != FORMAT_VERSION:
                raise UnsupportedVersion(f"line {lineno}: {name} section version {version}")
            section = name
            continue
        if line.startswith("#"):
            continue
        if section is None:
            raise ParseError(lineno, "data before any section header")
        out[section].append((lineno, [p.strip() for p in line.split(",")]))
    return out


def parse_flows(text: str, n0=None, node_count: Optional[int] = None) -> FlowData:
    """Parse flow-file text; see :func:`ingest_flows`."""
    sec = _read_sections(text.splitlines())
    meta = {}
    for lineno, parts in sec["meta"]:
        if len(parts) < 2:
            raise ParseError(lineno, "meta lines are key,value")
        meta[parts[0]] = (lineno, parts[1:])
    flows = [(ln, _ints(p, ln, 4)) for ln, p in sec["flows"]]
    occ = [(ln, _ints(p, ln, 3)) for ln, p in sec["occupancy"]]
    for lineno, (_, i, j, _) in flows:
        if i == 0 and j == 0:
            raise ParseError(lineno, "External -> External is not observable")

    if "nodes" in meta:
        node_count = _ints(meta["nodes"][1], meta["nodes"][0], 1)[0]
    if node_count is None:
        idx = [max(v[1], v[2]) for _, v in flows] + [v[1] for _, v in occ]
        node_count = max(idx, default=0)
        if n0 is not None:
            node_count = max(node_count, len(n0) - 1)
    if node_count < 1:
        raise ParseError(0, "cannot determine the number of nodes")
    labels = tuple(meta["labels"][1]) if "labels" in meta else ()
    try:
        network = NetworkSpec(node_count, labels)
    except ValueError as exc:
        raise ParseError(meta.get("labels", (0,))[0], str(exc)) from None
    size = network.size

    T = max([v[0] for _, v in flows] + [v[0] for _, v in occ], default=0)
    if "ticks" in meta:
        ticks = _ints(meta["ticks"][1], meta["ticks"][0], 1)[0]
        if ticks < T:
            raise ParseError(meta["ticks"][0], f"ticks={ticks} but data reach t={T}")
        T = ticks

    x = np.zeros((T, size, size), dtype=np.int64)
    seen = set()
    for lineno, (t, i, j, count) in flows:
        if not 1 <= t <= T:
            raise ParseError(lineno, f"tick {t} out of range")
        if not (0 <= i < size and 0 <= j < size):
            raise ParseError(lineno, f"node index out of range 0..{size - 1}")
        if count < 0:
            raise ParseError(lineno, "negative count")
        if (t, i, j) in seen:
            raise ParseError(lineno, f"duplicate cell ({t},{i},{j})")
        seen.add((t, i, j))
        x[t - 1, i, j] = count

    n = np.full((T + 1, size), -1, dtype=np.int64)
    for lineno, (t, i, count) in occ:
        if not 0 <= t <= T:
            raise ParseError(lineno, f"tick {t} out of range")
        if not 1 <= i < size:
            raise ParseError(lineno, "occupancy node must be internal")
        if count < 0:
            raise ParseError(lineno, "negative occupancy")
        if n[t, i] != -1:
            raise ParseError(lineno, f"duplicate occupancy ({t},{i})")
        n[t, i] = count
    n[:, 0] = 0

    if n0 is None and np.all(n[0, 1:] >= 0):
        n0 = n[0]
    n0 = None if n0 is None else np.asarray(n0, dtype=np.int64)
    frames = [FlowFrame(t + 1, x[t]) for t in range(T)]
    if T and np.all(n[1:, 1:] >= 0):
        frames = [f.with_occupancy(n[f.t]) for f in frames]
    elif T:
        start = np.zeros(size, dtype=np.int64) if n0 is None else n0
        frames = derive_occupancies(frames, start)
    return FlowData(frames, network, n0)


def ingest_flows(path, n0=None, node_count: Optional[int] = None) -> FlowData:
    """Read a flow file into dense frames with occupancies.

    Occupancies come from the occupancy section when it covers every
    tick; otherwise they are derived from the flows starting at ``n0``
    (the ``t = 0`` occupancy lines, the argument, or zeros).

    Raises
    ------
    ParseError
        On malformed lines, with the 1-based line number.
    UnsupportedVersion
        On section headers with an unknown version.
    NegativeOccupancy
        If derived occupancies go negative.
    """
    return parse_flows(Path(path).read_text(encoding="utf-8"), n0, node_count)


def format_flows(frames: Sequence[FlowFrame], network: Optional[NetworkSpec] = None, n0=None) -> str:
    """Canonical text: meta, then occupancy (if known), then non-zero flows."""
    size = frames[0].x.shape[0] if frames else (network.size if network else 1)
    network = network or NetworkSpec(size - 1)
    lines = ["#meta v1", f"nodes,{network.node_count}", f"ticks,{len(frames)}"]
    lines.append("labels," + ",".join(network.labels))
    if n0 is not None or (frames and frames[0].n is not None):
        lines.append("#occupancy v1")
        if n0 is not None:
            lines += [f"0,{i},{int(n0[i])}" for i in range(1, size)]
        for f in frames:
            if f.n is not None:
                lines += [f"{f.t},{i},{int(f.n[i])}" for i in range(1, size)]
    lines.append("#flows v1")
    for f in frames:
        for i, j in zip(*np.nonzero(f.x)):
            lines.append(f"{f.t},{i},{j},{int(f.x[i, j])}")
    return "\n".join(lines) + "\n"


def export_flows(path, frames, network=None, n0=None) -> Path:
    path = Path(path)
    path.write_text(format_flows(frames, network, n0), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Settings for a full run; defaults follow common practice for this model.

    ``monitor_overrides`` maps ``"origin-dest"`` to a dict of monitor
    fields (``enabled``, ``tau``, ``run_length``, ``alt_discount``,
    ``burn_in``) replacing the global ones for that series.
    """

    input: Optional[str] = None
    out: str = "out"
    seed: int = 0
    draws: int = 5000
    warmup: int = 10
    k: float = 1.0
    discount_default: float = 0.95
    select_discount: bool = True
    grid_lo: float = 0.90
    grid_hi: float = 0.999
    grid_n: int = 10
    grid_prior: str = "beta"
    prior_a: float = 19.0
    prior_b: float = 1.0
    monitor_enabled: bool = True
    tau: float = 0.1
    run_length: int = 4
    alt_discount: float = 0.1
    burn_in: int = 3
    monitor_overrides: dict = field(default_factory=dict)
    d_sparse: float = 3.0
    dgm_method: str = "exact"
    interval: float = 0.95
    sample_draws: int = 5

    def __post_init__(self):
        if int(self.draws) < 1:
            raise InvalidSpec("draws must be >= 1")
        if int(self.warmup) < 0:
            raise InvalidSpec("warmup must be >= 0")
        if not 0 < self.interval < 1:
            raise InvalidSpec("interval level must lie in (0, 1)")
        if self.grid_prior not in ("beta", "flat"):
            raise InvalidSpec("grid prior must be 'beta' or 'flat'")
        if int(self.sample_draws) < 0:
            raise InvalidSpec("sample_draws must be >= 0")
        self.monitor_config()

    def monitor_config(self, key: Optional[tuple] = None) -> Optional[MonitorConfig]:
        opts = dict(
            enabled=self.monitor_enabled, tau=self.tau, run_length=self.run_length,
            alt_discount=self.alt_discount, burn_in=self.burn_in,
        )
        if key is not None:
            opts.update(self.monitor_overrides.get(f"{key[0]}-{key[1]}", {}))
        if not opts.pop("enabled"):
            return None
        return MonitorConfig(
            tau=float(opts["tau"]), run_length=int(opts["run_length"]),
            alt_discount=float(opts["alt_discount"]), burn_in=int(opts["burn_in"]),
        )

    def check_paths(self):
        if self.input is None or not Path(self.input).is_file():
            raise InvalidSpec(f"input file not found: {self.input}")


# dotted config key -> RunConfig field
CONFIG_KEYS = {
    "input": "input",
    "out": "out",
    "seed": "seed",
    "draws": "draws",
    "warmup": "warmup",
    "k": "k",
    "discount.default": "discount_default",
    "discount.select": "select_discount",
    "discount.grid.lo": "grid_lo",
    "discount.grid.hi": "grid_hi",
    "discount.grid.n": "grid_n",
    "discount.prior": "grid_prior",
    "discount.prior.a": "prior_a",
    "discount.prior.b": "prior_b",
    "monitor.enabled": "monitor_enabled",
    "monitor.tau": "tau",
    "monitor.run_length": "run_length",
    "monitor.alt_discount": "alt_discount",
    "monitor.burn_in": "burn_in",
    "dgm.d_sparse": "d_sparse",
    "dgm.method": "dgm_method",
    "export.interval": "interval",
    "export.sample_draws": "sample_draws",
}
_SERIES_KEY = re.compile(r"^monitor\.series\.(\d+)-(\d+)\.(\w+)$")


def _coerce(value: str, target):
    if isinstance(target, bool):
        low = value.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(target, int):
        return int(value)
    if isinstance(target, float):
        return float(value)
    return value


def parse_config(text: str, **overrides) -> RunConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) into a RunConfig."""
    defaults = RunConfig()
    values = {}
    series = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(lineno, "expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        match = _SERIES_KEY.match(key)
        try:
            if match:
                name = match.group(3)
                target = {"enabled": True, "run_length": 1, "burn_in": 1}.get(name, 1.0)
                if name not in ("enabled", "tau", "run_length", "alt_discount", "burn_in"):
                    raise KeyError(key)
                series.setdefault(f"{match.group(1)}-{match.group(2)}", {})[name] = _coerce(value, target)
            elif key in CONFIG_KEYS:
                attr = CONFIG_KEYS[key]
                values[attr] = _coerce(value, getattr(defaults, attr) if attr != "input" else "")
            else:
                raise KeyError(key)
        except KeyError:
            raise ParseError(lineno, f"unknown key {key!r}") from None
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
    values["monitor_overrides"] = series
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def load_config(path=None, **overrides) -> RunConfig:
    text = "" if path is None else Path(path).read_text(encoding="utf-8")
    return parse_config(text, **overrides)


# ---------------------------------------------------------------------------
# snapshots

SNAPSHOT_VERSION = 1
_RECORD_FIELDS = [f.name for f in fields(FilterRecord)]


def _encode_float(v):
    return v if math.isfinite(v) else repr(v)


def _decode_float(v):
    return float(v)


def snapshot_dict(model: NetworkModel) -> dict:
    """Complete JSON-ready state of a network model, including history."""
    filters = []
    for key, filt in model.filters.items():
        recs = []
        for rec in filt.history.records:
            recs.append([
                rec.t, rec.prior.r, rec.prior.c, rec.posterior.r, rec.posterior.c,
                rec.delta_used, rec.m, rec.x, _encode_float(rec.log_pred), rec.intervened,
                rec.rejected, _encode_float(rec.log_bf), _encode_float(rec.monitor_L), rec.monitor_l,
            ])
        state = filt.monitor_state
        filters.append({
            "key": list(key),
            "schedule": [filt.schedule.d, _encode_float(filt.schedule.k)],
            "initial": [filt.history.initial.r, filt.history.initial.c],
            "records": recs,
            "pending_alt": filt.pending_alt,
            "monitor": None if filt.monitor is None else asdict(filt.monitor),
            "monitor_state": None if state is None else [state.L, state.l],
            "events": [[e.t, e.kind, e.log_H, e.log_L, e.run_length] for e in filt.events],
        })
    return {
        "format": "bdfm-snapshot",
        "version": SNAPSHOT_VERSION,
        "nodes": model.spec.node_count,
        "labels": list(model.spec.labels),
        "k": _encode_float(model.k),
        "prior_rate": model.prior_rate,
        "fixed_discount": model.fixed_discount,
        "monitor": None if model.monitor is None else asdict(model.monitor),
        "t": model.t,
        "n_prev": None if model.n_prev is None else model.n_prev.tolist(),
        "n_prev2": None if model.n_prev2 is None else model.n_prev2.tolist(),
        "filters": filters,
    }


def _record(row) -> FilterRecord:
    t, pr, pc, r, c, delta, m, x, lp, iv, rj, lbf, L, l = row
    return FilterRecord(
        int(t), GammaState(pr, pc), GammaState(r, c), float(delta), float(m), int(x),
        _decode_float(lp), bool(iv), bool(rj), _decode_float(lbf), _decode_float(L), int(l),
    )


def model_from_snapshot(data: dict) -> NetworkModel:
    if data.get("format") != "bdfm-snapshot":
        raise ParseError(0, "not a model snapshot")
    if data.get("version") != SNAPSHOT_VERSION:
        raise UnsupportedVersion(f"snapshot version {data.get('version')}")
    spec = NetworkSpec(data["nodes"], tuple(data["labels"]))
    monitor = None if data["monitor"] is None else MonitorConfig(**data["monitor"])
    model = NetworkModel(
        spec, 0.95, _decode_float(data["k"]), 1.0, data["prior_rate"], monitor,
        fixed_discount=data["fixed_discount"],
    )
    for entry in data["filters"]:
        key = tuple(entry["key"])
        d, k = entry["schedule"]
        sched = DiscountSchedule(d, _decode_float(k))
        mon = None if entry["monitor"] is None else MonitorConfig(**entry["monitor"])
        filt = SeriesFilter(GammaState(*entry["initial"]), sched, mon)
        filt.history.records.extend(_record(row) for row in entry["records"])
        filt.pending_alt = bool(entry["pending_alt"])
        filt.events.extend(MonitorEvent(int(t), kind, float(h), float(L), int(l)) for t, kind, h, L, l in entry["events"])
        if entry["monitor_state"] is not None:
            L, l = entry["monitor_state"]
            filt.monitor_state = MonitorState(float(L), int(l), filt.events)
        model.filters[key] = filt
        model.discounts[key] = d
        model.prior_shapes[key] = entry["initial"][0]
    model.t = int(data["t"])
    model.n_prev = None if data["n_prev"] is None else np.asarray(data["n_prev"], dtype=np.int64)
    model.n_prev2 = None if data["n_prev2"] is None else np.asarray(data["n_prev2"], dtype=np.int64)
    return model


def save_snapshot(model: NetworkModel, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(snapshot_dict(model), sort_keys=True), encoding="utf-8")
    return path


def load_snapshot(path) -> NetworkModel:
    return model_from_snapshot(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# versioned CSV exports

EXPORT_VERSION = 1


def _format_column(values) -> list:
    if isinstance(values, np.ndarray):
        if values.dtype == bool:
            return ["1" if v else "0" for v in values.tolist()]
        if np.issubdtype(values.dtype, np.integer):
            return list(map(str, values.tolist()))
        if np.issubdtype(values.dtype, np.floating):
            return list(map(repr, values.astype(float).tolist()))
    return [str(v) for v in values]


def write_table(path, kind: str, columns: dict) -> int:
    """Write ``#bdfm-<kind> v1``, a CSV header and the given columns.

    ``columns`` maps header names to equal-length arrays or lists.
    Floats are written with ``repr`` so values round-trip exactly.
    Returns the number of data rows.
    """
    cols = [_format_column(v) for v in columns.values()]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("columns must have equal length")
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"#bdfm-{kind} v{EXPORT_VERSION}\n")
        fh.write(",".join(columns) + "\n")
        for line in map(",".join, zip(*cols)):
            fh.write(line + "\n")
    return n


def read_table(path, kind: Optional[str] = None):
    """Read an export written by :func:`write_table`.

    Returns ``(kind, header, rows)`` with rows as lists of strings.

    Raises
    ------
    UnsupportedVersion
        If the file's version tag is not one this reader understands.
    """
    with Path(path).open(encoding="utf-8", newline="") as fh:
        first = fh.readline().strip()
        match = re.match(r"^#bdfm-([\w-]+) v(\d+)$", first)
        if not match:
            raise ParseError(1, "missing export version header")
        if int(match.group(2)) != EXPORT_VERSION:
            raise UnsupportedVersion(f"{match.group(1)} export version {match.group(2)}")
        if kind is not None and match.group(1) != kind:
            raise ParseError(1, f"expected a {kind} export, found {match.group(1)}")
        reader = csv.reader(fh)
        header = next(reader)
        return match.group(1), header, list(reader)
