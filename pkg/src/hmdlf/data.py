"""Multimodal traffic series: CSV ingestion, windowing and a synthetic generator.

CSV format: a header row with ``timestamp`` (ISO-8601) and one column per
modality (``flow``, ``speed``, ``journey_time``). Lines starting with ``#``
are comments. A schema mapping renames source headers onto these names.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .tensor import Rng

MODALITIES = ("flow", "speed", "journey_time")
TIME_FORMAT = "%Y-%m-%dT%H:%M:%S"


class DataError(ValueError):
    """Raised for unreadable, inconsistent or insufficient data."""


@dataclass(frozen=True)
class ModalitySeries:
    name: str
    timestamps: np.ndarray
    values: np.ndarray


@dataclass
class MultimodalDataset:
    """Equally spaced, gap-free series sharing one time axis (flow first)."""

    timestamps: np.ndarray  # datetime64[s]
    series: dict[str, np.ndarray]
    interval_minutes: int = 15

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        self.series = {k: np.asarray(v, dtype=np.float64) for k, v in self.series.items()}
        n = len(self.timestamps)
        for name, values in self.series.items():
            if values.shape != (n,):
                raise DataError(f"modality {name!r} has {values.shape[0]} values for {n} timestamps")
        if n > 1:
            steps = np.diff(self.timestamps).astype(np.int64)
            if np.any(steps != self.interval_minutes * 60):
                raise DataError("timestamps are not equally spaced at the stated interval")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def modalities(self) -> list[str]:
        return list(self.series)

    def modality(self, name: str) -> ModalitySeries:
        if name not in self.series:
            raise DataError(f"dataset has no modality {name!r} (available: {', '.join(self.series)})")
        return ModalitySeries(name, self.timestamps, self.series[name])

    def select(self, names) -> "MultimodalDataset":
        return MultimodalDataset(self.timestamps, {n: self.modality(n).values for n in names},
                                 self.interval_minutes)

    def slice(self, start: int, stop: int) -> "MultimodalDataset":
        return MultimodalDataset(self.timestamps[start:stop], {k: v[start:stop] for k, v in self.series.items()},
                                 self.interval_minutes)

    def index_range(self, start: str | None = None, end: str | None = None) -> tuple[int, int]:
        """Half-open index range of records with ``start <= t < end``."""
        lo = 0 if start is None else int(np.searchsorted(self.timestamps, np.datetime64(start, "s"), "left"))
        hi = len(self) if end is None else int(np.searchsorted(self.timestamps, np.datetime64(end, "s"), "left"))
        return lo, hi


def _parse_time(text: str, lineno: int) -> np.datetime64:
    try:
        dt = datetime.fromisoformat(text.strip())
    except ValueError:
        raise DataError(f"line {lineno}: unparseable timestamp {text!r}") from None
    if dt.tzinfo is not None:
        dt = dt.replace(tzinfo=None) - dt.utcoffset()
    return np.datetime64(dt.replace(microsecond=0), "s")


def ingest_csv(path, schema: dict[str, str] | None = None, modalities=MODALITIES,
               interval_minutes: int = 15) -> MultimodalDataset:
    """Read, sort, validate and gap-fill a multimodal CSV.

    A single missing interval is filled by linear interpolation. Longer gaps
    split the record; the longest contiguous segment is kept and the dropped
    spans are reported through ``warnings.warn``.
    """
    schema = dict(schema or {})
    modalities = list(modalities)
    if "flow" not in modalities:
        modalities.insert(0, "flow")
    else:
        modalities.remove("flow")
        modalities.insert(0, "flow")
    text = Path(path).read_text(encoding="utf-8")
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines()) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError(f"{path}: no header row")
    reader = csv.reader(io.StringIO("\n".join(ln for _, ln in lines)))
    rows = list(reader)
    header = [h.strip() for h in rows[0]]
    columns = {}
    for name in ["timestamp", *modalities]:
        source = schema.get(name, name)
        if source not in header:
            what = "timestamp column" if name == "timestamp" else f"modality {name!r}"
            raise DataError(f"{path}: missing {what} (expected column {source!r})")
        columns[name] = header.index(source)

    stamps, values = [], {m: [] for m in modalities}
    for (lineno, _), row in zip(lines[1:], rows[1:]):
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, found {len(row)}")
        stamps.append(_parse_time(row[columns["timestamp"]], lineno))
        for m in modalities:
            cell = row[columns[m]].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"line {lineno}: unparseable {m} value {cell!r}") from None
            if not np.isfinite(v):
                raise DataError(f"line {lineno}: non-finite {m} value {cell!r}")
            values[m].append(v)
    if not stamps:
        raise DataError(f"{path}: no data rows")

    t = np.array(stamps, dtype="datetime64[s]")
    order = np.argsort(t, kind="stable")
    t = t[order]
    vals = {m: np.array(v)[order] for m, v in values.items()}
    steps = np.diff(t).astype(np.int64)
    dup = np.nonzero(steps == 0)[0]
    if dup.size:
        raise DataError(f"{path}: duplicate timestamp {t[dup[0]]}")
    step = interval_minutes * 60
    if np.any(steps % step):
        bad = np.nonzero(steps % step)[0][0]
        raise DataError(f"{path}: timestamps {t[bad]} and {t[bad + 1]} are off the {interval_minutes}-minute grid")

    # fill single missing intervals
    single = np.nonzero(steps == 2 * step)[0]
    if single.size:
        t = np.insert(t, single + 1, t[single] + np.timedelta64(step, "s"))
        for m in vals:
            mid = 0.5 * (vals[m][single] + vals[m][single + 1])
            vals[m] = np.insert(vals[m], single + 1, mid)
        steps = np.diff(t).astype(np.int64)

    breaks = np.nonzero(steps > step)[0]
    if breaks.size:
        bounds = np.concatenate([[0], breaks + 1, [len(t)]])
        segments = list(zip(bounds[:-1], bounds[1:]))
        lengths = [b - a for a, b in segments]
        keep = int(np.argmax(lengths))
        dropped = [f"{t[a]}..{t[b - 1]}" for i, (a, b) in enumerate(segments) if i != keep]
        warnings.warn(f"{path}: gaps longer than one interval; kept the longest segment, "
                      f"discarded {', '.join(dropped)}", stacklevel=2)
        a, b = segments[keep]
        t = t[a:b]
        vals = {m: v[a:b] for m, v in vals.items()}
    return MultimodalDataset(t, vals, interval_minutes)


def format_time(ts: np.datetime64) -> str:
    return ts.astype(datetime).strftime(TIME_FORMAT)


def export_csv(dataset: MultimodalDataset, path, comments: list[str] | None = None) -> Path:
    out = io.StringIO()
    for c in comments or []:
        out.write(f"# {c}\n")
    names = dataset.modalities
    out.write(",".join(["timestamp", *names]) + "\n")
    cols = [dataset.series[n] for n in names]
    for i, ts in enumerate(dataset.timestamps):
        # repr gives the shortest string that round-trips exactly
        out.write(",".join([format_time(ts), *(repr(float(c[i])) for c in cols)]) + "\n")
    path = Path(path)
    path.write_text(out.getvalue(), encoding="utf-8")
    return path


@dataclass
class WindowedSamples:
    """Supervised pairs: windows of length w per modality, next-interval flow target.

    ``target_index[k]`` is the position of ``targets[k]`` in the source series,
    so ``targets[k] == flow[target_index[k]]`` and the window for modality m is
    ``series[m][target_index[k] - w : target_index[k]]``.
    """

    inputs: dict[str, np.ndarray]
    targets: np.ndarray
    target_index: np.ndarray
    timestamps: np.ndarray
    flow: np.ndarray = field(repr=False)
    lookup: int = 20

    def __len__(self) -> int:
        return len(self.targets)

    def subset(self, idx) -> "WindowedSamples":
        return WindowedSamples({k: v[idx] for k, v in self.inputs.items()}, self.targets[idx],
                               self.target_index[idx], self.timestamps[idx], self.flow, self.lookup)

    def flattened(self) -> np.ndarray:
        """``[N, w * M]`` design matrix, modalities side by side."""
        return np.concatenate([self.inputs[k] for k in self.inputs], axis=1)


def window(dataset: MultimodalDataset, w: int, modalities=None, target_start: int | None = None,
           target_stop: int | None = None) -> WindowedSamples:
    """Slide a length-``w`` window over the series; targets are flow one step ahead.

    With no target range every index ``w..L-1`` is a target, giving ``L - w``
    samples. ``target_start``/``target_stop`` restrict the target positions
    (the windows may reach back before ``target_start``).
    """
    L = len(dataset)
    if w < 1:
        raise DataError(f"lookup size must be >= 1, got {w}")
    if L <= w:
        raise DataError(f"series of length {L} is too short for lookup size {w}")
    names = list(modalities) if modalities is not None else dataset.modalities
    lo = w if target_start is None else max(w, target_start)
    hi = L if target_stop is None else min(L, target_stop)
    if hi <= lo:
        raise DataError(f"no targets in index range [{lo}, {hi}) with lookup {w}")
    idx = np.arange(lo, hi)
    offsets = idx[:, None] - w + np.arange(w)[None, :]
    flow = dataset.modality("flow").values
    inputs = {n: dataset.modality(n).values[offsets] for n in names}
    return WindowedSamples(inputs, flow[idx].copy(), idx, dataset.timestamps[idx], flow, w)


@dataclass
class SynthConfig:
    """Generator constants. Flow is vehicles per interval, speed km/h, journey time s."""

    days: int = 60
    interval_minutes: int = 15
    seed: int = 0
    noise: float = 0.035
    start: str = "2014-01-06T00:00:00"  # a Monday
    base_flow: float = 120.0
    peak_flow: float = 380.0
    peak_hours: tuple[float, float] = (8.0, 18.0)
    peak_width_hours: float = 1.5
    weekend_factor: float = 0.6
    free_speed: float = 110.0
    speed_drop: float = 0.5
    link_km: float = 5.0
    speed_noise_factor: float = 0.25
    journey_noise_factor: float = 0.25
    demand_factor: float = 2.0  # stationary std of the demand swing, in units of ``noise``
    demand_persistence: float = 0.9  # AR(1) coefficient of the demand swing per interval
    aux_lead: int = 1  # intervals by which upstream speed/journey time lead the counted flow


def _clean_flow(cfg: SynthConfig, index: np.ndarray, start: datetime) -> np.ndarray:
    minutes = index * cfg.interval_minutes
    day = np.floor_divide(minutes, 24 * 60)
    hour = (minutes - day * 24 * 60) / 60.0
    weekday = (start.weekday() + day) % 7
    amp = np.where(weekday >= 5, cfg.weekend_factor, 1.0) * cfg.peak_flow
    bumps = sum(np.exp(-0.5 * ((hour - p) / cfg.peak_width_hours) ** 2) for p in cfg.peak_hours)
    return cfg.base_flow + amp * bumps


def synth(cfg: SynthConfig) -> MultimodalDataset:
    """Seeded synthetic flow/speed/journey-time series with weekday/weekend peaks.

    True flow is base + morning and evening Gaussian peaks (weekends scaled
    down), multiplied by (1 + d) where d is a slow AR(1) demand swing with
    stationary std ``noise * demand_factor``. Speed falls quadratically with
    the true flow on the upstream link, which reaches the counter
    ``aux_lead`` intervals later; journey time is link length / speed.
    Each observed series adds Gaussian measurement noise with std ``noise``
    times its nominal scale (further scaled by the speed and journey factors).
    At zero noise the output is exactly weekly-periodic.
    """
    if cfg.days < 2:
        raise DataError(f"synthetic data needs at least 2 days, got {cfg.days}")
    if cfg.interval_minutes < 1 or (24 * 60) % cfg.interval_minutes:
        raise DataError(f"interval must divide a day, got {cfg.interval_minutes} minutes")
    if cfg.noise < 0:
        raise DataError("noise level must be non-negative")
    if not 0.0 <= cfg.demand_persistence < 1.0:
        raise DataError("demand_persistence must lie in [0, 1)")
    if cfg.aux_lead < 0:
        raise DataError("aux_lead must be non-negative")
    start = datetime.fromisoformat(cfg.start)
    n = cfg.days * 24 * 60 // cfg.interval_minutes
    m = n + cfg.aux_lead
    top = cfg.base_flow + cfg.peak_flow
    true_flow = _clean_flow(cfg, np.arange(m), start)

    rng = Rng(cfg.seed)
    if cfg.noise > 0:
        rho = cfg.demand_persistence
        shocks = rng.normal(m, cfg.noise * cfg.demand_factor * np.sqrt(1.0 - rho * rho))
        demand = np.empty(m)
        demand[0] = shocks[0] / np.sqrt(1.0 - rho * rho)  # start in the stationary state
        for t in range(1, m):
            demand[t] = rho * demand[t - 1] + shocks[t]
        true_flow = np.maximum(true_flow * (1.0 + demand), 0.0)
    # speed and journey time describe the link upstream of the counter, so they see traffic early
    upstream = true_flow[cfg.aux_lead :]
    speed = cfg.free_speed * (1.0 - cfg.speed_drop * np.minimum(upstream / top, 1.0) ** 2)
    journey = cfg.link_km / speed * 3600.0
    flow = true_flow[:n]
    if cfg.noise > 0:
        flow = np.maximum(flow + rng.normal(n, cfg.noise * top), 0.0)
        speed = speed + rng.normal(n, cfg.noise * cfg.speed_noise_factor * cfg.free_speed)
        journey = journey + rng.normal(n, cfg.noise * cfg.journey_noise_factor * cfg.link_km / cfg.free_speed * 3600.0)
    stamps = np.datetime64(start, "s") + np.arange(n) * np.timedelta64(cfg.interval_minutes * 60, "s")
    return MultimodalDataset(stamps, {"flow": flow, "speed": speed, "journey_time": journey}, cfg.interval_minutes)


def steps_per_day(interval_minutes: int) -> int:
    return 24 * 60 // interval_minutes
