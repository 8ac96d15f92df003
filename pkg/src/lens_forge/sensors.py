"""Sensor stream parsing, outlier filtering, window extraction and resampling.

Every continuous stream is brought onto a fixed grid covering the four hours
that precede an EMA completion. The window is half-open, ``(end - span, end]``,
so adjacent EMAs never share a raw sample.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

WINDOW_SPAN_S = 14400


class RawSample(NamedTuple):
    stream_id: str
    timestamp: float
    value: float


@dataclass(frozen=True)
class StreamSpec:
    name: str
    kind: str  # "continuous" | "aggregate"
    period_s: int
    expected_len: int
    outlier_bounds: tuple[float, float] | None = None
    agg: str = "mean"  # slot aggregation: mean | sum | max

    def __post_init__(self):
        if self.kind not in ("continuous", "aggregate"):
            raise ValueError(f"unknown stream kind {self.kind!r}")
        if self.period_s <= 0:
            raise ValueError("period_s must be positive")
        if self.kind == "continuous" and self.expected_len * self.period_s != WINDOW_SPAN_S:
            raise ValueError(
                f"{self.name}: expected_len {self.expected_len} x period {self.period_s} "
                f"does not cover {WINDOW_SPAN_S} s"
            )
        if self.agg not in ("mean", "sum", "max"):
            raise ValueError(f"unknown aggregation {self.agg!r}")
        if self.outlier_bounds is not None and self.outlier_bounds[0] > self.outlier_bounds[1]:
            raise ValueError("outlier_bounds min exceeds max")


def _continuous(name, period, agg="mean", bounds=None):
    return StreamSpec(name, "continuous", period, WINDOW_SPAN_S // period, bounds, agg)


# Prompt order; patch counts for k=8 are 180, 60, 30, 30, 3, 3, 30.
CANONICAL_SPECS: tuple[StreamSpec, ...] = (
    _continuous("heart_rate", 10, "mean", (25.0, 220.0)),
    _continuous("zcr", 30, "mean"),
    _continuous("steps", 60, "sum", (0.0, 300.0)),
    _continuous("stress", 60, "mean"),
    _continuous("gps_lon", 600, "mean"),
    _continuous("gps_lat", 600, "mean"),
    _continuous("phone_lock", 60, "max"),
)

CANONICAL_BY_NAME = {s.name: s for s in CANONICAL_SPECS}


@dataclass
class ResampledSeries:
    values: np.ndarray
    period_s: int
    start_time: float
    missing_mask: np.ndarray

    def to_dict(self) -> dict:
        return {
            "values": [float(v) for v in self.values],
            "period_s": self.period_s,
            "start_time": self.start_time,
            "missing_mask": [bool(m) for m in self.missing_mask],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResampledSeries":
        return cls(
            values=np.asarray(d["values"], dtype=float),
            period_s=int(d["period_s"]),
            start_time=d["start_time"],
            missing_mask=np.asarray(d["missing_mask"], dtype=bool),
        )


@dataclass
class SensorWindow:
    ema_id: str
    participant_id: str
    end_time: float
    streams: dict[str, ResampledSeries] = field(default_factory=dict)
    sleep_hours: float = 0.0
    conversation_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "ema_id": self.ema_id,
            "participant_id": self.participant_id,
            "end_time": self.end_time,
            "streams": {k: v.to_dict() for k, v in self.streams.items()},
            "sleep_hours": self.sleep_hours,
            "conversation_s": self.conversation_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorWindow":
        return cls(
            ema_id=d["ema_id"],
            participant_id=d["participant_id"],
            end_time=d["end_time"],
            streams={k: ResampledSeries.from_dict(v) for k, v in d["streams"].items()},
            sleep_hours=float(d["sleep_hours"]),
            conversation_s=float(d["conversation_s"]),
        )


class SensorDataError(ValueError):
    """Raised when a sensor source cannot be turned into samples."""


def _as_text(source) -> str:
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8")
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return data


def parse_stream(
    source: IO | str | Path, fmt: str, spec: StreamSpec
) -> tuple[list[RawSample], int]:
    """Parse ``timestamp,value`` CSV or ``{"t": .., "v": ..}`` JSONL rows.

    Returns the samples sorted by timestamp and the number of skipped rows.
    Rows that fail to parse or carry non-finite numbers are skipped.
    """
    try:
        text = _as_text(source)
    except (OSError, UnicodeDecodeError) as exc:
        raise SensorDataError(f"unreadable source for {spec.name}: {exc}") from exc

    rows: list[tuple[object, object]] = []
    if fmt == "csv":
        reader = csv.reader(io.StringIO(text))
        for row in reader:
            if not row or not "".join(row).strip():
                continue
            if row[0].strip().lower() == "timestamp":
                continue
            rows.append((row[0], row[1] if len(row) > 1 else None))
    elif fmt == "jsonl":
        for line in text.splitlines():
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rows.append((obj.get("t"), obj.get("v")))
            except (json.JSONDecodeError, AttributeError):
                rows.append((None, None))
    else:
        raise ValueError(f"unknown format {fmt!r}")

    samples = []
    skipped = 0
    for t, v in rows:
        try:
            t, v = float(t), float(v)
        except (TypeError, ValueError):
            skipped += 1
            continue
        if not (math.isfinite(t) and math.isfinite(v)):
            skipped += 1
            continue
        samples.append(RawSample(spec.name, t, v))
    if not samples:
        raise SensorDataError(f"no valid rows for stream {spec.name}")
    if skipped:
        logger.info("%s: skipped %d malformed rows", spec.name, skipped)
    samples.sort(key=lambda s: s.timestamp)
    return samples, skipped


def filter_outliers(
    samples: Sequence[RawSample], bounds: tuple[float, float] | None
) -> tuple[list[RawSample], int]:
    if bounds is None:
        return list(samples), 0
    lo, hi = bounds
    if lo > hi:
        raise ValueError("bounds min exceeds max")
    kept = [s for s in samples if lo <= s.value <= hi]
    return kept, len(samples) - len(kept)


def extract_window(
    samples: Sequence[RawSample], end_time: float, span_s: float = WINDOW_SPAN_S
) -> list[RawSample]:
    if span_s <= 0:
        raise ValueError("span_s must be positive")
    start = end_time - span_s
    return [s for s in samples if start < s.timestamp <= end_time]


def _slot_index(ts: np.ndarray, start: float, period: float, n: int) -> np.ndarray:
    # slot i covers (start + i*period, start + (i+1)*period]
    idx = np.ceil((ts - start) / period).astype(np.int64) - 1
    return np.clip(idx, 0, n - 1)


def _fill_gaps(values: np.ndarray, missing: np.ndarray) -> np.ndarray:
    out = values.copy()
    observed = np.flatnonzero(~missing)
    if observed.size == 0:
        out[:] = 0.0
        return out
    # index of the last observed slot at or before each position
    last = np.maximum.accumulate(np.where(~missing, np.arange(len(out)), -1))
    last[last < 0] = observed[0]
    return out[last]


def resample(
    window_samples: Sequence[RawSample], spec: StreamSpec, end_time: float
) -> ResampledSeries:
    """Aggregate raw samples onto the stream's fixed grid ending at ``end_time``."""
    if spec.kind != "continuous":
        raise ValueError(f"{spec.name} is not a continuous stream")
    n = spec.expected_len
    start = end_time - n * spec.period_s
    values = np.zeros(n)
    missing = np.ones(n, dtype=bool)
    if window_samples:
        ts = np.array([s.timestamp for s in window_samples], dtype=float)
        vs = np.array([s.value for s in window_samples], dtype=float)
        inside = (ts > start) & (ts <= end_time)
        ts, vs = ts[inside], vs[inside]
        idx = _slot_index(ts, start, spec.period_s, n)
        counts = np.bincount(idx, minlength=n)
        if spec.agg == "max":
            agg = np.full(n, -np.inf)
            np.maximum.at(agg, idx, vs)
        else:
            agg = np.bincount(idx, weights=vs, minlength=n)
            if spec.agg == "mean":
                agg = np.divide(agg, counts, out=np.zeros(n), where=counts > 0)
        missing = counts == 0
        values = np.where(missing, 0.0, agg)
    values = _fill_gaps(values, missing)
    return ResampledSeries(values, spec.period_s, start, missing)


def encode_lock_state(
    transition_events: Iterable[tuple[float, int]],
    end_time: float,
    span_s: int = WINDOW_SPAN_S,
    period_s: int = 60,
    initial_unlocked: bool = False,
) -> ResampledSeries:
    """Rebuild the per-second lock signal (1 = unlocked) and take the max per slot.

    ``transition_events`` holds ``(timestamp, state)`` pairs where state 1 means
    the phone became unlocked and 0 that it was locked. Events before the window
    set the state the window opens with.
    """
    start = end_time - span_s
    events = sorted((float(t), int(bool(v))) for t, v in transition_events)
    state = int(initial_unlocked)
    # second j of the window is the instant start + j + 1
    seconds = np.empty(span_s, dtype=np.int8)
    pos = 0
    i = 0
    while i < len(events) and events[i][0] <= start:
        state = events[i][1]
        i += 1
    for t, v in events[i:]:
        if t > end_time:
            break
        upto = int(math.ceil(t - start)) - 1  # first second whose instant >= t
        upto = min(max(upto, pos), span_s)
        seconds[pos:upto] = state
        pos = upto
        state = v
    seconds[pos:] = state
    slots = seconds.reshape(-1, period_s).max(axis=1).astype(float)
    return ResampledSeries(slots, period_s, start, np.zeros(len(slots), dtype=bool))


def sum_conversation(
    events: Iterable[tuple[float, float]], end_time: float, span_s: float = WINDOW_SPAN_S
) -> float:
    start = end_time - span_s
    total = 0.0
    for t, dur in events:
        if dur < 0:
            raise ValueError("conversation duration must be non-negative")
        if start < t <= end_time:
            total += min(dur, end_time - t)
    return min(total, span_s)


def load_participant_window(
    participant_dir: Path,
    participant_id: str,
    ema_id: str,
    end_time: float,
    specs: Sequence[StreamSpec] = CANONICAL_SPECS,
    bounds_override: dict[str, tuple[float, float] | None] | None = None,
) -> tuple[SensorWindow, dict]:
    """Build one SensorWindow from ``<participant>/<stream>.{csv,jsonl}`` files.

    ``phone_lock`` files hold lock transitions, ``conversation`` files hold
    ``(start, duration)`` rows and ``sleep`` files hold nightly hour totals.
    Returns the window and a per-stream report of skipped/removed counts.
    """
    bounds_override = bounds_override or {}
    report: dict[str, dict] = {}
    streams = {}
    for spec in specs:
        samples, skipped = _read_stream_file(participant_dir, spec)
        if spec.name == "phone_lock":
            series = encode_lock_state(
                [(s.timestamp, int(s.value)) for s in samples], end_time, period_s=spec.period_s
            )
            report[spec.name] = {"skipped": skipped, "removed": 0}
        else:
            bounds = bounds_override.get(spec.name, spec.outlier_bounds)
            kept, removed = filter_outliers(samples, bounds)
            series = resample(extract_window(kept, end_time), spec, end_time)
            report[spec.name] = {"skipped": skipped, "removed": removed}
        streams[spec.name] = series

    conv = _read_optional(participant_dir, "conversation")
    conversation_s = sum_conversation([(s.timestamp, s.value) for s in conv], end_time)
    sleep = [s for s in _read_optional(participant_dir, "sleep") if s.timestamp <= end_time]
    sleep_hours = max(sleep[-1].value, 0.0) if sleep else 0.0
    window = SensorWindow(ema_id, participant_id, end_time, streams, sleep_hours, conversation_s)
    return window, report


def _stream_path(participant_dir: Path, name: str) -> tuple[Path, str] | None:
    for ext in ("csv", "jsonl"):
        p = participant_dir / f"{name}.{ext}"
        if p.exists():
            return p, ext
    return None


def _read_stream_file(participant_dir: Path, spec: StreamSpec) -> tuple[list[RawSample], int]:
    found = _stream_path(participant_dir, spec.name)
    if found is None:
        raise SensorDataError(f"missing stream file {participant_dir / spec.name}.csv")
    path, fmt = found
    return parse_stream(path, fmt, spec)


def _read_optional(participant_dir: Path, name: str) -> list[RawSample]:
    found = _stream_path(participant_dir, name)
    if found is None:
        return []
    path, fmt = found
    try:
        samples, _ = parse_stream(path, fmt, StreamSpec(name, "aggregate", 1, 1))
    except SensorDataError:
        return []
    return samples
