"""Seeded synthetic participants: sensor files, EMA index and EMA responses.

Streams are sinusoids plus noise at raw rates finer than the target grid, with
a few outliers, a malformed row and a gap so that filtering, gap filling and
aggregation are all exercised.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

T0 = 1_700_000_000
HOUR = 3600


def _write_csv(path: Path, rows, header=("timestamp", "value")):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def generate_fixture(
    data_dir: str | Path,
    n_participants: int = 5,
    emas_per_participant: int = 3,
    seed: int = 0,
) -> dict:
    """Write the fixture under ``data_dir``; returns a summary of what was written."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    index_rows = []
    responses = []
    for p in range(n_participants):
        pid = f"P{p + 1:03d}"
        pdir = data_dir / pid
        pdir.mkdir(exist_ok=True)
        start = T0 + p * 86400
        end = start + (4 * emas_per_participant + 1) * HOUR
        phase = rng.uniform(0, 2 * np.pi)

        t = np.arange(start, end, 5)
        hr = 72 + 12 * np.sin(2 * np.pi * (t - start) / (3 * HOUR) + phase) + rng.normal(0, 3, t.size)
        rows = [(int(a), _fmt(b)) for a, b in zip(t, hr)]
        for i in rng.choice(len(rows), size=3, replace=False):
            rows[i] = (rows[i][0], "300.000")
        rows.insert(len(rows) // 2, (rows[len(rows) // 2][0] + 1, "NaN"))
        _write_csv(pdir / "heart_rate.csv", rows)

        t = np.arange(start, end, 15)
        zcr = np.abs(0.3 + 0.2 * np.sin(2 * np.pi * (t - start) / (2 * HOUR)) + rng.normal(0, 0.05, t.size))
        _write_csv(pdir / "zcr.csv", [(int(a), _fmt(b)) for a, b in zip(t, zcr)])

        t = np.arange(start, end, 30)
        lam = 8 * (1 + np.sin(2 * np.pi * (t - start) / (4 * HOUR) + phase))
        steps = rng.poisson(lam)
        _write_csv(pdir / "steps.csv", [(int(a), int(b)) for a, b in zip(t, steps)])

        t = np.arange(start, end, 60)
        stress = np.clip(35 + 20 * np.sin(2 * np.pi * (t - start) / (5 * HOUR)) + rng.normal(0, 5, t.size), 0, 100)
        keep = ~((t > start + 2 * HOUR) & (t <= start + 2 * HOUR + 1200))
        _write_csv(pdir / "stress.csv", [(int(a), _fmt(b)) for a, b in zip(t[keep], stress[keep])])

        t = np.arange(start, end, 120)
        lon = -71.06 + np.cumsum(rng.normal(0, 1e-4, t.size))
        lat = 42.36 + np.cumsum(rng.normal(0, 1e-4, t.size))
        with open(pdir / "gps_lon.jsonl", "w", encoding="utf-8") as fh:
            for a, b in zip(t, lon):
                fh.write(json.dumps({"t": int(a), "v": round(float(b), 6)}) + "\n")
        _write_csv(pdir / "gps_lat.csv", [(int(a), f"{b:.6f}") for a, b in zip(t, lat)])

        lock_rows = [(start - 60, 0)]
        cur = start
        while cur < end:
            cur += int(rng.integers(300, 1800))
            dur = int(rng.integers(20, 400))
            lock_rows += [(cur, 1), (cur + dur, 0)]
            cur += dur
        _write_csv(pdir / "phone_lock.csv", lock_rows)

        conv = []
        cur = start
        while cur < end:
            cur += int(rng.integers(600, 2400))
            conv.append((cur, int(rng.integers(30, 600))))
        _write_csv(pdir / "conversation.csv", conv)
        _write_csv(pdir / "sleep.csv", [(start - 6 * HOUR, _fmt(rng.uniform(4.5, 9.0)))])

        for e in range(emas_per_participant):
            completed = start + (4 * (e + 1)) * HOUR + int(rng.integers(0, 600))
            ema_id = f"{pid}-E{e + 1:02d}"
            index_rows.append((pid, ema_id, completed))
            occurred = bool(rng.random() < 0.35)
            responses.append({
                "participant_id": pid,
                "ema_id": ema_id,
                "completed_at": completed,
                "items": [int(v) for v in rng.integers(0, 101, size=13)],
                "negative_event": {
                    "occurred": occurred,
                    "intensity": int(rng.integers(0, 101)) if occurred else None,
                },
                "daypart": ("morning", "afternoon", "evening")[e % 3],
            })

    _write_csv(data_dir / "ema_index.csv", index_rows, ("participant_id", "ema_id", "completed_at"))
    with open(data_dir / "ema_responses.jsonl", "w", encoding="utf-8") as fh:
        for r in responses:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return {"participants": n_participants, "emas": len(index_rows), "data_dir": str(data_dir)}


def fixture_config(data_dir: str | Path, out_dir: str | Path, seed: int = 7) -> dict:
    """A run config for the fixture with mock backends and a desk-sized encoder."""
    return {
        "seed": seed,
        "paths": {"data_dir": str(data_dir), "out_dir": str(out_dir)},
        "synthesis": {"items_per_ema": 2},
        "qc": {"total_threshold": 20, "confidence_threshold": 0.8, "max_rounds": 3},
        "backends": {
            "rewriter": {"type": "mock", "seed": seed},
            "judges": [{"type": "mock", "seed": seed * 10 + i} for i in range(3)],
            "evaluator": {"type": "mock", "seed": seed},
        },
        "splits": {"ratios": [0.7, 0.15, 0.15]},
        "mix": {"weights": {"item": 0.3, "summary": 0.3, "instruction_following": 0.2, "alignment_random": 0.2}},
        "encoder": {"k": 8, "d_p": 16, "layers": 5, "hidden": 64, "d": 32},
        "workers": 4,
    }
