"""
Cutting a four-hour sensor window
=================================

Raw wearable and phone logs arrive at irregular rates. This walk-through
generates a small synthetic participant, then follows one stream from raw
rows to the fixed grid the encoder consumes.
"""
import csv
import tempfile
from pathlib import Path

import numpy as np

from lens_forge.fixture import generate_fixture
from lens_forge.sensors import (
    CANONICAL_SPECS, extract_window, filter_outliers, load_participant_window, parse_stream, resample,
)

tmp = Path(tempfile.mkdtemp())
summary = generate_fixture(tmp, n_participants=1, emas_per_participant=1, seed=3)
print("fixture:", summary)

with open(tmp / "ema_index.csv", newline="") as fh:
    row = next(csv.DictReader(fh))
pid, ema_id, end = row["participant_id"], row["ema_id"], float(row["completed_at"])

# heart rate, one stream at a time
hr_spec = next(s for s in CANONICAL_SPECS if s.name == "heart_rate")
samples, skipped = parse_stream(tmp / pid / "heart_rate.csv", "csv", hr_spec)
print(f"\n{len(samples)} raw heart-rate rows, {skipped} unparseable")

clean, dropped = filter_outliers(samples, hr_spec.outlier_bounds)
print(f"{dropped} physiologically implausible readings removed, bounds {hr_spec.outlier_bounds}")

in_window = extract_window(clean, end)
print(f"{len(in_window)} rows fall in the window ending at {end:.0f}")

series = resample(in_window, hr_spec, end)
print(f"resampled to {len(series.values)} slots of {series.period_s} s,",
      f"{series.missing_mask.sum()} filled from neighbours")
print("first ten slots:", np.round(series.values[:10], 1))

# all streams together
window, report = load_participant_window(tmp / pid, pid, ema_id, end)
print("\nstream            period  length  filled")
for name, s in window.streams.items():
    print(f"{name:<16} {s.period_s:>6}  {len(s.values):>6}  {int(s.missing_mask.sum()):>6}")
print(f"sleep last night: {window.sleep_hours:.2f} h, conversation: {window.conversation_s:.0f} s")
print("report:", report)
