"""Per-segment speed series: ingestion, imputation, split, scaling, windows.

Speeds CSV format::

    timestamp,seg_<id>,seg_<id>,...
    2016-01-01 00:00:00,52.1,48.0,...

Rows are strictly increasing at a fixed step; empty cells are missing
readings. Values are km/h.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import (
    ConfigError,
    DataError,
    DegenerateDataError,
    FormatError,
    SegmentLookupError,
)

logger = logging.getLogger(__name__)

COLUMN_PREFIX = "seg_"
MINUTES_PER_DAY = 24 * 60
DEFAULT_TRAIN_FRACTION = 0.75


@dataclass(frozen=True, eq=False)
class SpeedDataset:
    segment_ids: Tuple[str, ...]
    timestamps: pd.DatetimeIndex
    values: np.ndarray          # T x N km/h, NaN where missing
    missing_mask: np.ndarray    # T x N, True = originally missing
    step_minutes: int = 15

    @property
    def num_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def slots_per_day(self) -> int:
        return MINUTES_PER_DAY // self.step_minutes

    def time_slots(self) -> np.ndarray:
        """Time-of-day slot index of every row."""
        minutes = self.timestamps.hour * 60 + self.timestamps.minute
        return np.asarray(minutes // self.step_minutes, dtype=np.intp)

    def rows(self, index: range) -> "SpeedDataset":
        sl = slice(index.start, index.stop)
        return replace(
            self,
            timestamps=self.timestamps[sl],
            values=self.values[sl],
            missing_mask=self.missing_mask[sl],
        )

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(
            self.values,
            index=self.timestamps,
            columns=[f"{COLUMN_PREFIX}{s}" for s in self.segment_ids],
        )
        df.index.name = "timestamp"
        return df

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SpeedDataset):
            return NotImplemented
        return (
            self.segment_ids == other.segment_ids
            and self.step_minutes == other.step_minutes
            and self.timestamps.equals(other.timestamps)
            and np.array_equal(self.values, other.values, equal_nan=True)
            and np.array_equal(self.missing_mask, other.missing_mask)
        )


def _segment_ids_from_columns(columns: Sequence[str], source) -> Tuple[str, ...]:
    ids = []
    for col in columns:
        if not str(col).startswith(COLUMN_PREFIX):
            raise FormatError(f"{source}: column {col!r} is not of the form {COLUMN_PREFIX}<id>")
        ids.append(str(col)[len(COLUMN_PREFIX):])
    return tuple(ids)


def load_speeds(path: Path, known_segments: Optional[Sequence[str]] = None) -> SpeedDataset:
    """Read a speeds CSV; no imputation. `known_segments` (e.g. a graph's ids)
    rejects columns for unknown segments."""
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FormatError(f"{path}: {e}") from e
    if df.columns.empty or df.columns[0] != "timestamp":
        raise FormatError(f"{path}: first column must be 'timestamp'")

    ids = _segment_ids_from_columns(df.columns[1:], path)
    if known_segments is not None:
        known = {str(s) for s in known_segments}
        for s in ids:
            if s not in known:
                raise SegmentLookupError(f"{path}: column {COLUMN_PREFIX}{s} names an unknown segment")

    try:
        stamps = pd.DatetimeIndex(pd.to_datetime(df["timestamp"]))
    except (ValueError, TypeError) as e:
        raise FormatError(f"{path}: unparseable timestamp: {e}") from e
    step_minutes = _check_regular(stamps, path)

    try:
        values = df.iloc[:, 1:].apply(pd.to_numeric, errors="raise").to_numpy(dtype=np.float64)
    except (ValueError, TypeError) as e:
        raise FormatError(f"{path}: non-numeric speed: {e}") from e
    negative = np.argwhere(values < 0.0)
    if len(negative):
        t, u = (int(i) for i in negative[0])
        raise FormatError(
            f"{path}: negative speed {values[t, u]:g} at data row {t + 1}, segment {ids[u]!r}"
        )
    return SpeedDataset(
        segment_ids=ids,
        timestamps=stamps,
        values=values,
        missing_mask=np.isnan(values),
        step_minutes=step_minutes,
    )


def _check_regular(stamps: pd.DatetimeIndex, source) -> int:
    if len(stamps) < 2:
        raise FormatError(f"{source}: need at least two rows to infer the step")
    deltas = np.diff(stamps.asi8)
    step = deltas[0]
    if step <= 0:
        raise FormatError(f"{source}: row 2 is not after row 1")
    bad = np.nonzero(deltas != step)[0]
    if len(bad):
        # +2: 1-based, and the delta at i lands on row i+1
        raise FormatError(f"{source}: irregular timestamp at data row {int(bad[0]) + 2}")
    minutes, rem = divmod(int(step), 60 * 10**9)
    if rem or minutes == 0:
        raise FormatError(f"{source}: step of {step} ns is not a whole number of minutes")
    return minutes


def save_speeds(ds: SpeedDataset, path: Path) -> None:
    ds.to_frame().to_csv(path, float_format="%.17g", date_format="%Y-%m-%d %H:%M:%S")


def impute(ds: SpeedDataset) -> SpeedDataset:
    """Fill each missing (t, u) with the mean of u at the same time-of-day slot
    on the other days; fall back to u's mean over all present readings."""
    return impute_with_report(ds)[0]


def impute_with_report(ds: SpeedDataset) -> Tuple[SpeedDataset, Dict[str, int]]:
    """`impute`, plus the per-segment count of readings that had no same-slot
    donor and took the global-mean fallback (segments with none are omitted)."""
    if MINUTES_PER_DAY % ds.step_minutes:
        raise ConfigError(f"step of {ds.step_minutes} min does not divide a day")
    values = ds.values.copy()
    missing = np.isnan(values)
    fallbacks: Dict[str, int] = {}
    if not missing.any():
        return ds, fallbacks

    slots = ds.time_slots()
    for u in range(ds.n):
        col = values[:, u]
        holes = np.nonzero(missing[:, u])[0]
        if not len(holes):
            continue
        present = ~missing[:, u]
        if not present.any():
            raise DegenerateDataError(f"segment {ds.segment_ids[u]!r} has no readings")
        global_mean = float(col[present].mean())
        fallback = 0
        for t in holes:
            donors = present & (slots == slots[t])
            if donors.any():
                col[t] = col[donors].mean()
            else:
                col[t] = global_mean
                fallback += 1
        if fallback:
            fallbacks[ds.segment_ids[u]] = fallback
            logger.warning(
                "segment %s: %d missing reading(s) had no same-slot donor, used global mean %.3f",
                ds.segment_ids[u], fallback, global_mean,
            )
    return replace(ds, values=values), fallbacks


def split(num_steps: int, fraction: float = DEFAULT_TRAIN_FRACTION, seq_len: int = 10) -> Tuple[range, range]:
    """Contiguous (train rows, eval rows) split at floor(T * fraction)."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"train fraction must lie in (0, 1), got {fraction}")
    cut = int(np.floor(num_steps * fraction))
    need = seq_len + 2
    if cut < need or num_steps - cut < need:
        raise ConfigError(
            f"split at {cut} of {num_steps} rows leaves fewer than {need} rows on one side"
        )
    return range(0, cut), range(cut, num_steps)


@dataclass(frozen=True)
class Scaler:
    """Min-max scaling to [0, 1] with bounds fitted on training rows only."""
    min: float
    max: float

    @property
    def span(self) -> float:
        return self.max - self.min

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.min) / self.span

    def inverse(self, x):
        return np.asarray(x, dtype=np.float64) * self.span + self.min

    def to_dict(self):
        return {"min": self.min, "max": self.max}


def fit_scaler(train_values: np.ndarray) -> Scaler:
    vals = np.asarray(train_values, dtype=np.float64)
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        raise DegenerateDataError("cannot fit a scaler on no readings")
    lo, hi = float(vals.min()), float(vals.max())
    if hi <= lo:
        raise DegenerateDataError(f"all training speeds equal {lo}; cannot scale")
    return Scaler(min=lo, max=hi)


def apply_scaler(scaler: Scaler, x):
    return scaler.transform(x)


def invert_scaler(scaler: Scaler, x):
    return scaler.inverse(x)


@dataclass(frozen=True)
class WindowSpec:
    seq_len: int
    starts: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.starts)


def make_windows(num_rows: int, seq_len: int) -> WindowSpec:
    """Stride-1 windows t0 = 1 .. T-l-1: inputs t0..t0+l-1, lookback t0-1,
    targets t0+1..t0+l."""
    if seq_len < 1:
        raise ConfigError(f"sequence length must be >= 1, got {seq_len}")
    if num_rows < seq_len + 2:
        raise ConfigError(f"{num_rows} rows cannot hold a window of length {seq_len} (need {seq_len + 2})")
    return WindowSpec(seq_len=seq_len, starts=tuple(range(1, num_rows - seq_len)))


def window_arrays(values: np.ndarray, t0: int, seq_len: int) -> Tuple[np.ndarray, np.ndarray]:
    """(inputs, targets): rows t0-1 .. t0+l-1 and rows t0+1 .. t0+l."""
    if t0 < 1 or t0 + seq_len >= values.shape[0]:
        raise DataError(f"window start {t0} does not fit {values.shape[0]} rows with l={seq_len}")
    return values[t0 - 1:t0 + seq_len], values[t0 + 1:t0 + seq_len + 1]


def align_segments(ds: SpeedDataset, segment_ids: Sequence[str]) -> SpeedDataset:
    """Reorder (and subset) columns to follow `segment_ids`, e.g. a graph's node order."""
    order = []
    for s in segment_ids:
        try:
            order.append(ds.segment_ids.index(str(s)))
        except ValueError:
            raise SegmentLookupError(f"no speeds for segment {s!r}") from None
    if order == list(range(ds.n)):
        return ds
    return replace(
        ds,
        segment_ids=tuple(str(s) for s in segment_ids),
        values=ds.values[:, order],
        missing_mask=ds.missing_mask[:, order],
    )
