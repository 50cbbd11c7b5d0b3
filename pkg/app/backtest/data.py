"""Prepared-dataset cache so training and evaluation runs are resumable.

File layout: the first line is a header comment

    # srnn-prepared 1 {"segment_ids": [...], "step_minutes": 15,
    #                  "scaler": {"min": .., "max": ..}, "split_index": 26280,
    #                  "seq_len": 10, "imputation_fallbacks": {"<id>": 3}, "version": 1}

(on one line), followed by a CSV body `timestamp, seg_<id>..., mask_<id>...`
with speeds written at 17 significant digits and the missing mask as 0/1.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from ..errors import FormatError
from ..services.dataset import (
    COLUMN_PREFIX,
    DEFAULT_TRAIN_FRACTION,
    Scaler,
    SpeedDataset,
    align_segments,
    fit_scaler,
    impute_with_report,
    load_speeds,
    split,
)

logger = logging.getLogger(__name__)

CACHE_MAGIC = "# srnn-prepared"
CACHE_VERSION = 1
MASK_PREFIX = "mask_"


@dataclass(frozen=True)
class PreparedDataset:
    """Imputed speeds plus the training-row scaler and split boundary."""
    dataset: SpeedDataset
    scaler: Scaler
    split_index: int
    seq_len: int
    # segment id -> readings filled with the global mean (no same-slot donor)
    imputation_fallbacks: Dict[str, int] = field(default_factory=dict)

    @property
    def train(self) -> SpeedDataset:
        return self.dataset.rows(range(0, self.split_index))

    @property
    def eval(self) -> SpeedDataset:
        return self.dataset.rows(range(self.split_index, self.dataset.num_steps))

    def scaled(self, ds: SpeedDataset) -> np.ndarray:
        return self.scaler.transform(ds.values)


def prepare(
    ds: SpeedDataset,
    fraction: float = DEFAULT_TRAIN_FRACTION,
    seq_len: int = 10,
) -> PreparedDataset:
    """Impute, split, and fit the scaler on the training rows only."""
    filled, fallbacks = impute_with_report(ds)
    train_rows, _ = split(filled.num_steps, fraction, seq_len)
    scaler = fit_scaler(filled.values[train_rows.start:train_rows.stop])
    imputed = int(ds.missing_mask.sum())
    if imputed:
        logger.info("imputed %d missing reading(s)", imputed)
    return PreparedDataset(
        dataset=filled,
        scaler=scaler,
        split_index=train_rows.stop,
        seq_len=seq_len,
        imputation_fallbacks=fallbacks,
    )


def save_prepared(prep: PreparedDataset, path: Path) -> Path:
    ds = prep.dataset
    header = {
        "imputation_fallbacks": dict(sorted(prep.imputation_fallbacks.items())),
        "scaler": prep.scaler.to_dict(),
        "segment_ids": list(ds.segment_ids),
        "seq_len": prep.seq_len,
        "split_index": prep.split_index,
        "step_minutes": ds.step_minutes,
        "version": CACHE_VERSION,
    }
    body = ds.to_frame()
    for u, seg in enumerate(ds.segment_ids):
        body[f"{MASK_PREFIX}{seg}"] = ds.missing_mask[:, u].astype(int)
    path = Path(path)
    with path.open("w", newline="") as f:
        f.write(f"{CACHE_MAGIC} {CACHE_VERSION} {json.dumps(header, sort_keys=True)}\n")
        body.to_csv(f, float_format="%.17g", date_format="%Y-%m-%d %H:%M:%S")
    return path


def is_prepared(path: Path) -> bool:
    with Path(path).open() as f:
        return f.readline().startswith(CACHE_MAGIC)


def load_prepared(path: Path) -> PreparedDataset:
    path = Path(path)
    text = path.read_text()
    first, _, rest = text.partition("\n")
    if not first.startswith(CACHE_MAGIC):
        raise FormatError(f"{path}: not a prepared-dataset cache")
    parts = first[len(CACHE_MAGIC):].strip().split(" ", 1)
    try:
        version = int(parts[0])
        header = json.loads(parts[1])
    except (IndexError, ValueError) as e:
        raise FormatError(f"{path}: unreadable cache header: {e}") from e
    if version != CACHE_VERSION:
        raise FormatError(f"{path}: cache version {version}, expected {CACHE_VERSION}")

    df = pd.read_csv(io.StringIO(rest), float_precision="round_trip")
    ids = [str(s) for s in header["segment_ids"]]
    speed_cols = [f"{COLUMN_PREFIX}{s}" for s in ids]
    mask_cols = [f"{MASK_PREFIX}{s}" for s in ids]
    missing = [c for c in ["timestamp", *speed_cols, *mask_cols] if c not in df.columns]
    if missing:
        raise FormatError(f"{path}: cache body lacks column(s) {missing}")
    ds = SpeedDataset(
        segment_ids=tuple(ids),
        timestamps=pd.DatetimeIndex(pd.to_datetime(df["timestamp"])),
        values=df[speed_cols].to_numpy(dtype=np.float64),
        missing_mask=df[mask_cols].to_numpy().astype(bool),
        step_minutes=int(header["step_minutes"]),
    )
    scaler = Scaler(min=float(header["scaler"]["min"]), max=float(header["scaler"]["max"]))
    fallbacks = {str(k): int(v) for k, v in header.get("imputation_fallbacks", {}).items()}
    return PreparedDataset(ds, scaler, int(header["split_index"]), int(header["seq_len"]), fallbacks)


def load_any(
    path: Path,
    known_segments: Optional[Sequence[str]] = None,
    fraction: float = DEFAULT_TRAIN_FRACTION,
    seq_len: int = 10,
) -> PreparedDataset:
    """Accept either a prepared cache or a raw speeds CSV (prepared on the fly)."""
    if is_prepared(path):
        prep = load_prepared(path)
        if known_segments is None:
            return prep
        return replace(prep, dataset=align_segments(prep.dataset, known_segments))
    ds = load_speeds(path, known_segments)
    if known_segments is not None:
        ds = align_segments(ds, known_segments)
    return prepare(ds, fraction, seq_len)
