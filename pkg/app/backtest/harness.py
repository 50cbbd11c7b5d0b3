"""Evaluation harness: metrics, baselines, and the cross-topology matrix.

At every window the model sees rows t0-1 .. t0+l-1 only and is scored on its
prediction for row t0+l, one 15-minute-ahead forecast per window, after
inverting the scaler back to km/h. Windows are visited in a fixed order so
reductions are reproducible.

Cross-topology cells use the TARGET dataset's scaler for both input scaling
and inversion; checkpoints carry no topology, so any source runs on any
target graph without retraining.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..errors import CheckpointError, ConfigError, MetricError
from ..services.autodiff import Mode
from ..services.checkpoint import Checkpoint
from ..services.dataset import Scaler, SpeedDataset, make_windows, window_arrays
from ..services.graph import RoadGraph
from ..services.srnn import StructuralRNN, param_count
from . import HARNESS_VERSION
from .data import PreparedDataset
from .models import DropoutCheck, EvalReport, EvalResult

logger = logging.getLogger(__name__)

EVAL_BATCH = 128


def _pair(predictions, truths) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(truths, dtype=np.float64).reshape(-1)
    if p.size == 0 or t.size == 0:
        raise MetricError("metric needs at least one prediction")
    if p.size != t.size:
        raise MetricError(f"{p.size} predictions vs {t.size} truths")
    return p, t


def rmse(predictions, truths) -> float:
    p, t = _pair(predictions, truths)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def mae(predictions, truths) -> float:
    p, t = _pair(predictions, truths)
    return float(np.mean(np.abs(p - t)))


def mre(predictions, truths) -> float:
    """Mean relative error over truths > 0; NaN if there are none."""
    p, t = _pair(predictions, truths)
    keep = t > 0
    if not keep.any():
        return float("nan")
    return float(np.mean(np.abs(p[keep] - t[keep]) / t[keep]))


# -- baselines -----------------------------------------------------------------

class BaselineKind(str, Enum):
    PERSISTENCE = "persistence"
    HISTORICAL_AVERAGE = "historical-average"


@dataclass(frozen=True)
class HistoricalAverage:
    """Training-set mean speed per (time-of-day slot, segment)."""
    slot_means: np.ndarray      # slots_per_day x N, NaN for unseen slots
    fallback: np.ndarray        # N, per-segment training mean
    step_minutes: int

    @classmethod
    def fit(cls, train: SpeedDataset) -> "HistoricalAverage":
        slots = train.time_slots()
        means = np.full((train.slots_per_day, train.n), np.nan)
        for s in np.unique(slots):
            means[s] = train.values[slots == s].mean(axis=0)
        return cls(slot_means=means, fallback=train.values.mean(axis=0), step_minutes=train.step_minutes)

    def predict_slot(self, slot: int) -> np.ndarray:
        row = self.slot_means[slot]
        return np.where(np.isnan(row), self.fallback, row)


def baseline_predict(
    kind: BaselineKind,
    rows: SpeedDataset,
    t0: int,
    seq_len: int,
    history: Optional[HistoricalAverage] = None,
) -> np.ndarray:
    """km/h prediction for row t0 + seq_len of `rows` (one value per segment)."""
    kind = BaselineKind(kind)
    target = t0 + seq_len
    if kind is BaselineKind.PERSISTENCE:
        return rows.values[target - 1].copy()
    if history is None:
        raise ConfigError("historical-average baseline needs training rows")
    return history.predict_slot(int(rows.time_slots()[target]))


# -- model evaluation ----------------------------------------------------------

def _window_stack(scaled: np.ndarray, starts, seq_len: int) -> np.ndarray:
    return np.stack([window_arrays(scaled, int(t0), seq_len)[0] for t0 in starts])


def _truth_stack(values: np.ndarray, starts, seq_len: int) -> np.ndarray:
    return np.stack([values[t0 + 1:t0 + seq_len + 1].T for t0 in starts])


def evaluate_model(
    model: StructuralRNN,
    g: RoadGraph,
    rows: SpeedDataset,
    scaler: Scaler,
    seq_len: int,
    batch: int = EVAL_BATCH,
) -> EvalResult:
    """Eval-mode scores; windows run `batch` at a time as stacked graph copies."""
    scaled = scaler.transform(rows.values)
    windows = make_windows(rows.num_steps, seq_len)
    finals: List[np.ndarray] = []
    truths: List[np.ndarray] = []
    step_sq = np.zeros(seq_len)
    for lo in range(0, len(windows), batch):
        starts = windows.starts[lo:lo + batch]
        pred = scaler.inverse(model.predict_batch(g, _window_stack(scaled, starts, seq_len)))
        truth = _truth_stack(rows.values, starts, seq_len)          # W x N x l, km/h
        step_sq += np.sum((pred - truth) ** 2, axis=(0, 1))
        finals.append(pred[:, :, -1].reshape(-1))
        truths.append(truth[:, :, -1].reshape(-1))
    p, t = np.concatenate(finals), np.concatenate(truths)
    per_step = np.sqrt(step_sq / (len(windows) * g.n)).tolist()
    return EvalResult(rmse=rmse(p, t), mae=mae(p, t), mre=mre(p, t), per_step_rmse=per_step, windows=len(windows))


def dropout_check(
    model: StructuralRNN,
    g: RoadGraph,
    rows: SpeedDataset,
    scaler: Scaler,
    seq_len: int,
    samples: int = 20,
    seed: int = 0,
    batch: int = EVAL_BATCH,
) -> DropoutCheck:
    """Eval-mode final-step predictions against the mean of `samples`
    train-mode (dropout on) passes over the same windows."""
    if samples < 1:
        raise ConfigError(f"dropout check needs at least one sample, got {samples}")
    rng = np.random.default_rng(seed)
    scaled = scaler.transform(rows.values)
    windows = make_windows(rows.num_steps, seq_len)
    det: List[np.ndarray] = []
    mc: List[np.ndarray] = []
    truths: List[np.ndarray] = []
    for lo in range(0, len(windows), batch):
        starts = windows.starts[lo:lo + batch]
        stack = _window_stack(scaled, starts, seq_len)
        det.append(scaler.inverse(model.predict_batch(g, stack)[:, :, -1]).reshape(-1))
        total = np.zeros((len(starts), g.n))
        for _ in range(samples):
            total += model.predict_batch(g, stack, Mode.TRAIN, rng)[:, :, -1]
        mc.append(scaler.inverse(total / samples).reshape(-1))
        truths.append(_truth_stack(rows.values, starts, seq_len)[:, :, -1].reshape(-1))
    d, m, t = np.concatenate(det), np.concatenate(mc), np.concatenate(truths)
    return DropoutCheck(
        eval_rmse=rmse(d, t),
        mc_rmse=rmse(m, t),
        mean_shift=float(np.mean(d - m)),
        mean_abs_shift=float(np.mean(np.abs(d - m))),
        samples=samples,
    )


def evaluate(
    ckpt: Checkpoint,
    g: RoadGraph,
    rows: SpeedDataset,
    seq_len: Optional[int] = None,
    scaler: Optional[Scaler] = None,
) -> EvalResult:
    """Eval-mode score of a checkpoint on (km/h) rows of any graph."""
    scaler = scaler if scaler is not None else ckpt.scaler
    if scaler is None:
        raise CheckpointError("checkpoint carries no scaler and none was given")
    if seq_len is None:
        seq_len = int(ckpt.meta.get("seq_len", 10))
    return evaluate_model(StructuralRNN(ckpt.params), g, rows, scaler, seq_len)


def evaluate_baseline(
    kind: BaselineKind,
    rows: SpeedDataset,
    seq_len: int,
    history: Optional[HistoricalAverage] = None,
) -> EvalResult:
    windows = make_windows(rows.num_steps, seq_len)
    preds = [baseline_predict(kind, rows, t0, seq_len, history) for t0 in windows.starts]
    truths = [rows.values[t0 + seq_len] for t0 in windows.starts]
    p, t = np.concatenate(preds), np.concatenate(truths)
    return EvalResult(rmse=rmse(p, t), mae=mae(p, t), mre=mre(p, t), per_step_rmse=[], windows=len(windows))


def cross_matrix(
    sources: Mapping[str, Checkpoint],
    targets: Mapping[str, Tuple[RoadGraph, PreparedDataset]],
    seq_len: int = 10,
    seed: Optional[int] = None,
) -> EvalReport:
    """Score every source checkpoint on every target's evaluation rows."""
    if not sources or not targets:
        raise ConfigError("cross-evaluation needs at least one checkpoint and one target")
    hps = {name: ckpt.hyperparams for name, ckpt in sources.items()}
    if len(set(hps.values())) != 1:
        raise ConfigError(f"checkpoints disagree on hyperparameters: {hps}")

    rmse_m: Dict[str, Dict[str, float]] = {s: {} for s in sources}
    mae_m: Dict[str, Dict[str, float]] = {s: {} for s in sources}
    mre_m: Dict[str, Dict[str, float]] = {s: {} for s in sources}
    for s, ckpt in sources.items():
        for t, (g, prep) in targets.items():
            res = evaluate(ckpt, g, prep.eval, seq_len, scaler=prep.scaler)
            rmse_m[s][t], mae_m[s][t], mre_m[s][t] = res.rmse, res.mae, res.mre
            logger.info("cell %s -> %s: rmse=%.4f km/h over %d windows", s, t, res.rmse, res.windows)

    baselines: Dict[str, Dict[str, float]] = {k.value: {} for k in BaselineKind}
    windows: Dict[str, int] = {}
    for t, (_, prep) in targets.items():
        history = HistoricalAverage.fit(prep.train)
        for kind in BaselineKind:
            res = evaluate_baseline(kind, prep.eval, seq_len, history)
            baselines[kind.value][t] = res.rmse
        windows[t] = len(make_windows(prep.eval.num_steps, seq_len))

    return EvalReport(
        sources=list(sources),
        targets=list(targets),
        rmse=rmse_m,
        mae=mae_m,
        mre=mre_m,
        baselines=baselines,
        param_counts={s: param_count(ckpt.hyperparams) for s, ckpt in sources.items()},
        metadata={
            "harness_version": HARNESS_VERSION,
            "scaling": "target",
            "seq_len": seq_len,
            "seed": seed,
            "source_seeds": {s: ckpt.meta.get("seed") for s, ckpt in sources.items()},
            "windows": windows,
            "hyperparams": next(iter(hps.values())).to_dict(),
        },
    )
