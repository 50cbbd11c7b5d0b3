"""End-to-end training: per-window Adam steps with exponential lr decay.

Every window starts from a zero recurrent state, runs l steps in train mode,
and is scored with the window-mean squared error against the next-step
targets. The loss is backpropagated jointly through the node, spatial-edge
and temporal-edge LSTMs and their embeddings, and one Adam step follows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from ..errors import DimensionError, TrainingDivergedError
from ..models.hyperparams import Hyperparams, TrainConfig
from ..services.autodiff import Mode, Node, Tape
from ..services.checkpoint import Checkpoint
from ..services.dataset import make_windows, window_arrays
from ..services.graph import RoadGraph
from ..services.optim import AdamState, adam_step, clip_gradients, learning_rate
from ..services.srnn import StructuralRNN, init_params
from .data import PreparedDataset
from .harness import evaluate_model
from .models import EpochRecord, TrainHistory

logger = logging.getLogger(__name__)


def window_loss(tape: Tape, predictions: Node, targets: np.ndarray) -> Node:
    """Mean of the N*l squared errors of one window (scaled units)."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != predictions.shape:
        raise DimensionError(f"window_loss: predictions {predictions.shape} vs targets {targets.shape}")
    return tape.mean_square(predictions, tape.constant(targets))


def train_step(
    model: StructuralRNN,
    g: RoadGraph,
    inputs: np.ndarray,
    targets: np.ndarray,
    opt: AdamState,
    lr: float,
    rng: Optional[np.random.Generator] = None,
    grad_clip: Optional[float] = None,
    mode: Mode = Mode.TRAIN,
) -> float:
    """One forward/backward/Adam update on a single window; returns the loss.

    `inputs` are rows t0-1 .. t0+l-1 and `targets` rows t0+1 .. t0+l, both
    time-major (rows = time, cols = nodes).
    """
    tape = Tape()
    pred, _ = model.forward_window(tape, model.bind(tape), g, inputs, mode, rng)
    loss = window_loss(tape, pred, np.asarray(targets).T)
    value = float(loss.value[0, 0])
    if not np.isfinite(value):
        raise TrainingDivergedError(f"window loss is {value}")
    grads = clip_gradients(tape.backward(loss), grad_clip)
    adam_step(model.params.arrays, grads, opt, lr)
    return value


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: TrainHistory


def train(
    g: RoadGraph,
    prep: PreparedDataset,
    hp: Hyperparams,
    config: TrainConfig,
    source: str = "",
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    hp.validate()
    config.validate()
    params = init_params(hp, config.seed)
    model = StructuralRNN(params)
    rng = np.random.default_rng(config.seed)
    opt = AdamState()
    history = TrainHistory()

    train_scaled = prep.scaler.transform(prep.train.values)
    windows = make_windows(train_scaled.shape[0], config.seq_len)
    logger.info(
        "training on %d nodes / %d spatial edges, %d windows per epoch, %d scalars",
        g.n, g.num_spatial_edges, len(windows), params.num_scalars(),
    )

    for epoch in range(config.epochs):
        lr = learning_rate(config.lr0, config.decay, epoch)
        order = rng.permutation(windows.starts) if config.shuffle else np.asarray(windows.starts)
        total = 0.0
        for w, t0 in enumerate(order):
            inputs, targets = window_arrays(train_scaled, int(t0), config.seq_len)
            try:
                total += train_step(model, g, inputs, targets, opt, lr, rng, config.grad_clip)
            except TrainingDivergedError as e:
                raise TrainingDivergedError(f"epoch {epoch}, window {w} (start {int(t0)}): {e}") from e
        eval_rmse = evaluate_model(model, g, prep.eval, prep.scaler, config.seq_len).rmse
        record = EpochRecord(epoch=epoch, lr=lr, train_loss=total / len(order), eval_rmse=eval_rmse)
        history.epochs.append(record)
        logger.info("epoch %d lr=%.6g loss=%.6g eval_rmse=%.4f", epoch, lr, record.train_loss, eval_rmse)
        if on_epoch is not None:
            on_epoch(record)

    meta: Dict = {
        "epochs": config.epochs,
        "seed": config.seed,
        "seq_len": config.seq_len,
        "source": source,
        "train_windows": len(windows),
    }
    return TrainResult(Checkpoint(params=params, scaler=prep.scaler, meta=meta), history)
