"""Synthetic road-speed generator with known spatio-temporal structure.

    x_u^t = clamp(mu(t) + s_u^t, 0, 2 * base)
    mu(t) = base + amplitude * sin(2 pi t / slots_per_day)
    s^t   = rho * s^{t-1} + kappa * A_hat s^{t-1} + eps^t,   eps ~ N(0, sigma^2)

A_hat is the symmetrized adjacency with rows normalized to 1 (rows of
isolated nodes stay 0) and s^0 = 0. The residual mixes a node's own past with
its neighbours' past, the two influences the structural RNN models with its
temporal and spatial edges.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import ConfigError
from .dataset import MINUTES_PER_DAY, SpeedDataset
from .graph import RoadGraph, build_graph

logger = logging.getLogger(__name__)

SYNTH_START = "2016-01-01 00:00:00"


@dataclass(frozen=True)
class SynthConfig:
    graph: RoadGraph
    days: int = 60
    step_minutes: int = 15
    base: float = 50.0
    amplitude: float = 20.0
    rho: float = 0.6
    kappa: float = 0.3
    sigma: float = 3.0
    seed: int = 0

    def validate(self) -> "SynthConfig":
        if self.days < 1:
            raise ConfigError(f"days must be >= 1, got {self.days}")
        if self.step_minutes < 1 or MINUTES_PER_DAY % self.step_minutes:
            raise ConfigError(f"step of {self.step_minutes} min does not divide a day")
        if self.rho < 0 or self.kappa < 0 or self.rho + self.kappa >= 1.0:
            raise ConfigError(f"need rho, kappa >= 0 and rho + kappa < 1, got {self.rho} + {self.kappa}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if self.base - self.amplitude < 0:
            raise ConfigError(f"base - amplitude must be >= 0, got {self.base} - {self.amplitude}")
        return self

    def process(self) -> Dict[str, float]:
        return {
            "base": self.base,
            "amplitude": self.amplitude,
            "rho": self.rho,
            "kappa": self.kappa,
            "sigma": self.sigma,
            "step_minutes": self.step_minutes,
        }

    def to_dict(self) -> Dict:
        out = {k: v for k, v in asdict(self).items() if k != "graph"}
        out["segment_ids"] = list(self.graph.segment_ids)
        return out


def coupling_matrix(g: RoadGraph) -> np.ndarray:
    sym = ((g.adjacency + g.adjacency.T) > 0).astype(np.float64)
    np.fill_diagonal(sym, 0.0)
    degree = sym.sum(axis=1, keepdims=True)
    return np.divide(sym, degree, out=np.zeros_like(sym), where=degree > 0)


def generate(cfg: SynthConfig) -> SpeedDataset:
    cfg.validate()
    g = cfg.graph
    slots = MINUTES_PER_DAY // cfg.step_minutes
    num_steps = cfg.days * slots
    rng = np.random.default_rng(cfg.seed)
    a_hat = coupling_matrix(g)

    # phase from the time-of-day slot keeps the cycle exactly periodic
    phase = (np.arange(num_steps) % slots).astype(np.float64)
    mu = cfg.base + cfg.amplitude * np.sin(2.0 * np.pi * phase / slots)

    residual = np.zeros((num_steps, g.n))
    for k in range(1, num_steps):
        prev = residual[k - 1]
        noise = rng.normal(0.0, cfg.sigma, size=g.n) if cfg.sigma > 0 else 0.0
        residual[k] = cfg.rho * prev + cfg.kappa * (a_hat @ prev) + noise

    raw = mu[:, None] + residual
    upper = 2.0 * cfg.base
    clamped = int(np.count_nonzero((raw < 0.0) | (raw > upper)))
    if clamped:
        logger.warning("synthetic series: clamped %d value(s) to [0, %.1f]", clamped, upper)
    values = np.clip(raw, 0.0, upper)

    stamps = pd.date_range(SYNTH_START, periods=num_steps, freq=f"{cfg.step_minutes}min")
    return SpeedDataset(
        segment_ids=g.segment_ids,
        timestamps=stamps,
        values=values,
        missing_mask=np.zeros(values.shape, dtype=bool),
        step_minutes=cfg.step_minutes,
    )


def generate_pair(cfg_a: SynthConfig, cfg_b: SynthConfig) -> Tuple[SpeedDataset, SpeedDataset]:
    """Two datasets from one process family on (usually) different graphs."""
    if cfg_a.process() != cfg_b.process():
        raise ConfigError(
            f"process constants differ: {cfg_a.process()} vs {cfg_b.process()}"
        )
    return generate(cfg_a), generate(cfg_b)


def ring_graph(n: int, chords: Sequence[Tuple[int, int]] = (), prefix: str = "") -> RoadGraph:
    """Directed ring 0 -> 1 -> ... -> n-1 -> 0 plus extra chord edges."""
    if n < 1:
        raise ConfigError(f"ring needs at least one node, got {n}")
    adj = np.zeros((n, n))
    if n > 1:
        for u in range(n):
            adj[u, (u + 1) % n] = 1.0
    for u, v in chords:
        if not (0 <= u < n and 0 <= v < n) or u == v:
            raise ConfigError(f"chord ({u}, {v}) is not a valid edge of a {n}-node ring")
        adj[u, v] = 1.0
    return build_graph([f"{prefix}{i}" for i in range(n)], adj)
