"""Dataclasses for training history and evaluation reports.

Dataclasses with `to_dict()`; the CLI serializes them to JSON, and tables go
through pandas to CSV. Reports carry no timestamps so two evaluations of the same checkpoint
give identical files; run time lives in the run manifest.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float             # mean window MSE, scaled units
    eval_rmse: Optional[float]    # km/h, final window step

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class TrainHistory:
    epochs: List[EpochRecord] = field(default_factory=list)

    @property
    def mean_train_loss(self) -> Optional[float]:
        losses = [e.train_loss for e in self.epochs]
        return sum(losses) / len(losses) if losses else None

    @property
    def mean_eval_rmse(self) -> Optional[float]:
        scores = [e.eval_rmse for e in self.epochs if e.eval_rmse is not None]
        return sum(scores) / len(scores) if scores else None

    def to_dict(self) -> Dict:
        return {
            "epochs": [e.to_dict() for e in self.epochs],
            "mean_train_loss": self.mean_train_loss,
            "mean_eval_rmse": self.mean_eval_rmse,
        }

    def write_csv(self, path: Path) -> Path:
        rows = [
            {"epoch": e.epoch, "lr": e.lr, "train_loss": e.train_loss, "eval_rmse_kmh": e.eval_rmse}
            for e in self.epochs
        ]
        df = pd.DataFrame(rows, columns=["epoch", "lr", "train_loss", "eval_rmse_kmh"])
        df.to_csv(path, index=False)
        return Path(path)


@dataclass
class EvalResult:
    """Scores of one model (or baseline) on one dataset, km/h."""
    rmse: float                   # final window step, headline number
    mae: float
    mre: float
    per_step_rmse: List[float]    # one entry per window position (empty for baselines)
    windows: int

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class DropoutCheck:
    """Eval-mode scores next to the mean of repeated dropout-on passes, km/h."""
    eval_rmse: float
    mc_rmse: float
    mean_shift: float             # eval-mode minus dropout mean, signed
    mean_abs_shift: float
    samples: int

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class EvalReport:
    """RMSE matrix over (source checkpoint x target dataset) pairs."""
    sources: List[str]
    targets: List[str]
    rmse: Dict[str, Dict[str, float]]
    mae: Dict[str, Dict[str, float]]
    mre: Dict[str, Dict[str, float]]
    baselines: Dict[str, Dict[str, float]]        # kind -> target -> RMSE
    param_counts: Dict[str, int]
    metadata: Dict = field(default_factory=dict)

    def diagonal(self) -> List[float]:
        return [self.rmse[s][s] for s in self.sources if s in self.targets]

    def off_diagonal(self) -> List[float]:
        return [self.rmse[s][t] for s in self.sources for t in self.targets if s != t]

    @property
    def mean_diagonal(self) -> Optional[float]:
        d = self.diagonal()
        return sum(d) / len(d) if d else None

    @property
    def mean_off_diagonal(self) -> Optional[float]:
        d = self.off_diagonal()
        return sum(d) / len(d) if d else None

    @property
    def off_to_diagonal_ratio(self) -> Optional[float]:
        on, off = self.mean_diagonal, self.mean_off_diagonal
        if on is None or off is None or on == 0.0:
            return None
        return off / on

    def to_dict(self) -> Dict:
        out = asdict(self)
        out["summary"] = {
            "mean_diagonal_rmse": self.mean_diagonal,
            "mean_off_diagonal_rmse": self.mean_off_diagonal,
            "off_to_diagonal_ratio": self.off_to_diagonal_ratio,
        }
        return out

    def write_json(self, path: Path) -> Path:
        with Path(path).open("w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        return Path(path)

    def write_csv(self, path: Path) -> Path:
        """Matrix rows per source, then one row per baseline kind."""
        rows = {s: [self.rmse[s][t] for t in self.targets] for s in self.sources}
        for kind, row in self.baselines.items():
            rows[f"baseline:{kind}"] = [row[t] for t in self.targets]
        df = pd.DataFrame.from_dict(rows, orient="index", columns=self.targets)
        df.index.name = "train_source"
        df.to_csv(path)
        return Path(path)
