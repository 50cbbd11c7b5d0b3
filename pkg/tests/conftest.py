import numpy as np
import pandas as pd
import pytest

from app.backtest.data import prepare
from app.models.hyperparams import Hyperparams, TrainConfig
from app.services.dataset import SpeedDataset
from app.services.graph import build_graph
from app.services.synth import SynthConfig, generate, ring_graph


@pytest.fixture
def tiny_hp():
    return Hyperparams(hidden=8, spatial_hidden=8, temporal_hidden=8, embed=4, dropout=0.0)


@pytest.fixture
def chain():
    """a -> b -> c"""
    return build_graph(["a", "b", "c"], [[0, 1, 0], [0, 0, 1], [0, 0, 0]])


@pytest.fixture
def ring4():
    return ring_graph(4, prefix="r")


def make_dataset(values, ids=None, start="2016-01-01 00:00:00", step_minutes=15):
    values = np.asarray(values, dtype=np.float64)
    ids = tuple(ids or (f"s{i}" for i in range(values.shape[1])))
    stamps = pd.date_range(start, periods=values.shape[0], freq=f"{step_minutes}min")
    return SpeedDataset(
        segment_ids=ids,
        timestamps=stamps,
        values=values,
        missing_mask=np.isnan(values),
        step_minutes=step_minutes,
    )


@pytest.fixture
def synth_ring4(ring4):
    return generate(SynthConfig(graph=ring4, days=3, seed=1))


@pytest.fixture
def prepared_ring4(synth_ring4):
    return prepare(synth_ring4, 0.75, 4)


@pytest.fixture
def quick_config():
    return TrainConfig(epochs=1, lr0=0.005, decay=0.99, seed=3, seq_len=4)


def write_speeds_csv(path, ds):
    ds.to_frame().to_csv(path, date_format="%Y-%m-%d %H:%M:%S")
    return path
