import math

import numpy as np
import pytest

from app.backtest.harness import (
    BaselineKind,
    HistoricalAverage,
    baseline_predict,
    cross_matrix,
    dropout_check,
    evaluate,
    evaluate_baseline,
    evaluate_model,
    mae,
    mre,
    rmse,
)
from app.backtest.models import EvalReport
from app.errors import CheckpointError, ConfigError, MetricError
from app.models.hyperparams import Hyperparams
from app.services.checkpoint import Checkpoint
from app.services.dataset import make_windows, window_arrays
from app.services.srnn import StructuralRNN, init_params
from tests.conftest import make_dataset

DAY = 96


def test_rmse_examples():
    assert rmse([3.0, 4.0], [3.0, 4.0]) == 0.0
    assert rmse([2, 2], [0, 0]) == 2.0
    assert rmse([1, 3], [0, 0]) == pytest.approx(math.sqrt(5), abs=1e-15)


def test_rmse_symmetric_and_permutation_invariant():
    p, t = np.array([1.0, 5.0, -2.0]), np.array([0.5, 4.0, 1.0])
    assert rmse(p, t) == rmse(t, p)
    order = [2, 0, 1]
    assert rmse(p[order], t[order]) == pytest.approx(rmse(p, t), abs=1e-15)


def test_metrics_reject_empty_or_mismatched():
    with pytest.raises(MetricError):
        rmse([], [])
    with pytest.raises(MetricError):
        mae([1.0], [1.0, 2.0])


def test_mae_and_mre():
    assert mae([1, 3], [2, 5]) == 1.5
    assert mre([11.0, 5.0], [10.0, 0.0]) == pytest.approx(0.1)
    assert math.isnan(mre([1.0], [0.0]))


def test_persistence_on_constant_series_is_exact():
    rows = make_dataset(np.full((30, 2), 42.0))
    assert evaluate_baseline(BaselineKind.PERSISTENCE, rows, 10).rmse == 0.0


def test_persistence_on_alternating_series():
    col = np.where(np.arange(30) % 2 == 0, 40.0, 50.0)
    rows = make_dataset(col.reshape(-1, 1))
    res = evaluate_baseline(BaselineKind.PERSISTENCE, rows, 10)
    assert res.rmse == pytest.approx(10.0)
    assert res.windows == 30 - 10 - 1


def test_persistence_predicts_last_window_value():
    rows = make_dataset(np.arange(20.0).reshape(-1, 1))
    # window t0=3, l=4 sees rows 2..6 and targets row 7
    assert baseline_predict(BaselineKind.PERSISTENCE, rows, 3, 4).tolist() == [6.0]


def test_historical_average_constant_training():
    train = make_dataset(np.full((2 * DAY, 3), 33.0))
    history = HistoricalAverage.fit(train)
    rows = make_dataset(np.zeros((20, 3)), start="2016-01-05 00:00:00")
    pred = baseline_predict(BaselineKind.HISTORICAL_AVERAGE, rows, 1, 4, history)
    assert pred.tolist() == [33.0, 33.0, 33.0]


def test_historical_average_matches_brute_force_slots():
    rng = np.random.default_rng(2)
    train = make_dataset(rng.uniform(20, 80, size=(3 * DAY, 2)))
    history = HistoricalAverage.fit(train)
    for slot in (0, 17, DAY - 1):
        brute = np.mean([train.values[d * DAY + slot] for d in range(3)], axis=0)
        np.testing.assert_allclose(history.predict_slot(slot), brute)


def test_historical_average_needs_history():
    rows = make_dataset(np.zeros((20, 1)))
    with pytest.raises(ConfigError):
        baseline_predict(BaselineKind.HISTORICAL_AVERAGE, rows, 1, 4)


def test_evaluate_needs_a_scaler(tiny_hp, ring4, prepared_ring4):
    ckpt = Checkpoint(params=init_params(tiny_hp))
    with pytest.raises(CheckpointError):
        evaluate(ckpt, ring4, prepared_ring4.eval, 4)


def test_evaluate_is_deterministic(tiny_hp, ring4, prepared_ring4):
    ckpt = Checkpoint(params=init_params(tiny_hp, seed=1), scaler=prepared_ring4.scaler)
    a = evaluate(ckpt, ring4, prepared_ring4.eval, 4)
    b = evaluate(ckpt, ring4, prepared_ring4.eval, 4)
    assert a == b
    assert a.windows == prepared_ring4.eval.num_steps - 5
    assert len(a.per_step_rmse) == 4
    assert a.rmse == pytest.approx(a.per_step_rmse[-1])


def test_cross_matrix_diagonal_equals_evaluate(tiny_hp, ring4, prepared_ring4):
    ckpt = Checkpoint(params=init_params(tiny_hp, seed=1), scaler=prepared_ring4.scaler, meta={"seed": 1})
    report = cross_matrix({"ring4": ckpt}, {"ring4": (ring4, prepared_ring4)}, seq_len=4)
    assert report.rmse == {"ring4": {"ring4": evaluate(ckpt, ring4, prepared_ring4.eval, 4).rmse}}
    assert report.metadata["scaling"] == "target"
    assert report.param_counts == {"ring4": 1485}
    assert set(report.baselines) == {"persistence", "historical-average"}


def test_cross_matrix_runs_across_topologies(tiny_hp, chain, ring4, prepared_ring4):
    from app.backtest.data import prepare
    from app.services.synth import SynthConfig, generate

    prep_chain = prepare(generate(SynthConfig(graph=chain, days=3, seed=2)), 0.75, 4)
    ckpt = Checkpoint(params=init_params(tiny_hp, seed=1), scaler=prepared_ring4.scaler)
    report = cross_matrix(
        {"ring4": ckpt},
        {"ring4": (ring4, prepared_ring4), "chain": (chain, prep_chain)},
        seq_len=4,
    )
    assert report.targets == ["ring4", "chain"]
    assert report.off_diagonal() == [report.rmse["ring4"]["chain"]]
    assert report.mean_diagonal == report.rmse["ring4"]["ring4"]


def test_cross_matrix_rejects_mixed_hyperparams(tiny_hp, ring4, prepared_ring4):
    other = Hyperparams(hidden=4, spatial_hidden=4, temporal_hidden=4, embed=2, dropout=0.0)
    sources = {
        "a": Checkpoint(params=init_params(tiny_hp), scaler=prepared_ring4.scaler),
        "b": Checkpoint(params=init_params(other), scaler=prepared_ring4.scaler),
    }
    with pytest.raises(ConfigError):
        cross_matrix(sources, {"r": (ring4, prepared_ring4)}, seq_len=4)


def test_report_summary_and_files(tmp_path):
    report = EvalReport(
        sources=["A", "B"],
        targets=["A", "B"],
        rmse={"A": {"A": 2.0, "B": 3.0}, "B": {"A": 5.0, "B": 4.0}},
        mae={"A": {"A": 1.0, "B": 1.0}, "B": {"A": 1.0, "B": 1.0}},
        mre={"A": {"A": 0.1, "B": 0.1}, "B": {"A": 0.1, "B": 0.1}},
        baselines={"persistence": {"A": 6.0, "B": 7.0}},
        param_counts={"A": 10, "B": 10},
    )
    assert report.diagonal() == [2.0, 4.0]
    assert report.mean_off_diagonal == 4.0
    assert report.off_to_diagonal_ratio == pytest.approx(4.0 / 3.0)
    lines = report.write_csv(tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "train_source,A,B"
    assert lines[-1] == "baseline:persistence,6.0,7.0"
    first = report.write_json(tmp_path / "r.json").read_bytes()
    assert report.write_json(tmp_path / "r2.json").read_bytes() == first


def test_batched_evaluation_matches_window_by_window(tiny_hp, ring4, prepared_ring4):
    model = StructuralRNN(init_params(tiny_hp, seed=1))
    scaler, rows = prepared_ring4.scaler, prepared_ring4.eval
    batched = evaluate_model(model, ring4, rows, scaler, 4)
    assert evaluate_model(model, ring4, rows, scaler, 4, batch=7).rmse == pytest.approx(batched.rmse, rel=1e-12)

    scaled = scaler.transform(rows.values)
    preds, truths = [], []
    for t0 in make_windows(rows.num_steps, 4).starts:
        inputs, _ = window_arrays(scaled, t0, 4)
        preds.append(scaler.inverse(model.predict(ring4, inputs)[:, -1]))
        truths.append(rows.values[t0 + 4])
    assert batched.rmse == pytest.approx(rmse(np.concatenate(preds), np.concatenate(truths)), rel=1e-12)


def test_dropout_check_without_dropout_has_no_shift(tiny_hp, ring4, prepared_ring4):
    model = StructuralRNN(init_params(tiny_hp, seed=1))
    check = dropout_check(model, ring4, prepared_ring4.eval, prepared_ring4.scaler, 4, samples=2)
    assert check.mc_rmse == check.eval_rmse
    assert check.mean_abs_shift == 0.0


def test_dropout_check_with_dropout(ring4, prepared_ring4):
    hp = Hyperparams(hidden=8, spatial_hidden=8, temporal_hidden=8, embed=4, dropout=0.5)
    model = StructuralRNN(init_params(hp, seed=1))
    check = dropout_check(model, ring4, prepared_ring4.eval, prepared_ring4.scaler, 4, samples=4, seed=3)
    assert check.samples == 4
    assert check.mean_abs_shift > 0.0 and math.isfinite(check.mc_rmse)
    with pytest.raises(ConfigError):
        dropout_check(model, ring4, prepared_ring4.eval, prepared_ring4.scaler, 4, samples=0)
