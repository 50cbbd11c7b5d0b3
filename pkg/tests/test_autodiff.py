import numpy as np
import pytest

from app.errors import ConfigError, ContractError, DimensionError, RowIndexError
from app.services.autodiff import Mode, RowGather, Tape, grad_check, relative_error
from app.services.srnn import lstm_cell


def _quadratic(params):
    tape = Tape()
    w = tape.parameter("w", params["w"])
    b = tape.parameter("b", params["b"])
    x = tape.constant(np.array([[1.0, -2.0], [0.5, 3.0]]))
    h = tape.tanh(tape.add_row(tape.matmul(x, w), b))
    target = tape.constant(np.array([[0.1, 0.2, 0.3], [-0.1, 0.0, 0.4]]))
    return tape, tape.mean_square(h, target)


@pytest.fixture
def qparams():
    rng = np.random.default_rng(7)
    return {"w": rng.normal(size=(2, 3)), "b": rng.normal(size=(1, 3))}


def test_matmul_gradients_match_closed_form():
    tape = Tape()
    a = tape.parameter("a", np.array([[1.0, 2.0]]))
    b = tape.parameter("b", np.array([[3.0], [4.0]]))
    grads = tape.backward(tape.matmul(a, b))
    np.testing.assert_allclose(grads["a"], [[3.0, 4.0]])
    np.testing.assert_allclose(grads["b"], [[1.0], [2.0]])


def test_backward_twice_doubles_adjoints(qparams):
    tape, loss = _quadratic(qparams)
    once = {k: v.copy() for k, v in tape.backward(loss).items()}
    twice = tape.backward(loss)
    for name in once:
        np.testing.assert_array_equal(twice[name], 2.0 * once[name])


def test_reset_clears_adjoints(qparams):
    tape, loss = _quadratic(qparams)
    tape.backward(loss)
    tape.reset()
    assert all(not n.adjoint.any() for n in tape.nodes)


def test_backward_rejects_non_scalar_loss():
    tape = Tape()
    x = tape.parameter("x", np.ones((2, 2)))
    with pytest.raises(ContractError):
        tape.backward(x)


def test_nodes_from_another_tape_are_rejected():
    other = Tape()
    foreign = other.constant(np.ones((1, 1)))
    tape = Tape()
    tape.constant(np.ones((1, 1)))
    tape.constant(np.ones((1, 1)))
    with pytest.raises(ContractError):
        tape.relu(foreign)


def test_shape_mismatches_raise_dimension_error():
    tape = Tape()
    a = tape.constant(np.ones((2, 3)))
    b = tape.constant(np.ones((2, 3)))
    with pytest.raises(DimensionError):
        tape.matmul(a, b)
    with pytest.raises(DimensionError):
        tape.add(a, tape.constant(np.ones((3, 2))))
    with pytest.raises(DimensionError):
        tape.add_row(a, tape.constant(np.ones((1, 2))))


def test_row_select_accumulates_repeated_rows():
    tape = Tape()
    a = tape.parameter("a", np.arange(6.0).reshape(3, 2))
    picked = tape.row_select(a, [2, 0, 2])
    np.testing.assert_array_equal(picked.value, [[4, 5], [0, 1], [4, 5]])
    grads = tape.backward(tape.sum(picked))
    np.testing.assert_array_equal(grads["a"], [[1, 1], [0, 0], [2, 2]])


def test_row_select_out_of_range():
    tape = Tape()
    a = tape.constant(np.ones((2, 2)))
    with pytest.raises(RowIndexError):
        tape.row_select(a, [2])


def test_row_sum_of_zero_rows_is_zero_row():
    tape = Tape()
    a = tape.constant(np.ones((3, 4)))
    empty = tape.row_select(a, [])
    total = tape.row_sum(empty)
    assert total.shape == (1, 4)
    assert not total.value.any()


def test_relu_subgradient_at_zero_is_zero():
    tape = Tape()
    x = tape.parameter("x", np.array([[-1.0, 0.0, 2.0]]))
    grads = tape.backward(tape.sum(tape.relu(x)))
    np.testing.assert_array_equal(grads["x"], [[0.0, 0.0, 1.0]])


def test_sigmoid_is_stable_for_large_inputs():
    tape = Tape()
    s = tape.sigmoid(tape.constant(np.array([[-800.0, 0.0, 800.0]])))
    assert np.all(np.isfinite(s.value))
    np.testing.assert_allclose(s.value, [[0.0, 0.5, 1.0]])


def test_dropout_eval_mode_is_identity():
    tape = Tape()
    x = tape.constant(np.arange(4.0).reshape(2, 2))
    out = tape.dropout(x, 0.5, Mode.EVAL)
    np.testing.assert_array_equal(out.value, x.value)


def test_dropout_train_mode_scales_survivors():
    tape = Tape()
    x = tape.constant(np.ones((1000, 100)))
    out = tape.dropout(x, 0.5, Mode.TRAIN, np.random.default_rng(0))
    assert set(np.unique(out.value)) <= {0.0, 2.0}
    assert 0.49 <= np.mean(out.value == 0.0) <= 0.51


def test_sum_of_parameters_has_unit_gradient():
    tape = Tape()
    p = tape.parameter("p", np.arange(6.0).reshape(2, 3))
    grads = tape.backward(tape.sum(p))
    np.testing.assert_array_equal(grads["p"], np.ones((2, 3)))


def test_dropout_rate_must_be_below_one():
    tape = Tape()
    x = tape.constant(np.ones((1, 1)))
    with pytest.raises(ConfigError):
        tape.dropout(x, 1.0, Mode.TRAIN, np.random.default_rng(0))


def test_train_dropout_without_rng_is_a_contract_error():
    tape = Tape()
    x = tape.constant(np.ones((1, 1)))
    with pytest.raises(ContractError):
        tape.dropout(x, 0.3, Mode.TRAIN)


def test_grad_check_passes_on_smooth_function(qparams):
    report = grad_check(_quadratic, qparams, tolerance=1e-6)
    assert report.passed, report.to_dict()
    assert set(report.errors) == {"w", "b"}


def test_grad_check_restores_parameters(qparams):
    before = {k: v.copy() for k, v in qparams.items()}
    grad_check(_quadratic, qparams)
    for k in before:
        np.testing.assert_array_equal(qparams[k], before[k])


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([0.0]))[0] == 0.0
    assert relative_error(np.array([1.0]), np.array([1.0]))[0] == 0.0
    assert relative_error(np.array([1.0]), np.array([-1.0]))[0] == pytest.approx(1.0)


def test_random_matmul_matches_finite_differences():
    rng = np.random.default_rng(31)
    params = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 2))}
    target = rng.normal(size=(3, 2))

    def build(p):
        tape = Tape()
        prod = tape.matmul(tape.parameter("a", p["a"]), tape.parameter("b", p["b"]))
        return tape, tape.mean_square(prod, tape.constant(target))

    report = grad_check(build, params, step=1e-5, tolerance=1e-6)
    assert report.passed, report.to_dict()


def test_tanh_gradient_at_zero_is_one():
    tape = Tape()
    x = tape.parameter("x", np.zeros((1, 1)))
    grads = tape.backward(tape.sum(tape.tanh(x)))
    assert grads["x"][0, 0] == pytest.approx(1.0, abs=1e-8)
    step = 1e-5
    assert (np.tanh(step) - np.tanh(-step)) / (2 * step) == pytest.approx(1.0, abs=1e-8)


def test_linear_model_mse_gradient_closed_form():
    rng = np.random.default_rng(2)
    X, y, w = rng.normal(size=(7, 3)), rng.normal(size=(7, 1)), rng.normal(size=(3, 1))
    tape = Tape()
    loss = tape.mean_square(tape.matmul(tape.constant(X), tape.parameter("w", w)), tape.constant(y))
    grads = tape.backward(loss)
    np.testing.assert_allclose(grads["w"], 2.0 * X.T @ (X @ w - y) / 7, rtol=1e-12)


def test_lstm_cell_single_step_gradient_check():
    rng = np.random.default_rng(12)
    params = {"weight": rng.uniform(-0.6, 0.6, (5, 12)), "bias": rng.uniform(-0.5, 0.5, (1, 12))}
    x = rng.uniform(0.3, 0.9, (2, 2))
    h0, c0 = rng.uniform(0.2, 0.6, (2, 3)), rng.uniform(-0.6, -0.2, (2, 3))
    target = rng.uniform(-1.0, 1.0, (2, 3))

    def build(p):
        tape = Tape()
        layer = {"weight": tape.parameter("weight", p["weight"]), "bias": tape.parameter("bias", p["bias"])}
        h, c = lstm_cell(tape, tape.constant(x), tape.constant(h0), tape.constant(c0), layer)
        goal = tape.constant(target)
        return tape, tape.add(tape.mean_square(h, goal), tape.mean_square(c, goal))

    report = grad_check(build, params, tolerance=1e-6)
    assert report.passed, report.to_dict()


def test_fused_lstm_ops_match_primitive_composition():
    rng = np.random.default_rng(3)
    z_val, c_val = rng.normal(size=(4, 8)), rng.normal(size=(4, 2))
    tape = Tape()
    z, c_prev = tape.constant(z_val), tape.constant(c_val)
    c = tape.lstm_memory(z, c_prev)
    h = tape.lstm_hidden(z, c)

    gates = tape.sigmoid(z)
    i, f, o = (tape.slice_cols(gates, 2 * k, 2 * k + 2) for k in range(3))
    cand = tape.tanh(tape.slice_cols(z, 6, 8))
    c_ref = tape.add(tape.mul(f, c_prev), tape.mul(i, cand))
    h_ref = tape.mul(o, tape.tanh(c_ref))
    np.testing.assert_array_equal(c.value, c_ref.value)
    np.testing.assert_array_equal(h.value, h_ref.value)
    with pytest.raises(DimensionError):
        tape.lstm_memory(z, tape.constant(np.zeros((4, 3))))


def test_linear_matches_matmul_plus_bias_row():
    rng = np.random.default_rng(8)
    xv, wv, bv = rng.normal(size=(5, 3)), rng.normal(size=(3, 4)), rng.normal(size=(1, 4))

    fused = Tape()
    out = fused.linear(fused.constant(xv), fused.parameter("w", wv), fused.parameter("b", bv))
    g_fused = fused.backward(fused.sum(out))

    plain = Tape()
    ref = plain.add_row(plain.matmul(plain.constant(xv), plain.parameter("w", wv)), plain.parameter("b", bv))
    g_plain = plain.backward(plain.sum(ref))

    np.testing.assert_array_equal(out.value, ref.value)
    for name in ("w", "b"):
        np.testing.assert_allclose(g_fused[name], g_plain[name], rtol=1e-14)
    with pytest.raises(DimensionError):
        fused.linear(fused.constant(xv), fused.constant(wv), fused.constant(np.zeros((1, 3))))


def test_gather_sum_matches_select_then_sum():
    rng = np.random.default_rng(5)
    h = rng.normal(size=(6, 3))
    lists = [(4, 1, 5), (), (0,), (2, 3, 1, 0)]
    plan = RowGather.from_lists(lists, 6)
    tape = Tape()
    a = tape.parameter("a", h)
    out = tape.gather_sum(a, plan)
    assert out.shape == (4, 3)
    for r, rows in enumerate(lists):
        ref = tape.row_sum(tape.row_select(a, sorted(rows)))
        np.testing.assert_array_equal(out.value[r:r + 1], ref.value)

    other = Tape()
    grads = other.backward(other.sum(other.gather_sum(other.parameter("a", h), plan)))
    np.testing.assert_array_equal(grads["a"][:, 0], [2, 2, 1, 1, 1, 1])


def test_gather_plan_checks_indices():
    with pytest.raises(RowIndexError):
        RowGather.from_lists([(0,), (6,)], 6)
    tape = Tape()
    with pytest.raises(DimensionError):
        tape.gather_sum(tape.constant(np.ones((5, 2))), RowGather.from_lists([(0,)], 6))


def test_shapes_close_over_random_compositions():
    rng = np.random.default_rng(21)
    for _ in range(25):
        r, k, c = (int(v) for v in rng.integers(1, 6, size=3))
        tape = Tape()
        a = tape.parameter("a", rng.normal(size=(r, k)))
        b = tape.parameter("b", rng.normal(size=(k, c)))
        bias = tape.parameter("bias", rng.normal(size=(1, c)))
        m = tape.matmul(a, b)
        lin = tape.linear(a, b, bias)
        mixed = tape.mul(tape.tanh(m), tape.sigmoid(lin))
        joined = tape.concat_cols(mixed, tape.relu(m))
        back = tape.slice_cols(joined, c, 2 * c)
        picked = tape.row_select(back, rng.integers(0, r, size=k))
        total = tape.row_sum(picked)
        assert (m.shape, lin.shape, mixed.shape) == ((r, c),) * 3
        assert joined.shape == (r, 2 * c) and back.shape == (r, c)
        assert picked.shape == (k, c) and total.shape == (1, c)
        grads = tape.backward(tape.sum(tape.add_row(tape.sub(back, mixed), total)))
        for name, node in (("a", a), ("b", b), ("bias", bias)):
            assert grads[name].shape == node.shape
