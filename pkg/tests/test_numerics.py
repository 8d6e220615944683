import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kagrmn_dsg import numerics as nx
from kagrmn_dsg.numerics import (
    Adam,
    AdamState,
    CheckpointError,
    MissingGradientError,
    ParameterStore,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    adam_step,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from kagrmn_dsg.pipeline.gradcheck import check_op, check_tensors, op_cases


def test_matmul_shapes_and_value():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((3, 4)))
    out = a @ b
    assert out.shape == (2, 4)
    assert np.all(out.data == 3.0)


def test_matmul_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError) as err:
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 4)))
    msg = str(err.value)
    assert "matmul" in msg and "(2, 3)" in msg and "(2, 4)" in msg


def test_softmax_uniform_and_relu():
    np.testing.assert_allclose(nx.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-7)
    assert nx.relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]


def test_matmul_gradient_matches_finite_difference():
    with nx.verification_mode():
        rng = np.random.default_rng(7)
        probe = rng.normal(size=(2, 4))
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        errs = check_tensors(lambda: nx.tensor_sum(a @ b * Tensor(probe)), [a, b])
    assert max(errs.values()) <= 1e-5


def test_backward_sum_and_square():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = nx.tensor_sum(x)
    tape.backward(loss)
    assert x.grad.tolist() == [1.0, 1.0, 1.0]
    y = Tensor([1.0, 2.0], requires_grad=True)
    with Tape():
        loss = nx.tensor_sum(y * y)
    nx.backward(loss)
    assert y.grad.tolist() == [2.0, 4.0]


def test_backward_twice_raises():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        loss = nx.tensor_sum(x * x)
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)


def test_backward_preconditions():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = x * x
    with pytest.raises(ShapeError):
        tape.backward(y)
    with pytest.raises(TapeError):
        Tape().backward(Tensor([1.0]))
    with pytest.raises(TapeError):
        nx.backward(nx.tensor_sum(x))  # no active tape


def test_random_four_op_graph_matches_finite_difference():
    with nx.verification_mode():
        rng = np.random.default_rng(3)
        W = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        x = Tensor(rng.normal(size=4), requires_grad=True)

        def loss():
            return nx.cross_entropy(nx.sigmoid(x @ W) * Tensor([1.0, -2.0, 0.5]), 1)

        errs = check_tensors(loss, [W, x])
    assert max(errs.values()) <= 1e-5


@pytest.mark.parametrize("name", sorted(op_cases(np.random.default_rng(0))))
def test_every_op_matches_finite_difference_over_20_seeds(name):
    worst = max(check_op(name, seed) for seed in range(20))
    assert worst <= 1e-5, (name, worst)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_is_a_distribution(xs):
    p = nx.softmax(Tensor(xs, dtype=np.float64)).data
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-6


def test_softmax_rows_of_matrix_sum_to_one():
    x = Tensor(np.random.default_rng(0).normal(size=(5, 7)) * 10)
    np.testing.assert_allclose(nx.softmax(x).data.sum(axis=1), 1.0, atol=1e-6)


def test_cross_entropy_of_uniform_prediction_is_ln3():
    with nx.precision(np.float64):
        ce = nx.cross_entropy(Tensor([0.0, 0.0, 0.0]), 2).item()
        nll = nx.nll_from_probs(Tensor([1 / 3, 1 / 3, 1 / 3]), 0).item()
    assert abs(ce - math.log(3)) <= 1e-9
    assert abs(nll - math.log(3)) <= 1e-9


def test_nll_clamps_zero_probability():
    with nx.precision(np.float64):
        assert nx.nll_from_probs(Tensor([0.0, 1.0, 0.0]), 0).item() == pytest.approx(-math.log(1e-12))


def test_dropout_eval_is_identity():
    x = Tensor(np.arange(6.0))
    assert nx.dropout(x, 0.3, np.random.default_rng(0), train=False) is x


def test_dropout_preserves_expectation():
    x = Tensor(np.ones(100_000), dtype=np.float64)
    out = nx.dropout(x, 0.3, np.random.default_rng(1), train=True).data
    assert abs(out.mean() - 1.0) <= 0.01
    kept = out[out != 0]
    np.testing.assert_allclose(kept, 1 / 0.7)


def test_verification_mode_rejects_non_finite():
    with nx.verification_mode():
        with pytest.raises(nx.NonFiniteError), np.errstate(over="ignore"):
            nx.exp(Tensor([1000.0]))


def test_parameter_store_rules():
    store = ParameterStore(seed=0)
    W = store.create("W", (3, 4))
    bound = math.sqrt(6 / 7)
    assert np.all(np.abs(W.data) <= bound)
    assert np.all(store.create("b", (4,), "zeros").data == 0)
    with pytest.raises(KeyError):
        store.create("W", (2, 2))
    with pytest.raises(ValueError):
        store.create("bad", (0, 2))
    assert store.num_values() == 16


def _scalar_store(value=0.0):
    store = ParameterStore()
    p = store.create("p", (1,), "zeros")
    p.data[:] = value
    return store, p


def test_adam_first_step_moves_by_lr():
    store, p = _scalar_store(0.0)
    p.grad = np.array([1.0], dtype=p.data.dtype)
    adam_step(store, AdamState(learning_rate=0.1))
    assert p.data[0] == pytest.approx(-0.1, abs=1e-6)
    assert p.grad is None


def test_adam_zero_gradient_leaves_parameters():
    store, p = _scalar_store(0.5)
    p.grad = np.zeros(1, dtype=p.data.dtype)
    Adam(store, lr=0.1).step()
    assert p.data[0] == 0.5


def test_adam_missing_gradient_names_parameter():
    store, _ = _scalar_store()
    with pytest.raises(MissingGradientError, match="'p'"):
        adam_step(store, AdamState())


def _store_with_values(seed=0):
    store = ParameterStore(seed=seed)
    store.create("enc.W", (3, 2))
    store.create("enc.b", (2,), "normal")
    store.create("head.v", (5,), "normal")
    return store


def test_checkpoint_round_trip(tmp_path):
    store = _store_with_values(0)
    path = tmp_path / "m.ckpt"
    save_checkpoint(store, path)
    other = _store_with_values(1)
    load_checkpoint(other, path)
    for name, t in store.items():
        assert np.array_equal(t.data, other[name].data)
    assert list(read_checkpoint(path)) == ["enc.W", "enc.b", "head.v"]
    assert not list(tmp_path.glob("*.tmp"))


def test_checkpoint_layout(tmp_path):
    store = ParameterStore()
    store.create("ab", (2,), "ones")
    save_checkpoint(store, tmp_path / "c")
    blob = (tmp_path / "c").read_bytes()
    expected = b"KGMN" + struct.pack("<I", 1) + struct.pack("<I", 2) + b"ab" + struct.pack("<II", 1, 2) \
        + np.ones(2, dtype="<f4").tobytes()
    assert blob == expected


def test_checkpoint_rejects_bad_version_and_shapes(tmp_path):
    store = _store_with_values()
    path = tmp_path / "m.ckpt"
    save_checkpoint(store, path)
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", 99)
    bad = tmp_path / "v.ckpt"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        read_checkpoint(bad)
    wrong_shape = ParameterStore()
    wrong_shape.create("enc.W", (2, 3))
    wrong_shape.create("enc.b", (2,))
    wrong_shape.create("head.v", (5,))
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(wrong_shape, path)
    fewer = ParameterStore()
    fewer.create("enc.W", (3, 2))
    with pytest.raises(CheckpointError, match="mismatch"):
        load_checkpoint(fewer, path)
    (tmp_path / "junk").write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "junk")
