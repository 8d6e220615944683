import math

import numpy as np
import pytest

from kagrmn_dsg import numerics as nx
from kagrmn_dsg.heads import LABELS, a2c_attention, classify, loss
from kagrmn_dsg.numerics import ShapeError, Tensor

F64 = np.float64


def t64(x):
    return Tensor(np.asarray(x, dtype=F64), dtype=F64)


def test_label_order():
    assert LABELS == ("negative", "positive", "neutral")


def test_a2c_uniform_single_row_and_oracle():
    rng = np.random.default_rng(0)
    H = rng.normal(size=(3, 4))
    R = rng.normal(size=4)
    _, R_f = a2c_attention(t64(H), t64(R), t64(np.zeros((4, 4))), t64(np.zeros(4)))
    np.testing.assert_allclose(R_f.data, H.mean(axis=0), atol=1e-12)
    one = rng.normal(size=(1, 4))
    _, R_f = a2c_attention(t64(one), t64(R), t64(rng.normal(size=(4, 4))), t64(rng.normal(size=4)))
    np.testing.assert_array_equal(R_f.data, one[0])
    W, b = rng.normal(size=(4, 4)), rng.normal(size=4)
    scores = np.array([(H[i] @ W + b) @ R for i in range(3)])
    beta = np.exp(scores) / np.exp(scores).sum()
    got_beta, R_f = a2c_attention(t64(H), t64(R), t64(W), t64(b))
    np.testing.assert_allclose(got_beta.data, beta, atol=1e-9)
    np.testing.assert_allclose(R_f.data, beta @ H, atol=1e-9)
    with pytest.raises(ShapeError):
        a2c_attention(t64(np.zeros((0, 4))), t64(R), t64(W), t64(b))


def test_classify_examples():
    rng = np.random.default_rng(1)
    h, r = t64(rng.normal(size=4)), t64(rng.normal(size=4))
    P = classify(h, r, t64(np.zeros((8, 3))), t64(np.zeros(3)))
    np.testing.assert_allclose(P.data, 1 / 3)
    P = classify(h, r, t64(np.zeros((8, 3))), t64([10.0, 0.0, 0.0]))
    assert LABELS[int(np.argmax(P.data))] == "negative"
    W, b = rng.normal(size=(8, 3)), rng.normal(size=3)
    z = np.concatenate([h.data, r.data]) @ W + b
    np.testing.assert_allclose(classify(h, r, t64(W), t64(b)).data, np.exp(z) / np.exp(z).sum(), atol=1e-12)
    with pytest.raises(ShapeError):
        classify(h, t64(np.zeros(3)), t64(W), t64(b))
    with pytest.raises(ShapeError):
        classify(h, r, t64(np.zeros((8, 2))), t64(b))


def test_loss_examples():
    assert loss(t64([0.0, 1.0, 0.0]), 1).item() == 0.0
    assert abs(loss(t64([1 / 3] * 3), 2).item() - math.log(3)) <= 1e-12
    assert abs(loss(t64([0.5, 0.25, 0.25]), 0).item() - math.log(2)) <= 1e-12
    assert math.isfinite(loss(t64([0.0, 1.0, 0.0]), 0).item())


def test_loss_gradient_flows_to_probabilities():
    p = Tensor(np.array([0.5, 0.25, 0.25]), requires_grad=True, dtype=F64)
    with nx.Tape() as tape:
        value = loss(p, 0)
    tape.backward(value)
    np.testing.assert_allclose(p.grad, [-2.0, 0.0, 0.0])
