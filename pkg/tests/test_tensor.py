import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lobhorizon import tensor as tn
from lobhorizon.errors import ContractError, DimensionError, NumericError
from lobhorizon.tensor import BACKWARD, Tape, Tensor


def test_tensor_copies_input_and_is_float64():
    raw = np.arange(6).reshape(2, 3)
    t = Tensor(raw)
    raw[0, 0] = 99
    assert t.data.dtype == np.float64
    assert t.data[0, 0] == 0
    assert t.shape == (2, 3)


def test_matmul_identity_and_zero():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(tn.matmul(Tensor(np.eye(2)), m).data, m.data)
    np.testing.assert_array_equal(tn.matmul(Tensor(np.eye(2)), Tensor([[0.0], [0.0]])).data, [[0.0], [0.0]])


def test_matmul_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        tn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_of_sum(rng):
    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(4, 2)))
    assert tn.grad_check(lambda x: tn.sum_(tn.matmul(x, b)), a) < 1e-6
    assert tn.grad_check(lambda x: tn.sum_(tn.matmul(a, x)), b) < 1e-6


def test_matmul_backward_formula(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    g = rng.normal(size=(3, 2))
    with Tape() as tape:
        c = tn.matmul(a, b)
    tape.backward(c, seed=g)
    np.testing.assert_allclose(a.grad, g @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ g)


def test_elementwise_examples():
    assert tn.tanh(Tensor(0.0)).item() == 0.0
    assert tn.sigmoid(Tensor(0.0)).item() == 0.5
    assert tn.leaky_relu(Tensor(-1.0), 0.01).item() == pytest.approx(-0.01)
    assert tn.leaky_relu(Tensor(-1.0)).item() == pytest.approx(-0.01)


def test_no_broadcasting_except_scalars():
    a, b = Tensor(np.ones((2, 3))), Tensor(np.ones(3))
    for op in (tn.add, tn.sub, tn.mul):
        with pytest.raises(DimensionError):
            op(a, b)
    np.testing.assert_array_equal((a * 2.0).data, np.full((2, 3), 2.0))
    np.testing.assert_array_equal((a + 1).data, np.full((2, 3), 2.0))


def test_expand_repeats_along_new_axis():
    x = Tensor([[1.0, 2.0]])
    np.testing.assert_array_equal(tn.expand(x, 1, 3).data, [[[1, 2], [1, 2], [1, 2]]])


def test_sigmoid_extremes_are_finite():
    y = tn.sigmoid(Tensor([-1000.0, 1000.0])).data
    assert np.all(np.isfinite(y))
    assert y[0] == 0.0 and y[1] == 1.0


def test_softmax_examples():
    np.testing.assert_allclose(tn.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(tn.softmax(Tensor([math.log(2.0), 0.0])).data, [2 / 3, 1 / 3], atol=1e-15)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_softmax_rejects_non_finite(bad):
    with pytest.raises(NumericError):
        tn.softmax(Tensor([0.0, bad, 1.0]))


def test_softmax_jacobian_matches_finite_differences(rng):
    w = rng.normal(size=5)
    x = Tensor(rng.normal(size=5))
    assert tn.grad_check(lambda t: tn.sum_(tn.softmax(t) * Tensor(w)), x) < 1e-6


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_softmax_rows_are_strictly_positive_distributions(x):
    p = tn.softmax(Tensor(x), axis=1).data
    assert np.all(p > 0) and np.all(p <= 1)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_grad_check_examples():
    x = Tensor([1.0, 2.0, 3.0])
    assert tn.grad_check(lambda t: tn.sum_(t), x) == 0.0
    assert tn.grad_check(lambda t: tn.sum_(t * t), x) < 1e-8
    with Tape() as tape:
        x.requires_grad = True
        y = tn.sum_(x * x)
    tape.backward(y)
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_grad_check_rejects_vector_output():
    with pytest.raises(ContractError):
        tn.grad_check(lambda t: t * 2.0, Tensor([1.0, 2.0]))


def test_grad_check_leaves_input_untouched(rng):
    x = Tensor(rng.normal(size=(3, 3)))
    before = x.data.copy()
    tn.grad_check(lambda t: tn.sum_(tn.tanh(t)), x)
    np.testing.assert_array_equal(x.data, before)
    assert not x.requires_grad and x.grad is None


def test_tape_records_in_topological_order(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    with Tape() as tape:
        y = tn.sum_(tn.tanh(x) * tn.sigmoid(x))
    seen = {id(x)}
    for op in tape.operations:
        for t in op.inputs:
            assert id(t) in seen or not t.requires_grad
        seen.add(id(op.output))
    assert tape.operations[-1].output is y


def test_backward_visits_each_operation_once(rng, monkeypatch):
    calls = {}
    x = Tensor(rng.normal(size=3), requires_grad=True)
    with Tape() as tape:
        h = tn.tanh(x)
        y = tn.sum_(h * h + h)
    for name, rule in list(BACKWARD.items()):
        def counting(ctx, g, _rule=rule, _name=name):
            calls[_name] = calls.get(_name, 0) + 1
            return _rule(ctx, g)
        monkeypatch.setitem(BACKWARD, name, counting)
    tape.backward(y)
    assert sum(calls.values()) == len(tape.operations)
    # d/dx sum(tanh^2 + tanh) = (2 tanh + 1) (1 - tanh^2)
    t = np.tanh(x.data)
    np.testing.assert_allclose(x.grad, (2 * t + 1) * (1 - t * t))


def test_no_recording_outside_tape_or_without_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = tn.tanh(x)
    assert not y.requires_grad
    with Tape() as tape:
        tn.tanh(Tensor([1.0]))
    assert len(tape) == 0


def test_gradients_accumulate_over_reuse():
    x = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        y = tn.sum_(x * x * x)
    tape.backward(y)
    np.testing.assert_allclose(x.grad, [27.0])


def test_log_floor_clamps_and_blocks_gradient():
    x = Tensor([0.0, 1.0], requires_grad=True)
    with Tape() as tape:
        y = tn.sum_(tn.log(x, 1e-12))
    assert y.item() == pytest.approx(math.log(1e-12))
    tape.backward(y)
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_forward_is_bitwise_deterministic(rng):
    x = rng.normal(size=(4, 6))
    w = rng.normal(size=(3, 6))

    def run():
        return tn.softmax(tn.tanh(tn.linear(Tensor(x), Tensor(w))), axis=1).data

    assert run().tobytes() == run().tobytes()


@pytest.mark.parametrize("size,k,s,pad,expect", [(10, 3, 1, "same", 10), (10, 3, 1, "valid", 8),
                                                  (40, 2, 2, "valid", 20), (7, 2, 2, "same", 4)])
def test_conv_output_size(size, k, s, pad, expect):
    assert tn.conv_output_size(size, k, s, pad) == expect


def test_conv2d_layouts_agree(rng):
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 2))
    b = rng.normal(size=4)
    nchw = tn.conv2d(Tensor(x), Tensor(w), Tensor(b), (1, 2), "same", "NCHW").data
    nhwc = tn.conv2d(Tensor(x.transpose(0, 2, 3, 1)), Tensor(w), Tensor(b), (1, 2), "same", "NHWC").data
    np.testing.assert_allclose(nhwc.transpose(0, 3, 1, 2), nchw, atol=1e-12)


def test_conv2d_matches_direct_cross_correlation(rng):
    x = rng.normal(size=(1, 2, 5, 4))
    w = rng.normal(size=(3, 2, 2, 3))
    out = tn.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(3)), (1, 1), "valid").data
    ref = np.zeros((1, 3, 4, 2))
    for o in range(3):
        for i in range(4):
            for j in range(2):
                ref[0, o, i, j] = np.sum(x[0, :, i:i + 2, j:j + 3] * w[o])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv2d_dimension_errors():
    with pytest.raises(DimensionError):
        tn.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 1, 1))), Tensor(np.zeros(1)))
    with pytest.raises(DimensionError):
        tn.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)))


def test_max_pool_same_padding_uses_minus_infinity():
    x = Tensor(np.array([-5.0, -1.0, -3.0]).reshape(1, 1, 3, 1))
    out = tn.max_pool2d(x, (3, 1), "same").data.ravel()
    np.testing.assert_array_equal(out, [-1.0, -1.0, -1.0])


def test_nonsmooth_margin_sees_kinks():
    x = Tensor([0.5, -1e-6], requires_grad=True)
    with Tape() as tape:
        tn.leaky_relu(x)
    assert tn.nonsmooth_margin(tape) == pytest.approx(1e-6)
