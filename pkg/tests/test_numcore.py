import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgrisk import numcore as nc
from sgrisk.numcore.gradcheck import check_gradients, numeric_grad


def leaf(a, name=None):
    return nc.Tensor(np.array(a, dtype=float), requires_grad=True, name=name)


def test_matmul_identity_and_hand_product():
    a = nc.Tensor([[1, 2], [3, 4]])
    assert np.array_equal(nc.matmul(nc.Tensor(np.eye(2)), a).data, a.data)
    assert nc.matmul(nc.Tensor([[1, 2]]), nc.Tensor([[3], [4]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(nc.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nc.matmul(nc.Tensor(np.ones((2, 3))), nc.Tensor(np.ones((2, 3))))


def test_matmul_gradient_vs_finite_differences(rng):
    a = leaf(rng.standard_normal((3, 3)), "a")
    b = nc.Tensor(rng.standard_normal((3, 3)))
    fn = lambda: nc.reduce_sum(nc.matmul(a, b))
    a.grad = None
    nc.backward(fn())
    for ix in np.ndindex(3, 3):
        num = numeric_grad(fn, a, ix)
        assert abs(a.grad[ix] - num) / max(abs(num), 1e-12) < 1e-6


def test_elementwise_basics():
    assert nc.tanh(nc.Tensor(0.0)).item() == 0.0
    assert nc.sigmoid(nc.Tensor(0.0)).item() == 0.5
    assert nc.add(nc.Tensor([1, 2]), nc.Tensor([3, 4])).data.tolist() == [4, 6]
    assert nc.elementwise("mul", nc.Tensor([2.0]), nc.Tensor([3.0])).data.tolist() == [6.0]


def test_sigmoid_no_overflow():
    y = nc.sigmoid(nc.Tensor([-1000.0, 1000.0])).data
    assert y.tolist() == [0.0, 1.0]


def test_log_domain_error():
    with pytest.raises(nc.DomainError):
        nc.log(nc.Tensor([1.0, 0.0]))


def test_binary_shape_mismatch():
    with pytest.raises(nc.DimensionError):
        nc.add(nc.Tensor(np.ones(3)), nc.Tensor(np.ones(2)))


@pytest.mark.parametrize("op", ["tanh", "sigmoid", "relu", "exp"])
def test_unary_gradients(op, rng):
    x = leaf(rng.standard_normal((2, 3)) + 0.1, "x")
    worst, _ = check_gradients(lambda: nc.reduce_sum(nc.elementwise(op, x) * nc.elementwise(op, x)), [x])
    assert worst < 1e-4


def test_binary_broadcast_gradients(rng):
    a = leaf(rng.standard_normal((3, 4)), "a")
    row = leaf(rng.standard_normal((1, 4)), "row")
    s = leaf(rng.standard_normal(()), "s")
    pos = leaf(rng.random((3, 4)) + 0.5, "pos")

    def fn():
        y = nc.mul(nc.sub(a, row), s) + nc.div(a, pos) + nc.log(pos)
        return nc.reduce_sum(nc.tanh(y))

    worst, _ = check_gradients(fn, [a, row, s, pos])
    assert worst < 1e-4


def test_reductions():
    x = nc.Tensor([[1, 2], [3, 4]])
    assert nc.reduce("sum", x, axis=0).data.tolist() == [4, 6]
    assert nc.reduce("max", nc.Tensor([[1, 5], [3, 4]]), axis=0).data.tolist() == [3, 5]
    row = nc.Tensor([[1.5, -2.0, 7.0]])
    assert np.array_equal(nc.reduce("mean", row, axis=0).data, row.data[0])


def test_max_backward_first_index_on_ties():
    x = leaf([[2.0, 1.0], [2.0, 3.0]])
    nc.backward(nc.reduce_sum(nc.reduce_max(x, axis=0)))
    assert x.grad.tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_reduce_empty_axis_errors():
    with pytest.raises(nc.DimensionError):
        nc.reduce_max(nc.Tensor(np.zeros((0, 3))), axis=0)
    with pytest.raises(nc.DimensionError):
        nc.reduce_mean(nc.Tensor(np.zeros((0, 3))), axis=0)
    with pytest.raises(nc.DimensionError):
        nc.reduce_sum(nc.Tensor(np.zeros((2, 3))), axis=2)


def test_reduction_gradients(rng):
    x = leaf(rng.standard_normal((3, 4)), "x")
    for axis in (0, 1, None):
        fn = lambda: nc.reduce_sum(nc.tanh(nc.reduce_mean(x, axis)) + nc.reduce_max(x, axis))
        worst, _ = check_gradients(fn, [x])
        assert worst < 1e-4


def test_softmax_examples():
    assert np.allclose(nc.softmax(nc.Tensor([0.0, 0.0, 0.0])).data, 1 / 3, atol=0, rtol=1e-15)
    assert nc.softmax(nc.Tensor([1000.0, 1000.0])).data.tolist() == [0.5, 0.5]
    y = nc.softmax(nc.Tensor([math.log(1), math.log(3)])).data
    assert np.allclose(y, [0.25, 0.75], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-100, 100))
def test_softmax_normalized_and_shift_invariant(xs, c):
    x = np.array(xs)
    y = nc.softmax(nc.Tensor(x)).data
    assert abs(y.sum() - 1.0) < 1e-12
    assert np.all(y > 0) or len(xs) > 1
    assert np.max(np.abs(nc.softmax(nc.Tensor(x + c)).data - y)) < 1e-12


def test_softmax_gradient(rng):
    x = leaf(rng.standard_normal((2, 5)), "x")
    w = nc.Tensor(rng.standard_normal((2, 5)))
    worst, _ = check_gradients(lambda: nc.reduce_sum(nc.softmax(x, axis=1) * w), [x])
    assert worst < 1e-4


def test_concat():
    assert nc.concat([nc.Tensor([[1.0]]), nc.Tensor([[2.0]])], axis=1).data.tolist() == [[1, 2]]
    widths = [10, 100, 100]
    blocks = [nc.Tensor(np.zeros((5, w))) for w in widths]
    assert nc.concat(blocks, axis=1).shape == (5, sum(widths))
    a, b = leaf(np.zeros((2, 3))), leaf(np.zeros((2, 1)))
    nc.backward(nc.reduce_sum(nc.concat([a, b], axis=1)))
    assert np.all(a.grad == 1) and np.all(b.grad == 1)
    with pytest.raises(nc.DimensionError):
        nc.concat([nc.Tensor(np.zeros((2, 3))), nc.Tensor(np.zeros((3, 3)))], axis=1)


def test_index_select_and_scatter_add():
    x = nc.Tensor([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    assert nc.index_select(x, [0, 2]).data.tolist() == [[1, 1], [3, 3]]
    out = nc.scatter_add(nc.Tensor(np.zeros((2, 2))), [1, 1, 0], nc.Tensor(np.ones((3, 2))))
    assert out.data.tolist() == [[1, 1], [2, 2]]
    perm = np.array([2, 0, 1])
    gathered = nc.index_select(x, perm)
    back = nc.scatter_add(nc.Tensor(np.zeros((3, 2))), perm, gathered)
    assert np.array_equal(back.data, x.data)
    with pytest.raises(IndexError):
        nc.index_select(x, [3])
    with pytest.raises(IndexError):
        nc.scatter_add(x, [-1], nc.Tensor(np.ones((1, 2))))


def test_gather_scatter_gradients(rng):
    x = leaf(rng.standard_normal((4, 3)), "x")
    rows = leaf(rng.standard_normal((5, 3)), "rows")
    idx = np.array([0, 3, 3, 1, 0])

    def fn():
        y = nc.scatter_add(nc.tanh(x), idx, rows)
        return nc.reduce_sum(nc.tanh(nc.index_select(y, [1, 1, 2, 3])))

    worst, _ = check_gradients(fn, [x, rows])
    assert worst < 1e-4


def test_segment_ops_gradients(rng):
    x = leaf(rng.standard_normal((6, 3)), "x")
    seg = np.array([0, 1, 0, 2, 1, 2])
    worst, _ = check_gradients(
        lambda: nc.reduce_sum(nc.tanh(nc.segment_sum(x, seg, 3)) + nc.segment_max(x, seg, 3)), [x])
    assert worst < 1e-4


def test_dropout():
    x = nc.Tensor(np.ones((3, 4)))
    r = np.random.default_rng(0)
    assert nc.dropout(x, 0.0, True, r) is x
    assert nc.dropout(x, 0.5, False, r) is x
    with pytest.raises(ValueError):
        nc.dropout(x, 1.0, True, r)


def test_dropout_expectation():
    y = nc.dropout(nc.Tensor(np.ones(100_000)), 0.5, True, np.random.default_rng(3)).data
    assert abs(y.mean() - 1.0) < 0.01
    assert set(np.unique(y)) <= {0.0, 2.0}


def test_backward_examples():
    w = leaf([1.0, 2.0, 3.0])
    nc.backward(nc.reduce_sum(w))
    assert w.grad.tolist() == [1, 1, 1]
    w = leaf([1.0, 2.0])
    nc.backward(nc.reduce_sum(w * w))
    assert w.grad.tolist() == [2, 4]


def test_backward_requires_scalar():
    w = leaf([1.0, 2.0])
    with pytest.raises(ValueError):
        nc.backward(w * 2.0)


def test_unrelated_tape_entries_do_not_change_gradients(rng):
    w = leaf(rng.standard_normal(4))
    nc.backward(nc.reduce_sum(nc.tanh(w)))
    ref = w.grad.copy()
    w.grad = None
    other = leaf(rng.standard_normal(4))
    _ = nc.exp(other) * w  # noise on the tape
    loss = nc.reduce_sum(nc.tanh(w))
    _ = nc.sigmoid(w) + other
    nc.backward(loss)
    assert np.array_equal(w.grad, ref)
    assert other.grad is None


def test_no_grad_records_nothing():
    w = leaf([1.0])
    with nc.no_grad():
        y = w * 3.0
    assert not y.requires_grad


def test_determinism(rng):
    def run():
        r = np.random.default_rng(5)
        w = leaf(r.standard_normal((3, 3)))
        y = nc.dropout(nc.tanh(w @ w), 0.3, True, r)
        nc.backward(nc.reduce_sum(y))
        return y.data, w.grad

    (a, ga), (b, gb) = run(), run()
    assert np.array_equal(a, b) and np.array_equal(ga, gb)


# ------------------------------------------------------------------ Adam

def test_adam_zero_gradient_leaves_params():
    w = leaf([1.0, -2.0])
    opt = nc.Adam([w], lr=0.1)
    opt.zero_grad()
    opt.step()
    assert w.data.tolist() == [1.0, -2.0]


def test_adam_quadratic_converges():
    w = leaf([1.0])
    opt = nc.Adam([w], lr=0.1, weight_decay=0.0)
    for _ in range(200):
        opt.zero_grad()
        nc.backward(nc.reduce_sum(w * w))
        opt.step()
    assert abs(w.data[0]) < 1e-2
    assert opt.state.step == 200


@pytest.mark.parametrize("g", [1e-6, 0.3, -7.0, 1e4])
def test_adam_first_step_is_lr_sign(g):
    w = leaf([0.0])
    opt = nc.Adam([w], lr=0.01)
    w.grad = np.array([g])
    opt.step()
    assert abs(abs(w.data[0]) - 0.01) < 1e-4 and np.sign(w.data[0]) == -np.sign(g)


def test_adam_functional_matches_class():
    state = nc.AdamState(lr=0.05)
    p = [np.array([1.0, 2.0])]
    for _ in range(3):
        nc.adam_step(p, [2 * p[0]], state)
    w = leaf([1.0, 2.0])
    opt = nc.Adam([w], lr=0.05, decay_mode="l2", weight_decay=0.0)
    for _ in range(3):
        w.grad = 2 * w.data.copy()
        opt.step()
    assert np.allclose(p[0], w.data, rtol=0, atol=1e-15)


def test_adam_lr_decay_schedule():
    opt = nc.Adam([leaf([0.0])], lr=1e-3, weight_decay=5e-4)
    assert opt.set_epoch(0) == 1e-3
    assert math.isclose(opt.set_epoch(10), 1e-3 * (1 - 5e-4) ** 10)
    l2 = nc.Adam([leaf([0.0])], lr=1e-3, decay_mode="l2")
    assert l2.set_epoch(10) == 1e-3


def test_adam_l2_mode_shrinks_params_without_loss_gradient():
    w = leaf([5.0])
    opt = nc.Adam([w], lr=0.1, weight_decay=0.1, decay_mode="l2")
    opt.zero_grad()
    opt.step()
    assert w.data[0] < 5.0


def test_adam_rejects_non_finite_gradient():
    w = leaf([1.0], name="bad")
    opt = nc.Adam([w])
    w.grad = np.array([np.nan])
    with pytest.raises(nc.TrainingError, match="bad"):
        opt.step()
