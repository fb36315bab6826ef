import numpy as np
import pytest

from battrack import tensor as T
from battrack.tensor import EmptySetError, ShapeError, Tape, Tensor

from conftest import check_gradients, param


def test_matmul_identity_and_orthogonal():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), a).data, a.data)
    np.testing.assert_array_equal(T.matmul(Tensor([[1.0, 0.0]]), Tensor([[0.0], [1.0]])).data, [[0.0]])


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient(rng):
    a, b = param(rng, 3, 3), param(rng, 3, 3)
    assert check_gradients(lambda: T.sum(T.matmul(a, b)), [a], eps=1e-5) <= 1e-6


def test_relu_values():
    np.testing.assert_array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(T.relu(Tensor([-3.0, -0.1])).data, [0.0, 0.0])


def test_relu_gradient(rng):
    x = param(rng, 4, 3)
    x.data[np.abs(x.data) < 0.05] = 0.3  # keep finite differences away from the kink
    w = rng.normal(size=(4, 3))
    assert check_gradients(lambda: T.sum(T.mul(T.relu(x), Tensor(w))), [x]) <= 1e-6


def test_max_pool_values():
    np.testing.assert_array_equal(T.max_pool_over_points(Tensor([[1.0, 5.0], [3.0, 2.0]])).data, [3.0, 5.0])
    np.testing.assert_array_equal(T.max_pool_over_points(Tensor([[7.0, -1.0]])).data, [7.0, -1.0])


def test_max_pool_permutation_invariant(rng):
    x = rng.normal(size=(9, 4))
    ref = T.max_pool_over_points(Tensor(x)).data
    for _ in range(5):
        np.testing.assert_array_equal(T.max_pool_over_points(Tensor(x[rng.permutation(9)])).data, ref)


def test_max_pool_empty():
    with pytest.raises(EmptySetError):
        T.max_pool_over_points(Tensor(np.zeros((0, 3))))


def test_max_pool_groups_routes_gradient_to_first_max():
    x = Tensor([[1.0, 2.0], [1.0, 0.0], [4.0, 4.0], [5.0, 4.0]], requires_grad=True)
    with Tape() as tape:
        loss = T.sum(T.max_pool_groups(x, 2))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [[1, 1], [0, 0], [0, 1], [1, 0]])


def test_smooth_l1_hand_cases():
    assert T.smooth_l1(Tensor([[1.0, 2.0]]), [[1.0, 2.0]], [1.0]).item() == 0.0
    assert T.smooth_l1(Tensor([[2.0]]), [[0.0]], [1.0]).item() == pytest.approx(1.5)
    assert T.smooth_l1(Tensor(np.full((1, 9), 0.5)), np.zeros((1, 9)), [1.0]).item() == pytest.approx(1.125)


def test_smooth_l1_empty_mask_is_zero_with_zero_gradient(rng):
    x = param(rng, 3, 9)
    with Tape() as tape:
        loss = T.smooth_l1(x, np.zeros((3, 9)), [0.0, 0.0, 0.0])
    tape.backward(loss)
    assert loss.item() == 0.0
    np.testing.assert_array_equal(x.grad, 0.0)


def test_smooth_l1_ignores_unmasked_rows():
    pred = Tensor([[0.5], [100.0]])
    assert T.smooth_l1(pred, [[0.0], [0.0]], [1.0, 0.0]).item() == pytest.approx(0.125)


UNARY_CASES = {
    "sigmoid": lambda x: T.sigmoid(x),
    "l2_normalize_rows": lambda x: T.l2_normalize_rows(x),
    "reshape": lambda x: T.reshape(x, (2, 6)),
    "slice_cols": lambda x: T.slice_cols(x, 1, 3),
    "gather_rows": lambda x: T.gather_rows(x, np.array([0, 2, 2, 1])),
    "max_pool_groups": lambda x: T.max_pool_groups(x, 2),
    "scale": lambda x: T.scale(x, -2.5),
    "sum_cols": lambda x: T.sum_cols(x),
    "mean": lambda x: T.reshape(T.mean(x), (1, 1)),
}


@pytest.mark.parametrize("name", sorted(UNARY_CASES))
def test_unary_gradients(rng, name):
    x = param(rng, 4, 3)
    op = UNARY_CASES[name]
    w = Tensor(rng.normal(size=op(Tensor(x.data)).shape))
    assert check_gradients(lambda: T.sum(T.mul(op(x), w)), [x]) <= 1e-6


BINARY_CASES = {
    "add": (lambda a, b: T.add(a, b), (3, 4)),
    "sub": (lambda a, b: T.sub(a, b), (3, 4)),
    "mul": (lambda a, b: T.mul(a, b), (3, 4)),
    "add_bias": (lambda a, b: T.add_bias(a, b), (4,)),
    "concat_last_dim": (lambda a, b: T.concat_last_dim([a, b, a]), (3, 2)),
}


@pytest.mark.parametrize("name", sorted(BINARY_CASES))
def test_binary_gradients(rng, name):
    op, b_shape = BINARY_CASES[name]
    a, b = param(rng, 3, 4), param(rng, *b_shape)
    w = Tensor(rng.normal(size=op(Tensor(a.data), Tensor(b.data)).shape))
    assert check_gradients(lambda: T.sum(T.mul(op(a, b), w)), [a, b]) <= 1e-6


def test_loss_gradients(rng):
    x = param(rng, 5, 3)
    target = rng.normal(size=(5, 3)) * 2
    weights = rng.uniform(0, 1, 5)
    labels = rng.integers(0, 2, 5).astype(float)
    assert check_gradients(lambda: T.weighted_smooth_l1(x, target, weights), [x]) <= 1e-6
    z = param(rng, 5, 1)
    assert check_gradients(lambda: T.weighted_bce_with_logits(z, labels, weights), [z]) <= 1e-6
    p = Tensor(rng.uniform(0.1, 0.9, (5, 1)), requires_grad=True)
    assert check_gradients(lambda: T.binary_cross_entropy(p, labels), [p]) <= 1e-6


def test_bce_with_logits_matches_probability_form(rng):
    z = rng.normal(size=6) * 3
    y = rng.integers(0, 2, 6).astype(float)
    w = np.full(6, 1 / 6)
    a = T.weighted_bce_with_logits(Tensor(z), y, w).item()
    b = T.binary_cross_entropy(Tensor(1 / (1 + np.exp(-z))), y).item()
    assert a == pytest.approx(b, rel=1e-9)


def test_gradients_accumulate_over_multiple_consumers():
    x = Tensor([2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = T.sum(T.add(T.mul(x, x), x))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_detached_tensor_contributes_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        d = x.detach()
        assert d.tape_id is None
        loss = T.sum(T.mul(d, x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, d.data)


def test_no_tape_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    y = T.scale(x, 2.0)
    assert y.tape_id is None and not y.requires_grad


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = T.scale(x, 1.0)
    with pytest.raises(ShapeError):
        tape.backward(y)


def test_backward_visits_nodes_in_reverse_order():
    x = Tensor([1.0], requires_grad=True)
    order = []
    with Tape() as tape:
        y = T.scale(x, 2.0)
        z = T.scale(y, 3.0)
    for i, (kind, inputs, out, fn) in enumerate(tape.nodes):
        tape.nodes[i] = (kind, inputs, out, (lambda f, i: lambda g: (order.append(i), f(g))[1])(fn, i))
    tape.backward(z)
    assert order == [1, 0]
    np.testing.assert_array_equal(x.grad, [6.0])


def test_shape_errors():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ShapeError):
        T.concat_last_dim([Tensor(np.ones((2, 1))), Tensor(np.ones((3, 1)))])
