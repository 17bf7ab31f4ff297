import numpy as np
import pytest

from fadnet.exceptions import AxisError, ContractError, ShapeError
from fadnet.tensor import (Graph, Tensor, absolute, add, backward, concat, maximum, mean, mul, no_grad,
                           pad, reshape, scale, slice_, sub, sum_)


def leaf(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def test_add_elementwise():
    np.testing.assert_array_equal(add(Tensor([1, 2]), Tensor([3, 4])).data, [4, 6])


@pytest.mark.parametrize("shape", [(1,), (3, 4), (2, 3, 5, 5)])
def test_sum_of_zeros_is_zero(shape):
    assert sum_(Tensor(np.zeros(shape))).item() == 0.0


def test_concat_channel_extents():
    out = concat([Tensor(np.zeros((1, 3, 8, 8))), Tensor(np.ones((1, 1, 8, 8)))], axis=1)
    assert out.shape == (1, 4, 8, 8)
    assert out.data[:, 3].min() == 1.0


def test_concat_rejects_mismatched_spatial_extent():
    with pytest.raises(ShapeError):
        concat([Tensor(np.zeros((1, 3, 8, 8))), Tensor(np.zeros((1, 1, 8, 4)))])


def test_broadcast_only_over_batch_axis():
    a = Tensor(np.ones((4, 2, 3, 3)))
    assert add(a, Tensor(np.ones((1, 2, 3, 3)))).shape == (4, 2, 3, 3)
    with pytest.raises(ShapeError):
        add(a, Tensor(np.ones((4, 1, 3, 3))))
    with pytest.raises(ShapeError):
        mul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_reduce_over_bad_axis_raises():
    with pytest.raises(AxisError):
        sum_(Tensor(np.ones((2, 2))), axis=2)
    with pytest.raises(AxisError):
        mean(Tensor(np.ones((2, 2))), axis=(0, -3))


def test_sum_over_axis_subset_and_mean():
    x = np.arange(24.0).reshape(2, 3, 4)
    np.testing.assert_array_equal(sum_(Tensor(x), axis=(0, 2)).data, x.sum(axis=(0, 2)))
    np.testing.assert_array_equal(mean(Tensor(x), axis=1, keepdims=True).data, x.mean(axis=1, keepdims=True))


def test_primitive_forward_values():
    x = Tensor([[-1.5, 2.0], [0.0, -3.0]])
    np.testing.assert_array_equal(absolute(x).data, np.abs(x.data))
    np.testing.assert_array_equal(maximum(x, 0.5).data, np.maximum(x.data, 0.5))
    np.testing.assert_array_equal(scale(x, 3.0).data, 3.0 * x.data)
    np.testing.assert_array_equal(sub(x, x).data, np.zeros((2, 2)))
    np.testing.assert_array_equal(slice_(x, (slice(None), 1)).data, x.data[:, 1])
    np.testing.assert_array_equal(reshape(x, (4,)).data, x.data.ravel())
    np.testing.assert_array_equal(pad(x, ((1, 0), (0, 2))).data, np.pad(x.data, ((1, 0), (0, 2))))


def test_grad_of_sum_is_ones():
    x = leaf(np.random.default_rng(0).normal(size=(2, 2)))
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))


def test_grad_of_sum_of_squares():
    x = leaf([1.0, -2.0])
    backward(sum_(mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2.0, -4.0])


def test_grad_of_mean_abs():
    x = leaf([3.0, -3.0])
    backward(mean(absolute(x)))
    np.testing.assert_array_equal(x.grad, [0.5, -0.5])


def test_non_scalar_loss_is_contract_error():
    x = leaf([1.0, 2.0])
    with pytest.raises(ContractError):
        backward(mul(x, x))


def test_gradients_accumulate_until_reset():
    x = leaf([1.0, 2.0])
    backward(x.sum())
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])
    x.zero_grad()
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, [1.0, 1.0])


def test_non_tracking_tensors_untouched():
    x, c = leaf([1.0, 2.0]), Tensor([5.0, 6.0])
    backward(sum_(mul(x, c)))
    assert c.grad is None
    np.testing.assert_array_equal(x.grad, [5.0, 6.0])


def test_diamond_graph_visits_each_node_once():
    x = leaf([1.0, 2.0, 3.0])
    y = scale(x, 2.0)
    z = add(y, y)  # y reached along two edges
    loss = sum_(z)
    graph = Graph.from_output(loss)
    assert len(graph) == len({id(n) for n in graph.nodes})
    backward(loss, graph)
    np.testing.assert_array_equal(x.grad, [4.0, 4.0, 4.0])


def test_graph_order_is_topological():
    x = leaf(np.ones(3))
    loss = sum_(mul(add(x, x), scale(x, 3.0)))
    order = {id(n): i for i, n in enumerate(Graph.from_output(loss).nodes)}
    for node in Graph.from_output(loss).nodes:
        for parent in node._parents:
            assert order[id(parent)] < order[id(node)]


@pytest.mark.parametrize("depth", [1, 10, 500])
def test_sum_of_leaves_gives_ones_at_any_depth(depth):
    leaves = [leaf(np.full((2, 3), float(i))) for i in range(depth)]
    total = leaves[0]
    for t in leaves[1:]:
        total = add(total, t)
    backward(sum_(total))
    for t in leaves:
        np.testing.assert_array_equal(t.grad, np.ones((2, 3)))


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with no_grad():
        y = mul(x, x)
    assert not y.requires_grad and y.is_leaf


def test_forward_is_deterministic():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(2, 3, 4, 4))
    first = sum_(mul(Tensor(a), Tensor(a)), axis=(1, 2)).data
    second = sum_(mul(Tensor(a), Tensor(a)), axis=(1, 2)).data
    assert first.tobytes() == second.tobytes()


def test_scalar_only_division():
    x = Tensor([2.0, 4.0])
    np.testing.assert_array_equal((x / 2).data, [1.0, 2.0])
    with pytest.raises(ContractError):
        x / x
