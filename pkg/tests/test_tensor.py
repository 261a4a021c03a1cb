import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hohonet.tensor import (
    Tape,
    Tensor,
    absolute,
    add,
    backward,
    concat,
    elementwise,
    exp,
    gradcheck,
    linear_map,
    log,
    log_softmax,
    matmul,
    mul,
    profile,
    reduce,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    softplus,
    sub,
    take,
    transpose,
)

F64 = np.float64


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=F64), requires_grad=grad)


def rand(rng, *shape):
    return t64(rng.standard_normal(shape))


# ---------------------------------------------------------------- forward values


def test_add_identity():
    assert np.array_equal(add(Tensor([1.0, 2.0]), Tensor([0.0, 0.0])).data, [1, 2])


def test_relu_definition():
    assert np.array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])


def test_elementwise_dispatch_and_scalar():
    a = Tensor([1.0, -2.0])
    assert np.array_equal(elementwise("scale", a, 3.0).data, [3, -6])
    assert np.array_equal(elementwise("relu", a).data, [1, 0])
    assert np.array_equal(elementwise("mul", a, 2.0).data, [2, -4])
    assert np.array_equal(elementwise("sub", a, Tensor([1.0, 1.0])).data, [0, -3])


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
        add(Tensor(np.zeros(2)), Tensor(np.zeros(3)))


def test_trailing_bias_broadcast():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    out = add(x, Tensor([10.0, 20.0, 30.0]))
    assert np.array_equal(out.data, np.arange(6.0).reshape(2, 3) + [10, 20, 30])


def test_mixed_precision_rejected():
    with pytest.raises(TypeError):
        add(Tensor(np.zeros(2, np.float32)), Tensor(np.zeros(2, np.float64)))


def test_default_precision_is_32_bit():
    assert Tensor([1, 2]).dtype == np.float32


def test_matmul_examples():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(Tensor(np.eye(2)), m).data, m.data)
    assert np.array_equal(matmul(Tensor([[1.0, 1.0]]), Tensor([[1.0], [1.0]])).data, [[2.0]])


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 5))
    ref = np.zeros((4, 5))
    for i in range(4):
        for j in range(5):
            for k in range(3):
                ref[i, j] += a[i, k] * b[k, j]
    out = matmul(Tensor(a, dtype=F64), Tensor(b, dtype=F64)).data
    np.testing.assert_allclose(out, ref, rtol=1e-6)


def test_matmul_inner_mismatch():
    with pytest.raises(ValueError):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_reduce_values_and_axis_errors():
    assert reduce("sum", Tensor([1.0, 2.0, 3.0])).item() == 6
    assert reduce("max", Tensor([3.0, 7.0, 7.0])).item() == 7
    with pytest.raises(ValueError):
        reduce("sum", Tensor(np.zeros((2, 2))), axis=2)


def test_softmax_rows_sum_to_one_and_log_softmax_matches():
    x = np.random.default_rng(1).standard_normal((3, 5)) * 30
    s = softmax(Tensor(x, dtype=F64), axis=1).data
    np.testing.assert_allclose(s.sum(axis=1), 1.0, rtol=1e-12)
    np.testing.assert_allclose(np.log(s), log_softmax(Tensor(x, dtype=F64), axis=1).data, atol=1e-9)


def test_take_and_concat():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    assert np.array_equal(take(x, (slice(None), 1)).data, [1, 5, 9])
    assert concat([x, x], axis=0).shape == (6, 4)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 2**31 - 1))
def test_reshape_transpose_roundtrip_bit_exact(shape, seed):
    x = np.random.default_rng(seed).standard_normal(shape).astype(np.float32)
    t = Tensor(x)
    perm = tuple(reversed(range(len(shape))))
    back = transpose(transpose(t, perm), tuple(np.argsort(perm)))
    assert np.array_equal(back.data, x)
    assert np.array_equal(reshape(reshape(t, (-1,)), shape).data, x)


def test_results_deterministic():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
    r1 = softplus(matmul(Tensor(a), Tensor(b))).data
    r2 = softplus(matmul(Tensor(a), Tensor(b))).data
    assert np.array_equal(r1, r2)


# ---------------------------------------------------------------- backward


def test_backward_sum_gives_ones():
    x = t64(np.random.default_rng(0).standard_normal((2, 3)))
    with Tape() as tape:
        loss = reduce("sum", x)
    backward(tape, loss)
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_power_rule():
    x = t64([2.0])
    with Tape() as tape:
        loss = reduce("sum", mul(x, x))
    tape.backward(loss)
    assert x.grad.tolist() == [4.0]


def test_mean_backward_distributes():
    x = t64([1.0, 5.0])
    with Tape() as tape:
        loss = reduce("mean", x)
    tape.backward(loss)
    assert x.grad.tolist() == [0.5, 0.5]


def test_max_backward_first_argmax():
    x = t64([3.0, 7.0, 7.0])
    with Tape() as tape:
        loss = reduce("max", x)
    tape.backward(loss)
    assert x.grad.tolist() == [0.0, 1.0, 0.0]


def test_mul_grad_matches_finite_difference():
    a, b = t64([3.0]), t64([5.0])
    with Tape() as tape:
        loss = reduce("sum", mul(a, b))
    tape.backward(loss)
    eps = 1e-4
    fd = ((3.0 + eps) * 5.0 - (3.0 - eps) * 5.0) / (2 * eps)
    assert abs(a.grad[0] - fd) < 1e-6
    assert a.grad[0] == 5.0


def test_non_scalar_loss_rejected():
    x = t64([1.0, 2.0])
    with Tape() as tape:
        y = scale(x, 2.0)
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(y)


def test_loss_not_on_tape_rejected():
    x = t64([1.0])
    with Tape():
        y = reduce("sum", x)
    with pytest.raises(ValueError):
        backward(Tape(), y)


def test_tape_is_topological_and_visits_once():
    x = t64([1.0, 2.0])
    with Tape() as tape:
        y = mul(x, x)
        z = add(y, x)
        loss = reduce("sum", z)
    ids = {id(out): i for i, (_, out, _) in enumerate(tape.entries)}
    for i, (inputs, _, _) in enumerate(tape.entries):
        for t in inputs:
            if id(t) in ids:
                assert ids[id(t)] < i
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_gradient_accumulates_across_uses():
    x = t64([1.5])
    with Tape() as tape:
        loss = reduce("sum", add(add(x, x), x))
    tape.backward(loss)
    assert x.grad.tolist() == [3.0]


def test_untracked_inputs_get_no_grad():
    x = t64([1.0], grad=False)
    w = t64([2.0])
    with Tape() as tape:
        loss = reduce("sum", mul(x, w))
    tape.backward(loss)
    assert x.grad is None and w.grad.tolist() == [1.0]


def test_gradcheck_requires_64_bit():
    with pytest.raises(TypeError):
        gradcheck(lambda: reduce("sum", x), [x := Tensor(np.ones(2, np.float32))])


def test_gradcheck_detects_a_wrong_rule():
    from hohonet.tensor import make_result

    def bad_square(a):
        return make_result(a.data**2, [a], lambda g: [g * a.data])  # missing factor 2

    x = t64([0.7, -1.3])
    with pytest.raises(AssertionError):
        gradcheck(lambda: reduce("sum", bad_square(x)), [x])


# every differentiable op against central differences on small random inputs
OP_CASES = {
    "add": lambda r: ([rand(r, 3, 4), rand(r, 3, 4)], lambda a, b: add(a, b)),
    "add_bias": lambda r: ([rand(r, 3, 4), rand(r, 4)], lambda a, b: add(a, b)),
    "sub_scalar_tensor": lambda r: ([rand(r, 5), rand(r, 1)], lambda a, b: sub(a, b)),
    "mul": lambda r: ([rand(r, 2, 5), rand(r, 2, 5)], lambda a, b: mul(a, b)),
    "scale": lambda r: ([rand(r, 6)], lambda a: scale(a, -2.5)),
    "relu": lambda r: ([t64(r.standard_normal(8) + np.sign(r.standard_normal(8)) * 0.1)], relu),
    "abs": lambda r: ([t64(r.uniform(0.2, 1, 6) * np.sign(r.standard_normal(6)))], absolute),
    "exp": lambda r: ([rand(r, 6)], exp),
    "log": lambda r: ([t64(r.uniform(0.5, 2.0, 6))], log),
    "sigmoid": lambda r: ([rand(r, 6)], sigmoid),
    "softplus": lambda r: ([t64(r.standard_normal(6) * 5)], softplus),
    "matmul": lambda r: ([rand(r, 3, 4), rand(r, 4, 2)], matmul),
    "matmul_batched": lambda r: ([rand(r, 2, 3, 4), rand(r, 2, 4, 2)], matmul),
    "matmul_shared_rhs": lambda r: ([rand(r, 2, 3, 4), rand(r, 4, 2)], matmul),
    "linear_map": lambda r: ([rand(r, 2, 3, 4)], lambda a: linear_map(a, np.random.default_rng(5).standard_normal((6, 3)), 1)),
    "sum_axis": lambda r: ([rand(r, 3, 4)], lambda a: reduce("sum", a, axis=1)),
    "mean_keepdims": lambda r: ([rand(r, 3, 4)], lambda a: reduce("mean", a, axis=0, keepdims=True)),
    "max_axis": lambda r: ([rand(r, 3, 4)], lambda a: reduce("max", a, axis=1)),
    "reshape": lambda r: ([rand(r, 2, 6)], lambda a: reshape(a, (3, 4))),
    "transpose": lambda r: ([rand(r, 2, 3, 4)], lambda a: transpose(a, (2, 0, 1))),
    "take": lambda r: ([rand(r, 4, 5)], lambda a: take(a, (slice(1, 3), slice(None, None, 2)))),
    "concat": lambda r: ([rand(r, 2, 3), rand(r, 2, 2)], lambda a, b: concat([a, b], axis=1)),
    "softmax": lambda r: ([rand(r, 3, 4)], lambda a: softmax(a, axis=1)),
    "log_softmax": lambda r: ([rand(r, 3, 4)], lambda a: log_softmax(a, axis=0)),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_match_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    params, op = OP_CASES[name](rng)
    weights = np.random.default_rng(11).standard_normal(op(*params).shape)

    def fn():
        return reduce("sum", mul(op(*params), Tensor(weights, dtype=F64)))

    gradcheck(fn, params)


def test_profile_counts_ops():
    with profile() as prof:
        add(Tensor([1.0]), Tensor([2.0]))
        add(Tensor([1.0]), Tensor([2.0]))
        relu(Tensor([1.0]))
    assert prof.calls["add"] == 2 and prof.calls["relu"] == 1
