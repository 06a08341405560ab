from __future__ import annotations

import numpy as np
import pytest

import sceneorder.autograd as ag
from sceneorder.autograd import NEG_INF, GradError, ShapeError, Tensor

from fd import check_grads


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# ---- matmul ---------------------------------------------------------------


def test_matmul_identity_scalar_case():
    out = ag.matmul(Tensor([[1.0]]), Tensor([[1.0]]))
    assert out.data.tolist() == [[1.0]]


def test_matmul_times_identity():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((2, 2)))
    out = ag.matmul(a, Tensor(np.eye(2)))
    np.testing.assert_allclose(out.data, a.data)


def test_matmul_hand_expansion():
    out = ag.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
    np.testing.assert_allclose(out.data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        ag.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_grad_is_transpose_pattern():
    # loss = sum(A @ B) => dA = ones @ B^T, dB = A^T @ ones
    rng = np.random.default_rng(1)
    a, b = rand(rng, 2, 2), rand(rng, 2, 2)
    loss = ag.sum_(ag.matmul(a, b))
    loss.backward()
    np.testing.assert_allclose(a.grad, np.ones((2, 2)) @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ np.ones((2, 2)))


def test_matmul_batched_grad():
    rng = np.random.default_rng(2)
    a, b = rand(rng, 3, 2, 4), rand(rng, 3, 4, 2)
    check_grads(lambda: ag.sum_(ag.matmul(a, b) * ag.matmul(a, b)), [a, b])


# ---- masked softmax --------------------------------------------------------


def test_masked_softmax_single_unmasked_slot():
    out = ag.masked_softmax(Tensor([0.0, 0.0]), np.array([0.0, NEG_INF]))
    np.testing.assert_allclose(out.data, [1.0, 0.0])


def test_masked_softmax_direct_evaluation():
    out = ag.masked_softmax(Tensor([0.0, np.log(2.0)]), np.array([0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1.0 / 3.0, 2.0 / 3.0], atol=1e-15)


def test_masked_softmax_uniform_on_constant_rows():
    out = ag.masked_softmax(Tensor(np.full((3, 5), 2.7)), np.zeros(5))
    np.testing.assert_allclose(out.data, np.full((3, 5), 0.2))


def test_masked_softmax_rows_sum_to_one():
    rng = np.random.default_rng(3)
    logits = Tensor(rng.standard_normal((6, 9)) * 30.0)
    out = ag.masked_softmax(logits)
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(6), atol=1e-12)


def test_masked_softmax_all_masked_row_falls_back_uniform_and_flags():
    mask = np.array([[0.0, 0.0, 0.0], [NEG_INF, NEG_INF, NEG_INF]])
    logits = Tensor(np.zeros((2, 3)), requires_grad=True)
    out = ag.masked_softmax(logits, mask)
    np.testing.assert_allclose(out.data[1], [1 / 3, 1 / 3, 1 / 3])
    assert out.empty_rows is not None and out.empty_rows.tolist() == [False, True]
    ag.sum_(out * out).backward()
    np.testing.assert_allclose(logits.grad[1], 0.0)


def test_masked_softmax_grad():
    rng = np.random.default_rng(4)
    logits = rand(rng, 4, 6)
    mask = np.where(rng.random((4, 6)) < 0.3, NEG_INF, 0.0)
    mask[:, 0] = 0.0  # keep every row non-empty
    weights = rng.standard_normal((4, 6))
    check_grads(lambda: ag.sum_(ag.masked_softmax(logits, mask) * weights), [logits])


def test_masked_softmax_stays_finite_for_huge_logits():
    out = ag.masked_softmax(Tensor([[1e4, -1e4, 300.0]]))
    assert np.isfinite(out.data).all()


# ---- backward contract ------------------------------------------------------


def test_backward_scalar_leaf():
    x = Tensor(3.0, requires_grad=True)
    x_id = ag.mul_const(x, 1.0)
    x_id.backward()
    np.testing.assert_allclose(x.grad, 1.0)


def test_backward_rejects_nonscalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(GradError):
        ag.mul_const(x, 2.0).backward()


def test_backward_twice_is_error():
    x = Tensor(2.0, requires_grad=True)
    loss = ag.mul_const(x, 3.0)
    loss.backward()
    with pytest.raises(GradError):
        loss.backward()


def test_grad_accumulates_on_reuse():
    x = Tensor(2.0, requires_grad=True)
    loss = x * x + x
    loss.backward()
    np.testing.assert_allclose(x.grad, 5.0)  # 2x + 1


# ---- finite-difference checks for each op ----------------------------------


def test_fd_elementwise_chain():
    rng = np.random.default_rng(5)
    x = rand(rng, 3, 4)
    y = rand(rng, 3, 4)
    check_grads(lambda: ag.sum_(x * y + ag.exp(x * 0.3) - ag.sigmoid(y)), [x, y])


def test_fd_log_pow():
    rng = np.random.default_rng(6)
    x = Tensor(rng.uniform(0.5, 2.0, (4,)), requires_grad=True)
    check_grads(lambda: ag.sum_(ag.log(x) + ag.pow_const(x, 1.7)), [x])


def test_fd_relu_gelu_erf():
    rng = np.random.default_rng(7)
    x = rand(rng, 5, 3)
    check_grads(lambda: ag.sum_(ag.relu(x) * 0.5 + ag.gelu(x) + ag.erf(x)), [x])


def test_fd_broadcast_bias():
    rng = np.random.default_rng(8)
    x, b = rand(rng, 4, 6), rand(rng, 6)
    check_grads(lambda: ag.sum_(ag.sigmoid(x + b)), [x, b])


def test_fd_reductions():
    rng = np.random.default_rng(9)
    x = rand(rng, 3, 5)
    check_grads(lambda: ag.sum_(ag.mean(x, axis=0) * ag.sum_(x, axis=1, keepdims=True)), [x])


def test_fd_max_routes_to_argmax():
    rng = np.random.default_rng(10)
    x = rand(rng, 4, 7)
    check_grads(lambda: ag.sum_(ag.max_(x, axis=-1)), [x])


def test_fd_shape_ops():
    rng = np.random.default_rng(11)
    x = rand(rng, 2, 3, 4)
    check_grads(lambda: ag.sum_(ag.swapaxes(x, 0, 2) * 2.0) + ag.sum_(ag.reshape(x, (4, 6)).reshape(2, 3, 4) ** 2.0), [x])


def test_fd_slice_concat():
    rng = np.random.default_rng(12)
    x, y = rand(rng, 4, 3), rand(rng, 2, 3)
    check_grads(lambda: ag.sum_(ag.concat([x[1:3], y], axis=0) ** 2.0), [x, y])


def test_fd_take_rows_and_along_last():
    rng = np.random.default_rng(13)
    x = rand(rng, 5, 4)
    idx = np.array([0, 2, 2, 4])
    targets = np.array([1, 3, 0, 2])
    check_grads(lambda: ag.sum_(ag.take_along_last(ag.take_rows(x, idx), targets)), [x])


def test_fd_gather_flat():
    rng = np.random.default_rng(14)
    x = rand(rng, 3, 4)
    flat_idx = np.array([[0, 5, 5], [11, 2, 7]])
    check_grads(lambda: ag.sum_(ag.gather_flat(x, flat_idx, (2, 3)) ** 2.0), [x])


def test_fd_pad2d():
    rng = np.random.default_rng(15)
    x = rand(rng, 2, 3, 3)
    check_grads(lambda: ag.sum_(ag.pad2d(x, 1) ** 2.0), [x])


def test_fd_division():
    rng = np.random.default_rng(16)
    x = rand(rng, 3)
    y = Tensor(rng.uniform(1.0, 2.0, 3), requires_grad=True)
    check_grads(lambda: ag.sum_(x / y), [x, y])


# ---- determinism and hygiene ------------------------------------------------


def test_forward_deterministic():
    rng = np.random.default_rng(17)
    data = rng.standard_normal((8, 8))
    a1 = ag.masked_softmax(ag.matmul(Tensor(data), Tensor(data.T)))
    a2 = ag.masked_softmax(ag.matmul(Tensor(data), Tensor(data.T)))
    assert np.array_equal(a1.data, a2.data)


def test_detach_cuts_tape():
    x = Tensor(2.0, requires_grad=True)
    y = (x * x).detach()
    assert not y.requires_grad
    z = ag.mul_const(x, 1.0) + y
    z.backward()
    np.testing.assert_allclose(x.grad, 1.0)


def test_live_bytes_tracking():
    ag.enable_alloc_tracking(True)
    try:
        before = ag.live_bytes()
        t = Tensor(np.zeros((100, 100)))
        assert ag.live_bytes() - before == t.data.nbytes
        assert ag.peak_bytes() >= ag.live_bytes()
    finally:
        ag.enable_alloc_tracking(False)
