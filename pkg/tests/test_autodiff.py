import numpy as np
import pytest

from upw.autodiff import (
    Tensor,
    concatenate,
    gelu,
    layer_norm,
    linear,
    log_softmax,
    softmax,
)
from upw.errors import ShapeError
from upw.gradcheck import grad_check


def numeric_grad(fn, x, eps=1e-6):
    """Plain central differences on a raw array-valued parameter."""
    g = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = g.reshape(-1)
    for i in range(flat_x.size):
        saved = flat_x[i]
        flat_x[i] = saved + eps
        f_plus = fn()
        flat_x[i] = saved - eps
        f_minus = fn()
        flat_x[i] = saved
        flat_g[i] = (f_plus - f_minus) / (2 * eps)
    return g


def check_op(build, shapes, seed=0, tol=1e-7):
    rng = np.random.default_rng(seed)
    params = {f"p{i}": Tensor(rng.normal(size=s), requires_grad=True)
              for i, s in enumerate(shapes)}

    def loss():
        return build(*params.values())

    out = loss()
    out.backward()
    for name, p in params.items():
        num = numeric_grad(lambda: float(build(*params.values()).data), p.data)
        assert p.grad is not None, name
        np.testing.assert_allclose(p.grad, num, rtol=tol, atol=tol, err_msg=name)


def test_add_mul_broadcast():
    check_op(lambda a, b: ((a + b) * a).sum(), [(3, 4), (4,)])
    check_op(lambda a, b: ((a - b) * (a * 2.0 + 1.0)).sum(), [(2, 1, 3), (5, 3)])


def test_div_pow():
    check_op(lambda a, b: (a / (b * b + 2.0)).sum(), [(4, 3), (3,)])
    check_op(lambda a: ((a * a + 1.0) ** 1.5).sum(), [(5,)])


def test_matmul_2d_and_batched():
    check_op(lambda a, b: (a @ b).sum(), [(3, 4), (4, 2)])
    check_op(lambda a, b: ((a @ b) * (a @ b)).sum(), [(2, 3, 4), (2, 4, 2)])
    # batch broadcast on the left operand
    check_op(lambda a, b: (a @ b).sum(), [(1, 3, 4), (5, 4, 2)])


def test_matmul_requires_2d():
    with pytest.raises(ShapeError):
        Tensor(np.ones(3), requires_grad=True) @ Tensor(np.ones((3, 2)))


def test_transcendentals():
    check_op(lambda a: (a.exp() + (a * a + 1.0).log()).sum(), [(4, 2)])
    check_op(lambda a: (a.tanh() * a).sum(), [(6,)])
    check_op(lambda a: ((a * a) + 0.5).sqrt().sum(), [(3, 3)])


def test_reductions_and_shape_ops():
    check_op(lambda a: a.sum(axis=0).sum(), [(3, 4)])
    check_op(lambda a: (a.sum(axis=1, keepdims=True) * a).sum(), [(3, 4)])
    check_op(lambda a: a.mean(axis=-1).sum(), [(2, 5)])
    check_op(lambda a: a.reshape(6, 2).sum(axis=0).sum(), [(3, 4)])
    check_op(lambda a: (a.transpose((1, 0, 2)) * 3.0).sum(), [(2, 3, 4)])
    check_op(lambda a: a.reshape(1, 2, 3).broadcast_to((4, 2, 3)).sum(), [(2, 3)])


def test_getitem_slices_and_fancy():
    check_op(lambda a: a[1:3].sum(), [(5, 2)])
    idx = np.array([0, 2, 2, 1])
    check_op(lambda a: (a[idx] * a[idx]).sum(), [(3, 4)])
    rows = np.arange(3)
    cols = np.array([1, 0, 1])
    check_op(lambda a: a[(rows, cols)].sum(), [(3, 2)])


def test_duplicate_gather_accumulates():
    e = Tensor(np.ones((2, 2)), requires_grad=True)
    out = e[np.array([0, 0, 0])].sum()
    out.backward()
    assert np.array_equal(e.grad, np.array([[3.0, 3.0], [0.0, 0.0]]))


def test_concatenate():
    check_op(lambda a, b: concatenate([a, b], axis=0).sum(), [(2, 3), (4, 3)])
    check_op(
        lambda a, b: (concatenate([a, b], axis=1) ** 2.0).sum(), [(2, 3), (2, 1)]
    )


def test_masked_fill_blocks_gradient():
    mask = np.array([[False, True], [False, False]])
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    out = a.masked_fill(mask, -np.inf)
    assert out.data[0, 1] == -np.inf
    s = softmax(out, axis=-1)
    s.sum().backward()
    assert np.isfinite(a.grad).all()
    check_op(lambda x: (x.masked_fill(mask, 0.0) * x).sum(), [(2, 2)])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(4, 7)) * 30.0)
    s = softmax(x, axis=-1)
    np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)
    check_op(lambda a: (softmax(a, axis=-1) * a).sum(), [(3, 5)])


def test_log_softmax_matches_log_of_softmax():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(3, 6)))
    np.testing.assert_allclose(
        log_softmax(x).data, np.log(softmax(x).data), atol=1e-12
    )
    check_op(lambda a: log_softmax(a, axis=-1)[(np.arange(3), np.array([1, 4, 0]))].sum(), [(3, 5)])


def test_gelu_layer_norm_linear():
    check_op(lambda a: gelu(a).sum(), [(4, 3)])
    check_op(
        lambda x, g, b: layer_norm(x, g, b).sum(),
        [(3, 8), (8,), (8,)],
    )
    check_op(lambda x, w, b: (linear(x, w, b) ** 2.0).sum(), [(3, 4), (4, 2), (2,)])


def test_backward_requires_scalar():
    t = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        (t * 2.0).backward()


def test_grad_accumulates_across_uses():
    a = Tensor(np.array([[2.0]]), requires_grad=True)
    out = (a * a + a).sum()  # d/da = 2a + 1 = 5
    out.backward()
    assert a.grad[0, 0] == pytest.approx(5.0)


def test_constant_parents_skip_graph():
    a = Tensor(np.ones((2, 2)))
    b = a * 2.0 + 1.0
    assert not b.requires_grad
    assert b._parents == ()


def test_grad_check_linear_map_at_truncation_level():
    rng = np.random.default_rng(2)
    w = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    x = rng.normal(size=(3, 6))

    def loss_fn():
        return (Tensor(x) @ w).sum()

    result = grad_check(loss_fn, {"w": w}, eps=1e-4)
    assert result.max_rel_error < 1e-8
