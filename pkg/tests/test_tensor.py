"""Reverse-mode engine: per-op gradients, loop oracles for the fused kernels, graph contracts."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.ndimage import correlate

from uknowpan import tensor as T
from uknowpan.errors import ContractError, DimensionError
from uknowpan.tensor import Tensor

FD_TOL = 1e-6


def fd(f, x):
    return T.finite_difference_check(f, Tensor(x))


def weighted(out, seed=0):
    # random projection so that every output element matters
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return T.tsum(out * Tensor(w))


# -- elementwise and reductions -----------------------------------------------------

UNARY = {
    "exp": T.exp,
    "log": lambda a: T.log(T.tabs(a) + 0.5),
    "sqrt": lambda a: T.sqrt(T.tabs(a) + 0.5),
    "gelu": T.gelu,
    "softplus": T.softplus,
    "sigmoid": T.sigmoid,
    "power": lambda a: T.power(T.tabs(a) + 0.5, 1.7),
    "neg": T.neg,
    "clamp": lambda a: T.clamp(a, -0.5, 0.5),
    "maximum": lambda a: T.maximum(a, 0.1),
    "softmax": lambda a: T.softmax(a, axis=-1),
    "l2_normalize": lambda a: T.l2_normalize(a, axis=-1),
    "mean": lambda a: T.mean(a, axis=1, keepdims=True),
    "sum": lambda a: T.tsum(a, axis=0),
    "transpose": lambda a: T.transpose(a, (1, 0)),
    "reshape": lambda a: T.reshape(a, (-1,)),
    "roll": lambda a: T.roll(a, 2, axis=1),
    "flip": lambda a: T.flip(a, 0),
    "getitem": lambda a: a[1:, ::2],
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name, rng):
    x = rng.standard_normal((3, 5))
    # keep clamp/maximum away from their kinks
    x[np.abs(np.abs(x) - 0.5) < 0.05] += 0.2
    x[np.abs(x - 0.1) < 0.05] += 0.2
    assert fd(lambda a: weighted(UNARY[name](a)), x) < FD_TOL


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "matmul"])
def test_binary_gradients_both_sides(op, rng):
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((3, 3)) if op == "matmul" else rng.standard_normal((1, 3))
    if op == "div":
        b = np.abs(b) + 0.5
    f = getattr(T, op)
    assert fd(lambda x: weighted(f(x, Tensor(b))), a) < FD_TOL
    assert fd(lambda y: weighted(f(Tensor(a), y)), b) < FD_TOL


def test_broadcast_gradient_is_reduced(rng):
    a = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((3,)), requires_grad=True)
    T.tsum(a * b).backward()
    np.testing.assert_allclose(b.grad, a.data.sum(axis=0))
    assert b.grad.shape == (3,)


def test_gelu_matches_tanh_formula(rng):
    x = rng.standard_normal(50)
    expected = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
    np.testing.assert_allclose(T.gelu(Tensor(x)).data, expected, atol=1e-15)


def test_softplus_is_stable_for_large_inputs():
    out = T.softplus(Tensor(np.array([-800.0, 0.0, 800.0]))).data
    np.testing.assert_allclose(out, [0.0, math.log(2), 800.0])


def test_concat_split_stack_gradients(rng):
    x = rng.standard_normal((2, 6, 3))
    assert fd(lambda a: weighted(T.concat(T.split(a, 3, axis=1)[::-1], axis=1)), x) < FD_TOL
    assert fd(lambda a: weighted(T.stack([a, 2.0 * a], axis=0)), x) < FD_TOL


def test_split_contract():
    with pytest.raises(DimensionError):
        T.split(Tensor(np.zeros((5, 2))), 2, axis=0)


# -- image ops against loop oracles -----------------------------------------------------


def dwconv_loop(x, w, b, stride):
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho, wo = (h - 1) // stride + 1, (wd - 1) // stride + 1
    out = np.zeros((n, c, ho, wo))
    for i in range(n):
        for ch in range(c):
            for y in range(ho):
                for z in range(wo):
                    patch = xp[i, ch, y * stride:y * stride + 3, z * stride:z * stride + 3]
                    out[i, ch, y, z] = np.sum(patch * w[ch]) + b[ch]
    return out


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("size", [(5, 7), (8, 8)])
def test_dwconv_matches_loop(stride, size, rng):
    x = rng.standard_normal((2, 3) + size)
    w = rng.standard_normal((3, 3, 3))
    b = rng.standard_normal(3)
    out = T.dwconv3x3(Tensor(x), Tensor(w), Tensor(b), stride).data
    np.testing.assert_allclose(out, dwconv_loop(x, w, b, stride), atol=1e-12)


def test_dwconv_stride1_equals_scipy_correlate(rng):
    x = rng.standard_normal((1, 2, 9, 6))
    w = rng.standard_normal((2, 3, 3))
    out = T.dwconv3x3(Tensor(x), Tensor(w)).data
    for c in range(2):
        np.testing.assert_allclose(out[0, c], correlate(x[0, c], w[c], mode="constant"), atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_dwconv_gradients(stride, rng):
    x = rng.standard_normal((2, 2, 5, 6))
    w = rng.standard_normal((2, 3, 3))
    b = rng.standard_normal(2)
    assert fd(lambda a: weighted(T.dwconv3x3(a, Tensor(w), Tensor(b), stride)), x) < FD_TOL
    assert fd(lambda k: weighted(T.dwconv3x3(Tensor(x), k, Tensor(b), stride)), w) < FD_TOL
    assert fd(lambda c: weighted(T.dwconv3x3(Tensor(x), Tensor(w), c, stride)), b) < FD_TOL


def test_dwconv_float32_path(rng):
    x = rng.standard_normal((1, 2, 6, 6)).astype(np.float32)
    w = rng.standard_normal((2, 3, 3)).astype(np.float32)
    out = T.dwconv3x3(Tensor(x), Tensor(w))
    assert out.dtype == np.float32
    np.testing.assert_allclose(out.data, dwconv_loop(x, w, np.zeros(2), 1), atol=1e-5)


def test_conv1x1_and_linear_match_einsum(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    w = rng.standard_normal((6, 3))
    b = rng.standard_normal(6)
    expected = np.einsum("oc,nchw->nohw", w, x) + b[None, :, None, None]
    np.testing.assert_allclose(T.conv1x1(Tensor(x), Tensor(w), Tensor(b)).data, expected, atol=1e-12)
    v = rng.standard_normal((4, 3))
    np.testing.assert_allclose(T.linear(Tensor(v), Tensor(w), Tensor(b)).data, v @ w.T + b, atol=1e-12)
    assert fd(lambda a: weighted(T.conv1x1(a, Tensor(w), Tensor(b))), x) < FD_TOL
    assert fd(lambda k: weighted(T.conv1x1(Tensor(x), k, Tensor(b))), w) < FD_TOL
    assert fd(lambda k: weighted(T.linear(Tensor(v), k, Tensor(b))), w) < FD_TOL


def group_norm_loop(x, groups, eps=1e-5):
    n, c = x.shape[:2]
    out = np.empty_like(x)
    per = c // groups
    for i in range(n):
        for g in range(groups):
            block = x[i, g * per:(g + 1) * per]
            out[i, g * per:(g + 1) * per] = (block - block.mean()) / math.sqrt(block.var() + eps)
    return out


def test_group_norm_matches_loop_and_grads(rng):
    x = rng.standard_normal((2, 4, 3, 3))
    w = rng.standard_normal(4)
    b = rng.standard_normal(4)
    out = T.group_norm(Tensor(x), 2, Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(out, group_norm_loop(x, 2) * w[:, None, None] + b[:, None, None], atol=1e-12)
    assert fd(lambda a: weighted(T.group_norm(a, 2, Tensor(w), Tensor(b))), x) < 1e-5
    assert fd(lambda k: weighted(T.group_norm(Tensor(x), 2, k, Tensor(b))), w) < FD_TOL


def test_pool_and_upsample(rng):
    x = rng.standard_normal((1, 2, 4, 6))
    pooled = T.avg_pool2(Tensor(x)).data
    np.testing.assert_allclose(pooled, x.reshape(1, 2, 2, 2, 3, 2).mean(axis=(3, 5)))
    up = T.upsample_nearest2(Tensor(pooled)).data
    np.testing.assert_array_equal(up[..., ::2, ::2], pooled)
    assert fd(lambda a: weighted(T.avg_pool2(a)), x) < FD_TOL
    assert fd(lambda a: weighted(T.upsample_nearest2(a)), x) < FD_TOL


# -- graph contracts ------------------------------------------------------------------------


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2).backward()


def test_gradients_accumulate_over_shared_paths():
    x = Tensor(np.array(3.0), requires_grad=True)
    y = x * x + x * 2.0 + x
    y.backward()
    assert x.grad == pytest.approx(2 * 3.0 + 3.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = T.tsum(x * 3.0)
    assert not y.requires_grad
    y.backward()
    assert x.grad is None
    assert T.is_grad_enabled()


def test_frozen_restores_flags():
    p = Tensor(np.ones(2), requires_grad=True)
    q = Tensor(np.ones(2), requires_grad=False)
    with T.frozen([p, q]):
        out = T.tsum(p * 2.0)
        assert not p.requires_grad
    assert p.requires_grad and not q.requires_grad
    out.backward()
    assert p.grad is None


def test_finite_difference_check_detects_wrong_gradient(rng):
    def bad_square(a):
        return T.make_op(a.data**2, (a,), lambda g: (g * a.data,))  # missing factor 2

    x = rng.standard_normal(4) + 2.0
    assert fd(lambda a: T.tsum(bad_square(a)), x) > 0.4


def test_finite_difference_check_on_transposed_input(rng):
    x = rng.standard_normal((3, 4)).T  # not C-contiguous
    w = rng.standard_normal((4, 3))
    assert fd(lambda a: T.tsum(a * a * Tensor(w)), x) < FD_TOL


def test_finite_difference_check_leaves_input_untouched(rng):
    x = rng.standard_normal(5)
    t = Tensor(x.copy())
    T.finite_difference_check(lambda a: T.tsum(T.exp(a)), t)
    np.testing.assert_array_equal(t.data, x)


# -- properties -----------------------------------------------------------------------------

arrays = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s).standard_normal((3, 4)) * 5)


@given(arrays)
def test_softmax_rows_sum_to_one(x):
    out = T.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(out > 0)


@given(arrays)
def test_l2_normalize_gives_unit_rows(x):
    out = T.l2_normalize(Tensor(x), axis=-1).data
    np.testing.assert_allclose(np.linalg.norm(out, axis=-1), 1.0, atol=1e-12)


@given(arrays, st.integers(-5, 5))
def test_roll_matches_numpy(x, k):
    np.testing.assert_array_equal(T.roll(Tensor(x), k, axis=1).data, np.roll(x, k, axis=1))


@given(arrays)
def test_sum_gradient_is_ones(x):
    t = Tensor(x, requires_grad=True)
    T.tsum(t).backward()
    np.testing.assert_array_equal(t.grad, np.ones_like(x))
