import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from qrestore import autodiff as ad
from qrestore.autodiff import DomainError, Tensor
from qrestore.verify import PRIMITIVE_TOL, run_suite


@st.composite
def conv_case(draw):
    groups = draw(st.sampled_from([1, 1, 2, 3]))
    cg = draw(st.integers(1, 2))
    og = draw(st.integers(1, 2))
    k = draw(st.sampled_from([1, 2, 3]))
    stride = draw(st.integers(1, 2))
    pad = draw(st.integers(0, k))
    H = draw(st.integers(k, 7))
    W = draw(st.integers(k, 7))
    seed = draw(st.integers(0, 2**31))
    return groups, cg, og, k, stride, pad, H, W, seed


@given(conv_case())
def test_conv2d_matches_nested_loops(case):
    groups, cg, og, k, stride, pad, H, W, seed = case
    r = np.random.default_rng(seed)
    x = r.normal(size=(2, groups * cg, H, W))
    w = r.normal(size=(groups * og, cg, k, k))
    b = r.normal(size=groups * og)
    got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad, groups=groups).data
    np.testing.assert_allclose(got, oracles.conv2d(x, w, b, stride, pad, groups), atol=1e-12)


def test_depthwise_path_matches_oracle(rng):
    x = rng.normal(size=(2, 5, 6, 6))
    w = rng.normal(size=(5, 1, 3, 3))
    got = ad.conv2d(Tensor(x), Tensor(w), pad=1, groups=5).data
    np.testing.assert_allclose(got, oracles.conv2d(x, w, None, 1, 1, 5), atol=1e-12)


def test_matmul_matches_loops(rng):
    a, b = rng.normal(size=(4, 6)), rng.normal(size=(6, 3))
    np.testing.assert_allclose(ad.matmul(Tensor(a), Tensor(b)).data, oracles.matmul(a, b), atol=1e-12)


@pytest.mark.parametrize("mode,np_mode", [("zero", "constant"), ("reflect", "reflect"), ("replicate", "edge")])
def test_pad_modes_match_numpy(rng, mode, np_mode):
    x = rng.normal(size=(1, 2, 4, 5))
    got = ad.pad2d(Tensor(x), 2, mode).data
    np.testing.assert_array_equal(got, np.pad(x, ((0, 0), (0, 0), (2, 2), (2, 2)), mode=np_mode))


def test_upsample_nearest(rng):
    x = rng.normal(size=(1, 2, 3, 3))
    np.testing.assert_array_equal(ad.upsample_nearest(Tensor(x), 2).data, x.repeat(2, -1).repeat(2, -2))


def test_shared_node_gradients_accumulate():
    x = ad.parameter(np.array([3.0]))
    y = x * x + x
    ad.backward(y.sum())
    assert x.grad[0] == 7.0


def test_unreached_inputs_get_zero_grad():
    x, z = ad.parameter(np.ones(2)), ad.parameter(np.ones(3))
    ad.backward((x * 2).sum(), [x, z])
    assert np.array_equal(z.grad, np.zeros(3))


def test_broadcast_gradient_is_reduced():
    a = ad.parameter(np.ones((3, 4)))
    b = ad.parameter(np.ones(4))
    ad.backward((a * b).sum())
    assert b.grad.shape == (4,) and np.all(b.grad == 3)


def test_no_grad_builds_no_tape():
    x = ad.parameter(np.ones(3))
    with ad.no_grad():
        y = x * 2
    assert not y.requires_grad


def test_near_zero_division_is_a_domain_error():
    with pytest.raises(DomainError):
        ad.div(Tensor(np.ones(2)), Tensor(np.array([1.0, 0.0])))


def test_deep_chain_does_not_recurse():
    x = ad.parameter(np.array([1.0]))
    y = x
    for _ in range(5000):
        y = y + 0.0
    ad.backward(y.sum())
    assert x.grad[0] == 1.0


def test_softmax_rows_sum_to_one(rng):
    s = ad.softmax(Tensor(rng.normal(size=(3, 7)) * 50), axis=-1).data
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-12)


def test_grad_check_catches_a_wrong_backward(rng):
    def bad_square(a):
        return Tensor.from_op(a.data ** 2, (a,), lambda g: (g * a.data,))

    x = Tensor(rng.normal(size=5))
    assert ad.grad_check(lambda t: bad_square(t).sum(), x) > 0.1


def test_primitive_suite_passes():
    results = run_suite("autodiff", seed=0)
    assert results and all(r.error < PRIMITIVE_TOL for r in results), [(r.name, r.error) for r in results]


def test_underflow_flushes_to_zero_not_subnormal():
    # subnormals slow every downstream GEMM several-fold
    tiny = np.finfo(float).tiny
    x = Tensor(np.array([0.0, -720.0, -745.5]), requires_grad=True)
    for out in (ad.softmax(x).data, ad.sigmoid(x).data, ad.exp(x).data):
        assert not np.any((out != 0) & (np.abs(out) < tiny))
    s = ad.sigmoid(x)
    ad.backward(s.sum())
    assert not np.any((x.grad != 0) & (np.abs(x.grad) < tiny))
