import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from qrestore import autodiff as ad
from qrestore import qlayers as ql
from qrestore.autodiff import Tensor
from qrestore.verify import COMPOSITE_TOL, PRIMITIVE_TOL, run_suite


def to_real(xq):
    """``(C, 4, H, W)`` quaternion-major to the ``[r | i | j | k]`` real layout."""
    return np.concatenate([xq[:, q] for q in range(4)], axis=0)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31))
def test_qconv_1x1_matches_hamilton_oracle(cin, cout, seed):
    r = np.random.default_rng(seed)
    xq = r.normal(size=(cin, 4, 3, 2))
    w = r.normal(size=(cout, cin, 4))
    weights = [Tensor(w[..., q][..., None, None]) for q in range(4)]
    got = ql.qconv2d(Tensor(to_real(xq)[None]), weights).data[0]
    np.testing.assert_allclose(got, to_real(oracles.qconv1x1(xq, w)), atol=1e-12)


def test_qlinear_matches_qconv_1x1(rng):
    w = [rng.normal(size=(2, 3)) for _ in range(4)]
    x = rng.normal(size=(1, 12, 1, 1))
    conv = ql.qconv2d(Tensor(x), [Tensor(a[..., None, None]) for a in w]).data[0, :, 0, 0]
    lin = ql.qlinear(Tensor(x[:, :, 0, 0]), [Tensor(a) for a in w]).data[0]
    np.testing.assert_allclose(conv, lin, atol=1e-12)


def test_linear_param_counts():
    assert ql.QLinear(4, 8, bias=False).num_parameters() == 128
    assert ql.RealLinear(4, 8, bias=False).num_parameters() == 512


@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv_weight_ratio_is_a_quarter(k):
    q, r = ql.QConv2d(3, 5, k), ql.RealConv2d(3, 5, k)
    assert 4 * q.weight_count() == r.weight_count()


def test_real_twin_has_same_shapes(rng):
    x = Tensor(rng.normal(size=(1, 8, 5, 5)))
    assert ql.QConv2d(2, 3)(x).shape == ql.RealConv2d(2, 3)(x).shape == (1, 12, 5, 5)


def test_qcat_keeps_component_grouping(rng):
    a, b = rng.normal(size=(1, 4, 2, 2)), rng.normal(size=(1, 8, 2, 2))
    out = ql.qcat([Tensor(a), Tensor(b)]).data
    parts = ql.qsplit(Tensor(out))
    for q in range(4):
        np.testing.assert_array_equal(parts[q].data[:, 0], a[:, q])
        np.testing.assert_array_equal(parts[q].data[:, 1:], b[:, 2 * q:2 * q + 2])


def test_qsplit_rejects_non_quaternion_width():
    with pytest.raises(ValueError):
        ql.qsplit(Tensor(np.zeros((1, 6, 2, 2))))


def test_attention_rows_are_distributions(rng):
    msa = ql.QMSA(4, 2, rng=rng)
    att = msa.attention(Tensor(rng.normal(size=(2, 9, 16)))).data
    assert att.shape == (2, 2, 9, 9)
    assert np.all(att > 0)
    np.testing.assert_allclose(att.sum(-1), 1.0, atol=1e-12)


def test_score_is_real_part_of_quaternion_product(rng):
    """The head score equals Re Σ_c q_c ⊗ conj(k_c) over the head's channels."""
    msa = ql.QMSA(2, 1, rng=rng)
    x = Tensor(rng.normal(size=(1, 3, 8)))
    q = msa.to_q(x).data[0]
    k = msa.to_k(x).data[0]
    qq = q.reshape(3, 4, 2).transpose(0, 2, 1)
    kq = k.reshape(3, 4, 2).transpose(0, 2, 1)
    score = np.zeros((3, 3))
    for n in range(3):
        for m in range(3):
            for c in range(2):
                kc = kq[m, c] * np.array([1, -1, -1, -1])
                score[n, m] += oracles.scalar_hamilton(qq[n, c], kc)[0]
    score /= np.sqrt(8)
    expect = np.exp(score - score.max(-1, keepdims=True))
    expect /= expect.sum(-1, keepdims=True)
    np.testing.assert_allclose(msa.attention(x).data[0, 0], expect, atol=1e-12)


def test_heads_must_divide_width():
    with pytest.raises(ValueError):
        ql.QMSA(3, 2)


def test_patch_embed_shapes_and_overlap_rule(rng):
    emb = ql.PatchEmbed(1, 2, 7, 4)
    tok, H, W = emb(Tensor(rng.normal(size=(1, 4, 16, 16))))
    assert (H, W) == (4, 4) and tok.shape == (1, 16, 8)
    with pytest.raises(ValueError):
        ql.PatchEmbed(1, 2, 2, 2)


def test_ffn_has_residual(rng):
    ffn = ql.QFFN(2, 2, rng=rng)
    for p in ffn.fc2.parameters():
        p.data[:] = 0
    x = Tensor(rng.normal(size=(1, 4, 8)))
    np.testing.assert_array_equal(ffn(x, 2, 2).data, x.data)


def test_regenerate_luma(rng):
    x = rng.uniform(size=(1, 4, 2, 2))
    out = ql.regenerate_luma(Tensor(x)).data
    np.testing.assert_allclose(out[:, 0], 0.299 * x[:, 1] + 0.587 * x[:, 2] + 0.114 * x[:, 3])
    np.testing.assert_array_equal(out[:, 1:], x[:, 1:])


def test_gradient_suite_passes():
    for r in run_suite("qlayers", seed=0):
        assert r.error < (PRIMITIVE_TOL if r.kind == "primitive" else COMPOSITE_TOL), r
