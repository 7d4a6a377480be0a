import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qrestore.config import DecompParams
from qrestore.decomp import (DNet, decompose, decompose_batch, dnet_refine, gradient_magnitude, guidance_map,
                             recompose_error_bound, structure_map)
from qrestore.qalg import encode_image
from qrestore.verify import COMPOSITE_TOL, run_suite

images = arrays(np.float64, (9, 7, 3), elements=st.floats(0, 1, allow_nan=False))


def test_defaults():
    p = DecompParams()
    assert (p.gamma_t, p.gamma_s) == (0.5, 1.5)


def test_gradient_of_a_ramp():
    ramp = np.tile(np.arange(6.0) * 0.1, (5, 1))
    g = gradient_magnitude(ramp)
    np.testing.assert_allclose(g[:, 1:-1], 0.1)
    np.testing.assert_allclose(g[:, 0], 0.05)


def test_constant_image_is_fully_clamped():
    I = encode_image(np.full((8, 8, 3), 0.5))
    res = decompose(I)
    assert np.all(res.S.rgb == 1e-3)
    assert np.all(res.T.rgb == 10.0)
    assert np.all(res.G == 0)


@given(images)
def test_structure_and_texture_ranges(rgb):
    p = DecompParams()
    res = decompose(encode_image(rgb), p)
    assert np.all(res.S.rgb >= p.eps) and np.all(res.S.rgb <= 1)
    assert np.all(res.T.rgb >= 0) and np.all(res.T.rgb <= p.t_max)
    np.testing.assert_allclose(res.S.L, res.S.R)


@given(images)
def test_recomposition_error_is_within_clamp_bound(rgb):
    I = encode_image(rgb)
    p = DecompParams()
    s0 = structure_map(I, p.gamma_s, p.patch, p.eps)
    res = decompose(I, p)
    err = np.abs(res.S.rgb * res.T.rgb - rgb)
    bound = np.moveaxis(recompose_error_bound(I, s0, p.t_max), 0, -1)
    assert np.all(err <= bound + 1e-12)


def test_unclamped_pixels_recompose_exactly(rng):
    rgb = rng.uniform(0.05, 0.3, size=(10, 10, 3))
    res = decompose(encode_image(rgb), DecompParams(t_max=1e6))
    unclamped = np.all(np.abs(res.S.rgb - 1e-3) > 0, axis=-1)
    np.testing.assert_allclose((res.S.rgb * res.T.rgb)[unclamped], rgb[unclamped], atol=1e-12)


def test_batch_matches_single(rng):
    rgb = rng.uniform(size=(2, 8, 8, 3))
    x = np.stack([encode_image(im).planes for im in rgb])
    S, T, G = decompose_batch(x)
    for b in range(2):
        r = decompose(encode_image(rgb[b]))
        np.testing.assert_allclose(S[b], r.S.planes, atol=1e-15)
        np.testing.assert_allclose(T[b], r.T.planes, atol=1e-15)
        np.testing.assert_allclose(G[b], r.G, atol=1e-15)


@pytest.mark.parametrize("kw", [{"gamma_t": 0}, {"gamma_s": -1}, {"eps": 0}, {"patch": 2}])
def test_invalid_params(kw):
    with pytest.raises(ValueError):
        DecompParams(**kw)


def test_guidance_exponent_validated():
    with pytest.raises(ValueError):
        guidance_map(np.zeros((4, 4)), 0.0)


def test_dnet_output_in_unit_interval(rng):
    out = dnet_refine(encode_image(rng.uniform(size=(8, 8, 3))), DNet(2, rng=rng))
    assert out.planes.shape == (4, 8, 8)
    assert np.all((out.planes > 0) & (out.planes < 1))


def test_gradient_suite_passes():
    assert all(r.error < COMPOSITE_TOL for r in run_suite("decomp"))
