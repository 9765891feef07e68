"""Tests for vector cross/self attention and the Point Transformer Block."""

from __future__ import annotations

import numpy as np
import pytest

from airnet.engine import tensor as T
from airnet.engine.gradcheck import check_gradients
from airnet.engine.layers import MlpParams, named_parameters
from airnet.errors import ShapeMismatchError
from airnet.model.attention import PtbParams, VcaParams, ptb, vca, vsa
from airnet.rng import RngStream


def _uniform(shape, label: str) -> np.ndarray:
    return RngStream(3).split(label).uniform(int(np.prod(shape))).reshape(shape) - 0.5


def _mlp(params: MlpParams, x: np.ndarray) -> np.ndarray:
    first, second = params.layers
    hidden = np.maximum(x @ first.weight.data + first.bias.data, 0.0)
    return hidden @ second.weight.data + second.bias.data


def test_vca_matches_scripted_evaluation():
    """A tiny instance (M=2, N=3, k=2, d=4) agrees with a direct numpy evaluation."""
    params = VcaParams.create(RngStream(0), 4, d_q=3, d_kv=5, dtype="float64")
    p_q, x_q = _uniform((2, 3), "pq"), _uniform((2, 3), "xq")
    p_kv, x_kv = _uniform((3, 3), "pkv"), _uniform((3, 5), "xkv")
    neighborhood = np.array([[0, 2], [1, 0]])

    out = vca(p_q, T.Tensor(x_q), p_kv, T.Tensor(x_kv), neighborhood, params).data

    f_q = x_q @ params.w_q.weight.data
    f_k = x_kv @ params.w_k.weight.data
    f_v = x_kv @ params.w_v.weight.data
    expected = np.zeros((2, 4))
    for i in range(2):
        scores, values = [], []
        for j in neighborhood[i]:
            position = _mlp(params.delta, p_q[i] - p_kv[j])
            scores.append(_mlp(params.gamma, f_q[i] - f_k[j] + position))
            values.append(f_v[j] + position)
        scores = np.array(scores)
        weights = np.exp(scores - scores.max(axis=0))
        weights /= weights.sum(axis=0)
        expected[i] = (weights * np.array(values)).sum(axis=0)
    assert np.allclose(out, expected, rtol=0, atol=1e-12)


def test_vca_is_translation_invariant():
    """Shifting query and key-value positions together leaves features unchanged."""
    params = VcaParams.create(RngStream(1), 8, dtype="float64")
    p_q, p_kv = _uniform((5, 3), "q"), _uniform((9, 3), "kv")
    x_q, x_kv = T.Tensor(_uniform((5, 8), "fq")), T.Tensor(_uniform((9, 8), "fkv"))
    neighborhood = RngStream(2).integers(15, 9).reshape(5, 3)
    shift = np.array([0.15, -0.1, 0.05])
    base = vca(p_q, x_q, p_kv, x_kv, neighborhood, params).data
    moved = vca(p_q + shift, x_q, p_kv + shift, x_kv, neighborhood, params).data
    assert np.allclose(moved, base, rtol=1e-6, atol=1e-9)


def test_vsa_is_permutation_equivariant():
    """Permuting the points permutes the output rows the same way."""
    params = VcaParams.create(RngStream(4), 6, dtype="float64")
    points = _uniform((20, 3), "points")
    features = _uniform((20, 6), "features")
    perm = RngStream(5).permutation(20)
    base = vsa(points, T.Tensor(features), 5, params).data
    permuted = vsa(points[perm], T.Tensor(features[perm]), 5, params).data
    assert np.allclose(permuted, base[perm], rtol=0, atol=1e-12)


def test_feature_free_vca_uses_positions_only():
    """Without features only the position encodings remain."""
    params = VcaParams.create(RngStream(6), 4, feature_free=True, dtype="float64")
    assert params.w_q is None
    points = _uniform((10, 3), "ff")
    out = vsa(points, None, 4, params)
    assert out.shape == (10, 4)
    shifted = vsa(points + 0.2, None, 4, params)
    assert np.allclose(out.data, shifted.data, atol=1e-9)


def test_global_token_adds_a_key():
    """A positionless global token changes the result but keeps the width."""
    params = VcaParams.create(RngStream(7), 4, dtype="float64")
    p = _uniform((6, 3), "g")
    x = T.Tensor(_uniform((6, 4), "gx"))
    neighborhood = np.tile(np.arange(3), (6, 1))
    tokens = T.Tensor(_uniform((6, 4), "tok"))
    plain = vca(p, x, p, x, neighborhood, params).data
    with_token = vca(p, x, p, x, neighborhood, params, global_tokens=tokens).data
    assert with_token.shape == plain.shape
    assert not np.allclose(with_token, plain)


def test_vca_rejects_out_of_range_neighbors():
    """Neighbor indices must address existing key-values."""
    params = VcaParams.create(RngStream(0), 4, dtype="float64")
    p = _uniform((3, 3), "r")
    x = T.Tensor(_uniform((3, 4), "rx"))
    with pytest.raises(ShapeMismatchError):
        vca(p, x, p, x, np.array([[0], [1], [3]]), params)


def test_vca_widths_must_agree():
    """Mismatched projection widths are rejected at construction."""
    stream = RngStream(0)
    with pytest.raises(ShapeMismatchError):
        VcaParams(
            MlpParams.create(stream, (3, 4, 4)),
            MlpParams.create(stream, (4, 4, 5)),
            feature_free=True,
        )


def test_ptb_keeps_positions_and_width():
    """The block returns its input positions and d-wide features."""
    params = PtbParams.create(RngStream(8), 4, dtype="float64")
    points = _uniform((2, 6, 3), "ptb")
    positions, features = ptb(points, T.Tensor(_uniform((12, 4), "ptbx")), 3, params, training=True)
    assert positions is points
    assert features.shape == (12, 4)


def test_ptb_matches_finite_differences():
    """PTB gradients on a 6-point cloud agree with central differences."""
    params = PtbParams.create(RngStream(9), 4, dtype="float64")
    points = _uniform((6, 3), "ptb-grad")
    features = T.Tensor(_uniform((6, 4), "ptb-feat"))
    weights = _uniform((6, 4), "ptb-w")

    def objective() -> T.Tensor:
        _, out = ptb(points, features, 3, params, training=True)
        return T.sum(T.mul(out, weights))

    report = check_gradients(objective, [("features", features), *named_parameters(params)])
    assert report.passed, report.format()


def test_vca_ignores_features_outside_the_neighborhood():
    """Zeroing key-value rows no query attends to leaves the output unchanged."""
    params = VcaParams.create(RngStream(10), 4, dtype="float64")
    p_q = _uniform((5, 3), "local-q")
    x_q = T.Tensor(_uniform((5, 4), "local-qx"))
    p_kv = _uniform((12, 3), "local-kv")
    features = _uniform((12, 4), "local-kvx")
    neighborhood = RngStream(11).permutation(12)[:6].reshape(2, 3)[np.arange(5) % 2]
    outside = np.setdiff1d(np.arange(12), neighborhood)
    zeroed = features.copy()
    zeroed[outside] = 0.0

    base = vca(p_q, x_q, p_kv, T.Tensor(features), neighborhood, params).data
    local = vca(p_q, x_q, p_kv, T.Tensor(zeroed), neighborhood, params).data
    assert np.array_equal(local, base)

    zeroed[neighborhood[0, 0]] = 0.0
    changed = vca(p_q, x_q, p_kv, T.Tensor(zeroed), neighborhood, params).data
    assert not np.allclose(changed, base)
