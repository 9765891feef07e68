"""Tests for the attentive and interpolation occupancy decoders."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from airnet.const import DECODER_ATTENTIVE, DECODER_INTERP
from airnet.engine import tensor as T
from airnet.errors import ConfigError, ShapeMismatchError
from airnet.geometry.sampling import knn
from airnet.model.decoder import DecoderConfig, decode, decode_interp, interpolation_weights
from airnet.model.encoder import ShapeEncoding
from airnet.model.network import AirNet, ModelConfig
from airnet.rng import RngStream


def _queries(count: int, label: str = "queries") -> np.ndarray:
    return RngStream(30).split(label).uniform(3 * count).reshape(count, 3) - 0.5


def _with_decoder(config: ModelConfig, **changes) -> ModelConfig:
    return dataclasses.replace(config, decoder=dataclasses.replace(config.decoder, **changes))


def test_batch_decode_matches_single_queries(tiny_model, torus_points):
    """Decoding many queries at once equals decoding them one by one."""
    encoding = tiny_model.encode(torus_points)
    queries = _queries(12)
    batched = tiny_model.decode_batch(queries, encoding)
    looped = [
        decode(query, encoding, tiny_model.config.decoder, tiny_model.decoder) for query in queries
    ]
    assert batched.shape == (12,)
    assert np.max(np.abs(batched - np.array(looped))) <= 1e-6


def test_probabilities_lie_in_unit_interval(tiny_model, torus_points):
    """Outputs are probabilities."""
    values = tiny_model.occupancy_function(torus_points)(_queries(50))
    assert np.all((values >= 0.0) & (values <= 1.0))


def test_batched_shapes_decode_independently(tiny_model, torus_points):
    """B x T queries against a B-shape encoding give a B x T result per shape."""
    other = torus_points * 0.8
    encoding = tiny_model.encode(np.stack([torus_points, other]))
    queries = np.stack([_queries(6, "a"), _queries(6, "b")])
    together = tiny_model.decode_batch(queries, encoding)
    assert together.shape == (2, 6)
    alone = tiny_model.occupancy_function(other)(queries[1])
    assert np.allclose(together[1], alone, atol=1e-10)


def test_query_batch_must_match_encoding(tiny_model, torus_points):
    """Query sets and encoded shapes are paired one to one."""
    encoding = tiny_model.encode(torus_points)
    with pytest.raises(ShapeMismatchError):
        tiny_model.decode_batch(np.zeros((2, 4, 3)), encoding)


def test_chunked_decoding_is_worker_independent(tiny_model, torus_points):
    """5000 queries span two chunks; threads give the serial result."""
    encoding = tiny_model.encode(torus_points)
    queries = _queries(5000)
    serial = tiny_model.decode_batch(queries, encoding, workers=1)
    threaded = tiny_model.decode_batch(queries, encoding, workers=3)
    assert serial.shape == (5000,)
    assert np.array_equal(serial, threaded)
    assert np.allclose(serial[4090:4100], tiny_model.decode_batch(queries[4090:4100], encoding))


def test_k_dec_larger_than_anchor_count_is_clamped(tiny_config, torus_points):
    """k_dec above M attends over every anchor."""
    model = AirNet.create(_with_decoder(tiny_config, k_dec=10), seed=0)
    values = model.occupancy_function(torus_points)(_queries(5))
    assert values.shape == (5,)
    assert np.all(np.isfinite(values))


def test_interpolation_decoder_runs(tiny_config, tiny_model, torus_points):
    """The ablation decoder blends latents and uses no attention weights."""
    model = AirNet.create(_with_decoder(tiny_config, kind=DECODER_INTERP), seed=0)
    assert model.decoder.attention is None
    queries = _queries(8)
    values = model.occupancy_function(torus_points)(queries)
    assert values.shape == (8,)
    assert np.all((values >= 0.0) & (values <= 1.0))
    encoding = model.encode(torus_points)
    single = decode_interp(queries[0], encoding, model.config.decoder, model.decoder)
    assert single == pytest.approx(values[0], abs=1e-8)
    with pytest.raises(ConfigError):
        decode_interp(
            queries[0],
            tiny_model.encode(torus_points),
            tiny_model.config.decoder,
            tiny_model.decoder,
        )


def test_interpolation_weights_are_normalized():
    """Weights sum to one and favor the nearest anchor."""
    anchors = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    queries = np.array([[0.1, 0.0, 0.0], [0.0, 1.5, 0.0]])
    neighborhood = np.array([[0, 1, 2], [2, 0, 1]])
    weights = interpolation_weights(queries, anchors, neighborhood)
    assert np.allclose(weights.sum(axis=1), 1.0)
    assert weights[0, 0] == weights[0].max()
    assert weights[1, 0] == weights[1].max()


def test_query_on_anchor_is_finite():
    """A query exactly at an anchor keeps finite weights."""
    anchors = np.zeros((2, 3))
    anchors[1, 0] = 1.0
    weights = interpolation_weights(np.zeros((1, 3)), anchors, np.array([[0, 1]]))
    assert np.all(np.isfinite(weights))
    assert weights[0, 0] > 0.99


@pytest.mark.parametrize(
    "kwargs",
    [{"kind": "mlp"}, {"k_dec": 0}, {"threshold": 1.0}, {"head_layers": 0}],
)
def test_invalid_decoder_config(kwargs):
    """Unknown kinds and out-of-range sizes are rejected."""
    with pytest.raises(ConfigError):
        DecoderConfig(**kwargs)


def _with_latent_row(encoding: ShapeEncoding, row: int, value: float) -> ShapeEncoding:
    latents = encoding.latents.data.copy()
    latents[row] = value
    return ShapeEncoding(encoding.anchors, T.Tensor(latents), encoding.global_latent)


@pytest.mark.parametrize("kind", [DECODER_ATTENTIVE, DECODER_INTERP])
def test_latents_outside_the_neighborhood_do_not_matter(tiny_config, torus_points, kind):
    """Only the k_dec nearest anchors (plus the global token) reach a query."""
    model = AirNet.create(_with_decoder(tiny_config, kind=kind), seed=5)
    config, params = model.config.decoder, model.decoder
    encoding = model.encode(torus_points)
    assert config.k_dec < encoding.num_anchors
    for query in _queries(5, "locality"):
        nearest = set(knn(query[None], encoding.anchors[0], config.k_dec)[0].tolist())
        far = next(i for i in range(encoding.num_anchors) if i not in nearest)
        near = min(nearest)
        base = decode(query, encoding, config, params)
        assert decode(query, _with_latent_row(encoding, far, 3.0), config, params) == base
        assert decode(query, _with_latent_row(encoding, near, 3.0), config, params) != base
