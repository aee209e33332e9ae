#!/usr/bin/env python3
"""
Tests for the spatio-temporal keypoint decoder
"""

import numpy as np
import pytest

from radarpose.config import preset
from radarpose.decoder import Decoder, DecoderLayer, to_pose_window
from radarpose.encoder import TokenSequence
from radarpose.errors import ShapeError
from radarpose.gradcheck import grad_check
from radarpose.layers import ParameterStore
from radarpose.tensor import Tensor


def _layer(seed=0, d_model=8, heads=2, temporal=True):
    store = ParameterStore(seed=seed)
    return store, DecoderLayer(store, "layer", d_model, heads, mlp_ratio=2, temporal=temporal)


def _queries(frames, joints, d_model=8, seed=1):
    return Tensor(np.random.default_rng(seed).normal(size=(frames, joints, d_model)))


def _encoded(n_tok, channels, seed=2):
    rng = np.random.default_rng(seed)
    return TokenSequence(
        tokens=Tensor(rng.normal(size=(n_tok, channels))),
        positions=Tensor(rng.normal(size=(n_tok, channels))),
        index_map=np.zeros((n_tok, 4), dtype=int),
    )


def test_spatial_attention_is_frame_local():
    _, layer = _layer()
    q = _queries(4, 5)
    before = layer.spatial_attention(q).data
    perturbed = q.data.copy()
    perturbed[0] += 1.0
    after = layer.spatial_attention(Tensor(perturbed)).data
    np.testing.assert_array_equal(before[1:], after[1:])
    assert not np.allclose(before[0], after[0])


def test_temporal_attention_is_joint_local():
    _, layer = _layer()
    q = _queries(4, 5)
    before = layer.temporal_attention(q).data
    perturbed = q.data.copy()
    perturbed[:, 0] += 1.0
    after = layer.temporal_attention(Tensor(perturbed)).data
    np.testing.assert_array_equal(before[:, 1:], after[:, 1:])
    assert not np.allclose(before[:, 0], after[:, 0])


def test_attention_rows_sum_to_one():
    _, layer = _layer()
    layer.spatial_attention(_queries(3, 6))
    np.testing.assert_allclose(layer.sa.last_weights.sum(axis=-1), 1.0, atol=1e-12)
    layer.cross_attention(_queries(3, 6), *_memory(10))
    np.testing.assert_allclose(layer.ca.last_weights.sum(axis=-1), 1.0, atol=1e-12)


def _memory(n_tok, d_model=8, seed=3):
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(size=(n_tok, d_model))), Tensor(rng.normal(size=(n_tok, d_model)))


def test_single_frame_temporal_attention_is_value_path():
    _, layer = _layer()
    q = _queries(1, 4)
    expected = layer.ta.out_proj(layer.ta.v_proj(q)).data
    np.testing.assert_allclose(layer.temporal_attention(q).data, expected, atol=1e-12)


def test_single_token_cross_attention_broadcasts_value():
    _, layer = _layer()
    memory, key_pos = _memory(1)
    out = layer.cross_attention(_queries(3, 4), memory, key_pos).data
    value = layer.ca.out_proj(layer.ca.v_proj(memory)).data[0]
    np.testing.assert_allclose(out, np.broadcast_to(value, out.shape), atol=1e-12)


def test_spatial_attention_is_permutation_equivariant():
    _, layer = _layer()
    q = _queries(2, 5)
    perm = np.array([3, 0, 4, 1, 2])
    out = layer.spatial_attention(q).data
    permuted = layer.spatial_attention(Tensor(q.data[:, perm])).data
    np.testing.assert_allclose(permuted, out[:, perm], atol=1e-12)


def test_layer_shape_checks():
    _, layer = _layer()
    with pytest.raises(ShapeError):
        layer.spatial_attention(_queries(2, 3, d_model=6))
    memory, key_pos = _memory(4, d_model=6)
    with pytest.raises(ShapeError):
        layer.cross_attention(_queries(2, 3), memory, key_pos)
    with pytest.raises(ShapeError):
        DecoderLayer(ParameterStore(), "bad", 10, 3, 2)


def test_decoder_layer_gradient():
    store, layer = _layer(seed=5)
    for name in store:
        if name.endswith("weight") and "norm" not in name:
            store[name].data *= 10.0
    q = Tensor(_queries(3, 4).data, requires_grad=True)
    memory, key_pos = _memory(6)
    weights = np.random.default_rng(8).normal(size=(3, 4, 8))
    params = {"q": q, **dict(store)}
    report = grad_check(lambda: (layer(q, memory, key_pos) * weights).sum(), params, samples=40)
    assert report.passed, report


def test_many_to_many_output():
    config = preset("tiny", T=9)
    decoder = Decoder(config, ParameterStore(seed=0))
    coords = decoder(_encoded(24, config.feature_channels))
    assert coords.shape == (9, 14, 2)
    assert coords.data.min() >= 0.0 and coords.data.max() <= 1.0


def test_many_to_one_output():
    config = preset("tiny", T=9, strategy="many_to_one")
    store = ParameterStore(seed=0)
    decoder = Decoder(config, store)
    assert decoder(_encoded(24, config.feature_channels)).shape == (1, 14, 2)
    assert not any(".ta." in name for name in store)


def test_decoder_is_deterministic():
    config = preset("tiny")
    encoded = _encoded(12, config.feature_channels)
    first = Decoder(config, ParameterStore(seed=3))(encoded).data
    second = Decoder(config, ParameterStore(seed=3))(encoded).data
    np.testing.assert_array_equal(first, second)


def test_parameter_names():
    config = preset("tiny")
    store = ParameterStore()
    Decoder(config, store)
    for name in ["decoder.queries", "decoder.layer.0.sa.q_proj.weight", "decoder.layer.0.ta.norm.weight",
                 "decoder.layer.0.ca.out_proj.bias", "decoder.layer.0.mlp.fc1.weight", "decoder.head.fc2.bias"]:
        assert name in store


def test_to_pose_window():
    window = to_pose_window(Tensor(np.full((3, 14, 2), 0.5)), start_frame=7)
    assert window.frames == 3 and window.start_frame == 7
    assert window.visibility is None
