#!/usr/bin/env python3
"""
Tests for configuration files, presets, binary containers and pose JSON
"""

import struct

import numpy as np
import pytest

from radarpose.cli import build_parser
from radarpose.config import ModelConfig, dump_config, load_config, parse_config_text, preset, save_config
from radarpose.errors import ConfigError, FormatError
from radarpose.formats import (
    decode_cube,
    decode_heatmap,
    encode_cube,
    encode_heatmap,
    load_checkpoint,
    read_json,
    read_stream,
    save_checkpoint,
    write_stream,
)
from radarpose.poses import PoseFile, PoseWindow


def test_defaults_match_training_setup():
    config = ModelConfig()
    assert (config.T, config.batch_size, config.lr, config.weight_decay, config.lambda_vel) == (9, 8, 5e-5, 1e-4, 0.05)
    assert config.views == ["horizontal", "vertical"]
    assert config.heatmap_shape == (64, 8, 256)


def test_config_round_trip(tmp_path):
    config = preset("desk", lambda_vel=0.125, window="hann", clutter_removal=False, seed=7)
    assert parse_config_text(dump_config(config)) == config
    path = tmp_path / "run.txt"
    save_config(config, path)
    assert load_config(path) == config


def test_config_text_overrides_base():
    text = "# sweep\nT = 5\n\nstrategy = many_to_one   # ablation\n"
    config = parse_config_text(text, base=preset("tiny"))
    assert config.T == 5
    assert config.strategy == "many_to_one"
    assert config.d_model == 8
    assert config.output_frames == 1


@pytest.mark.parametrize(
    "text",
    ["T = 4", "unknown_key = 1", "batch_size = 0", "heads = 3", "no equals sign", "window = kaiser"],
)
def test_invalid_config_text(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("huge")


def test_full_preset_is_the_cli_default():
    config = preset("full")
    assert config == ModelConfig()
    assert config.heatmap_shape == (64, 8, 256)
    assert (config.T, config.feature_channels, config.vim_layers, config.d_state) == (9, 32, 4, 16)
    assert build_parser().parse_args(["train"]).preset == "full"


def test_cube_codec():
    rng = np.random.default_rng(0)
    samples = (rng.normal(size=(3, 4, 5)) + 1j * rng.normal(size=(3, 4, 5))).astype(np.complex64)
    data = encode_cube(samples, 42, "vertical")
    assert data[:4] == b"MMRC"
    assert len(data) == 32 + 3 * 4 * 5 * 8
    decoded, frame, view = decode_cube(data)
    np.testing.assert_array_equal(decoded, samples)
    assert (frame, view) == (42, "vertical")


def test_cube_codec_errors():
    data = encode_cube(np.zeros((1, 2, 2), dtype=complex), 0, "horizontal")
    with pytest.raises(FormatError):
        decode_cube(b"XXRC" + data[4:])
    with pytest.raises(FormatError):
        decode_cube(data[:4] + struct.pack("<I", 2) + data[8:])
    with pytest.raises(FormatError):
        decode_cube(data[:-1])
    with pytest.raises(FormatError):
        decode_cube(data[:10])


def test_heatmap_codec_layout():
    values = np.arange(6).reshape(1, 2, 3) * (1 + 2j)
    data = encode_heatmap(values)
    assert struct.unpack_from("<4sIIII", data) == (b"MMH3", 1, 1, 2, 3)
    # second element, interleaved (re, im)
    assert struct.unpack_from("<ff", data, 20 + 8) == (1.0, 2.0)
    np.testing.assert_array_equal(decode_heatmap(data), values)


def test_stream_records(tmp_path):
    path = tmp_path / "cubes.mmrc"
    write_stream(path, [b"abc", b"", b"defg"])
    assert read_stream(path) == [b"abc", b"", b"defg"]
    path.write_bytes(path.read_bytes()[:-2])
    with pytest.raises(FormatError):
        read_stream(path)


def test_checkpoint(tmp_path):
    path = tmp_path / "model.mmck"
    params = {
        "encoder.pos.h": np.arange(6, dtype=np.float64).reshape(1, 2, 3),
        "decoder.norm.bias": np.array([0.5, -1.0], dtype=np.float32),
        "scalar": np.array(3.0),
    }
    save_checkpoint(path, params)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(params)
    for name, value in params.items():
        assert loaded[name].dtype == value.dtype
        np.testing.assert_array_equal(loaded[name], value)

    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(FormatError):
        load_checkpoint(path)
    path.write_bytes(b"MMCK" + struct.pack("<II", 1, 1))
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_invalid_json(tmp_path):
    path = tmp_path / "poses.json"
    path.write_text("{not json")
    with pytest.raises(FormatError):
        read_json(path)


def test_pose_file_pixels_and_back():
    window = PoseWindow(coords=np.full((2, 14, 2), 0.25), visibility=np.ones((2, 14)), start_frame=3)
    pose_file = PoseFile.from_window(window, 200, 100)
    assert [f.frame for f in pose_file.frames] == [3, 4]
    assert pose_file.frames[0].keypoints[0] == (50.0, 25.0)
    restored = pose_file.to_window()
    np.testing.assert_allclose(restored.coords, window.coords)
    assert restored.start_frame == 3


def test_pose_window_validation():
    with pytest.raises(ValueError):
        PoseWindow(coords=np.zeros((14, 2)))
    with pytest.raises(ValueError):
        PoseWindow(coords=np.zeros((1, 2, 2)), visibility=[[0, 2]])
    with pytest.raises(ValueError):
        PoseWindow(coords=np.zeros((1, 2, 2)), visibility=[[1, 1, 1]])
    with pytest.raises(ValueError):
        PoseFile(frames=[]).to_window()
