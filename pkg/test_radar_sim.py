#!/usr/bin/env python3
"""
Tests for synthetic radar cubes and pose-driven scenes
"""

import numpy as np
import pytest
from pydantic import ValidationError

from radarpose.config import preset
from radarpose.errors import ShapeError
from radarpose.radar_sim import (
    PhysicalRadar,
    RadarCube,
    Scatterer,
    SceneSpec,
    SensorMap,
    build_scene,
    generate_dataset,
    pose_to_scatterers,
    synthesize_cube,
)


def test_single_scatterer_sample_values():
    cube = synthesize_cube([Scatterer(range_bin=3, doppler_bin=2, angle_freq=0.25)], dims=(4, 8, 16))
    assert cube.samples.shape == (4, 8, 16)
    assert cube.samples[0, 0, 0] == pytest.approx(1.0)
    expected = np.exp(2j * np.pi * (0.25 * 1 + 2 * 3 / 8 + 3 * 5 / 16))
    assert cube.samples[1, 3, 5] == pytest.approx(expected)


def test_empty_scene_gives_zero_cube():
    cube = synthesize_cube([], dims=(2, 4, 8))
    assert cube.samples.dtype == np.complex128
    assert not cube.samples.any()


def test_superposition():
    a = Scatterer(range_bin=1, doppler_bin=1, angle_freq=0.1, amplitude=2.0, phase=0.3)
    b = Scatterer(range_bin=5, doppler_bin=0, angle_freq=-0.2)
    dims = (3, 4, 8)
    both = synthesize_cube([a, b], dims).samples
    np.testing.assert_allclose(both, synthesize_cube([a], dims).samples + synthesize_cube([b], dims).samples)


def test_out_of_range_scatterer_is_rejected():
    with pytest.raises(ValueError):
        synthesize_cube([Scatterer(range_bin=16)], dims=(2, 4, 16))
    with pytest.raises(ShapeError):
        synthesize_cube([], dims=(2, 0, 16))


def test_scatterer_validation():
    with pytest.raises(ValidationError):
        Scatterer(range_bin=1, angle_freq=0.5)
    with pytest.raises(ValidationError):
        Scatterer(range_bin=float("nan"))
    with pytest.raises(ValidationError):
        Scatterer(range_bin=1, amplitude=0.0)


def test_radar_cube_validation():
    with pytest.raises(ShapeError):
        RadarCube(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        RadarCube(np.full((1, 1, 1), np.inf))
    with pytest.raises(ValueError):
        RadarCube(np.zeros((1, 1, 1)), view="diagonal")


def test_sensor_map_edges():
    sensor = SensorMap()
    assert sensor.angle_freq(128, 256) == 0.0
    assert sensor.angle_freq(256, 256) == pytest.approx(0.25)
    assert sensor.angle_freq(0, 256) == pytest.approx(-0.25)
    assert sensor.range_bin(3.0) == 64.0
    assert sensor.range_bin(-100.0) == 0.0
    assert sensor.doppler_bin(-0.25) == pytest.approx(127.0)


def test_scene_is_seeded():
    spec = SceneSpec(frames=20)
    assert build_scene(spec, seed=1).trajectories == build_scene(spec, seed=1).trajectories
    assert build_scene(spec, seed=1).trajectories != build_scene(spec, seed=2).trajectories


def test_scene_poses_are_normalized():
    script = build_scene(SceneSpec(frames=15), seed=0)
    poses = script.poses(2, 11)
    assert poses.coords.shape == (9, 14, 2)
    assert poses.start_frame == 2
    assert poses.coords.min() >= 0.0 and poses.coords.max() <= 1.0
    assert poses.visibility.sum() == 9 * 14


def test_views_see_different_image_axes():
    script = build_scene(SceneSpec(frames=4), seed=0)
    sensor = SensorMap(image_width=script.image_width, image_height=script.image_height)
    horizontal = pose_to_scatterers(script, 1, "horizontal", sensor)
    vertical = pose_to_scatterers(script, 1, "vertical", sensor)
    track = script.as_array()
    assert len(horizontal) == len(vertical) == 14
    head = 13
    assert horizontal[head].angle_freq == pytest.approx(sensor.angle_freq(track[head, 1, 0], 256))
    assert vertical[head].angle_freq == pytest.approx(sensor.angle_freq(track[head, 1, 1], 256))
    assert horizontal[head].range_bin == vertical[head].range_bin


def test_pose_to_scatterers_bounds():
    script = build_scene(SceneSpec(frames=4), seed=0)
    with pytest.raises(ValueError):
        pose_to_scatterers(script, 4, "horizontal")


def test_generate_dataset_windows():
    config = preset("tiny", frames=12, radar_views="horizontal")
    dataset = generate_dataset(SceneSpec.from_config(config), 3, seed=5, config=config)
    assert len(dataset) == 10
    window = dataset[2]
    assert window.start == 2
    assert len(window.cubes) == 3
    assert list(window.cubes[0]) == ["horizontal"]
    assert window.cubes[0]["horizontal"].dims == (12, 32, 32)
    np.testing.assert_array_equal(window.poses.coords, dataset.script.poses(2, 5).coords)


def test_generate_dataset_window_stride():
    config = preset("tiny", frames=12, radar_views="horizontal", window_stride=3)
    dataset = generate_dataset(SceneSpec.from_config(config), 3, seed=5, config=config)
    assert len(dataset) == 4
    assert [w.start for w in dataset] == [0, 3, 6, 9]
    np.testing.assert_array_equal(dataset[1].poses.coords, dataset.script.poses(3, 6).coords)
    with pytest.raises(IndexError):
        dataset[4]
    assert len(generate_dataset(SceneSpec.from_config(config), 3, seed=5, config=preset("tiny", frames=12))) == 10


def test_generate_dataset_rejects_even_or_long_windows():
    spec = SceneSpec(frames=5)
    with pytest.raises(ValueError):
        generate_dataset(spec, 4, seed=0)
    with pytest.raises(ValueError):
        generate_dataset(spec, 7, seed=0)


def test_noise_and_dropout_are_reproducible():
    config = preset("tiny", frames=6, dropout_prob=0.3, noise_std=0.1)
    first = generate_dataset(SceneSpec.from_config(config), 3, seed=9, config=config)
    second = generate_dataset(SceneSpec.from_config(config), 3, seed=9, config=config)
    np.testing.assert_array_equal(first.cube(4, "vertical").samples, second.cube(4, "vertical").samples)
    assert not np.array_equal(first.cube(4, "vertical").samples, first.cube(4, "horizontal").samples)


def test_physical_radar_units():
    radar = PhysicalRadar()
    assert radar.range_resolution == pytest.approx(299792458.0 / 8e9)
    target = radar.scatterer(range_m=2 * radar.range_resolution)
    assert target.range_bin == pytest.approx(2.0)
    assert target.angle_freq == 0.0
