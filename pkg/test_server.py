#!/usr/bin/env python3
"""
Tests for the radarpose MCP tools
"""

import json
import math

import numpy as np
import pytest

from radarpose.server import call_tool, list_tools


def _payload(result):
    assert len(result) == 1
    title, body = result[0].text.split("\n\n", 1)
    return title, json.loads(body)


def _pose(seed=0, frames=None):
    shape = (14, 2) if frames is None else (frames, 14, 2)
    return np.random.default_rng(seed).uniform(0.2, 0.8, size=shape).tolist()


async def test_list_tools():
    tools = await list_tools()
    assert [t.name for t in tools] == [
        "compute_oks",
        "evaluate_poses",
        "simulate_scene",
        "make_windows",
        "bench_heatmaps",
    ]
    for tool in tools:
        assert tool.inputSchema["type"] == "object"
    assert "prediction" in tools[0].inputSchema["required"]


async def test_compute_oks():
    gt = _pose()
    title, body = _payload(await call_tool("compute_oks", {"prediction": gt, "ground_truth": gt}))
    assert title == "OKS:"
    assert body == {"oks": 1.0, "joints": 14, "visible": 14}


async def test_compute_oks_fixed_scale():
    gt = [[0.5, 0.5], [0.2, 0.2]]
    pred = [[0.5 + math.sqrt(2.0) * 0.1, 0.5], [0.2, 0.2]]
    args = {"prediction": pred, "ground_truth": gt, "visibility": [1, 0], "scale_mode": "fixed"}
    # two joints fall back to k = 2 * 0.079
    _, body = _payload(await call_tool("compute_oks", args))
    assert body["visible"] == 1
    assert body["oks"] == pytest.approx(math.exp(-(0.1**2) / (0.158**2)), abs=1e-9)


async def test_evaluate_poses_perfect():
    poses = _pose(frames=3)
    _, body = _payload(await call_tool("evaluate_poses", {"predictions": poses, "ground_truth": poses}))
    assert (body["AP"], body["AP50"], body["AP75"]) == (100.0, 100.0, 100.0)
    assert body["frames"] == 3


async def test_simulate_scene_is_seeded():
    first = _payload(await call_tool("simulate_scene", {"frames": 10, "seed": 3}))
    second = _payload(await call_tool("simulate_scene", {"frames": 10, "seed": 3}))
    assert first == second
    assert first[1]["frames"] == 10
    assert "trajectories" not in first[1]


async def test_make_windows():
    _, body = _payload(await call_tool("make_windows", {"frames": 12, "T": 9}))
    assert body == {"count": 4, "centers": [4, 5, 6, 7], "skipped_frames": 8}


async def test_unknown_tool():
    result = await call_tool("x", {})
    assert result[0].text == "Unknown tool: x"


async def test_invalid_arguments_are_reported():
    result = await call_tool("make_windows", {"frames": 12, "T": 4})
    assert result[0].text.startswith("Error:")
    result = await call_tool("compute_oks", {"prediction": [[0.1, 0.1]]})
    assert result[0].text.startswith("Error:")
    result = await call_tool("bench_heatmaps", {"preset": "huge"})
    assert result[0].text.startswith("Error:")
