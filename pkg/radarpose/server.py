#!/usr/bin/env python3
"""
radarpose MCP server - pose metrics, scene simulation and DSP benchmarks as tools
"""

import asyncio
import json
import logging
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from mcp.server import Server
from mcp.server.stdio import stdio_server
from mcp.types import TextContent, Tool
from pydantic import BaseModel, Field

from .config import PRESETS, preset
from .dsp import bench_heatmaps as run_bench
from .objective import OksParams, evaluate_ap, oks
from .pipeline import make_windows as windows_for
from .poses import PoseWindow
from .radar_sim import SceneSpec, build_scene

logger = logging.getLogger("radarpose-server")

app = Server("radarpose")


class OksRequest(BaseModel):
    """Request model for a single-pose OKS."""

    prediction: List[Tuple[float, float]] = Field(..., description="J normalized (x, y) keypoints")
    ground_truth: List[Tuple[float, float]] = Field(..., description="J normalized (x, y) keypoints")
    visibility: Optional[List[int]] = Field(None, description="J flags in {0, 1}, all visible if omitted")
    scale_mode: str = Field("bbox_diagonal", description="bbox_diagonal, bbox_area or fixed")
    fixed_scale: float = Field(1.0, gt=0)


class EvaluateRequest(BaseModel):
    """Request model for AP over a frame sequence."""

    predictions: List[List[Tuple[float, float]]] = Field(..., description="[F][J] normalized keypoints")
    ground_truth: List[List[Tuple[float, float]]] = Field(..., description="[F][J] normalized keypoints")
    visibility: Optional[List[List[int]]] = None
    scale_mode: str = "bbox_diagonal"
    fixed_scale: float = Field(1.0, gt=0)


class SceneRequest(BaseModel):
    """Request model for a synthetic scene summary."""

    frames: int = Field(60, ge=1, le=10000)
    seed: int = 0
    include_trajectories: bool = Field(False, description="Return the full [J][F][4] trajectories")


class WindowsRequest(BaseModel):
    frames: int = Field(..., ge=1)
    T: int = Field(9, ge=1)
    stride: int = Field(1, ge=1)


class BenchRequest(BaseModel):
    frames: int = Field(4, ge=1, le=200)
    runs: int = Field(5, ge=5, le=50)
    preset: str = Field("desk", description="Config preset for the cube dims")


def _params(joints: int, scale_mode: str, fixed_scale: float) -> OksParams:
    base = OksParams()
    k = base.k if joints == len(base.k) else [2 * 0.079] * joints
    return OksParams(k=k, scale_mode=scale_mode, fixed_scale=fixed_scale)


def _text(title: str, payload: Any) -> List[TextContent]:
    return [TextContent(type="text", text=f"{title}:\n\n" + json.dumps(payload, indent=2))]


@app.list_tools()
async def list_tools() -> List[Tool]:
    """List available radarpose tools."""
    return [
        Tool(
            name="compute_oks",
            description="Object keypoint similarity between one predicted and one ground-truth pose",
            inputSchema=OksRequest.model_json_schema(),
        ),
        Tool(
            name="evaluate_poses",
            description="AP, AP50, AP75 and joint-wise AP (percent) over a sequence of single-person frames",
            inputSchema=EvaluateRequest.model_json_schema(),
        ),
        Tool(
            name="simulate_scene",
            description="Build a seeded synthetic walking scene and summarize its trajectories",
            inputSchema=SceneRequest.model_json_schema(),
        ),
        Tool(
            name="make_windows",
            description="Sliding windows and their center frames for a sequence length",
            inputSchema=WindowsRequest.model_json_schema(),
        ),
        Tool(
            name="bench_heatmaps",
            description="Benchmark 3D against 4D FFT preprocessing (latency and peak memory)",
            inputSchema=BenchRequest.model_json_schema(),
        ),
    ]


@app.call_tool()
async def call_tool(name: str, arguments: Dict[str, Any]) -> List[TextContent]:
    """Handle tool calls."""
    try:
        if name == "compute_oks":
            return await compute_oks(arguments)
        elif name == "evaluate_poses":
            return await evaluate_poses(arguments)
        elif name == "simulate_scene":
            return await simulate_scene(arguments)
        elif name == "make_windows":
            return await make_windows(arguments)
        elif name == "bench_heatmaps":
            return await bench_heatmaps(arguments)
        else:
            return [TextContent(type="text", text=f"Unknown tool: {name}")]
    except Exception as e:
        logger.error(f"Error in tool {name}: {str(e)}")
        return [TextContent(type="text", text=f"Error: {str(e)}")]


async def compute_oks(arguments: Dict[str, Any]) -> List[TextContent]:
    request = OksRequest.model_validate(arguments)
    joints = len(request.ground_truth)
    vis = request.visibility if request.visibility is not None else [1] * joints
    value = oks(
        np.array(request.prediction),
        np.array(request.ground_truth),
        np.array(vis),
        _params(joints, request.scale_mode, request.fixed_scale),
    )
    return _text("OKS", {"oks": value, "joints": joints, "visible": int(sum(vis))})


async def evaluate_poses(arguments: Dict[str, Any]) -> List[TextContent]:
    request = EvaluateRequest.model_validate(arguments)
    truth = PoseWindow(coords=request.ground_truth, visibility=request.visibility)
    params = _params(truth.joints, request.scale_mode, request.fixed_scale)
    report = evaluate_ap(np.array(request.predictions), truth, params)
    result = {**report.percent(), "mean_oks": report.mean_oks, "frames": report.frames, "per_group": report.per_group}
    return _text("Pose evaluation", result)


async def simulate_scene(arguments: Dict[str, Any]) -> List[TextContent]:
    request = SceneRequest.model_validate(arguments)
    script = build_scene(SceneSpec(frames=request.frames), seed=request.seed)
    track = script.as_array()
    result: Dict[str, Any] = {
        "frames": script.frame_count,
        "joints": script.joint_count,
        "image": [script.image_width, script.image_height],
        "depth_range_m": [float(track[..., 2].min()), float(track[..., 2].max())],
        "speed_range_mps": [float(track[..., 3].min()), float(track[..., 3].max())],
    }
    if request.include_trajectories:
        result["trajectories"] = script.trajectories
    return _text(f"Synthetic scene (seed {request.seed})", result)


async def make_windows(arguments: Dict[str, Any]) -> List[TextContent]:
    request = WindowsRequest.model_validate(arguments)
    windows = windows_for(request.frames, request.T, request.stride)
    result = {
        "count": len(windows),
        "centers": [w.center for w in windows],
        "skipped_frames": request.frames - len({w.center for w in windows}),
    }
    return _text("Windows", result)


async def bench_heatmaps(arguments: Dict[str, Any]) -> List[TextContent]:
    request = BenchRequest.model_validate(arguments)
    if request.preset not in PRESETS:
        raise ValueError(f"Unknown preset '{request.preset}'")
    report = await asyncio.to_thread(run_bench, request.frames, request.runs, preset(request.preset))
    return _text("3D vs 4D preprocessing", report.model_dump())


async def main():
    """Main entry point for the server."""
    async with stdio_server() as (read_stream, write_stream):
        await app.run(read_stream, write_stream, app.create_initialization_options())


if __name__ == "__main__":
    asyncio.run(main())
