#!/usr/bin/env python3
"""
Test runner for radarpose: pytest, then an end-to-end CLI chain and the MCP tools
"""

import asyncio
import subprocess
import sys
import tempfile
from pathlib import Path


def run(args, timeout=600):
    return subprocess.run(["uv", "run", *args], capture_output=True, text=True, timeout=timeout)


async def test_unit_suite(slow: bool) -> bool:
    """Run pytest, optionally including the slow markers."""
    print("🧪 Running pytest...")
    args = ["pytest", "-q"] + (["-m", "slow or not slow"] if slow else [])
    try:
        result = await asyncio.to_thread(run, args, 3600)
    except subprocess.TimeoutExpired:
        print("⏰ pytest timed out")
        return False
    print(result.stdout[-2000:])
    if result.returncode != 0:
        print("❌ pytest failed")
        print(result.stderr[-2000:])
        return False
    print("✅ pytest passed")
    return True


async def test_cli_chain() -> bool:
    """simulate -> preprocess -> train -> infer -> eval on the tiny preset."""
    print("\n🧪 Running the CLI chain...")
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(tmp)
        steps = [
            ["radarpose", "simulate", "--preset", "tiny", "--frames", "12", "--out", str(work / "sim")],
            ["radarpose", "preprocess", "--preset", "tiny", "--input", str(work / "sim" / "cubes.mmrc"),
             "--out", str(work / "heatmaps.mmh3")],
            ["radarpose", "train", "--preset", "tiny", "--steps", "5", "--out", str(work / "run")],
            ["radarpose", "infer", "--preset", "tiny", "--checkpoint", str(work / "run" / "checkpoint.mmck"),
             "--input", str(work / "sim" / "cubes.mmrc"), "--out", str(work / "predictions.json")],
        ]
        for args in steps:
            result = await asyncio.to_thread(run, args)
            if result.returncode != 0:
                print(f"❌ {args[1]} exited with {result.returncode}")
                print(result.stderr[-2000:])
                return False
            print(f"✅ {args[1]}: {result.stdout.strip()}")
    return True


async def test_mcp_tools() -> bool:
    """Call each MCP tool once in-process."""
    print("\n🧪 Testing MCP tools...")
    from radarpose.server import call_tool, list_tools

    tools = await list_tools()
    print(f"Available tools: {len(tools)}")
    calls = {
        "make_windows": {"frames": 20, "T": 9},
        "simulate_scene": {"frames": 20, "seed": 1},
        "compute_oks": {"prediction": [[0.4, 0.5], [0.6, 0.5]], "ground_truth": [[0.4, 0.5], [0.6, 0.52]]},
    }
    ok = True
    for name, arguments in calls.items():
        result = await call_tool(name, arguments)
        if result[0].text.startswith("Error"):
            print(f"❌ {name}: {result[0].text}")
            ok = False
        else:
            print(f"✅ {name}: {len(result[0].text)} characters")
    return ok


async def main():
    print("📡 radarpose Test Suite")
    print("=" * 30)
    slow = "--slow" in sys.argv
    results = [await test_unit_suite(slow), await test_cli_chain(), await test_mcp_tools()]
    print("\n🏁 Test suite completed!")
    sys.exit(0 if all(results) else 1)


if __name__ == "__main__":
    asyncio.run(main())
