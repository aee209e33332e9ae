#!/usr/bin/env python3
"""
Setup script for radarpose using uv
"""

import shutil
import subprocess
import sys


def check_uv_installed():
    """Check if uv is installed."""
    if shutil.which("uv") is None:
        print("❌ uv is not installed!")
        print("\nTo install uv:")
        print("  macOS/Linux: curl -LsSf https://astral.sh/uv/install.sh | sh")
        print("  Windows: powershell -c \"irm https://astral.sh/uv/install.ps1 | iex\"")
        print("  Or visit: https://docs.astral.sh/uv/getting-started/installation/")
        return False
    return True


def install_dependencies():
    """Install runtime and dev dependencies using uv."""
    print("📡 Installing radarpose dependencies with uv...")
    subprocess.check_call(["uv", "sync", "--extra", "dev"])
    print("✅ Dependencies installed successfully!")


def test_installation():
    """Import the package and print the tiny preset's heatmap shape."""
    print("\n🧪 Testing installation...")
    result = subprocess.run(
        [
            "uv",
            "run",
            "python",
            "-c",
            "import mcp, scipy; from radarpose.config import preset; print('✅ heatmap shape', preset('tiny').heatmap_shape)",
        ],
        capture_output=True,
        text=True,
    )
    if result.returncode == 0:
        print(result.stdout.strip())
        return True
    print(f"❌ Import error: {result.stderr}")
    return False


def main():
    print("📡 radarpose Setup (uv)")
    print("=" * 30)

    if not check_uv_installed():
        sys.exit(1)

    result = subprocess.run(["uv", "python", "--version"], capture_output=True, text=True)
    if result.returncode == 0:
        print(f"✅ uv detected: {result.stdout.strip()}")

    try:
        install_dependencies()
        if not test_installation():
            print("\n❌ Setup completed with errors")
            sys.exit(1)
    except Exception as e:
        print(f"\n❌ Setup failed: {e}")
        sys.exit(1)

    print("\n🚀 Setup completed successfully!")
    print("\nNext steps:")
    print("1. Run the fast tests:      uv run pytest")
    print("2. Run the slow tests too:  uv run pytest -m slow")
    print("3. Simulate a scene:        uv run radarpose simulate --preset tiny --out sim")
    print("4. Train on the desk preset: uv run radarpose train --preset desk --out run")
    print("5. Start the MCP server:    uv run radarpose serve")


if __name__ == "__main__":
    main()
