"""
Radar cube preprocessing: clutter removal, chirp subsampling and the FFT
chain that turns a raw cube into an angle x doppler x range heatmap.

Bin conventions: no fftshift anywhere, so doppler bin 0 is zero radial
velocity and angle bin 0 is broadside. A scatterer at pre-subsampling
doppler bin ``d`` lands on bin ``d mod target`` after keeping every
``C/target``-th chirp, and one at angle frequency ``f`` on the nearest bin
to ``angle_pad * f mod angle_pad``.
"""

import logging
import statistics
import time
import tracemalloc
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, computed_field
from scipy.signal import windows

from .config import ModelConfig
from .errors import ShapeError
from .radar_sim import RadarCube, Scatterer, synthesize_cube

logger = logging.getLogger(__name__)

REFERENCE_MEMORY_RATIO = 11.0
REFERENCE_LATENCY_RATIO = 8.6
SUBSAMPLED_DIMS = (12, 8, 256)


@dataclass
class Heatmap3D:
    """values[h][d][w]: angle x doppler x range."""

    values: np.ndarray
    frame_index: int = 0
    view: str = "horizontal"

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ShapeError(f"Heatmap3D must be [H][D][W], got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("heatmap contains non-finite values")

    @property
    def shape(self):
        return self.values.shape


@dataclass
class Heatmap4D:
    """values[az][el][d][w]."""

    values: np.ndarray
    frame_index: int = 0
    view: str = "horizontal"

    def __post_init__(self):
        if self.values.ndim != 4 or 0 in self.values.shape:
            raise ShapeError(f"Heatmap4D must be a non-empty [Az][El][D][W], got {self.values.shape}")

    def folded(self) -> Heatmap3D:
        """Elevation folded into the doppler axis: [Az][El*D][W]."""
        az, el, d, w = self.values.shape
        return Heatmap3D(self.values.reshape(az, el * d, w), self.frame_index, self.view)


def _chirp_sum(samples: np.ndarray) -> np.ndarray:
    """Left-to-right sum over chirps, [A][1][N]."""
    return np.cumsum(samples, axis=1)[:, -1:, :]


def remove_clutter(cube: RadarCube) -> RadarCube:
    """Subtract the mean over chirps from every (antenna, sample) fiber.

    The last chirp is set to the negated sum of the others, so each fiber sums
    to exactly zero and a second pass subtracts an exact zero.
    """
    samples = cube.samples
    n_chirps = samples.shape[1]
    out = samples - _chirp_sum(samples) / n_chirps
    if n_chirps > 1:
        out[:, -1:, :] = -_chirp_sum(out[:, :-1, :])
    return cube.replace(out)


def subsample_chirps(cube: RadarCube, target: int = 8) -> RadarCube:
    """Keep chirps 0, s, 2s, ... with s = C / target."""
    n_chirps = cube.samples.shape[1]
    if target < 1 or n_chirps % target:
        raise ValueError(f"cannot subsample {n_chirps} chirps uniformly to {target}")
    stride = n_chirps // target
    return cube.replace(np.ascontiguousarray(cube.samples[:, ::stride, :]))


def fft(x: np.ndarray, n_out: int, axis: int = -1) -> np.ndarray:
    """DFT along ``axis`` with zero padding to ``n_out``."""
    if n_out < x.shape[axis]:
        raise ValueError(f"n_out={n_out} is shorter than the input length {x.shape[axis]}")
    return np.fft.fft(x, n=n_out, axis=axis)


def fft_1d(x: np.ndarray, n_out: Optional[int] = None) -> np.ndarray:
    """Y(m) = sum_n x(n) exp(-j 2pi n m / n_out) for m in [0, n_out)."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1:
        raise ShapeError(f"fft_1d expects a vector, got shape {x.shape}")
    return fft(x, len(x) if n_out is None else n_out)


def naive_dft(x: np.ndarray, n_out: Optional[int] = None) -> np.ndarray:
    """O(N^2) reference evaluation of fft_1d."""
    x = np.asarray(x, dtype=np.complex128)
    n_out = len(x) if n_out is None else n_out
    if n_out < len(x):
        raise ValueError(f"n_out={n_out} is shorter than the input length {len(x)}")
    n = np.arange(len(x))
    m = np.arange(n_out)[:, None]
    return np.exp(-2j * np.pi * n * m / n_out) @ x


def _apply_window(values: np.ndarray, axis: int, kind: str) -> np.ndarray:
    if kind == "rect":
        return values
    if kind != "hann":
        raise ValueError(f"unknown window '{kind}'")
    taper = windows.hann(values.shape[axis], sym=False)
    shape = [1] * values.ndim
    shape[axis] = -1
    return values * taper.reshape(shape)


def _range_doppler(samples: np.ndarray, window: str) -> np.ndarray:
    out = fft(_apply_window(samples, 2, window), samples.shape[2], axis=2)
    return fft(_apply_window(out, 1, window), samples.shape[1], axis=1)


def subsampled_dims(config: ModelConfig) -> Tuple[int, int, int]:
    """(A, chirp_target, N): the cube dims the heatmap FFTs accept under ``config``."""
    return (config.n_antennas, config.chirp_target, config.n_samples)


def _check_dims(cube: RadarCube, dims: Optional[Tuple[int, int, int]]) -> None:
    if dims is not None and cube.samples.shape != tuple(dims):
        raise ShapeError(
            f"cube dims {cube.samples.shape} do not match {tuple(dims)}; "
            "heatmaps take clutter-removed, subsampled cubes"
        )


def heatmap_3d(
    cube: RadarCube,
    angle_pad: int = 64,
    window: str = "rect",
    dims: Optional[Tuple[int, int, int]] = SUBSAMPLED_DIMS,
) -> Heatmap3D:
    """Range FFT over samples, doppler FFT over chirps, then the angle FFT
    over antennas zero padded to ``angle_pad``.

    ``dims`` is the required (A, C, N) of the input; None accepts any shape.
    """
    _check_dims(cube, dims)
    n_ant, n_chirps, n_samples = cube.samples.shape
    if angle_pad < n_ant:
        raise ShapeError(f"angle_pad={angle_pad} is smaller than the {n_ant} antennas")
    spectrum = _range_doppler(cube.samples, window)
    values = fft(_apply_window(spectrum, 0, window), angle_pad, axis=0)
    return Heatmap3D(values, cube.frame_index, cube.view)


def heatmap_4d(
    cube: RadarCube,
    azimuth_antennas: int = 8,
    azimuth_pad: int = 64,
    elevation_pad: int = 8,
    window: str = "rect",
    dims: Optional[Tuple[int, int, int]] = SUBSAMPLED_DIMS,
) -> Heatmap4D:
    """Separate azimuth and elevation FFTs after antenna grouping.

    The first ``azimuth_antennas`` virtual antennas form row 0 of a 2-row
    grid; the rest form row 1, centered under the azimuth row. Azimuth is
    padded to ``azimuth_pad``, elevation to ``elevation_pad``.

    Elevation is the phase step between the two rows, so the elevation FFT
    runs across rows, not along the elevation antennas: a target whose row-1
    antennas repeat the phase of the row-0 antennas above them lands on
    elevation bin 0.
    """
    _check_dims(cube, dims)
    n_ant, n_chirps, n_samples = cube.samples.shape
    n_elev = n_ant - azimuth_antennas
    if not 0 < n_elev <= azimuth_antennas:
        raise ShapeError(f"cannot group {n_ant} antennas into {azimuth_antennas} azimuth + rest")
    if azimuth_pad < azimuth_antennas or elevation_pad < 2:
        raise ShapeError(f"pads {azimuth_pad}x{elevation_pad} too small for the antenna grid")
    spectrum = _range_doppler(cube.samples, window)

    grid = np.zeros((2, azimuth_antennas, n_chirps, n_samples), dtype=np.complex128)
    grid[0] = spectrum[:azimuth_antennas]
    offset = (azimuth_antennas - n_elev) // 2
    grid[1, offset : offset + n_elev] = spectrum[azimuth_antennas:]

    values = fft(_apply_window(grid, 1, window), azimuth_pad, axis=1)
    values = fft(values, elevation_pad, axis=0)
    return Heatmap4D(np.ascontiguousarray(values.transpose(1, 0, 2, 3)), cube.frame_index, cube.view)


def preprocess(cube: RadarCube, config: ModelConfig) -> Heatmap3D:
    """Full per-frame chain for the configured input representation."""
    expected = (config.n_antennas, config.n_chirps, config.n_samples)
    if cube.samples.shape != expected:
        raise ShapeError(f"cube dims {cube.samples.shape} do not match config {expected}")
    if config.clutter_removal:
        cube = remove_clutter(cube)
    cube = subsample_chirps(cube, config.chirp_target)
    dims = subsampled_dims(config)
    if config.input_representation == "fft4d":
        return heatmap_4d(
            cube, config.azimuth_antennas, config.angle_pad, config.elevation_pad, config.window, dims
        ).folded()
    return heatmap_3d(cube, config.angle_pad, config.window, dims)


def heatmaps_batch(
    cubes: Sequence[RadarCube], config: ModelConfig, workers: int = 1
) -> List[Heatmap3D]:
    """Preprocess many frames, optionally on a thread pool; results keep input order."""
    if workers <= 1 or len(cubes) <= 1:
        return [preprocess(cube, config) for cube in cubes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda cube: preprocess(cube, config), cubes))


class BenchReport(BaseModel):
    """3D vs 4D preprocessing cost."""

    frames: int
    runs: int = Field(..., ge=5)
    peak_bytes_3d: int
    peak_bytes_4d: int
    latency_3d: float = Field(..., description="Median seconds per run")
    latency_4d: float = Field(..., description="Median seconds per run")
    reference_memory_ratio: float = REFERENCE_MEMORY_RATIO
    reference_latency_ratio: float = REFERENCE_LATENCY_RATIO
    note: str = (
        "Measured ratios depend on hardware and on the 8 azimuth + 4 elevation "
        "antenna grouping; reference ratios come from a different implementation."
    )

    @computed_field
    @property
    def memory_ratio(self) -> float:
        return self.peak_bytes_4d / max(self.peak_bytes_3d, 1)

    @computed_field
    @property
    def latency_ratio(self) -> float:
        return self.latency_4d / max(self.latency_3d, 1e-12)


def _bench_cubes(frames: int, config: ModelConfig, seed: int) -> List[RadarCube]:
    rng = np.random.default_rng(seed)
    dims = (config.n_antennas, config.n_chirps, config.n_samples)
    cubes = []
    for f in range(frames):
        scatterers = [
            Scatterer(
                range_bin=float(rng.integers(0, config.n_samples)),
                doppler_bin=float(rng.integers(0, config.n_chirps)),
                angle_freq=float(rng.uniform(-0.5, 0.5)),
            )
            for _ in range(config.joints)
        ]
        cubes.append(synthesize_cube(scatterers, dims, frame_index=f))
    return cubes


def _chain_3d(cube: RadarCube, config: ModelConfig) -> np.ndarray:
    cube = subsample_chirps(remove_clutter(cube), config.chirp_target)
    return heatmap_3d(cube, config.angle_pad, config.window, subsampled_dims(config)).values


def _chain_4d(cube: RadarCube, config: ModelConfig) -> np.ndarray:
    cube = subsample_chirps(remove_clutter(cube), config.chirp_target)
    return heatmap_4d(
        cube,
        config.azimuth_antennas,
        config.angle_pad,
        config.elevation_pad,
        config.window,
        subsampled_dims(config),
    ).values


def _measure(chain: Callable, cubes: Sequence[RadarCube], config: ModelConfig, runs: int):
    timings = []
    for _ in range(runs):
        start = time.perf_counter()
        outputs = [chain(cube, config) for cube in cubes]
        timings.append(time.perf_counter() - start)
        del outputs
    tracemalloc.start()
    try:
        outputs = [chain(cube, config) for cube in cubes]
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    del outputs
    return peak, statistics.median(timings)


def bench_heatmaps(
    frames: int = 20, runs: int = 5, config: Optional[ModelConfig] = None, seed: int = 0
) -> BenchReport:
    """Median latency and traced peak memory of the 3D and 4D chains over
    the same synthetic frames."""
    if runs < 5:
        raise ValueError(f"bench_heatmaps needs at least 5 runs, got {runs}")
    if frames < 1:
        raise ValueError(f"bench_heatmaps needs at least one frame, got {frames}")
    config = config or ModelConfig()
    cubes = _bench_cubes(frames, config, seed)
    peak_3d, latency_3d = _measure(_chain_3d, cubes, config, runs)
    peak_4d, latency_4d = _measure(_chain_4d, cubes, config, runs)
    report = BenchReport(
        frames=frames,
        runs=runs,
        peak_bytes_3d=peak_3d,
        peak_bytes_4d=peak_4d,
        latency_3d=latency_3d,
        latency_4d=latency_4d,
    )
    logger.debug(
        f"bench: memory {report.memory_ratio:.2f}x, latency {report.latency_ratio:.2f}x "
        f"(reference {REFERENCE_MEMORY_RATIO}x / {REFERENCE_LATENCY_RATIO}x)"
    )
    return report
