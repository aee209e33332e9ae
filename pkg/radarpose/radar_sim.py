"""
Synthetic FMCW radar frames.

Point scatterers are described directly in bin units (range bin, doppler bin
before chirp subsampling, normalized spatial frequency across antennas), so a
cube built here has analytically known FFT peaks. Pose-driven scenes map each
joint of a moving 14-joint skeleton to one scatterer per view through affine
maps whose constants live in ModelConfig.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.constants import c as SPEED_OF_LIGHT

from .config import VIEW_NAMES, ModelConfig
from .errors import ShapeError
from .poses import DEPTH_OFFSETS, TEMPLATE_POSE, PoseWindow

logger = logging.getLogger(__name__)

DEFAULT_DIMS = (12, 128, 256)


class Scatterer(BaseModel):
    """One point reflector in bin units."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    range_bin: float = Field(..., ge=0, description="Normalized beat frequency times N")
    doppler_bin: float = Field(0.0, ge=0, description="Doppler bin before chirp subsampling")
    angle_freq: float = Field(0.0, ge=-0.5, lt=0.5, description="Cycles per virtual antenna")
    amplitude: float = Field(1.0, gt=0)
    phase: float = Field(0.0, description="Radians")


@dataclass
class RadarCube:
    """Raw complex frame, samples[a][c][n]."""

    samples: np.ndarray
    frame_index: int = 0
    view: str = "horizontal"

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 3 or 0 in self.samples.shape:
            raise ShapeError(f"radar cube must be a non-empty [A][C][N] array, got {self.samples.shape}")
        if not np.iscomplexobj(self.samples):
            self.samples = self.samples.astype(np.complex128)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("radar cube contains non-finite samples")
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {self.frame_index}")
        if self.view not in VIEW_NAMES:
            raise ValueError(f"unknown view '{self.view}'")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.samples.shape

    def replace(self, samples: np.ndarray) -> "RadarCube":
        return RadarCube(samples, self.frame_index, self.view)


def synthesize_cube(
    scatterers: Sequence[Scatterer],
    dims: Tuple[int, int, int] = DEFAULT_DIMS,
    frame_index: int = 0,
    view: str = "horizontal",
) -> RadarCube:
    """Sum of separable complex exponentials, one per scatterer.

    samples[a][c][n] = sum_k amp_k exp(j(phase_k + 2pi(r_k n/N + d_k c/C + f_k a)))
    """
    if len(dims) != 3 or any(int(d) <= 0 for d in dims):
        raise ShapeError(f"cube dims must be three positive integers, got {dims}")
    n_ant, n_chirp, n_samp = (int(d) for d in dims)
    if not scatterers:
        return RadarCube(np.zeros(dims, dtype=np.complex128), frame_index, view)
    for s in scatterers:
        if s.range_bin >= n_samp or s.doppler_bin >= n_chirp:
            raise ValueError(f"scatterer {s} lies outside cube dims {dims}")

    params = np.array([[s.range_bin, s.doppler_bin, s.angle_freq, s.amplitude, s.phase] for s in scatterers])
    rng_bin, dop_bin, ang, amp, phase = params.T
    two_pi_j = 2j * np.pi
    along_a = np.exp(two_pi_j * np.outer(ang, np.arange(n_ant)))
    along_c = np.exp(two_pi_j * np.outer(dop_bin, np.arange(n_chirp)) / n_chirp)
    along_n = np.exp(two_pi_j * np.outer(rng_bin, np.arange(n_samp)) / n_samp)
    weights = amp * np.exp(1j * phase)
    samples = np.einsum("k,ka,kc,kn->acn", weights, along_a, along_c, along_n, optimize=True)
    return RadarCube(samples, frame_index, view)


class SensorMap(BaseModel):
    """Affine maps from joint position and velocity to scatterer bins."""

    image_width: int = 256
    image_height: int = 256
    max_angle_freq: float = 0.25
    reference_depth: float = 3.0
    reference_range_bin: float = 64.0
    range_bins_per_meter: float = 32.0
    doppler_bins_per_mps: float = 4.0
    n_chirps: int = 128
    n_samples: int = 256

    @classmethod
    def from_config(cls, config: ModelConfig) -> "SensorMap":
        return cls(**{name: getattr(config, name) for name in cls.model_fields})

    def angle_freq(self, pixel: float, extent: int) -> float:
        """Image center maps to 0, the image edges to +/- max_angle_freq."""
        half = extent / 2.0
        value = self.max_angle_freq * (pixel - half) / half
        return float(np.clip(value, -0.5, np.nextafter(0.5, 0.0)))

    def range_bin(self, depth: float) -> float:
        value = self.reference_range_bin + (depth - self.reference_depth) * self.range_bins_per_meter
        return float(np.clip(value, 0.0, np.nextafter(self.n_samples, 0.0)))

    def doppler_bin(self, radial_velocity: float) -> float:
        # negative velocities wrap to the top of the doppler axis
        value = (radial_velocity * self.doppler_bins_per_mps) % self.n_chirps
        return float(min(value, np.nextafter(self.n_chirps, 0.0)))


class SceneScript(BaseModel):
    """Per-joint trajectories: trajectories[j][f] = (image_x, image_y, depth, radial_velocity)."""

    frame_count: int = Field(..., ge=1)
    joint_count: int = Field(..., ge=1)
    image_width: int = Field(256, ge=2)
    image_height: int = Field(256, ge=2)
    trajectories: List[List[Tuple[float, float, float, float]]]

    @model_validator(mode="after")
    def _check_trajectories(self) -> "SceneScript":
        if len(self.trajectories) != self.joint_count:
            raise ValueError(f"expected {self.joint_count} trajectories, got {len(self.trajectories)}")
        track = self.as_array()
        if track.shape[1] != self.frame_count:
            raise ValueError(f"every trajectory must cover {self.frame_count} frames")
        if not np.all(np.isfinite(track)):
            raise ValueError("trajectories must be finite")
        x, y = track[..., 0], track[..., 1]
        if x.min() < 0 or x.max() > self.image_width or y.min() < 0 or y.max() > self.image_height:
            raise ValueError("trajectory leaves the image bounds")
        return self

    def as_array(self) -> np.ndarray:
        """[J][F][4] float array."""
        try:
            return np.asarray(self.trajectories, dtype=np.float64).reshape(self.joint_count, -1, 4)
        except ValueError as e:
            raise ValueError("trajectories must all have the same length") from e

    def poses(self, start: int = 0, stop: Optional[int] = None) -> PoseWindow:
        """Ground-truth poses normalized to [0, 1] for frames [start, stop)."""
        track = self.as_array()[:, start:stop, :2].transpose(1, 0, 2)
        coords = track / np.array([self.image_width, self.image_height])
        return PoseWindow(coords=coords, visibility=np.ones(coords.shape[:2]), start_frame=start)


def pose_to_scatterers(
    script: SceneScript, frame: int, view: str, sensor: Optional[SensorMap] = None
) -> List[Scatterer]:
    """One scatterer per joint for ``frame`` as seen from ``view``.

    The horizontal radar resolves image_x in angle, the vertical radar
    image_y; both resolve depth in range and radial velocity in doppler.
    """
    if not 0 <= frame < script.frame_count:
        raise ValueError(f"frame {frame} out of range for a {script.frame_count}-frame script")
    if view not in VIEW_NAMES:
        raise ValueError(f"unknown view '{view}'")
    sensor = sensor or SensorMap(image_width=script.image_width, image_height=script.image_height)
    out = []
    for x, y, depth, velocity in script.as_array()[:, frame]:
        if view == "horizontal":
            freq = sensor.angle_freq(x, sensor.image_width)
        else:
            freq = sensor.angle_freq(y, sensor.image_height)
        out.append(
            Scatterer(
                range_bin=sensor.range_bin(depth),
                doppler_bin=sensor.doppler_bin(velocity),
                angle_freq=freq,
            )
        )
    return out


class SceneSpec(BaseModel):
    """Sinusoidal motion of one person in front of the sensors."""

    frames: int = Field(60, ge=1)
    image_width: int = Field(256, ge=2)
    image_height: int = Field(256, ge=2)
    frame_rate: float = Field(10.0, gt=0, description="Frames per second")
    body_depth: float = Field(3.0, gt=0, description="Mean body depth in meters")
    depth_swing: float = Field(0.25, ge=0, description="Amplitude of walking toward/away, meters")
    depth_period: float = Field(4.0, gt=0, description="Seconds per depth cycle")
    sway: float = Field(0.08, ge=0, description="Horizontal sway amplitude, fraction of image width")
    sway_period: float = Field(3.0, gt=0)
    limb_swing: float = Field(0.08, ge=0, description="Arm/leg swing amplitude, fraction of image size")
    limb_period: float = Field(1.5, gt=0)
    limb_depth_swing: float = Field(0.1, ge=0, description="Arm/leg swing along depth, meters")
    micro_motion: float = Field(0.4, ge=0, description="Per-joint radial velocity jitter amplitude, m/s")

    @classmethod
    def from_config(cls, config: ModelConfig) -> "SceneSpec":
        return cls(
            frames=config.frames,
            image_width=config.image_width,
            image_height=config.image_height,
            body_depth=config.reference_depth,
        )


# Limb joints and how far along the limb they sit (0 = fixed, 1 = extremity).
_LIMB_REACH = np.array([1.0, 0.5, 0.0, 0.0, 0.5, 1.0, 1.0, 0.5, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0])
# Left and right limbs swing in opposite phase; arms opposite to the legs.
_LIMB_SIGN = np.array([1, 1, 0, 0, -1, -1, -1, -1, 0, 0, 1, 1, 0, 0], dtype=np.float64)


def build_scene(spec: SceneSpec, seed: int = 0) -> SceneScript:
    """Deterministic walking-in-place scene for the 14-joint skeleton."""
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2 * np.pi, size=3)
    jitter_phase = rng.uniform(0.0, 2 * np.pi, size=len(TEMPLATE_POSE))
    t = np.arange(spec.frames) / spec.frame_rate
    w_depth = 2 * np.pi / spec.depth_period
    w_sway = 2 * np.pi / spec.sway_period
    w_limb = 2 * np.pi / spec.limb_period
    w_jitter = 2 * np.pi * spec.frame_rate / 7.0

    sway = spec.sway * np.sin(w_sway * t + phases[0])
    swing = np.sin(w_limb * t + phases[1])
    swing_rate = w_limb * np.cos(w_limb * t + phases[1])
    body_depth = spec.body_depth + spec.depth_swing * np.sin(w_depth * t + phases[2])
    body_rate = spec.depth_swing * w_depth * np.cos(w_depth * t + phases[2])

    reach = (_LIMB_REACH * _LIMB_SIGN)[:, None]
    x = TEMPLATE_POSE[:, 0:1] + sway[None, :] + spec.limb_swing * 0.5 * reach * swing[None, :]
    y = TEMPLATE_POSE[:, 1:2] - spec.limb_swing * 0.25 * np.abs(reach) * swing[None, :] ** 2
    depth = (
        body_depth[None, :]
        + DEPTH_OFFSETS[:, None]
        + spec.limb_depth_swing * reach * swing[None, :]
    )
    jitter = spec.micro_motion * np.sin(w_jitter * t[None, :] + jitter_phase[:, None])
    velocity = body_rate[None, :] + spec.limb_depth_swing * reach * swing_rate[None, :] + jitter

    px = np.clip(x, 0.0, 1.0) * spec.image_width
    py = np.clip(y, 0.0, 1.0) * spec.image_height
    track = np.stack([px, py, depth, velocity], axis=-1)
    return SceneScript(
        frame_count=spec.frames,
        joint_count=len(TEMPLATE_POSE),
        image_width=spec.image_width,
        image_height=spec.image_height,
        trajectories=track.tolist(),
    )


@dataclass
class SyntheticWindow:
    """T frames of cubes (one dict of view -> cube per frame) and their poses."""

    start: int
    cubes: List[Dict[str, RadarCube]]
    poses: PoseWindow


@dataclass
class SyntheticDataset:
    """Lazily synthesized frames of one scene.

    Frames are rebuilt on access from (seed, frame, view), so the dataset is a
    pure function of its inputs and never holds every cube in memory.
    """

    script: SceneScript
    window_T: int
    seed: int
    dims: Tuple[int, int, int]
    sensor: SensorMap
    dropout_prob: float = 0.0
    noise_std: float = 0.0
    views: Tuple[str, ...] = VIEW_NAMES
    window_stride: int = 1

    def __post_init__(self):
        if self.window_stride < 1:
            raise ValueError(f"window_stride must be >= 1, got {self.window_stride}")

    def __len__(self) -> int:
        return (self.script.frame_count - self.window_T) // self.window_stride + 1

    def window_start(self, index: int) -> int:
        """First frame of window ``index``."""
        return index * self.window_stride

    def __getitem__(self, index: int) -> SyntheticWindow:
        if index < 0:
            index += len(self)
        if not 0 <= index < len(self):
            raise IndexError(f"window {index} out of range for {len(self)} windows")
        start = self.window_start(index)
        cubes = [self.frame(f) for f in range(start, start + self.window_T)]
        return SyntheticWindow(start, cubes, self.window_poses(index))

    def window_poses(self, index: int) -> PoseWindow:
        start = self.window_start(index)
        return self.script.poses(start, start + self.window_T)

    def __iter__(self) -> Iterator[SyntheticWindow]:
        for i in range(len(self)):
            yield self[i]

    def frame(self, frame: int) -> Dict[str, RadarCube]:
        return {view: self.cube(frame, view) for view in self.views}

    def cube(self, frame: int, view: str) -> RadarCube:
        rng = np.random.default_rng([self.seed, frame, VIEW_NAMES.index(view)])
        scatterers = pose_to_scatterers(self.script, frame, view, self.sensor)
        if self.dropout_prob > 0:
            # specular reflections: a joint's echo misses the receiver
            keep = rng.random(len(scatterers)) >= self.dropout_prob
            scatterers = [s for s, k in zip(scatterers, keep) if k]
        cube = synthesize_cube(scatterers, self.dims, frame_index=frame, view=view)
        if self.noise_std > 0:
            noise = rng.normal(scale=self.noise_std / math.sqrt(2), size=self.dims + (2,))
            cube = cube.replace(cube.samples + noise[..., 0] + 1j * noise[..., 1])
        return cube


def generate_dataset(
    script_spec: SceneSpec,
    window_T: int,
    seed: int,
    config: Optional[ModelConfig] = None,
) -> SyntheticDataset:
    """Sliding windows of both radar views over a seeded synthetic scene."""
    if window_T < 1 or window_T % 2 == 0:
        raise ValueError(f"window_T must be odd so the center frame is defined, got {window_T}")
    if script_spec.frames < window_T:
        raise ValueError(f"scene has {script_spec.frames} frames, fewer than window_T={window_T}")
    config = config or ModelConfig()
    script = build_scene(script_spec, seed)
    sensor = SensorMap.from_config(config).model_copy(
        update={"image_width": script.image_width, "image_height": script.image_height}
    )
    dataset = SyntheticDataset(
        script=script,
        window_T=window_T,
        seed=seed,
        dims=(config.n_antennas, config.n_chirps, config.n_samples),
        sensor=sensor,
        dropout_prob=config.dropout_prob,
        noise_std=config.noise_std,
        views=tuple(config.views),
        window_stride=config.window_stride,
    )
    logger.debug(
        f"Synthetic dataset: {script.frame_count} frames, {len(dataset)} windows of T={window_T} "
        f"every {config.window_stride} frames"
    )
    return dataset


class PhysicalRadar(BaseModel):
    """Converts physical target parameters into bin units.

    Chirp constants are placeholders for a 77 GHz FMCW sensor, not a
    calibrated device.
    """

    start_frequency: float = Field(77e9, gt=0, description="Hz")
    bandwidth: float = Field(4e9, gt=0, description="Sweep bandwidth, Hz")
    chirp_duration: float = Field(60e-6, gt=0, description="Sweep time, s")
    chirp_interval: float = Field(5e-6, ge=0, description="Idle time between chirps, s")
    n_chirps: int = Field(128, ge=1)
    n_samples: int = Field(256, ge=1)
    antenna_spacing: float = Field(0.5, gt=0, description="Element spacing in wavelengths")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.start_frequency

    @property
    def range_resolution(self) -> float:
        return SPEED_OF_LIGHT / (2 * self.bandwidth)

    @property
    def velocity_resolution(self) -> float:
        frame_time = self.n_chirps * (self.chirp_duration + self.chirp_interval)
        return self.wavelength / (2 * frame_time)

    def scatterer(
        self, range_m: float, velocity_mps: float = 0.0, azimuth_rad: float = 0.0, amplitude: float = 1.0
    ) -> Scatterer:
        doppler = (velocity_mps / self.velocity_resolution) % self.n_chirps
        freq = self.antenna_spacing * math.sin(azimuth_rad)
        freq = (freq + 0.5) % 1.0 - 0.5
        return Scatterer(
            range_bin=range_m / self.range_resolution,
            doppler_bin=doppler,
            angle_freq=freq,
            amplitude=amplitude,
        )
