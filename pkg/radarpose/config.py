"""
Configuration for radarpose.

A single flat ModelConfig carries every knob (DSP, simulation, architecture,
training, metric) so that ablation sweeps can change one key at a time. The
on-disk form is a ``key = value`` text file; unknown keys are rejected.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)

VIEW_NAMES = ("horizontal", "vertical")


class ModelConfig(BaseModel):
    """All architectural, DSP, simulation and training hyperparameters."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # training
    seed: int = Field(0, description="Seed for init, data generation and batching")
    precision: Literal["float64", "float32"] = Field(
        "float64", description="Floating point precision of tensors"
    )
    T: int = Field(9, ge=1, description="Frames per sliding window (odd)")
    window_stride: int = Field(1, ge=1, description="Frames between window starts")
    batch_size: int = Field(8, ge=1, description="Windows per optimizer step")
    lr: float = Field(5e-5, gt=0, description="Adam learning rate")
    weight_decay: float = Field(1e-4, ge=0, description="Decoupled weight decay")
    beta1: float = Field(0.9, ge=0, lt=1, description="Adam first moment decay")
    beta2: float = Field(0.999, ge=0, lt=1, description="Adam second moment decay")
    eps: float = Field(1e-8, gt=0, description="Adam epsilon")
    lambda_vel: float = Field(0.05, ge=0, description="Velocity loss weight")
    steps: int = Field(2000, ge=0, description="Optimizer step budget")
    checkpoint_every: int = Field(0, ge=0, description="Checkpoint cadence in steps, 0 = end only")
    log_every: int = Field(50, ge=1, description="Steps between training log lines")
    workers: int = Field(1, ge=1, description="Preprocessing worker threads")
    train_fraction: float = Field(0.8, gt=0, le=1, description="Share of windows used for training")

    # encoder
    feature_channels: int = Field(32, ge=2, description="C_f, encoder feature channels")
    vim_layers: int = Field(4, ge=1, description="L_e, bidirectional SSM layers")
    d_state: int = Field(16, ge=1, description="SSM state size")
    expand: int = Field(2, ge=1, description="Inner width multiplier of the SSM layer")
    d_conv: int = Field(4, ge=1, description="Causal conv kernel length in the SSM layer")
    dt_rank: int = Field(0, ge=0, description="Rank of the step-size projection, 0 = ceil(C_f/16)")
    scan_order: Literal["raster", "serpentine"] = Field(
        "raster", description="Token flattening order within a frame/view"
    )
    encoder_type: Literal["mamba", "transformer"] = Field("mamba", description="Encoder family")

    # decoder
    d_model: int = Field(32, ge=1, description="Decoder width")
    decoder_layers: int = Field(3, ge=1, description="L_d, decoder layers")
    heads: int = Field(4, ge=1, description="Attention heads")
    mlp_ratio: int = Field(2, ge=1, description="Hidden width multiplier of decoder MLPs")
    joints: int = Field(14, ge=1, description="J, keypoints per pose")
    strategy: Literal["many_to_many", "many_to_one"] = Field(
        "many_to_many", description="Predict every window frame or only the center"
    )
    radar_views: Literal["both", "horizontal", "vertical"] = Field(
        "both", description="Which radar views feed the encoder"
    )
    input_representation: Literal["fft3d", "fft4d"] = Field(
        "fft3d", description="Heatmap type fed to the encoder"
    )

    # dsp
    n_antennas: int = Field(12, ge=1, description="Virtual antennas per cube")
    n_chirps: int = Field(128, ge=1, description="Chirps per cube")
    n_samples: int = Field(256, ge=1, description="ADC samples per chirp")
    chirp_target: int = Field(8, ge=1, description="Chirps kept after subsampling")
    angle_pad: int = Field(64, ge=1, description="Angle FFT size after zero padding")
    azimuth_antennas: int = Field(8, ge=1, description="Azimuth group size of the 4D path")
    elevation_pad: int = Field(8, ge=1, description="Elevation FFT size of the 4D path")
    window: Literal["rect", "hann"] = Field("rect", description="Window applied before FFTs")
    clutter_removal: bool = Field(True, description="Subtract chirp mean before subsampling")

    # simulation
    frames: int = Field(60, ge=1, description="Frames per synthetic sequence")
    image_width: int = Field(256, ge=2, description="Ground-truth image width in pixels")
    image_height: int = Field(256, ge=2, description="Ground-truth image height in pixels")
    max_angle_freq: float = Field(0.25, gt=0, lt=0.5, description="Angle frequency at the image edge")
    reference_depth: float = Field(3.0, gt=0, description="Depth in meters mapped to reference_range_bin")
    reference_range_bin: float = Field(64.0, ge=0, description="Range bin of the reference depth")
    range_bins_per_meter: float = Field(32.0, gt=0, description="Range bins per meter of depth")
    doppler_bins_per_mps: float = Field(4.0, gt=0, description="Doppler bins per m/s of radial velocity")
    dropout_prob: float = Field(0.0, ge=0, lt=1, description="Chance a joint returns no echo in a frame")
    noise_std: float = Field(0.0, ge=0, description="Std of additive complex Gaussian noise")

    # metric
    oks_scale_mode: Literal["bbox_diagonal", "bbox_area", "fixed"] = Field(
        "bbox_diagonal", description="How the OKS object scale is derived"
    )
    oks_fixed_scale: float = Field(1.0, gt=0, description="OKS scale for fixed mode and fallback")

    @model_validator(mode="after")
    def _check_consistency(self) -> "ModelConfig":
        if self.T % 2 == 0:
            raise ValueError(f"T must be odd so the center frame is defined, got {self.T}")
        if self.n_chirps % self.chirp_target:
            raise ValueError(
                f"n_chirps={self.n_chirps} is not divisible by chirp_target={self.chirp_target}"
            )
        if self.angle_pad < self.n_antennas:
            raise ValueError(f"angle_pad={self.angle_pad} is smaller than n_antennas={self.n_antennas}")
        if self.angle_pad % 4 or self.n_samples % 4:
            raise ValueError("angle_pad and n_samples must be divisible by 4")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.azimuth_antennas >= self.n_antennas:
            raise ValueError("azimuth_antennas must leave at least one elevation antenna")
        if self.feature_channels % 2:
            raise ValueError("feature_channels must be even")
        return self

    @property
    def views(self) -> List[str]:
        if self.radar_views == "both":
            return list(VIEW_NAMES)
        return [self.radar_views]

    @property
    def heatmap_shape(self) -> tuple:
        """(H, D, W) of the per-frame model input."""
        depth = self.chirp_target
        if self.input_representation == "fft4d":
            depth *= self.elevation_pad
        return (self.angle_pad, depth, self.n_samples)

    @property
    def resolved_dt_rank(self) -> int:
        return self.dt_rank or -(-self.feature_channels // 16)

    @property
    def output_frames(self) -> int:
        return self.T if self.strategy == "many_to_many" else 1


PRESETS: Dict[str, Dict[str, Any]] = {
    "full": {},
    "desk": {
        "T": 3,
        "n_chirps": 32,
        "n_samples": 32,
        "chirp_target": 4,
        "angle_pad": 16,
        "elevation_pad": 4,
        "feature_channels": 16,
        "vim_layers": 2,
        "d_state": 8,
        "d_model": 16,
        "decoder_layers": 2,
        "heads": 2,
        "reference_range_bin": 12.0,
        "range_bins_per_meter": 8.0,
        "frames": 80,
    },
    "tiny": {
        "T": 3,
        "n_chirps": 32,
        "n_samples": 32,
        "chirp_target": 4,
        "angle_pad": 16,
        "elevation_pad": 4,
        "feature_channels": 8,
        "vim_layers": 1,
        "d_state": 4,
        "d_model": 8,
        "decoder_layers": 1,
        "heads": 2,
        "reference_range_bin": 12.0,
        "range_bins_per_meter": 8.0,
        "frames": 60,
    },
}


def preset(name: str, **overrides: Any) -> ModelConfig:
    """Build a config from a named preset plus keyword overrides."""
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset '{name}', expected one of {sorted(PRESETS)}")
    values = {**PRESETS[name], **overrides}
    try:
        return ModelConfig(**values)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def parse_config_text(text: str, base: Optional[ModelConfig] = None) -> ModelConfig:
    """Parse ``key = value`` lines on top of ``base`` (defaults if omitted)."""
    values: Dict[str, Any] = base.model_dump() if base is not None else {}
    known = set(ModelConfig.model_fields)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown config key '{key}'")
        values[key] = value
    try:
        return ModelConfig(**values)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def load_config(path: Union[str, Path], base: Optional[ModelConfig] = None) -> ModelConfig:
    path = Path(path)
    logger.debug(f"Loading config from {path}")
    return parse_config_text(path.read_text(), base)


def dump_config(config: ModelConfig) -> str:
    """Serialize every field; floats use repr so parsing restores them exactly."""
    lines = []
    for key, value in config.model_dump().items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def save_config(config: ModelConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(dump_config(config))
