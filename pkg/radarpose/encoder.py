"""
Cross-view state-space encoder.

Per radar view a convolutional stem merges the doppler axis and reduces
angle and range by 4; learnable positional embeddings are added; the views
are concatenated and flattened into one token sequence (range fastest, then
angle, then view, then frame); a stack of bidirectional gated selective-scan
layers mixes the whole sequence in time linear in its length.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as tn
from .config import VIEW_NAMES, ModelConfig
from .errors import ShapeError, TrainingError
from .layers import LayerNorm, Linear, ParameterStore
from .tensor import Tensor

logger = logging.getLogger(__name__)

VIEW_TAGS = {"horizontal": "h", "vertical": "v"}


# token ordering


def scan_index(f: int, view: int, a: int, r: int, *, views: int, h4: int, w4: int, frames: Optional[int] = None) -> int:
    """Position of token (frame, view, angle, range) in the flattened sequence."""
    if not (0 <= view < views and 0 <= a < h4 and 0 <= r < w4 and f >= 0):
        raise IndexError(f"token ({f}, {view}, {a}, {r}) outside views={views} h4={h4} w4={w4}")
    if frames is not None and f >= frames:
        raise IndexError(f"frame {f} outside {frames} frames")
    return ((f * views + view) * h4 + a) * w4 + r


def scan_inverse(index: int, *, views: int, h4: int, w4: int, frames: Optional[int] = None) -> Tuple[int, int, int, int]:
    """Inverse of scan_index: (frame, view, angle, range)."""
    if index < 0 or (frames is not None and index >= frames * views * h4 * w4):
        raise IndexError(f"token index {index} out of range")
    rest, r = divmod(index, w4)
    rest, a = divmod(rest, h4)
    f, view = divmod(rest, views)
    return f, view, a, r


def scan_permutation(frames: int, views: int, h4: int, w4: int, order: str = "raster") -> np.ndarray:
    """perm such that scanned[i] = raster[perm[i]].

    ``serpentine`` reverses the range direction on every other angle row.
    """
    perm = np.arange(frames * views * h4 * w4).reshape(frames, views, h4, w4)
    if order == "serpentine":
        perm[:, :, 1::2, :] = perm[:, :, 1::2, ::-1]
    elif order != "raster":
        raise ValueError(f"unknown scan order '{order}'")
    return perm.reshape(-1)


def token_index_map(frames: int, views: int, h4: int, w4: int, order: str = "raster") -> np.ndarray:
    """[N_tok][4] table of (frame, view, angle, range) per sequence position."""
    grid = np.stack(np.meshgrid(np.arange(frames), np.arange(views), np.arange(h4), np.arange(w4), indexing="ij"), -1)
    return grid.reshape(-1, 4)[scan_permutation(frames, views, h4, w4, order)]


# selective scan


@dataclass
class SSMParams:
    """Discretization inputs for one scan direction.

    a_log: [d][N] with A = -exp(a_log); b, c: [L][N]; d: [d]; delta: [L][d] > 0.
    """

    a_log: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    delta: np.ndarray

    def reversed(self) -> "SSMParams":
        return SSMParams(self.a_log, self.b[::-1], self.c[::-1], self.d, self.delta[::-1])


def _scan_states(u: np.ndarray, delta: np.ndarray, a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """States h_t = Abar_t h_{t-1} + Bbar_t u_t for all t, and Abar."""
    length, width = u.shape
    abar = np.exp(delta[:, :, None] * a[None, :, :])
    drive = delta[:, :, None] * b[:, None, :] * u[:, :, None]
    states = np.empty((length, width, a.shape[1]), dtype=np.result_type(u, a))
    h = np.zeros((width, a.shape[1]), dtype=states.dtype)
    for t in range(length):
        h = abar[t] * h + drive[t]
        states[t] = h
    return states, abar


def ssm_scan(u: np.ndarray, params: SSMParams, direction: str = "forward") -> np.ndarray:
    """y_t = C_t h_t + D u_t with h_0 = 0, output read after the state update."""
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] == 0:
        raise ShapeError(f"ssm_scan expects a non-empty [L][d] input, got {u.shape}")
    if direction == "backward":
        return ssm_scan(u[::-1], params.reversed(), "forward")[::-1]
    if direction != "forward":
        raise ValueError(f"unknown scan direction '{direction}'")
    a = -np.exp(params.a_log)
    states, _ = _scan_states(u, params.delta, a, params.b)
    return np.einsum("tin,tn->ti", states, params.c) + u * params.d


def naive_ssm_scan(u: np.ndarray, params: SSMParams) -> np.ndarray:
    """Step-by-step scalar loop of the forward recurrence."""
    length, width = u.shape
    n_state = params.a_log.shape[1]
    a = -np.exp(params.a_log)
    h = np.zeros((width, n_state))
    y = np.zeros((length, width))
    for t in range(length):
        for i in range(width):
            acc = 0.0
            for n in range(n_state):
                abar = np.exp(params.delta[t, i] * a[i, n])
                bbar = params.delta[t, i] * params.b[t, n]
                h[i, n] = abar * h[i, n] + bbar * u[t, i]
                acc += params.c[t, n] * h[i, n]
            y[t, i] = acc + params.d[i] * u[t, i]
    return y


def selective_scan(u: Tensor, delta: Tensor, a_log: Tensor, b: Tensor, c: Tensor, d: Tensor) -> Tensor:
    """Differentiable forward-direction scan; shapes as in SSMParams."""
    length, width = u.shape
    n_state = a_log.shape[1]
    if (
        delta.shape != (length, width)
        or a_log.shape != (width, n_state)
        or b.shape != (length, n_state)
        or c.shape != (length, n_state)
        or d.shape != (width,)
    ):
        raise ShapeError(
            f"selective_scan: u{u.shape} delta{delta.shape} a_log{a_log.shape} b{b.shape} c{c.shape} d{d.shape}"
        )
    a = -np.exp(a_log.data)
    states, abar = _scan_states(u.data, delta.data, a, b.data)
    out = np.einsum("tin,tn->ti", states, c.data) + u.data * d.data

    def backward(g):
        dh = g[:, :, None] * c.data[:, None, :]
        total = np.empty_like(states)
        acc = dh[-1]
        total[-1] = acc
        for t in range(length - 2, -1, -1):
            acc = dh[t] + abar[t + 1] * acc
            total[t] = acc
        prev = np.concatenate([np.zeros_like(states[:1]), states[:-1]])
        d_exponent = total * prev * abar
        through_b = (total * b.data[:, None, :]).sum(axis=-1)
        g_delta = (d_exponent * a).sum(axis=-1) + through_b * u.data
        g_a = np.einsum("tin,ti->in", d_exponent, delta.data)
        g_u = g * d.data + through_b * delta.data
        g_b = np.einsum("tin,ti->tn", total, delta.data * u.data)
        g_c = np.einsum("ti,tin->tn", g, states)
        g_d = (g * u.data).sum(axis=0)
        return g_u, g_delta, g_a * a, g_b, g_c, g_d

    return tn.record("selective_scan", out, (u, delta, a_log, b, c, d), backward)


# layers


def _dt_bias(rng: np.random.Generator, width: int, dt_min: float = 1e-3, dt_max: float = 1e-1) -> np.ndarray:
    """Inverse softplus of step sizes drawn log-uniformly in [dt_min, dt_max]."""
    dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=width))
    return dt + np.log(-np.expm1(-dt))


class ScanBranch:
    """Causal conv, input-dependent (delta, B, C) and one selective scan."""

    def __init__(self, store: ParameterStore, name: str, inner: int, d_state: int, dt_rank: int, d_conv: int):
        self.d_state = d_state
        self.dt_rank = dt_rank
        self.conv_weight = store.normal(f"{name}.conv.weight", (inner, d_conv))
        self.conv_bias = store.zeros(f"{name}.conv.bias", (inner,))
        self.x_proj = Linear(store, f"{name}.x_proj", inner, dt_rank + 2 * d_state, bias=False)
        self.dt_proj = Linear(store, f"{name}.dt_proj", dt_rank, inner, bias=False)
        self.dt_bias = store.add(f"{name}.dt_proj.bias", _dt_bias(store.rng, inner))
        a_init = np.tile(np.log(np.arange(1, d_state + 1, dtype=np.float64)), (inner, 1))
        self.a_log = store.add(f"{name}.a_log", a_init, decay=False)
        self.d = store.ones(f"{name}.d", (inner,), decay=False)

    def __call__(self, x: Tensor) -> Tensor:
        xc = tn.silu(tn.causal_conv1d(x, self.conv_weight, self.conv_bias))
        proj = self.x_proj(xc)
        r, n = self.dt_rank, self.d_state
        dt = proj[:, :r]
        b = proj[:, r : r + n]
        c = proj[:, r + n :]
        delta = tn.softplus(self.dt_proj(dt) + self.dt_bias)
        return selective_scan(xc, delta, self.a_log, b, c, self.d)


class VimLayer:
    """Pre-norm bidirectional gated SSM block with a residual connection."""

    def __init__(self, store: ParameterStore, name: str, dim: int, d_state: int, expand: int, d_conv: int, dt_rank: int):
        self.dim = dim
        self.inner = expand * dim
        self.norm = LayerNorm(store, f"{name}.norm", dim)
        self.in_proj = Linear(store, f"{name}.in_proj", dim, 2 * self.inner)
        self.fwd = ScanBranch(store, f"{name}.fwd", self.inner, d_state, dt_rank, d_conv)
        self.bwd = ScanBranch(store, f"{name}.bwd", self.inner, d_state, dt_rank, d_conv)
        self.out_proj = Linear(store, f"{name}.out_proj", self.inner, dim)

    def __call__(self, tokens: Tensor) -> Tensor:
        if tokens.ndim != 2 or tokens.shape[1] != self.dim:
            raise ShapeError(f"vim layer expects [N][{self.dim}] tokens, got {tokens.shape}")
        xz = self.in_proj(self.norm(tokens))
        x = xz[:, : self.inner]
        z = xz[:, self.inner :]
        reverse = np.arange(tokens.shape[0])[::-1]
        y_fwd = self.fwd(x)
        y_bwd = tn.gather(self.bwd(tn.gather(x, reverse, axis=0)), reverse, axis=0)
        gated = (y_fwd + y_bwd) * tn.silu(z)
        return tokens + self.out_proj(gated)


class ResidualBlock:
    """shortcut(x) + silu(conv3x3x3(x)) on [1][C][T][H][W]."""

    def __init__(self, store: ParameterStore, name: str, c_in: int, c_out: int):
        self.weight = store.normal(f"{name}.conv.weight", (c_out, c_in, 3, 3, 3))
        self.bias = store.zeros(f"{name}.conv.bias", (c_out,))
        self.shortcut = None
        if c_in != c_out:
            self.shortcut = store.normal(f"{name}.shortcut.weight", (c_out, c_in, 1, 1, 1))

    def __call__(self, x: Tensor) -> Tensor:
        skip = x if self.shortcut is None else tn.conv3d(x, self.shortcut)
        return skip + tn.silu(tn.conv3d(x, self.weight, self.bias, padding=1))


class Stem:
    """Doppler merge, three residual 3D conv blocks and two 2x downsamples.

    Input [2][T][H][D][W] (real, imaginary); output [C][T][H/4][W/4].
    """

    def __init__(self, store: ParameterStore, name: str, doppler: int, channels: int):
        half = channels // 2
        self.doppler = doppler
        self.merge_weight = store.normal(f"{name}.merge.weight", (half, 2, 3, doppler, 3))
        self.merge_bias = store.zeros(f"{name}.merge.bias", (half,))
        self.blocks = [
            ResidualBlock(store, f"{name}.block.0", half, half),
            ResidualBlock(store, f"{name}.block.1", half, channels),
            ResidualBlock(store, f"{name}.block.2", channels, channels),
        ]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 5 or x.shape[0] != 2:
            raise ShapeError(f"stem expects [2][T][H][D][W], got {x.shape}")
        _, frames, height, doppler, width = x.shape
        if height % 4 or width % 4:
            raise ShapeError(f"angle and range dims must be divisible by 4, got H={height} W={width}")
        if doppler != self.doppler:
            raise ShapeError(f"stem built for D={self.doppler}, got D={doppler}")
        # frames as batch; the kernel spans the whole doppler axis
        merged = tn.conv3d(x.permute(1, 0, 2, 3, 4), self.merge_weight, self.merge_bias, padding=(1, 0, 1))
        merged = tn.silu(merged).reshape(frames, -1, height, width).permute(1, 0, 2, 3)
        h = merged.reshape(1, *merged.shape)
        h = self.blocks[0](h)
        h = tn.downsample(h, axes=(3, 4))
        h = self.blocks[1](h)
        h = tn.downsample(h, axes=(3, 4))
        h = self.blocks[2](h)
        return h.reshape(h.shape[1:])


@dataclass
class TokenSequence:
    """Encoder output: tokens[i] and positions[i] describe sequence slot i."""

    tokens: Tensor
    positions: Tensor
    index_map: np.ndarray

    @property
    def n_tok(self) -> int:
        return self.tokens.shape[0]


class Encoder:
    def __init__(self, config: ModelConfig, store: ParameterStore):
        if config.encoder_type != "mamba":
            raise NotImplementedError("transformer encoder is not implemented")
        height, doppler, width = config.heatmap_shape
        if height % 4 or width % 4:
            raise ShapeError(f"H={height} and W={width} must be divisible by 4")
        self.config = config
        self.views = config.views
        self.h4, self.w4 = height // 4, width // 4
        channels = config.feature_channels
        self.stems = {v: Stem(store, f"encoder.stem.{VIEW_TAGS[v]}", doppler, channels) for v in self.views}
        self.pos = {v: store.normal(f"encoder.pos.{VIEW_TAGS[v]}", (channels, self.h4, self.w4)) for v in self.views}
        self.layers = [
            VimLayer(
                store,
                f"encoder.vim.{i}",
                channels,
                config.d_state,
                config.expand,
                config.d_conv,
                config.resolved_dt_rank,
            )
            for i in range(config.vim_layers)
        ]
        self.norm = LayerNorm(store, "encoder.norm", channels)

    def n_tokens(self, frames: int) -> int:
        return frames * len(self.views) * self.h4 * self.w4

    def _flatten(self, per_view: List[Tensor], perm: np.ndarray) -> Tensor:
        # [C][T][H4][W4] per view -> [T][V][H4][W4][C] -> [N][C]
        stacked = tn.stack([f.permute(1, 2, 3, 0) for f in per_view], axis=1)
        flat = stacked.reshape(-1, stacked.shape[-1])
        return flat if self.config.scan_order == "raster" else tn.gather(flat, perm, axis=0)

    def __call__(self, heatmaps: Dict[str, Tensor]) -> TokenSequence:
        missing = [v for v in self.views if v not in heatmaps]
        if missing:
            raise ShapeError(f"missing heatmaps for views {missing}")
        frames = heatmaps[self.views[0]].shape[1]
        features, positions = [], []
        for view in self.views:
            feat = self.stems[view](heatmaps[view])
            pos = self.pos[view].reshape(feat.shape[0], 1, self.h4, self.w4)
            features.append(feat + pos)
            positions.append(pos + np.zeros(feat.shape))
        perm = scan_permutation(frames, len(self.views), self.h4, self.w4, self.config.scan_order)
        tokens = self._flatten(features, perm)
        for layer in self.layers:
            tokens = layer(tokens)
        tokens = self.norm(tokens)
        index_map = token_index_map(frames, len(self.views), self.h4, self.w4, self.config.scan_order)
        return TokenSequence(tokens, self._flatten(positions, perm), index_map)


def check_stability(store: ParameterStore, step: Optional[int] = None) -> None:
    """Every scan branch keeps A < 0, a positive base step size and a
    discretized transition strictly inside (-1, 1).

    The base step is softplus of the step-size bias, the part of delta that
    does not depend on the input.
    """
    for name, param in store.items():
        if not name.endswith(".a_log"):
            continue
        a = -np.exp(param.data)
        if not np.all(np.isfinite(a) & (a < 0)):
            raise TrainingError(f"{name}: state matrix lost strict negativity", step=step)
        bias = store.get(name[: -len("a_log")] + "dt_proj.bias")
        if bias is None:
            continue
        delta = np.logaddexp(0.0, bias.data)
        if not np.all(np.isfinite(delta) & (delta > 0)):
            raise TrainingError(f"{name}: step size is no longer positive", step=step)
        abar = np.exp(delta[:, None] * a)
        if not np.all(np.abs(abar) < 1):
            raise TrainingError(f"{name}: discretized transition reached magnitude 1", step=step)
