"""
Named parameters and the small layers shared by the encoder and decoder.

Parameters live in a ParameterStore under stable dotted names
(``encoder.vim.0.in_proj.weight``); those names are what checkpoints carry.
Layers register their parameters when constructed, so initialization order,
and with it the seeded values, depends only on the architecture.
"""

import logging
import math
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np
from scipy.stats import truncnorm

from . import tensor as tn
from .errors import CheckpointMismatchError, ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)

INIT_STD = 0.02


class ParameterStore(Mapping[str, Tensor]):
    """Ordered mapping of parameter name to trainable Tensor."""

    def __init__(self, seed: int = 0, dtype=np.float64):
        self.rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self._params: Dict[str, Tensor] = {}
        self.no_decay: set = set()

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def add(self, name: str, value: np.ndarray, decay: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter '{name}' registered twice")
        param = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = param
        if not decay:
            self.no_decay.add(name)
        return param

    def normal(self, name: str, shape: Tuple[int, ...], std: float = INIT_STD) -> Tensor:
        """Truncated normal at two standard deviations."""
        values = truncnorm.rvs(-2.0, 2.0, scale=std, size=shape, random_state=self.rng)
        return self.add(name, values)

    def zeros(self, name: str, shape: Tuple[int, ...], decay: bool = True) -> Tensor:
        return self.add(name, np.zeros(shape), decay=decay)

    def ones(self, name: str, shape: Tuple[int, ...], decay: bool = True) -> Tensor:
        return self.add(name, np.ones(shape), decay=decay)

    def count(self, prefix: str = "") -> int:
        return int(sum(p.size for n, p in self._params.items() if n.startswith(prefix)))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        missing = sorted(set(self._params) - set(state))
        unexpected = sorted(set(state) - set(self._params))
        if missing or unexpected:
            raise CheckpointMismatchError(
                f"checkpoint does not match model: missing={missing[:5]} unexpected={unexpected[:5]}"
            )
        for name, param in self._params.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise CheckpointMismatchError(
                    f"{name}: checkpoint shape {value.shape} vs model shape {param.shape}"
                )
            param.data[...] = value.astype(self.dtype)
        logger.debug(f"Loaded {len(state)} parameters")


class Linear:
    """y = x @ W + b with W stored as [d_in][d_out]."""

    def __init__(self, store: ParameterStore, name: str, d_in: int, d_out: int, bias: bool = True, zero: bool = False):
        self.d_in = d_in
        self.d_out = d_out
        if zero:
            self.weight = store.zeros(f"{name}.weight", (d_in, d_out))
        else:
            self.weight = store.normal(f"{name}.weight", (d_in, d_out))
        self.bias = store.zeros(f"{name}.bias", (d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"linear expects last dim {self.d_in}, got {x.shape}")
        y = tn.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm:
    def __init__(self, store: ParameterStore, name: str, dim: int):
        self.gamma = store.ones(f"{name}.weight", (dim,), decay=False)
        self.beta = store.zeros(f"{name}.bias", (dim,), decay=False)

    def __call__(self, x: Tensor) -> Tensor:
        return tn.layer_norm(x, self.gamma, self.beta)


class MLP:
    """Two linear layers with SiLU in between."""

    def __init__(self, store: ParameterStore, name: str, d_in: int, d_hidden: int, d_out: int):
        self.fc1 = Linear(store, f"{name}.fc1", d_in, d_hidden)
        self.fc2 = Linear(store, f"{name}.fc2", d_hidden, d_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(tn.silu(self.fc1(x)))


class MultiHeadAttention:
    """Scaled dot-product attention over the second-to-last axis.

    Inputs are batched as [B][L][d]; every batch row attends independently,
    which is how frame-local and joint-local attention are expressed.
    """

    def __init__(self, store: ParameterStore, name: str, d_model: int, heads: int):
        if d_model % heads:
            raise ShapeError(f"d_model={d_model} is not divisible by heads={heads}")
        self.heads = heads
        self.d_head = d_model // heads
        self.q_proj = Linear(store, f"{name}.q_proj", d_model, d_model)
        self.k_proj = Linear(store, f"{name}.k_proj", d_model, d_model)
        self.v_proj = Linear(store, f"{name}.v_proj", d_model, d_model)
        self.out_proj = Linear(store, f"{name}.out_proj", d_model, d_model)
        self.last_weights: Optional[np.ndarray] = None

    def _split(self, x: Tensor) -> Tensor:
        b, length, _ = x.shape
        return x.reshape(b, length, self.heads, self.d_head).permute(0, 2, 1, 3)

    def __call__(self, query: Tensor, memory: Tensor, key_pos: Optional[Tensor] = None) -> Tensor:
        if query.ndim != 3 or memory.ndim != 3 or query.shape[0] != memory.shape[0]:
            raise ShapeError(f"attention expects [B][L][d] inputs, got {query.shape} and {memory.shape}")
        keys_in = memory if key_pos is None else memory + key_pos
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(keys_in))
        v = self._split(self.v_proj(memory))
        scores = tn.matmul(q, k.permute(0, 1, 3, 2)) * (1.0 / math.sqrt(self.d_head))
        weights = tn.softmax(scores, axis=-1)
        self.last_weights = weights.data
        mixed = tn.matmul(weights, v).permute(0, 2, 1, 3)
        b, length = query.shape[:2]
        return self.out_proj(mixed.reshape(b, length, self.heads * self.d_head))


def parameter_groups(store: ParameterStore, prefixes: List[str]) -> Dict[str, int]:
    """Parameter count per top-level component."""
    return {prefix: store.count(prefix) for prefix in prefixes}
