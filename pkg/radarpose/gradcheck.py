"""
Central finite-difference verification of tape gradients.
"""

import logging
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .tensor import Tape, Tensor

logger = logging.getLogger(__name__)


class GradCheckReport(BaseModel):
    """Outcome of one gradient check."""

    max_rel_error: float = Field(..., description="Largest relative error over sampled coordinates")
    checked: int = Field(..., description="Number of coordinates compared")
    passed: bool
    tol: float
    worst: Optional[Tuple[str, List[int]]] = Field(
        None, description="Parameter name and index of the worst coordinate"
    )


def analytic_gradients(fn: Callable[[], Tensor], params: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return tape.gradients(params)


def _loss_value(fn: Callable[[], Tensor]) -> float:
    return fn().item()


def grad_check(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    samples: int = 20,
    h: float = 1e-5,
    tol: float = 1e-4,
    seed: int = 0,
    floor: float = 1e-5,
) -> GradCheckReport:
    """Compare tape gradients of ``fn`` against central differences.

    ``fn`` rebuilds the scalar loss from the current values of ``params``.
    ``samples`` coordinates are drawn uniformly over all parameter entries;
    the step for a coordinate is ``h * max(1, |theta|)``. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    if h <= 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    names = [n for n, p in params.items() if p.size]
    if not names:
        raise ValueError("grad_check needs at least one non-empty parameter")

    grads = analytic_gradients(fn, params)
    sizes = np.array([params[n].size for n in names])
    rng = np.random.default_rng(seed)
    flat_picks = rng.choice(sizes.sum(), size=min(samples, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    max_err = 0.0
    worst = None
    for flat in sorted(int(f) for f in flat_picks):
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[which]
        param = params[name]
        index = np.unravel_index(flat - offsets[which], param.shape)
        original = float(param.data[index])
        step = h * max(1.0, abs(original))

        param.data[index] = original + step
        plus = _loss_value(fn)
        param.data[index] = original - step
        minus = _loss_value(fn)
        param.data[index] = original

        numeric = (plus - minus) / (2.0 * step)
        analytic = float(grads[name][index])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        if err > max_err:
            max_err = err
            worst = (name, [int(i) for i in index])
        logger.debug(f"{name}{list(index)}: analytic={analytic:.6e} numeric={numeric:.6e} err={err:.2e}")

    report = GradCheckReport(
        max_rel_error=max_err, checked=len(flat_picks), passed=max_err < tol, tol=tol, worst=worst
    )
    if not report.passed:
        logger.warning(f"Gradient check failed: max relative error {max_err:.3e} at {worst}")
    return report
