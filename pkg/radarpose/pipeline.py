"""
Windows, training, center-frame inference, evaluation and ablation sweeps.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from . import tensor as tn
from .config import ModelConfig, preset, save_config
from .decoder import Decoder, DecoderLayer
from .dsp import Heatmap3D, heatmaps_batch
from .encoder import Encoder, VimLayer, check_stability
from .errors import NonFiniteError, TrainingError
from .formats import load_checkpoint, save_checkpoint, write_json
from .gradcheck import GradCheckReport, grad_check
from .layers import ParameterStore
from .objective import APReport, LossWeights, OksParams, evaluate_ap, loss_terms
from .optim import AdamState, adam_step
from .poses import PoseFile, PoseWindow
from .radar_sim import RadarCube, SceneSpec, SyntheticDataset, generate_dataset
from .tensor import Tape, Tensor

logger = logging.getLogger(__name__)

ABLATION_AXES = ("T", "strategy", "radar_views", "input_representation", "encoder_type", "lambda_vel")


class Window(BaseModel):
    index: int
    start: int
    stop: int
    center: int


def make_windows(frames: int, T: int, stride: int = 1) -> List[Window]:
    """Windows [i, i+T) every ``stride`` frames, centered at i + (T-1)/2."""
    if T < 1 or T % 2 == 0:
        raise ValueError(f"T must be odd, got {T}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if frames < T:
        raise ValueError(f"{frames} frames are too few for windows of {T}")
    starts = range(0, frames - T + 1, stride)
    return [Window(index=i, start=s, stop=s + T, center=s + (T - 1) // 2) for i, s in enumerate(starts)]


def split_windows(count: int, train_fraction: float) -> Tuple[List[int], List[int]]:
    """Chronological split; the test part is empty only for a single window."""
    n_train = min(count, max(1, int(round(count * train_fraction))))
    if n_train == count and count > 1 and train_fraction < 1:
        n_train -= 1
    return list(range(n_train)), list(range(n_train, count))


def model_input(heatmap: Heatmap3D, config: ModelConfig) -> np.ndarray:
    """Real/imaginary channels [2][H][D][W], scaled by the coherent gain of a unit scatterer."""
    gain = config.n_antennas * config.chirp_target * config.n_samples
    values = heatmap.values / gain
    return np.stack([values.real, values.imag])


class HeatmapCache:
    """Per-frame model inputs, computed once per frame and view."""

    def __init__(self, source: Callable[[int], Mapping[str, RadarCube]], config: ModelConfig):
        self.source = source
        self.config = config
        self._frames: Dict[int, Dict[str, np.ndarray]] = {}

    def prefetch(self, frames: Sequence[int]) -> None:
        todo = [f for f in frames if f not in self._frames]
        if not todo:
            return
        cubes = [self.source(f)[view] for f in todo for view in self.config.views]
        heatmaps = heatmaps_batch(cubes, self.config, self.config.workers)
        n_views = len(self.config.views)
        for i, frame in enumerate(todo):
            per_view = heatmaps[i * n_views : (i + 1) * n_views]
            self._frames[frame] = {
                view: model_input(h, self.config) for view, h in zip(self.config.views, per_view)
            }
        logger.debug(f"Preprocessed {len(todo)} frames x {n_views} views")

    def frame(self, frame: int) -> Dict[str, np.ndarray]:
        if frame not in self._frames:
            self.prefetch([frame])
        return self._frames[frame]

    def window(self, start: int, T: int) -> Dict[str, np.ndarray]:
        """Per view [2][T][H][D][W]."""
        frames = [self.frame(f) for f in range(start, start + T)]
        return {view: np.stack([f[view] for f in frames], axis=1) for view in self.config.views}


class Model:
    """Encoder and decoder sharing one parameter store."""

    def __init__(self, config: ModelConfig):
        self.config = config
        dtype = np.float64 if config.precision == "float64" else np.float32
        self.store = ParameterStore(config.seed, dtype)
        self.encoder = Encoder(config, self.store)
        self.decoder = Decoder(config, self.store)

    def forward(self, inputs: Mapping[str, np.ndarray]) -> Tensor:
        heatmaps = {view: Tensor(inputs[view], dtype=self.store.dtype) for view in self.config.views}
        return self.decoder(self.encoder(heatmaps))

    def parameter_counts(self) -> Dict[str, int]:
        return {
            "encoder": self.store.count("encoder."),
            "decoder": self.store.count("decoder."),
            "total": self.store.count(),
        }

    def n_tokens(self) -> int:
        return self.encoder.n_tokens(self.config.T)

    def load(self, checkpoint: Union[str, Path, Mapping[str, np.ndarray]]) -> None:
        state = checkpoint if isinstance(checkpoint, Mapping) else load_checkpoint(checkpoint)
        self.store.load_state_dict(state)


def target_for(poses: PoseWindow, config: ModelConfig) -> PoseWindow:
    return poses if config.strategy == "many_to_many" else poses.center()


def center_prediction(coords: np.ndarray, config: ModelConfig) -> np.ndarray:
    """The window-center pose [J][2] out of a model output."""
    return coords[config.T // 2] if config.strategy == "many_to_many" else coords[0]


class TrainRecord(BaseModel):
    step: int
    total: float
    oks: float
    vel: float
    grad_norm: float
    wall_time: float = Field(..., description="Seconds since training started")


@dataclass
class TrainResult:
    model: Model
    records: List[TrainRecord]
    train_windows: List[int]
    test_windows: List[int]
    cache: HeatmapCache
    dataset: SyntheticDataset
    checkpoints: List[Path] = field(default_factory=list)

    def records_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.records])


def build_dataset(config: ModelConfig, seed: Optional[int] = None) -> SyntheticDataset:
    seed = config.seed if seed is None else seed
    return generate_dataset(SceneSpec.from_config(config), config.T, seed, config)


def _batches(ids: Sequence[int], batch_size: int, rng: np.random.Generator) -> Iterator[List[int]]:
    """Endless epochs of seeded permutations, cut into batches."""
    while True:
        order = rng.permutation(np.asarray(ids))
        for i in range(0, len(order), batch_size):
            yield [int(x) for x in order[i : i + batch_size]]


def _window_loss(model: Model, cache: HeatmapCache, dataset: SyntheticDataset, index: int, weights: LossWeights, params: OksParams):
    config = model.config
    pred = model.forward(cache.window(dataset.window_start(index), config.T))
    gt = target_for(dataset.window_poses(index), config)
    return loss_terms(pred, gt, weights, params)


def train(
    config: ModelConfig,
    dataset: Optional[SyntheticDataset] = None,
    out_dir: Optional[Union[str, Path]] = None,
    on_record: Optional[Callable[[TrainRecord], None]] = None,
) -> TrainResult:
    """Seeded Adam training on the chronological train split of ``dataset``."""
    dataset = dataset if dataset is not None else build_dataset(config)
    if dataset.window_T != config.T:
        raise ValueError(f"dataset windows have T={dataset.window_T}, config has T={config.T}")
    if dataset.window_stride != config.window_stride:
        raise ValueError(
            f"dataset windows are {dataset.window_stride} frames apart, config has window_stride={config.window_stride}"
        )
    model = Model(config)
    train_ids, test_ids = split_windows(len(dataset), config.train_fraction)
    cache = HeatmapCache(dataset.frame, config)
    cache.prefetch(range(dataset.script.frame_count))
    counts = model.parameter_counts()
    logger.info(
        f"Training {counts['total']} parameters on {len(train_ids)} windows "
        f"({len(test_ids)} held out), N_tok={model.n_tokens()}"
    )

    state = AdamState(
        lr=config.lr,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        weight_decay=config.weight_decay,
        no_decay=frozenset(model.store.no_decay),
    )
    weights = LossWeights(lambda_vel=config.lambda_vel)
    params = OksParams.from_config(config)
    batches = _batches(train_ids, config.batch_size, np.random.default_rng(config.seed))
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        save_config(config, out_path / "config.txt")
    if out_path is not None and not config.checkpoint_every:
        logger.warning("checkpoint_every is 0, only the final checkpoint is written")

    result = TrainResult(model, [], train_ids, test_ids, cache, dataset)
    started = time.perf_counter()
    for step in range(config.steps):
        batch = next(batches)
        try:
            with Tape() as tape:
                terms = [_window_loss(model, cache, dataset, i, weights, params) for i in batch]
                total = sum((t.total for t in terms[1:]), terms[0].total) * (1.0 / len(terms))
            tape.backward(total)
        except NonFiniteError as e:
            logger.error(f"Non-finite value at step {step}: {e}")
            raise TrainingError(f"training diverged at step {step}: {e}", step=step) from e
        grads = tape.gradients(model.store)
        grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if not math.isfinite(grad_norm):
            raise TrainingError(f"non-finite gradient at step {step}", step=step)
        adam_step(state, model.store, grads)
        check_stability(model.store, step)

        record = TrainRecord(
            step=step,
            total=total.item(),
            oks=float(np.mean([t.oks.item() for t in terms])),
            vel=float(np.mean([t.vel.item() for t in terms])),
            grad_norm=grad_norm,
            wall_time=time.perf_counter() - started,
        )
        result.records.append(record)
        if on_record is not None:
            on_record(record)
        if step % config.log_every == 0 or step == config.steps - 1:
            logger.info(
                f"step {step}: loss={record.total:.5f} oks={record.oks:.5f} "
                f"vel={record.vel:.6f} |g|={record.grad_norm:.3e}"
            )
        if out_path is not None and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            path = out_path / f"checkpoint_{step + 1:06d}.mmck"
            save_checkpoint(path, model.store.state_dict())
            result.checkpoints.append(path)

    if out_path is not None:
        final = out_path / "checkpoint.mmck"
        save_checkpoint(final, model.store.state_dict())
        result.checkpoints.append(final)
        write_json(out_path / "records.json", [r.model_dump() for r in result.records])
    return result


def evaluate(
    model: Model,
    dataset: SyntheticDataset,
    window_ids: Sequence[int],
    cache: Optional[HeatmapCache] = None,
) -> APReport:
    """AP of center-frame predictions over the given windows."""
    config = model.config
    if not window_ids:
        raise ValueError("no windows to evaluate")
    cache = cache or HeatmapCache(dataset.frame, config)
    preds, gts = [], []
    for index in window_ids:
        coords = model.forward(cache.window(dataset.window_start(index), config.T)).data
        preds.append(center_prediction(coords, config))
        gts.append(dataset.window_poses(index).center().coords[0])
    truth = PoseWindow(coords=np.stack(gts), visibility=np.ones((len(gts), config.joints)))
    return evaluate_ap(np.stack(preds), truth, OksParams.from_config(config))


@dataclass
class InferenceResult:
    poses: PoseFile
    skipped: List[int]


def infer(
    config: ModelConfig,
    checkpoint: Union[str, Path, Mapping[str, np.ndarray]],
    frames: Sequence[Mapping[str, RadarCube]],
) -> InferenceResult:
    """Center-frame poses for every full window of a cube stream.

    ``frames[i]`` maps each configured view to the cube of frame i. Windows
    start every ``window_stride`` frames; frames that are no window center
    (the (T-1)/2 at either end, and the gaps of a stride above 1) are skipped.
    """
    model = Model(config)
    model.load(checkpoint)
    if len(frames) < config.T:
        logger.warning(f"{len(frames)} frames are fewer than T={config.T}, nothing to infer")
        empty = PoseFile(image_width=config.image_width, image_height=config.image_height, frames=[])
        return InferenceResult(empty, list(range(len(frames))))

    cache = HeatmapCache(lambda f: frames[f], config)
    cache.prefetch(range(len(frames)))
    windows = make_windows(len(frames), config.T, config.window_stride)
    coords, frame_ids = [], []
    for w in windows:
        out = model.forward(cache.window(w.start, config.T)).data
        coords.append(center_prediction(out, config))
        frame_ids.append(frames[w.center][config.views[0]].frame_index)
    centers = {w.center for w in windows}
    skipped = [f for f in range(len(frames)) if f not in centers]
    if skipped:
        logger.warning(f"Skipped {len(skipped)} frames that are no window center: {skipped}")
    poses = PoseFile.from_window(
        PoseWindow(coords=np.stack(coords)),
        config.image_width,
        config.image_height,
        frame_ids=frame_ids,
        window_ids=[w.index for w in windows],
    )
    return InferenceResult(poses, skipped)


def ablate(
    config: ModelConfig,
    axis: str,
    values: Sequence[str],
    out_path: Optional[Union[str, Path]] = None,
) -> pd.DataFrame:
    """Train and evaluate once per value of one config axis."""
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis '{axis}', expected one of {ABLATION_AXES}")
    rows = []
    for value in values:
        variant = ModelConfig(**{**config.model_dump(), axis: value})
        logger.info(f"Ablation {axis}={value}")
        result = train(variant)
        test_ids = result.test_windows or result.train_windows
        report = evaluate(result.model, result.dataset, test_ids, result.cache)
        rows.append(
            {
                axis: getattr(variant, axis),
                **report.percent(),
                "Params": result.model.parameter_counts()["total"],
                "N_tok": result.model.n_tokens(),
            }
        )
    table = pd.DataFrame(rows)
    if out_path is not None:
        Path(out_path).write_text(table.to_json(orient="records", indent=2) + "\n")
    return table


def run_chain(config: ModelConfig, out_dir: Optional[Union[str, Path]] = None) -> Dict[str, object]:
    """simulate -> preprocess -> train -> eval; returns the metrics payload."""
    dataset = build_dataset(config)
    result = train(config, dataset, out_dir)
    test_ids = result.test_windows or result.train_windows
    report = evaluate(result.model, dataset, test_ids, result.cache)
    metrics = {
        **report.percent(),
        "mean_oks": report.mean_oks,
        "per_group": report.per_group,
        "final_loss": result.records[-1].total if result.records else None,
        "steps": config.steps,
        "seed": config.seed,
    }
    if out_dir is not None:
        write_json(Path(out_dir) / "metrics.json", metrics)
    return metrics


def gradient_suite(seed: int = 0) -> Dict[str, GradCheckReport]:
    """Finite-difference checks of the core ops, one SSM layer, one decoder
    layer and the end-to-end loss, all in double precision."""
    rng = np.random.default_rng(seed)
    reports: Dict[str, GradCheckReport] = {}

    x = Tensor(rng.normal(size=(1, 2, 3, 4, 4)), requires_grad=True, name="x")
    w = Tensor(rng.normal(size=(2, 2, 3, 3, 3)) * 0.3, requires_grad=True, name="w")
    m = Tensor(rng.normal(size=(8, 5)) * 0.3, requires_grad=True, name="m")
    gamma = Tensor(1.0 + 0.1 * rng.normal(size=5), requires_grad=True, name="gamma")
    beta = Tensor(0.1 * rng.normal(size=5), requires_grad=True, name="beta")

    def ops_loss() -> Tensor:
        h = tn.silu(tn.conv3d(x, w, padding=1))
        h = tn.downsample(h, axes=(3, 4)).reshape(2, -1)
        h = tn.concat([h, tn.gather(h, np.array([1, 0]), axis=0)], axis=1).permute(1, 0)
        h = tn.layer_norm(tn.matmul(h.reshape(6, 8)[1:, :], m), gamma, beta)
        p = tn.softmax(tn.sigmoid(h) + tn.exp(h * 0.1), axis=-1)
        return (p * tn.softplus(h)).sum()

    reports["ops"] = grad_check(ops_loss, {"x": x, "w": w, "m": m, "gamma": gamma, "beta": beta}, tol=1e-4, seed=seed)

    store = ParameterStore(seed)
    layer = VimLayer(store, "vim", 8, 4, 2, 4, 1)
    tokens = Tensor(rng.normal(size=(12, 8)), requires_grad=True, name="tokens")
    def vim_loss() -> Tensor:
        out = layer(tokens)
        return (out * out).sum()

    reports["vim_layer"] = grad_check(
        vim_loss,
        {"tokens": tokens, **store},
        tol=1e-4,
        seed=seed,
    )

    store = ParameterStore(seed)
    dec_layer = DecoderLayer(store, "layer", 8, 2, 2)
    q = Tensor(rng.normal(size=(3, 4, 8)), requires_grad=True, name="q")
    memory = Tensor(rng.normal(size=(6, 8)))
    key_pos = Tensor(rng.normal(size=(6, 8)))
    reports["decoder_layer"] = grad_check(
        lambda: (tn.sigmoid(dec_layer(q, memory, key_pos))).sum(),
        {"q": q, **store},
        tol=1e-4,
        seed=seed,
    )

    config = preset("tiny", joints=4, seed=seed)
    model = Model(config)
    inputs = {v: rng.normal(size=(2, config.T) + config.heatmap_shape) for v in config.views}
    gt = PoseWindow(coords=rng.uniform(0.2, 0.8, size=(config.T, config.joints, 2)))
    weights = LossWeights(lambda_vel=config.lambda_vel)
    params = OksParams.from_config(config)
    reports["end_to_end"] = grad_check(
        lambda: loss_terms(model.forward(inputs), gt, weights, params).total,
        dict(model.store),
        samples=30,
        tol=1e-3,
        seed=seed,
    )
    for name, report in reports.items():
        level = logging.INFO if report.passed else logging.ERROR
        logger.log(level, f"gradcheck {name}: max rel error {report.max_rel_error:.3e} ({'ok' if report.passed else 'FAILED'})")
    return reports
