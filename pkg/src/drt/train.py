"""MSE objective, Adam, paired augmentation, and the deterministic fit loop.

Determinism contract: every random decision in an epoch (shuffle order,
crop corners, flips) comes from a generator derived from (seed, epoch), so
a run resumed from a checkpoint at epoch k replays exactly the stream the
uninterrupted run would have used.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields, replace

import numpy as np

from .tensor import NumericError, ShapeError, Tensor, tensor_mean
from .model import DrtParameters, forward
from .imaging import ImagePair

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "EpochRecord",
    "FitResult",
    "mse_loss",
    "init_adam_state",
    "adam_step",
    "augment",
    "fit",
    "format_log",
    "write_log",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization protocol. Patience defaults are desk-scale; the
    full-scale protocol uses patience_epochs=100, min_delta_window=50."""

    learning_rate: float = 1e-4
    batch_size: int = 8
    crop: int = 56
    flip_prob: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 100
    patience_epochs: int = 20
    min_delta: float = 1e-3
    min_delta_window: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.crop < 1:
            raise ValueError("crop must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences over every entry.

    For a stacked batch this equals the average of the per-pair errors.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = pred - target
    return tensor_mean(diff * diff)


# ----------------------------------------------------------------------
# Adam
# ----------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Per-parameter first/second moment buffers plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_adam_state(params: DrtParameters) -> OptimizerState:
    m = {name: np.zeros_like(t.data) for name, t in params.named_tensors()}
    v = {name: np.zeros_like(t.data) for name, t in params.named_tensors()}
    return OptimizerState(m=m, v=v, step=0)


def adam_step(params: DrtParameters, state: OptimizerState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update in place; missing grads count as zero."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.named_tensors():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype, copy=False)


# ----------------------------------------------------------------------
# augmentation
# ----------------------------------------------------------------------

def augment(pair: ImagePair, crop: int, flip_prob: float, rng: np.random.Generator) -> ImagePair:
    """Identical random crop + horizontal flip on both images of the pair."""
    _, h, w = pair.clean.shape
    if h < crop or w < crop:
        raise ShapeError(f"image {h}x{w} smaller than crop {crop}")
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    flip = bool(rng.random() < flip_prob)
    clean = pair.clean.data[:, top:top + crop, left:left + crop]
    degraded = pair.degraded.data[:, top:top + crop, left:left + crop]
    if flip:
        clean = clean[:, :, ::-1]
        degraded = degraded[:, :, ::-1]
    return ImagePair(
        clean=Tensor(np.ascontiguousarray(clean)),
        degraded=Tensor(np.ascontiguousarray(degraded)),
        identifier=pair.identifier,
    )


# ----------------------------------------------------------------------
# fit loop
# ----------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float
    wall_time: float


@dataclass
class FitResult:
    records: list[EpochRecord]
    best_epoch: int
    best_loss: float
    best_params: DrtParameters
    best_opt_state: OptimizerState
    params: DrtParameters
    opt_state: OptimizerState
    stop_reason: str


def _copy_params(params: DrtParameters) -> DrtParameters:
    import copy

    clone = copy.deepcopy(params)
    clone.zero_grads()
    return clone


def _copy_opt_state(state: OptimizerState) -> OptimizerState:
    return OptimizerState(
        m={k: a.copy() for k, a in state.m.items()},
        v={k: a.copy() for k, a in state.v.items()},
        step=state.step,
    )


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, epoch])))


def fit(params: DrtParameters, pairs: list[ImagePair], cfg: TrainConfig,
        opt_state: OptimizerState | None = None, start_epoch: int = 0,
        prior_records: list[EpochRecord] | None = None,
        initial_best: "tuple[DrtParameters, OptimizerState] | None" = None,
        epoch_callback=None) -> FitResult:
    """Shuffled mini-batch training with best-loss tracking and patience stops.

    Stops at max_epochs, when the epoch loss has not improved for
    ``patience_epochs``, or when it decreased by less than ``min_delta``
    over the trailing ``min_delta_window`` epochs. On resume, pass the
    earlier records plus the best (params, opt_state) seen so far so the
    run continues as if uninterrupted. ``epoch_callback``
    (epoch, record, params, opt_state) may return False to stop early.
    """
    if not pairs:
        raise ValueError("fit: dataset is empty")
    if opt_state is None:
        opt_state = init_adam_state(params)

    records: list[EpochRecord] = list(prior_records or [])
    losses = [r.loss for r in records]
    best_loss = min(losses) if losses else float("inf")
    best_epoch = records[min(range(len(losses)), key=losses.__getitem__)].epoch if losses else -1
    if initial_best is not None:
        best_params = _copy_params(initial_best[0])
        best_opt_state = _copy_opt_state(initial_best[1])
    else:
        best_params = _copy_params(params)
        best_opt_state = _copy_opt_state(opt_state)
    stop_reason = "max_epochs"

    epoch = start_epoch
    while epoch < cfg.max_epochs:
        rng = _epoch_rng(cfg.seed, epoch)
        order = rng.permutation(len(pairs))
        t0 = time.perf_counter()
        loss_sum = 0.0
        n_seen = 0
        for lo in range(0, len(order), cfg.batch_size):
            batch_ids = order[lo:lo + cfg.batch_size]
            crops = [augment(pairs[i], cfg.crop, cfg.flip_prob, rng) for i in batch_ids]
            degraded = Tensor(np.stack([c.degraded.data for c in crops]))
            clean = Tensor(np.stack([c.clean.data for c in crops]))
            pred = forward(degraded, params)
            loss = mse_loss(pred, clean)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite training loss {value} at epoch {epoch}, batch {lo // cfg.batch_size}"
                )
            loss.backward()
            adam_step(params, opt_state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
            params.zero_grads()
            loss_sum += value * len(batch_ids)
            n_seen += len(batch_ids)

        record = EpochRecord(
            epoch=epoch,
            loss=loss_sum / n_seen,
            lr=cfg.learning_rate,
            wall_time=time.perf_counter() - t0,
        )
        records.append(record)

        if record.loss < best_loss:
            best_loss = record.loss
            best_epoch = epoch
            best_params = _copy_params(params)
            best_opt_state = _copy_opt_state(opt_state)

        if epoch_callback is not None:
            if epoch_callback(epoch, record, params, opt_state) is False:
                stop_reason = "callback"
                epoch += 1
                break

        if epoch - best_epoch >= cfg.patience_epochs:
            stop_reason = "patience"
            epoch += 1
            break
        window = cfg.min_delta_window
        if len(records) > window:
            drop = records[-1 - window].loss - record.loss
            if drop < cfg.min_delta:
                stop_reason = "min_delta"
                epoch += 1
                break
        epoch += 1

    return FitResult(
        records=records,
        best_epoch=best_epoch,
        best_loss=best_loss,
        best_params=best_params,
        best_opt_state=best_opt_state,
        params=params,
        opt_state=opt_state,
        stop_reason=stop_reason,
    )


def format_log(records: list[EpochRecord]) -> str:
    lines = ["epoch\tloss\tlr\twall_time"]
    for r in records:
        lines.append(f"{r.epoch}\t{r.loss:.8e}\t{r.lr:.3e}\t{r.wall_time:.3f}")
    return "\n".join(lines) + "\n"


def write_log(path, records: list[EpochRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_log(records))
