"""SGD with momentum under a linear one-cycle learning-rate policy."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .augment import AugmentPolicy
from .dataset import Manifest, batches
from .dsp import SpectrogramConfig
from .errors import LifasError
from .evaluation import accuracy, confusion_and_loss
from .fileio import atomic_write_text
from .nn import checkpoint
from .nn.model import Model, model_backward

log = logging.getLogger(__name__)


class TrainingError(LifasError):
    pass


@dataclass(frozen=True)
class OneCycleSchedule:
    max_lr: float = 1e-2
    total_steps: int = 2
    warmup_frac: float = 0.3
    start_div: float = 25.0
    final_div: float = 1e4

    def __post_init__(self):
        if self.max_lr <= 0:
            raise LifasError("max_lr must be positive")
        if self.total_steps < 2:
            raise LifasError("total_steps must be at least 2")
        if not 0 < self.warmup_frac < 1:
            raise LifasError("warmup_frac must be in (0, 1)")

    @property
    def peak_step(self) -> int:
        # round half up
        return int(math.floor(self.warmup_frac * (self.total_steps - 1) + 0.5))

    @property
    def start_lr(self) -> float:
        return self.max_lr / self.start_div

    @property
    def final_lr(self) -> float:
        return self.max_lr / self.final_div


def lr_at(schedule: OneCycleSchedule, step: int) -> float:
    """Linear ramp from max_lr/start_div up to max_lr at the peak step, then
    linearly down to max_lr/final_div at the last step."""
    if not 0 <= step < schedule.total_steps:
        raise LifasError(f"step {step} outside [0, {schedule.total_steps})")
    peak, last = schedule.peak_step, schedule.total_steps - 1
    if step == peak:
        return schedule.max_lr
    if step < peak:
        return schedule.start_lr + (schedule.max_lr - schedule.start_lr) * (step / peak)
    return schedule.max_lr + (schedule.final_lr - schedule.max_lr) * ((step - peak) / (last - peak))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 8
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0
    clip_len_samples: int = 60000

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.clip_len_samples <= 0:
            raise LifasError("epochs, batch_size and clip_len_samples must be positive")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise LifasError("momentum must be in [0, 1) and weight_decay >= 0")


@dataclass
class TrainHistory:
    steps: list = field(default_factory=list)   # (step, lr, loss)
    epochs: list = field(default_factory=list)  # (epoch, val_loss, val_acc)

    def steps_csv(self) -> str:
        return "step,lr,loss\n" + "".join(f"{s},{lr!r},{loss!r}\n" for s, lr, loss in self.steps)

    def epochs_csv(self) -> str:
        return "epoch,val_loss,val_acc\n" + "".join(f"{e},{l!r},{a!r}\n" for e, l, a in self.epochs)

    def save(self, directory) -> None:
        directory = Path(directory)
        atomic_write_text(directory / "history_steps.csv", self.steps_csv())
        atomic_write_text(directory / "history_epochs.csv", self.epochs_csv())


def sgd_step(params: dict, grads: dict, lr: float, momentum: float, velocity: dict,
             weight_decay: float = 0.0):
    """v <- momentum * v + g;  p <- p - lr * v.  Updates in place and returns (params, velocity).

    ``weight_decay`` adds ``weight_decay * p`` to each gradient first.
    """
    if set(grads) != set(params):
        missing = sorted(set(params) ^ set(grads))
        raise LifasError(f"gradient keys do not match parameter keys: {missing[:3]}")
    for name, g in grads.items():
        p = params[name]
        if weight_decay:
            g = g + weight_decay * p
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        v *= momentum
        v += g
        p -= lr * v
    return params, velocity


def steps_per_epoch(manifest: Manifest, batch_size: int) -> int:
    return math.ceil(len(manifest.select("train")) / batch_size)


def schedule_for(manifest: Manifest, train_config: TrainConfig, max_lr: float = 1e-2, **kwargs):
    total = train_config.epochs * steps_per_epoch(manifest, train_config.batch_size)
    return OneCycleSchedule(max_lr=max_lr, total_steps=total, **kwargs)


def fit(model: Model, manifest: Manifest, spectro_config: SpectrogramConfig, train_config: TrainConfig,
        schedule: OneCycleSchedule, augment_policy: Optional[AugmentPolicy] = None, *,
        root=".", checkpoint_dir=None, single_threaded: bool = False):
    """Train ``model`` in place; returns (model, history).

    After each epoch the validation split is scored in eval mode. With a
    ``checkpoint_dir`` the model is saved as ``epoch_NNN.ckpt`` after every
    epoch and as ``best.ckpt`` whenever validation accuracy improves; the
    history CSVs are rewritten alongside.
    """
    per_epoch = steps_per_epoch(manifest, train_config.batch_size)
    if per_epoch == 0:
        raise TrainingError("manifest has no training entries")
    expected = train_config.epochs * per_epoch
    if schedule.total_steps != expected:
        raise TrainingError(
            f"schedule has {schedule.total_steps} steps but {train_config.epochs} epochs x "
            f"{per_epoch} batches = {expected}"
        )
    has_val = bool(manifest.select("val"))
    velocity: dict = {}
    history = TrainHistory()
    best_acc = -1.0
    step = 0
    for epoch in range(1, train_config.epochs + 1):
        t0 = time.perf_counter()
        epoch_seed = int(np.random.SeedSequence([train_config.seed, epoch]).generate_state(1)[0])
        for batch in batches(manifest, "train", spectro_config, augment_policy, train_config.batch_size,
                             epoch_seed, root=root, clip_len_samples=train_config.clip_len_samples,
                             single_threaded=single_threaded):
            lr = lr_at(schedule, step)
            loss, grads = model_backward(model, batch.images, batch.labels)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at step {step} (epoch {epoch})")
            sgd_step(model.trainable(), grads, lr, train_config.momentum, velocity, train_config.weight_decay)
            if not all(np.isfinite(p).all() for p in model.params.values()):
                raise TrainingError(f"non-finite parameters after step {step} (epoch {epoch})")
            history.steps.append((step, lr, loss))
            step += 1

        if has_val:
            cm, val_loss = confusion_and_loss(model, manifest, "val", spectro_config, root=root,
                                              batch_size=train_config.batch_size,
                                              clip_len_samples=train_config.clip_len_samples,
                                              single_threaded=single_threaded)
            val_acc = accuracy(cm)
        else:
            val_loss, val_acc = float("nan"), float("nan")
        history.epochs.append((epoch, val_loss, val_acc))
        log.info("epoch %d: train loss %.4f, val loss %.4f, val acc %.4f (%.1fs)",
                 epoch, history.steps[-1][2], val_loss, val_acc, time.perf_counter() - t0)

        if checkpoint_dir is not None:
            checkpoint.save(model, Path(checkpoint_dir) / f"epoch_{epoch:03d}.ckpt")
            if has_val and val_acc > best_acc:
                checkpoint.save(model, Path(checkpoint_dir) / "best.ckpt")
            history.save(checkpoint_dir)
        if has_val:
            best_acc = max(best_acc, val_acc)
    return model, history


def config_dict(*objs) -> dict:
    out = {}
    for o in objs:
        out.update(asdict(o) if hasattr(o, "__dataclass_fields__") else dict(o))
    return out


def from_config(cls, cfg: dict, **overrides):
    names = {f.name for f in fields(cls)}
    kwargs = {k: v for k, v in cfg.items() if k in names}
    kwargs.update({k: v for k, v in overrides.items() if v is not None and k in names})
    return cls(**kwargs)
