"""SGD-momentum training with a warm-up + cosine schedule and two
learning-rate groups (backbone vs everything added on top).

The loop is deterministic for a fixed seed: augmentation and shuffling
draw from their own seed sub-streams, and everything runs
single-threaded. A rolling checkpoint is written after every epoch, so
a run that aborts on a non-finite loss always leaves the last good
state on disk.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .backbone import BackboneConfig, full_backbone, tiny_backbone
from .checkpoint import save_checkpoint
from .data import augment, batches
from .errors import NumericalError, UsageError
from .interactors import InteractorConfig
from .losses import total_loss
from .metrics import DatasetMetrics, MetricsReport
from .model import (STREAM_AUGMENT, STREAM_SHUFFLE, ModelConfig, SaliencyNet,
                    stream_rng)
from .modules import BatchNorm2d
from .tensor import Tensor, no_grad


@dataclass
class TrainConfig:
    epochs: int = 32
    batch_size: int = 30
    lr_backbone_max: float = 0.005
    lr_rest_max: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-5
    warmup_epochs: int = 8
    input_size: int = 352
    seed: int = 0
    interactor: InteractorConfig = field(default_factory=InteractorConfig)
    backbone: BackboneConfig = field(default_factory=full_backbone)
    merge: str = "add"
    decay_bn_affine: bool = True  # weight decay on BN gamma/beta too

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise UsageError(
                f"epochs {self.epochs} / batch_size {self.batch_size} must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise UsageError(
                f"warmup_epochs {self.warmup_epochs} outside [0, {self.epochs})")
        if self.input_size % 32:
            raise UsageError(f"input_size {self.input_size} not divisible by 32")

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.backbone, self.interactor, self.merge)

    def to_dict(self):
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "lr_backbone_max": self.lr_backbone_max,
                "lr_rest_max": self.lr_rest_max, "momentum": self.momentum,
                "weight_decay": self.weight_decay,
                "warmup_epochs": self.warmup_epochs,
                "input_size": self.input_size, "seed": self.seed,
                "interactor": self.interactor.to_dict(),
                "backbone": self.backbone.to_dict(), "merge": self.merge,
                "decay_bn_affine": self.decay_bn_affine}

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        d["interactor"] = InteractorConfig.from_dict(d.get("interactor", {}))
        d["backbone"] = BackboneConfig.from_dict(d.get("backbone", {}))
        return TrainConfig(**d)


def full_train() -> TrainConfig:
    return TrainConfig()


def desk_train() -> TrainConfig:
    """CPU-sized run: tiny backbone, 16-channel interaction, 64x64."""
    return TrainConfig(epochs=20, batch_size=8, warmup_epochs=5,
                       input_size=64, backbone=tiny_backbone(),
                       interactor=InteractorConfig(channels=16))


def lr_at(step: int, total_steps: int, warmup_steps: int, lr_max: float) -> float:
    """Linear 0 -> lr_max over warmup_steps, then half-cosine lr_max -> 0
    over the rest; the two pieces meet at lr_max."""
    if not 0 <= step < total_steps:
        raise UsageError(f"step {step} outside [0, {total_steps})")
    if not 0 <= warmup_steps < total_steps:
        raise UsageError(f"warmup {warmup_steps} outside [0, {total_steps})")
    if step < warmup_steps:
        return lr_max * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * progress))


class SGD:
    """v <- momentum*v + grad + wd*param; param <- param - lr*v.

    Parameters live in named groups so the backbone and the rest can run
    at different learning rates. A parameter shared across stages shows
    up once, so its accumulated gradient is applied exactly once.
    """

    def __init__(self, groups: dict, momentum: float = 0.9,
                 weight_decay: float = 0.0, exempt_ids=()):
        self.groups = groups
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.exempt_ids = set(exempt_ids)
        self._velocity = {}

    def step(self, lrs: dict):
        if set(lrs) != set(self.groups):
            raise UsageError(f"lr groups {sorted(lrs)} != {sorted(self.groups)}")
        for gname, params in self.groups.items():
            lr = lrs[gname]
            for p in params:
                g = p.grad
                if g is None:
                    continue
                if not np.all(np.isfinite(g)):
                    raise NumericalError(
                        f"non-finite gradient in {p.name or 'unnamed parameter'}")
                wd = 0.0 if id(p) in self.exempt_ids else self.weight_decay
                v = self._velocity.get(id(p), 0.0)
                v = self.momentum * v + g + wd * p.data
                self._velocity[id(p)] = v
                p.data = p.data - lr * v


def bn_affine_ids(model) -> set:
    out = set()
    for m in model.modules():
        if isinstance(m, BatchNorm2d):
            out.add(id(m.gamma))
            out.add(id(m.beta))
    return out


def evaluate(model: SaliencyNet, samples, batch_size: int = 8,
             pooled_pr: bool = False) -> MetricsReport:
    """Eval-mode (running-stat BN) metrics over a sample list."""
    was_training = model.training
    model.eval()
    dm = DatasetMetrics(pooled_pr=pooled_pr)
    with no_grad():
        for imgs, masks in batches(samples, batch_size):
            pred = model(Tensor(imgs)).data
            for i in range(pred.shape[0]):
                dm.add(pred[i, 0], masks[i, 0])
    if was_training:
        model.train()
    return dm.report()


@dataclass
class TrainResult:
    final_path: str
    best_path: str
    log_path: str
    best_f_beta: float
    best_epoch: int
    epoch_losses: list
    val_f_beta: list
    log_rows: list  # (epoch, step, lr_backbone, lr_rest, loss)


def _write_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "step", "lr_backbone", "lr_rest", "loss"])
        w.writerows(rows)


def train(cfg: TrainConfig, train_samples, val_samples, out_path,
          progress=None) -> TrainResult:
    """Runs the full schedule; writes <out>.best/.log.csv/.config.json
    siblings next to the final checkpoint at out_path."""
    if not train_samples or not val_samples:
        raise UsageError("train and validation sets must be non-empty")
    size = (cfg.input_size, cfg.input_size)
    for s in train_samples + val_samples:
        if s.image.shape[1:] != size:
            raise UsageError(
                f"sample {s.id} is {s.image.shape[1:]}, config wants {size}")

    base, ext = os.path.splitext(str(out_path))
    best_path = f"{base}.best{ext}"
    log_path = f"{base}.log.csv"
    with open(f"{base}.config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)

    model = SaliencyNet(cfg.model_config(), seed=cfg.seed)
    opt = SGD(model.param_groups(), cfg.momentum, cfg.weight_decay,
              exempt_ids=() if cfg.decay_bn_affine else bn_affine_ids(model))
    spe = math.ceil(len(train_samples) / cfg.batch_size)
    total_steps = cfg.epochs * spe
    warmup_steps = cfg.warmup_epochs * spe
    shuffle_rng = stream_rng(cfg.seed, STREAM_SHUFFLE)
    aug_rng = stream_rng(cfg.seed, STREAM_AUGMENT)

    save_checkpoint(model, out_path)  # last-good even if step 1 blows up
    rows, epoch_losses, val_scores = [], [], []
    best_f, best_epoch = -1.0, 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        epoch_sum = 0.0
        augmented = [augment(s, aug_rng) for s in train_samples]
        for imgs, masks in batches(augmented, cfg.batch_size, rng=shuffle_rng):
            lr_b = lr_at(step, total_steps, warmup_steps, cfg.lr_backbone_max)
            lr_r = lr_at(step, total_steps, warmup_steps, cfg.lr_rest_max)
            loss = total_loss(model(Tensor(imgs)), Tensor(masks))
            value = float(loss.item())
            if not math.isfinite(value):
                _write_log(log_path, rows)
                raise NumericalError(
                    f"loss is {value} at epoch {epoch} step {step}; "
                    f"last good checkpoint kept at {out_path}")
            model.zero_grad()
            loss.backward()
            loss = None  # release the step's graph before the next forward
            opt.step({"backbone": lr_b, "rest": lr_r})
            rows.append((epoch, step, lr_b, lr_r, value))
            epoch_sum += value
            step += 1
        epoch_losses.append(epoch_sum / spe)

        report = evaluate(model, val_samples, cfg.batch_size)
        val_scores.append(report.f_beta_max)
        if report.f_beta_max > best_f:
            best_f, best_epoch = report.f_beta_max, epoch
            save_checkpoint(model, best_path)
        save_checkpoint(model, out_path)
        if progress is not None:
            progress(epoch, epoch_losses[-1], report.f_beta_max)

    _write_log(log_path, rows)
    return TrainResult(str(out_path), best_path, log_path, best_f, best_epoch,
                       epoch_losses, val_scores, rows)
