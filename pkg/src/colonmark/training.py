"""KL-divergence training with SGD + sharpness-aware minimization and per-epoch resampling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .autodiff import Tape, Tensor, backward, record
from .autodiff.random import derive_key, permutation
from .checkpoint import Checkpoint
from .dataset import (NUM_CLASSES, FrameRecord, Label, Manifest, Split, class_distribution,
                      consensus_filter)
from .errors import EmptySplit, EmptyTrainSplit, InvalidConfig, NonFiniteLoss, ShapeMismatch
from .evaluation import confusion, metrics
from .imaging import FrameLoader, PreprocessConfig
from .model import ViTConfig, ViTModel, forward, init_model
from .sampling import SamplingPlan, compute_inclusion_probs, sample_epoch

log = logging.getLogger(__name__)


# ---- loss ----

def target_distribution(label: Union[Label, str], smoothing: float = 0.0) -> np.ndarray:
    """``1 - eps`` on the true class, ``eps / 3`` on each other class."""
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"label smoothing must lie in [0, 1), got {smoothing}")
    t = np.full(NUM_CLASSES, smoothing / (NUM_CLASSES - 1))
    t[Label(label).index] = 1.0 - smoothing
    return t


def target_matrix(labels, smoothing: float = 0.0) -> np.ndarray:
    if not len(labels):
        return np.zeros((0, NUM_CLASSES))
    return np.stack([target_distribution(lab, smoothing) for lab in labels])


def kl_loss(logits: Tensor, targets) -> Tensor:
    """Batch mean of KL(target || softmax(logits)), with 0 log 0 = 0.

    Evaluated in float64 as a single taped op; the gradient w.r.t. the
    logits is ``(softmax(logits) * sum(t) - t) / B``.
    """
    t = np.asarray(targets, dtype=np.float64)
    if logits.ndim != 2 or t.shape != logits.shape:
        raise ShapeMismatch(f"kl_loss: logits {logits.shape} vs targets {t.shape}")
    if np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-6) or np.any(t < 0):
        raise ValueError("every target row must be a probability distribution")
    b = t.shape[0]
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    safe_t = np.where(t > 0, t, 1.0)
    per_row = np.sum(np.where(t > 0, t * (np.log(safe_t) - logp), 0.0), axis=1)
    probs = np.exp(logp)

    def bw(g):
        return (((probs * t.sum(axis=1, keepdims=True) - t) * (g / b)).astype(logits.dtype),)

    return record(np.asarray(per_row.mean()), (logits,), bw)


# ---- optimizers ----

def sgd_step(params: dict, grads: dict, buffers: dict, lr: float, momentum: float = 0.9,
             weight_decay: float = 0.0) -> tuple[dict, dict]:
    """``v <- momentum v + g + wd p``; ``p <- p - lr v``. Returns new (params, buffers)."""
    new_p, new_v = {}, {}
    for name, p in params.items():
        g = grads[name]
        v = buffers.get(name)
        if v is None:
            v = np.zeros_like(p)
        if g.shape != p.shape or v.shape != p.shape:
            raise ShapeMismatch(f"{name}: param {p.shape}, grad {g.shape}, buffer {v.shape}")
        f = p.dtype.type
        v = f(momentum) * v + g + f(weight_decay) * p
        new_v[name] = v
        new_p[name] = p - f(lr) * v
    return new_p, new_v


def _gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], batch_ids=()):
    for t in params.values():
        t.grad = None
    with Tape() as tape:
        loss = loss_fn()
        value = float(loss.data)
        if not math.isfinite(value):
            raise NonFiniteLoss(f"loss is {value}", batch_ids)
        backward(loss)
    tape.clear()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}
    return value, grads


def global_norm(grads: dict) -> float:
    return math.sqrt(math.fsum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def sam_step(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], buffers: dict, lr: float,
             rho: float = 0.05, momentum: float = 0.9, weight_decay: float = 0.0,
             batch_ids=()) -> tuple[float, dict]:
    """One sharpness-aware update; returns (loss at the current weights, new momentum buffers).

    1. gradient ``g`` at ``w``
    2. ``e = rho * g / ||g||`` with the norm taken over all parameters jointly
    3. gradient ``g_adv`` at ``w + e``
    4. restore ``w`` and take an SGD step with ``g_adv``

    With ``rho == 0`` or ``||g|| == 0`` the second pass is skipped and ``g`` is used.
    ``loss_fn`` must rebuild the loss from the current parameter values.
    """
    if rho < 0:
        raise ValueError(f"rho must be >= 0, got {rho}")
    loss, grads = _gradients(loss_fn, params, batch_ids)
    norm = global_norm(grads) if rho > 0 else 0.0
    if norm > 0:
        original = {k: t.data for k, t in params.items()}
        for k, t in params.items():
            t.data = original[k] + (grads[k] * (rho / norm)).astype(t.dtype)
        _, grads = _gradients(loss_fn, params, batch_ids)
        for k, t in params.items():
            t.data = original[k]
    current = {k: t.data for k, t in params.items()}
    new_params, new_buffers = sgd_step(current, grads, buffers, lr, momentum, weight_decay)
    for k, t in params.items():
        t.data = new_params[k]
        t.grad = None
    return loss, new_buffers


# ---- training loop ----

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    sam_rho: float = 0.05
    label_smoothing: float = 0.0
    seed: int = 0
    preprocess: PreprocessConfig = PreprocessConfig(target_size=(64, 64))
    sampling: bool = True

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be at least 1")
        if self.epochs < 0:
            raise InvalidConfig("epochs must be non-negative")
        if self.sam_rho < 0:
            raise InvalidConfig("sam_rho must be non-negative")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise InvalidConfig("label_smoothing must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d["preprocess"] = self.preprocess.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown training keys: {sorted(unknown)}")
        kw = dict(d)
        if "preprocess" in kw and isinstance(kw["preprocess"], dict):
            try:
                kw["preprocess"] = PreprocessConfig.from_dict(kw["preprocess"])
            except (TypeError, ValueError) as e:
                raise InvalidConfig(str(e)) from None
        return cls(**kw)


@dataclass
class TrainResult:
    final: Checkpoint
    best: Optional[Checkpoint]
    history: list = field(default_factory=list)


def epoch_seed(seed: int, epoch: int) -> int:
    return derive_key(seed, epoch)


def build_plan(manifest: Manifest) -> SamplingPlan:
    """Inclusion probabilities from the TRAIN vs SNAPSHOT label mix of a consensus manifest."""
    try:
        snap = class_distribution(manifest, Split.SNAPSHOT)
    except EmptySplit:
        raise EmptySplit("domain-specific sampling needs SNAPSHOT frames in the manifest") from None
    return compute_inclusion_probs(class_distribution(manifest, Split.TRAIN), snap)


def epoch_batches(train_set: Manifest, plan: Optional[SamplingPlan], seed: int, epoch: int,
                  batch_size: int) -> list[list[FrameRecord]]:
    """Resample (when ``plan`` is given), shuffle, and cut into batches; the last may be short."""
    es = epoch_seed(seed, epoch)
    subset = sample_epoch(train_set, plan, es) if plan is not None else train_set
    order = permutation(len(subset), derive_key(es, 1))
    recs = [subset[i] for i in order]
    return [recs[i:i + batch_size] for i in range(0, len(recs), batch_size)]


def _make_checkpoint(model: ViTModel, buffers: dict, epoch: int, train_cfg: TrainConfig) -> Checkpoint:
    return Checkpoint(
        vit_config=model.config,
        params={k: t.data.copy() for k, t in model.params.items()},
        momentum={k: v.copy() for k, v in buffers.items()},
        epoch=epoch,
        rng_state={"seed": train_cfg.seed, "next_epoch": epoch},
        train_config=train_cfg.to_dict(),
    )


def train(manifest: Manifest, vit_cfg: ViTConfig, train_cfg: TrainConfig, image_root: Union[str, Path] = ".",
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Minimize the batch-mean KL loss over the TRAIN split.

    Each epoch redraws the Bernoulli subsample (if ``train_cfg.sampling``),
    shuffles it, and runs one SAM step per batch. VAL accuracy, when a VAL
    split exists, is measured on every VAL frame after each epoch, and the
    best-VAL checkpoint is kept alongside the final one.
    """
    train_cfg.validate()
    vit_cfg.validate()
    if tuple(train_cfg.preprocess.target_size) != (vit_cfg.image_size, vit_cfg.image_size):
        raise InvalidConfig(f"preprocess target {train_cfg.preprocess.target_size} does not match "
                            f"model input {vit_cfg.image_size}")
    m = consensus_filter(manifest)
    train_set = m.select(Split.TRAIN)
    if not len(train_set):
        raise EmptyTrainSplit("no TRAIN frames after consensus filtering")
    plan = build_plan(m) if train_cfg.sampling else None
    has_val = len(m.select(Split.VAL)) > 0
    loader = FrameLoader(image_root, train_cfg.preprocess)

    model = init_model(vit_cfg, train_cfg.seed)
    buffers = {k: np.zeros_like(t.data) for k, t in model.params.items()}
    result = TrainResult(final=_make_checkpoint(model, buffers, 0, train_cfg), best=None)
    best_acc = -1.0

    for epoch in range(train_cfg.epochs):
        batches = epoch_batches(train_set, plan, train_cfg.seed, epoch, train_cfg.batch_size)
        es = epoch_seed(train_cfg.seed, epoch)
        losses, weights = [], []
        for step, batch in enumerate(batches):
            x = loader.batch([r.image_path for r in batch])
            t = target_matrix([r.label for r in batch], train_cfg.label_smoothing)
            drop_seed = derive_key(es, 2, step)
            loss, buffers = sam_step(
                lambda: kl_loss(forward(model, x, train=True, dropout_seed=drop_seed), t),
                model.params, buffers, train_cfg.learning_rate, train_cfg.sam_rho,
                train_cfg.momentum, train_cfg.weight_decay,
                batch_ids=[(r.video_id, r.frame_idx) for r in batch])
            losses.append(loss * len(batch))
            weights.append(len(batch))
        sampled = sum(weights)
        entry = {"epoch": epoch + 1,
                 "train_loss": math.fsum(losses) / sampled if sampled else None,
                 "val_accuracy": None,
                 "sampled_frames": sampled}
        if has_val:
            entry["val_accuracy"] = metrics(confusion(model, m, Split.VAL, train_cfg.preprocess,
                                                      loader=loader)).accuracy
        result.history.append(entry)
        result.final = _make_checkpoint(model, buffers, epoch + 1, train_cfg)
        if has_val and entry["val_accuracy"] > best_acc:
            best_acc = entry["val_accuracy"]
            result.best = result.final
        log.info("epoch %d: loss=%s val_acc=%s frames=%d", epoch + 1, entry["train_loss"],
                 entry["val_accuracy"], sampled)
        if on_epoch is not None:
            on_epoch(entry)
    return result
