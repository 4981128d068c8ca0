"""Distillation and supervised fine-tuning loops.

Both loops share one SGD-with-momentum driver. Each batch draws one crop
length, crops and augments every student input, embeds the whole batch in a
single forward pass and back-propagates the loss gradient averaged over the
batch. Teacher embeddings are used as-is (never cropped or augmented).
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .augment import AugmentConfig, AugmentStats, draw_crop_length, random_crop, spec_augment
from .errors import ConfigError, DataError, UsageError
from .losses import (
    DISTILL_LOSSES,
    AamConfig,
    ClassWeights,
    ContrastiveConfig,
    aam_softmax_loss,
    distill_loss,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "contrastive"
    batch_size: int = 64
    epochs: int = 15
    lr_start: float = 0.1
    lr_end: float = 0.01
    momentum: float = 0.9
    epoch_subset_fraction: float = 1.0
    max_grad_norm: float | None = 5.0  # global L2 clip of each batch gradient
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    aam: AamConfig = field(default_factory=AamConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        # lr_start == lr_end == 0 is allowed: a frozen run
        if not (0 <= self.lr_end <= self.lr_start) or (self.lr_end == 0 < self.lr_start):
            raise ConfigError(
                f"need 0 < lr_end <= lr_start, got lr_start={self.lr_start}, lr_end={self.lr_end}"
            )
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if not 0 < self.epoch_subset_fraction <= 1:
            raise ConfigError("epoch_subset_fraction must lie in (0, 1]")
        if self.max_grad_norm is not None and not self.max_grad_norm > 0:
            raise ConfigError("max_grad_norm must be > 0 (or None to disable clipping)")


def lr_schedule(cfg: TrainConfig, epoch: int) -> float:
    """Exponential decay from ``lr_start`` at epoch 0 to ``lr_end`` at the last epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise UsageError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.epochs == 1 or epoch == 0:
        return cfg.lr_start
    if epoch == cfg.epochs - 1:
        return cfg.lr_end
    if cfg.lr_start == 0:
        return 0.0
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** (epoch / (cfg.epochs - 1))


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    lr: float
    processed: int
    skipped: int
    wall_time_s: float = 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        del d["wall_time_s"]  # keeps report files byte-reproducible
        return {"type": "epoch", **d}


@dataclass
class TrainReport:
    header: dict
    epochs: list = field(default_factory=list)
    checkpoint: str | None = None
    best_checkpoint: str | None = None
    augment_stats: AugmentStats = field(default_factory=AugmentStats)
    class_weights: ClassWeights | None = None

    @property
    def losses(self) -> list[float]:
        return [e.mean_loss for e in self.epochs]

    def to_jsonl(self) -> str:
        lines = [{"type": "header", **self.header}]
        lines += [e.to_json() for e in self.epochs]
        lines.append(
            {
                "type": "final",
                "checkpoint": self.checkpoint,
                "best_checkpoint": self.best_checkpoint,
                "warps_applied": self.augment_stats.warps_applied,
                "warps_skipped": self.augment_stats.warps_skipped,
            }
        )
        return "".join(json.dumps(x, sort_keys=True) + "\n" for x in lines)


def _header(cfg: TrainConfig, net, mode: str) -> dict:
    return {
        "mode": mode,
        "config": json.loads(json.dumps(asdict(cfg))),
        "student": json.loads(net.config.to_json()),
        "param_count": net.param_count,
        "batch_gradient": "sum of per-sample gradients scaled by 1/N for every loss "
        "(mse/cos/contrastive values are batch sums; reported losses are per-sample means)",
    }


def _run(features, ids, net, cfg: TrainConfig, out_dir, mode, usable_fn, step_fn, extra=None):
    """Shared epoch/batch driver.

    ``usable_fn(batch_ids)`` filters out ids without supervision;
    ``step_fn(batch_ids, embeddings, epoch)`` returns
    ``(mean_loss, grad_embeddings, grad_extra)``. ``extra`` holds class
    weights trained alongside the network (fine-tuning only).
    """
    if not ids:
        raise DataError("empty corpus")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence([cfg.seed, cfg.augment.rng_seed]).spawn(2)
    order_rng = np.random.default_rng(seeds[0])
    aug_rng = np.random.default_rng(seeds[1])

    report = TrainReport(_header(cfg, net, mode))
    velocity = np.zeros_like(net.params)
    extra_velocity = np.zeros_like(extra.W) if extra is not None else None
    best = np.inf
    n_sub = max(1, int(round(cfg.epoch_subset_fraction * len(ids))))

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_schedule(cfg, epoch)
        subset = order_rng.choice(len(ids), n_sub, replace=False)
        order = [ids[i] for i in order_rng.permutation(subset)]
        loss_sum, n_used, skipped = 0.0, 0, 0
        for b in range(0, len(order), cfg.batch_size):
            batch = order[b : b + cfg.batch_size]
            usable = usable_fn(batch)
            skipped += len(batch) - len(usable)
            if not usable:
                continue
            L = draw_crop_length(cfg.augment, aug_rng)
            x = np.stack(
                [
                    spec_augment(
                        random_crop(features[u], cfg.augment, aug_rng, length=L),
                        cfg.augment,
                        aug_rng,
                        report.augment_stats,
                    )
                    for u in usable
                ]
            )
            emb, tape = net.forward(x)
            mean_loss, g_emb, g_extra = step_fn(usable, emb, epoch)
            if not np.isfinite(mean_loss):
                raise DataError(f"epoch {epoch}: training diverged (non-finite loss)")
            grad = net.backward(tape, g_emb)
            if cfg.max_grad_norm is not None:
                sq = float(np.dot(grad, grad))
                if g_extra is not None:
                    sq += float(np.sum(g_extra * g_extra))
                scale = cfg.max_grad_norm / max(np.sqrt(sq), cfg.max_grad_norm)
                grad *= net.dtype.type(scale)
                if g_extra is not None:
                    g_extra = g_extra * scale
            velocity *= cfg.momentum
            velocity += grad
            net.params -= net.dtype.type(lr) * velocity
            if extra is not None:
                extra_velocity *= cfg.momentum
                extra_velocity += g_extra.astype(extra_velocity.dtype)
                extra.W -= extra.W.dtype.type(lr) * extra_velocity
                extra.renormalize()
            loss_sum += mean_loss * len(usable)
            n_used += len(usable)
        if n_used == 0:
            raise DataError(f"epoch {epoch}: all {len(order)} utterances skipped (missing teacher/label)")
        rec = EpochRecord(epoch, loss_sum / n_used, lr, n_used, skipped, time.perf_counter() - t0)
        report.epochs.append(rec)
        log.info(
            "epoch %d loss %.5f lr %.4g processed %d skipped %d (%.1fs)",
            epoch, rec.mean_loss, lr, n_used, skipped, rec.wall_time_s,
        )
        if out_dir is not None:
            net.save(out_dir / "last.net1")
            report.checkpoint = "last.net1"
            if rec.mean_loss < best:
                best = rec.mean_loss
                net.save(out_dir / "best.net1")
                report.best_checkpoint = "best.net1"
    if out_dir is not None:
        (out_dir / "report.jsonl").write_text(report.to_jsonl(), encoding="utf-8")
    return report


def train_distill(features: Mapping[str, np.ndarray], teacher, net, cfg: TrainConfig, out_dir=None, ids=None):
    """Label-free distillation of ``teacher`` embeddings into ``net`` (updated in place)."""
    if cfg.loss not in DISTILL_LOSSES:
        raise ConfigError(f"distillation loss must be one of {', '.join(DISTILL_LOSSES)}, got {cfg.loss!r}")
    ids = list(features) if ids is None else list(ids)

    def usable(batch):
        return [u for u in batch if u in teacher]

    def step(batch, emb, epoch):
        t = teacher.matrix(batch).astype(np.float64)
        out = distill_loss(cfg.loss, t, emb.astype(np.float64), cfg.contrastive)
        n = len(batch)
        return out.value / n, out.grad_student / n, None

    return _run(features, ids, net, cfg, out_dir, "distill", usable, step)


def dense_labels(labels: Mapping[str, str]) -> tuple[dict[str, int], list[str]]:
    """Map speaker names to class ids 0..C-1 in sorted-name order."""
    names = sorted(set(labels.values()))
    index = {n: i for i, n in enumerate(names)}
    return {u: index[s] for u, s in labels.items()}, names


def finetune_supervised(
    features: Mapping[str, np.ndarray],
    labels: Mapping[str, int],
    net,
    cfg: TrainConfig,
    out_dir=None,
    ids=None,
    weights: ClassWeights | None = None,
):
    """AAM-softmax training of ``net`` (updated in place) on integer speaker labels."""
    if cfg.loss != "aam":
        raise ConfigError(f"fine-tuning uses loss 'aam', got {cfg.loss!r}")
    classes = sorted(set(int(c) for c in labels.values()))
    if not classes:
        raise DataError("no labels")
    if classes != list(range(len(classes))):
        gaps = sorted(set(range(classes[-1] + 1)) - set(classes))
        raise DataError(f"labels must be dense in [0, C); missing class ids {gaps[:10]}")
    if weights is None:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        weights = ClassWeights.random(len(classes), net.config.embedding_dim, rng, net.dtype)
    ids = list(features) if ids is None else list(ids)

    def usable(batch):
        return [u for u in batch if u in labels]

    def step(batch, emb, epoch):
        y = np.array([labels[u] for u in batch])
        out = aam_softmax_loss(emb.astype(np.float64), y, weights, cfg.aam, epoch)
        return out.value, out.grad_student, out.grad_weights

    report = _run(features, ids, net, cfg, out_dir, "finetune", usable, step, extra=weights)
    report.class_weights = weights
    return report
