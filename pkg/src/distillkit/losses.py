"""Distillation losses and AAM-softmax, with exact gradients.

Every loss takes ``(N, D)`` arrays and returns a :class:`LossOutput` holding
the scalar value and the gradient w.r.t. the student embeddings. Teacher
embeddings are constants. MSE, COS and contrastive values are batch *sums*;
AAM-softmax is a batch *mean*.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DegenerateInputError

NORM_EPS = 1e-12


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.1

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")


@dataclass(frozen=True)
class AamConfig:
    scale: float = 30.0
    margin: float = 0.3
    margin_warmup_epochs: int = 30

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError(f"AAM scale must be > 0, got {self.scale}")
        if not 0 <= self.margin < np.pi / 2:
            raise ConfigError(f"AAM margin must lie in [0, pi/2), got {self.margin}")
        if self.margin_warmup_epochs < 0:
            raise ConfigError("margin_warmup_epochs must be >= 0")

    def effective_margin(self, epoch: int) -> float:
        return 0.0 if epoch < self.margin_warmup_epochs else self.margin


@dataclass
class LossOutput:
    value: float
    grad_student: np.ndarray
    grad_weights: np.ndarray | None = None


class ClassWeights:
    """Speaker lookup table for AAM-softmax; rows are kept unit-norm."""

    def __init__(self, W):
        self.W = np.array(W, dtype=np.result_type(W, np.float32))
        self.renormalize()

    @classmethod
    def random(cls, n_classes, dim, rng, dtype=np.float32):
        return cls(rng.standard_normal((n_classes, dim)).astype(dtype))

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    def renormalize(self) -> None:
        norms = np.linalg.norm(self.W, axis=1, keepdims=True)
        if np.any(norms <= NORM_EPS):
            raise DegenerateInputError("class weight row with zero norm")
        self.W /= norms


def _check_batch(teacher, student):
    teacher = np.asarray(teacher)
    student = np.asarray(student)
    if teacher.ndim != 2 or teacher.shape != student.shape:
        raise DataError(
            f"teacher {teacher.shape} and student {student.shape} must be equal (N, D) arrays"
        )
    if teacher.shape[0] < 1:
        raise DataError("empty batch")
    return teacher, student


def _unit_rows(x, what):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise DegenerateInputError(f"zero-norm {what} embedding")
    return x / norms, norms


def _softmax_nll(logits, target):
    """Per-row ``-log softmax(logits)[target]`` and the softmax itself.

    Writes the loss as ``m + log1p(rest)`` with ``m`` the largest logit
    gap over the target and ``rest`` the sum over every other entry, so a
    confident row (loss ~ 1e-13) keeps full relative precision instead of
    cancelling in ``logsumexp - logit``.
    """
    rows = np.arange(logits.shape[0])
    gap = logits - logits[rows, target][:, None]
    top = gap.argmax(axis=1)
    m = gap[rows, top]
    exp = np.exp(gap - m[:, None])
    exp[rows, top] = 0.0
    rest = exp.sum(axis=1)
    exp[rows, top] = 1.0
    return m + np.log1p(rest), exp / (1.0 + rest)[:, None]


def mse_loss(teacher, student) -> LossOutput:
    teacher, student = _check_batch(teacher, student)
    diff = student - teacher
    return LossOutput(float(np.sum(diff * diff)), 2.0 * diff)


def cos_loss(teacher, student) -> LossOutput:
    teacher, student = _check_batch(teacher, student)
    t_hat, _ = _unit_rows(teacher, "teacher")
    s_hat, s_norm = _unit_rows(student, "student")
    cos = np.sum(t_hat * s_hat, axis=1, keepdims=True)
    grad = -(t_hat - cos * s_hat) / s_norm
    return LossOutput(float(-cos.sum()), grad)


def contrastive_loss(teacher, student, cfg: ContrastiveConfig = ContrastiveConfig()):
    """InfoNCE with teacher anchors: row i is a softmax over all student rows j."""
    teacher, student = _check_batch(teacher, student)
    tau = cfg.temperature
    t_hat, _ = _unit_rows(teacher, "teacher")
    s_hat, s_norm = _unit_rows(student, "student")
    sim = t_hat @ s_hat.T  # sim[i, j] = cos(t_i, s_j)
    nll, g = _softmax_nll(sim / tau, np.arange(sim.shape[0]))
    value = float(np.sum(nll))

    # dL/dsim[i, j] = (softmax_ij - [i == j]) / tau
    g[np.diag_indices_from(g)] -= 1.0
    g /= tau
    radial = np.sum(g * sim, axis=0)[:, None]
    grad = (g.T @ t_hat - radial * s_hat) / s_norm
    return LossOutput(value, grad)


def aam_softmax_loss(student, labels, weights: ClassWeights, cfg: AamConfig = AamConfig(), epoch=0):
    """Additive angular margin softmax, averaged over the batch."""
    student = np.asarray(student)
    labels = np.asarray(labels, dtype=np.intp)
    W = weights.W
    N = student.shape[0]
    if student.ndim != 2 or labels.shape != (N,) or N < 1:
        raise DataError(f"need (N, D) embeddings and N labels, got {student.shape}, {labels.shape}")
    if W.shape[1] != student.shape[1]:
        raise DataError(f"class weights dim {W.shape[1]} != embedding dim {student.shape[1]}")
    C = W.shape[0]
    if labels.min() < 0 or labels.max() >= C:
        raise DataError(f"labels must lie in [0, {C}), got range [{labels.min()}, {labels.max()}]")
    m = cfg.effective_margin(epoch)
    s = cfg.scale

    x_hat, x_norm = _unit_rows(student, "student")
    w_hat, w_norm = _unit_rows(W, "class weight")
    cos = x_hat @ w_hat.T
    rows = np.arange(N)
    cos_y = cos[rows, labels]
    sin_y = np.sqrt(np.clip(1.0 - cos_y * cos_y, 0.0, 1.0))
    phi = cos_y * np.cos(m) - sin_y * np.sin(m)

    logits = s * cos
    logits[rows, labels] = s * phi
    nll, g_logits = _softmax_nll(logits, labels)
    value = float(nll.mean())

    g_logits[rows, labels] -= 1.0
    g_logits /= N
    g_cos = s * g_logits
    if m:
        dphi = np.cos(m) + np.sin(m) * cos_y / np.maximum(sin_y, NORM_EPS)
        g_cos[rows, labels] *= dphi

    # through the row normalizations of x and W
    g_xhat = g_cos @ w_hat
    g_what = g_cos.T @ x_hat
    grad_x = (g_xhat - np.sum(g_xhat * x_hat, axis=1, keepdims=True) * x_hat) / x_norm
    grad_w = (g_what - np.sum(g_what * w_hat, axis=1, keepdims=True) * w_hat) / w_norm
    return LossOutput(value, grad_x, grad_w)


DISTILL_LOSSES = ("mse", "cos", "contrastive")
ALL_LOSSES = DISTILL_LOSSES + ("aam",)


def distill_loss(kind, teacher, student, contrastive_cfg=ContrastiveConfig()) -> LossOutput:
    if kind == "mse":
        return mse_loss(teacher, student)
    if kind == "cos":
        return cos_loss(teacher, student)
    if kind == "contrastive":
        return contrastive_loss(teacher, student, contrastive_cfg)
    raise ConfigError(f"unknown distillation loss {kind!r}; choose from {', '.join(DISTILL_LOSSES)}")
