"""Student-side input construction: random crops and SpecAugment.

All randomness comes from a caller-supplied ``numpy.random.Generator``; the
deterministic building blocks (``time_warp``, ``mask_freq``, ``mask_time``)
are exposed so that specific augmentations can be reproduced exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class AugmentConfig:
    crop_min_s: float = 2.0
    crop_max_s: float = 3.0
    n_freq_masks: int = 2
    max_freq_mask_bins: int = 10
    n_time_masks: int = 2
    max_time_mask_frames: int = 20
    max_time_mask_ratio: float = 0.05
    max_warp_frames: int = 5
    frame_shift_s: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.crop_min_s <= self.crop_max_s:
            raise ConfigError(
                f"need 0 < crop_min_s <= crop_max_s, got {self.crop_min_s}, {self.crop_max_s}"
            )
        for name in (
            "n_freq_masks",
            "max_freq_mask_bins",
            "n_time_masks",
            "max_time_mask_frames",
            "max_warp_frames",
        ):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 <= self.max_time_mask_ratio <= 1:
            raise ConfigError("max_time_mask_ratio must lie in [0, 1]")

    @property
    def crop_frames(self) -> tuple[int, int]:
        lo = max(1, int(round(self.crop_min_s / self.frame_shift_s)))
        hi = max(lo, int(round(self.crop_max_s / self.frame_shift_s)))
        return lo, hi


@dataclass
class AugmentStats:
    warps_applied: int = 0
    warps_skipped: int = 0


def draw_crop_length(cfg: AugmentConfig, rng: np.random.Generator) -> int:
    lo, hi = cfg.crop_frames
    return int(rng.integers(lo, hi, endpoint=True))


def random_crop(feats, cfg: AugmentConfig, rng, length=None, start=None):
    """Contiguous crop of ``length`` frames (drawn from the crop range if None).

    Utterances shorter than the crop are tiled along time from frame 0.
    """
    T = feats.shape[0]
    if T == 0:
        raise ConfigError("cannot crop an empty feature matrix")
    L = draw_crop_length(cfg, rng) if length is None else int(length)
    if L < 1:
        raise ConfigError(f"crop length must be >= 1, got {L}")
    if T < L:
        return feats[np.arange(L) % T]
    if start is None:
        start = int(rng.integers(0, T - L, endpoint=True))
    elif not 0 <= start <= T - L:
        raise ConfigError(f"crop start {start} outside [0, {T - L}]")
    return feats[start : start + L]


def time_warp(feats, pivot: int, shift: int):
    """Move frame ``pivot`` to ``pivot + shift``, linearly resampling both sides.

    Pivot and destination must be interior frames, so the first and last
    frames stay fixed.
    """
    T = feats.shape[0]
    if shift == 0:
        return feats.copy()
    dest = pivot + shift
    if not (0 < pivot < T - 1 and 0 < dest < T - 1):
        raise ConfigError(f"warp pivot {pivot} -> {dest} must stay inside (0, {T - 1})")
    i = np.arange(T, dtype=np.float64)
    left = i <= dest
    src = np.where(
        left,
        i * (pivot / dest),
        pivot + (i - dest) * ((T - 1 - pivot) / (T - 1 - dest)),
    )
    lo = np.clip(np.floor(src).astype(np.intp), 0, T - 1)
    hi = np.minimum(lo + 1, T - 1)
    frac = (src - lo).astype(feats.dtype)[:, None]
    return feats[lo] * (1 - frac) + feats[hi] * frac


def mask_freq(feats, start: int, width: int, inplace=False):
    out = feats if inplace else feats.copy()
    out[:, start : start + width] = 0.0
    return out


def mask_time(feats, start: int, width: int, inplace=False):
    out = feats if inplace else feats.copy()
    out[start : start + width] = 0.0
    return out


def spec_augment(feats, cfg: AugmentConfig, rng, stats: AugmentStats | None = None):
    """Time warp, then frequency masks, then time masks. Masked cells become 0.0."""
    T, D = feats.shape
    W = cfg.max_warp_frames
    out = feats
    if W > 0:
        if T >= 2 * W + 2:
            pivot = int(rng.integers(W, T - 1 - W, endpoint=True))
            shift = int(np.clip(rng.integers(-W, W, endpoint=True), 1 - pivot, T - 2 - pivot))
            out = time_warp(feats, pivot, shift)
            if stats is not None:
                stats.warps_applied += 1
        elif stats is not None:
            stats.warps_skipped += 1
    out = out.copy() if out is feats else out

    for _ in range(cfg.n_freq_masks):
        width = int(rng.integers(0, min(cfg.max_freq_mask_bins, D), endpoint=True))
        mask_freq(out, int(rng.integers(0, D - width, endpoint=True)), width, inplace=True)

    max_t = min(cfg.max_time_mask_frames, int(cfg.max_time_mask_ratio * T))
    for _ in range(cfg.n_time_masks):
        width = int(rng.integers(0, max_t, endpoint=True))
        mask_time(out, int(rng.integers(0, T - width, endpoint=True)), width, inplace=True)
    return out
