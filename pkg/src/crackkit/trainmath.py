"""Segmentation losses and learning-rate schedules.

Every function here is a reference oracle: losses operate on one
(mask, map) pair, batch reduction is the caller's concern, and nothing is
differentiable. Inputs may be BinaryMask/ProbabilityMap wrappers or plain
arrays of matching shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import BinaryMask, ProbabilityMap


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 1.0
    dice_numerator_factor: int = 2
    clamp: float = 1e-7

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.dice_numerator_factor not in (1, 2):
            raise ValueError("dice_numerator_factor must be 1 or 2")
        if not 0.0 < self.clamp < 0.5:
            raise ValueError(f"clamp must be in (0, 0.5), got {self.clamp}")


@dataclass(frozen=True)
class TverskyConfig:
    alpha: float = 0.01
    beta: float = 0.99

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")


@dataclass(frozen=True)
class ScheduleConfig:
    lambda_initial: float = 0.001
    gamma: float = 0.99
    k: float = 0.7
    n_stages: int = 4
    weight_decay: float = 1e-5

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 < self.k <= 1.0:
            raise ValueError(f"k must be in (0, 1], got {self.k}")
        if self.n_stages < 1:
            raise ValueError(f"n_stages must be >= 1, got {self.n_stages}")


@dataclass(frozen=True)
class DeepSupervisionWeights:
    w: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(float(x) for x in self.w))
        if any(x < 0 for x in self.w):
            raise ValueError("companion weights must be non-negative")


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    ya = y.pixels.astype(np.float64) if isinstance(y, BinaryMask) else np.asarray(y, dtype=np.float64)
    pa = yhat.values if isinstance(yhat, ProbabilityMap) else np.asarray(yhat, dtype=np.float64)
    if ya.shape != pa.shape:
        raise ValueError(f"mask and map shapes differ: {ya.shape} vs {pa.shape}")
    return ya, pa


def bce_loss(y, yhat, cfg: LossConfig = LossConfig()) -> float:
    """Pixel-mean binary cross entropy with clamped probabilities."""
    ya, pa = _pair(y, yhat)
    p = np.clip(pa, cfg.clamp, 1.0 - cfg.clamp)
    return float(-np.mean(ya * np.log(p) + (1.0 - ya) * np.log(1.0 - p)))


def dice_loss(y, yhat, cfg: LossConfig = LossConfig()) -> float:
    """1 - (c*sum(y*yhat) + eps) / (sum(y) + sum(yhat) + eps)."""
    ya, pa = _pair(y, yhat)
    c = cfg.dice_numerator_factor
    return float(1.0 - (c * np.sum(ya * pa) + cfg.epsilon)
                 / (np.sum(ya) + np.sum(pa) + cfg.epsilon))


def dice_bce_loss(y, yhat, cfg: LossConfig = LossConfig()) -> float:
    return bce_loss(y, yhat, cfg) + dice_loss(y, yhat, cfg)


def invert(y):
    """Label inversion: crack and background swap roles."""
    ya = y.pixels if isinstance(y, BinaryMask) else np.asarray(y)
    if ya.dtype == bool:
        return ~ya
    return 1.0 - np.asarray(ya, dtype=np.float64)


def inversion_loss(y, yhat, cfg: LossConfig = LossConfig()) -> float:
    """Combined loss, evaluated on inverted labels for background-only masks.

    Inverting makes every pixel of a background patch a positive, so false
    positives move the Dice term instead of vanishing into it.
    """
    ya, pa = _pair(y, yhat)
    if ya.sum() == 0:
        return dice_bce_loss(1.0 - ya, 1.0 - pa, cfg)
    return dice_bce_loss(ya, pa, cfg)


def tversky_loss(y, yhat, tcfg: TverskyConfig = TverskyConfig(),
                 cfg: LossConfig = LossConfig()) -> float:
    """Tversky loss weighting false positives by alpha, false negatives by beta."""
    ya, pa = _pair(y, yhat)
    tp = np.sum(ya * pa)
    fp = np.sum((1.0 - ya) * pa)
    fn = np.sum(ya * (1.0 - pa))
    return float(1.0 - (tp + cfg.epsilon)
                 / (tp + tcfg.alpha * fp + tcfg.beta * fn + cfg.epsilon))


def deep_supervision_total(target_loss: float, companion_losses,
                           weights: DeepSupervisionWeights | None = None) -> float:
    """Target loss plus weighted companion losses (default weights all 1)."""
    companions = [float(x) for x in companion_losses]
    if weights is None:
        weights = DeepSupervisionWeights((1.0,) * len(companions))
    if len(weights.w) != len(companions):
        raise ValueError(f"{len(companions)} companion losses but {len(weights.w)} weights")
    return float(target_loss) + sum(w * c for w, c in zip(weights.w, companions))


def lr_at_epoch(cfg: ScheduleConfig, epoch: int) -> float:
    """Exponential decay: lambda_initial * gamma**epoch."""
    if not isinstance(epoch, (int, np.integer)) or epoch < 0:
        raise ValueError(f"epoch must be a non-negative integer, got {epoch!r}")
    return cfg.lambda_initial * cfg.gamma ** int(epoch)


def lr_at_stage(lam: float, cfg: ScheduleConfig, stage_n: int) -> float:
    """Stage-wise rate lambda * k**(N+1-n); deeper stages (small n) decay more."""
    if not 1 <= stage_n <= cfg.n_stages:
        raise ValueError(f"stage_n must be in [1, {cfg.n_stages}], got {stage_n}")
    return lam * cfg.k ** (cfg.n_stages + 1 - stage_n)
