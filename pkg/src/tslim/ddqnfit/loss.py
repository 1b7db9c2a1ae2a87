"""Trajectory losses and the pinball ranking score."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import LengthMismatch, ValidationError


@dataclass(frozen=True)
class LossConfig:
    w_alpha: float = 1.0  # squared-error weight
    w_beta: float = 1e-3  # extremum-index weight (per sample of shift)
    w_p: float = 1.0
    w_q: float = 1.0

    def __post_init__(self):
        if min(self.w_alpha, self.w_beta) < 0 or (self.w_alpha == 0 and self.w_beta == 0):
            raise ValidationError("loss weights must be non-negative and not both zero")


@dataclass(frozen=True)
class PinballConfig:
    tau: float = 0.5
    quantile: float = 0.5

    def __post_init__(self):
        if not (0 < self.tau < 1 and 0 < self.quantile < 1):
            raise ValidationError("tau and quantile level must lie in (0, 1)")


def channel_loss(fit, ref, cfg: LossConfig):
    """Mean squared error plus the shift of the minimum and maximum sample.

    ``fit`` may be a batch ``(m, L)``; the result then has shape ``(m,)``.
    """
    fit = np.asarray(fit, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if fit.shape[-1] != ref.shape[-1]:
        raise LengthMismatch(f"trajectory lengths differ: {fit.shape[-1]} vs {ref.shape[-1]}")
    sq = np.mean((fit - ref) ** 2, axis=-1)
    shift = np.abs(np.argmin(fit, axis=-1) - np.argmin(ref)) + np.abs(np.argmax(fit, axis=-1) - np.argmax(ref))
    return cfg.w_alpha * sq + cfg.w_beta * shift


def trajectory_loss(fit_p, fit_q, ref_p, ref_q, cfg: LossConfig = LossConfig()):
    """P-channel plus Q-channel loss."""
    return cfg.w_p * channel_loss(fit_p, ref_p, cfg) + cfg.w_q * channel_loss(fit_q, ref_q, cfg)


def pinball(pred, actual, tau: float):
    diff = np.asarray(pred, dtype=float) - np.asarray(actual, dtype=float)
    return np.maximum(diff * tau, diff * (tau - 1))


def pinball_score(samples_p, samples_q, ref_p, ref_q, cfg: PinballConfig = PinballConfig()) -> float:
    """Mean pinball loss of the per-snapshot sample quantile against the reference.

    ``samples_*`` have shape ``(m, L)``; every snapshot of P and Q counts once.
    """
    qp = np.quantile(np.atleast_2d(samples_p), cfg.quantile, axis=0)
    qq = np.quantile(np.atleast_2d(samples_q), cfg.quantile, axis=0)
    losses = np.concatenate([pinball(qp, ref_p, cfg.tau), pinball(qq, ref_q, cfg.tau)])
    return float(np.mean(losses))


def rmse(fit, ref) -> float:
    fit = np.asarray(fit, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if fit.shape != ref.shape:
        raise LengthMismatch(f"trajectory shapes differ: {fit.shape} vs {ref.shape}")
    return float(np.sqrt(np.mean((fit - ref) ** 2)))
