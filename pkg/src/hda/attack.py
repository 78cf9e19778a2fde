"""Iterated targeted FGSM against a frozen domain discriminator.

Each step moves every sample by epsilon (l_inf) along the sign of the descent
direction of the cross-entropy toward the target domain label, then clips to
the valid feature range.  Iterating for k steps spends a total per-coordinate
budget of exactly k * epsilon; no projection back onto a single-step ball is
performed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import LabeledDataset
from .engine import Mlp, backward, forward, softmax_cross_entropy
from .errors import ConfigurationError, InputError


@dataclass(frozen=True)
class AttackConfig:
    """l_inf FGSM settings.  steps == 0 disables the attack (identity)."""

    epsilon: float = 0.01
    steps: int = 7
    norm: str = "l_inf"
    clip_min: float = 0.0
    clip_max: float = 1.0
    target_domain_label: int = 1

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigurationError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 0:
            raise ConfigurationError(f"steps must be >= 0, got {self.steps}")
        if self.norm != "l_inf":
            raise ConfigurationError(f"only the l_inf norm is supported, got {self.norm!r}")
        if not self.clip_min < self.clip_max:
            raise ConfigurationError(
                f"clip range is empty: [{self.clip_min}, {self.clip_max}]"
            )
        if self.target_domain_label not in (0, 1):
            raise ConfigurationError(
                f"target_domain_label must be 0 or 1, got {self.target_domain_label}"
            )


def _ball_bounds(center: np.ndarray, radius: float, clip_min: float,
                 clip_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Tightest float bounds b with |b - center| <= radius, then range-clipped.

    center + radius can round up past the true bound by half an ulp; one
    nextafter correction restores |bound - center| <= radius exactly.  The
    check itself is reliable because subtracting nearby floats is exact.
    """
    hi = center + radius
    over = hi - center > radius
    if np.any(over):
        hi = np.where(over, np.nextafter(hi, -np.inf), hi)
    lo = center - radius
    under = center - lo > radius
    if np.any(under):
        lo = np.where(under, np.nextafter(lo, np.inf), lo)
    return np.maximum(lo, clip_min), np.minimum(hi, clip_max)


def fgsm_step(h: Mlp, x, y_target, epsilon: float, clip_min: float = 0.0,
              clip_max: float = 1.0) -> np.ndarray:
    """One targeted step: x + epsilon * sign(-grad_x loss(h(x), y_target)).

    sign(0) is 0, so coordinates with zero gradient do not move; the result
    is clipped so that both |out - x| <= epsilon and the range constraint
    hold exactly per element.
    """
    if epsilon < 0:
        raise InputError(f"epsilon must be >= 0, got {epsilon}")
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != h.input_dim:
        raise ConfigurationError(
            f"input shape {x.shape} does not match classifier input dim {h.input_dim}"
        )
    logits, cache = forward(h, x)
    y = np.asarray(y_target)
    if y.shape == ():
        y = np.full(x.shape[0], int(y))
    _, d_logits = softmax_cross_entropy(logits, y)
    g = backward(h, cache, d_logits).input_grad
    lo, hi = _ball_bounds(x, epsilon, clip_min, clip_max)
    return np.clip(x + epsilon * np.sign(-g), lo, hi)


def generate_adversarial_domain(h: Mlp, s: LabeledDataset,
                                cfg: AttackConfig) -> LabeledDataset:
    """Attack every source row toward the target domain label.

    Applies fgsm_step cfg.steps times and additionally clips to the total
    budget ball |x - x0| <= steps * epsilon, which iterated stepping respects
    up to float rounding.  Class labels are carried over unchanged and the
    result is tagged "adversarial".
    """
    if h.output_dim != 2:
        raise ConfigurationError(
            f"the attacked classifier must emit 2 domain logits, got {h.output_dim}"
        )
    if s.dim != h.input_dim:
        raise ConfigurationError(
            f"dataset dim {s.dim} does not match classifier input dim {h.input_dim}"
        )
    x0 = s.features
    budget = cfg.steps * cfg.epsilon
    lo, hi = _ball_bounds(x0, budget, cfg.clip_min, cfg.clip_max)
    y = np.full(s.n, cfg.target_domain_label)
    x = x0
    for _ in range(cfg.steps):
        x = np.clip(fgsm_step(h, x, y, cfg.epsilon, cfg.clip_min, cfg.clip_max), lo, hi)
    return LabeledDataset(x.copy(), s.labels.copy(), "adversarial", s.class_count)


def attack_success_rate(h: Mlp, d: LabeledDataset, target_label: int) -> float:
    """Fraction of rows whose argmax domain prediction equals target_label.

    Ties resolve toward the lower class index.
    """
    if h.output_dim != 2:
        raise ConfigurationError(
            f"success rate is defined against a 2-class classifier, got {h.output_dim}"
        )
    preds = np.argmax(forward(h, d.features)[0], axis=1)
    return float((preds == int(target_label)).mean())
