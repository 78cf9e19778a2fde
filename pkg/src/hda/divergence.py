"""Domain divergence via a trained discriminator and the proxy A-distance.

A binary MLP separates source rows (domain label 0) from target rows (domain
label 1); its balanced held-out error e maps to the proxy A-distance
2 * (1 - 2e).  Unclamped: a discriminator at chance gives 0, a perfect one
gives 2, and worse-than-chance errors go negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import BatchIterator, LabeledDataset, subset
from .engine import (Mlp, adam_init, adam_step, backward, forward,
                     gradient_list, mlp_parameters, new_mlp,
                     softmax_cross_entropy)
from .errors import ConfigurationError, InputError
from .seeding import Seed, seed_seq

DEFAULT_HIDDEN = (64, 64)

# stream ids for the independent random consumers below
_STREAM_INIT = 50
_STREAM_SHUFFLE = 51
_STREAM_SUBSAMPLE = 52
_STREAM_SPLIT = 53


@dataclass(frozen=True)
class HdhConfig:
    """Training settings for the domain discriminator."""

    epochs: int = 5
    learning_rate: float = 0.01
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}")


@dataclass(frozen=True)
class DivergenceReport:
    domain_error: float
    proxy_a_distance: float
    n_source: int
    n_target: int


def train_softmax_classifier(net: Mlp, features, labels, *, epochs: int,
                             learning_rate: float, batch_size: int,
                             seed: Seed) -> None:
    """Generic seeded cross-entropy training loop (Adam), in place."""
    if net.layers[-1].activation != "identity":
        raise ConfigurationError("classifier output layer must be identity (pre-softmax)")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    batches = BatchIterator(len(features), batch_size, seed)
    params = mlp_parameters(net)
    state = adam_init(params, learning_rate)
    for epoch in range(epochs):
        for idx in batches.epoch_batches(epoch):
            logits, cache = forward(net, features[idx])
            _, d_logits = softmax_cross_entropy(logits, labels[idx])
            grads = backward(net, cache, d_logits)
            adam_step(params, gradient_list(grads), state)


def train_domain_classifier(s: LabeledDataset, t: LabeledDataset, cfg: HdhConfig,
                            hidden=DEFAULT_HIDDEN) -> Mlp:
    """Train a fresh 2-class discriminator on source (0) vs target (1) rows.

    Each epoch the larger domain is subsampled to the smaller one's size so
    every gradient step sees a balanced union.
    """
    if s.dim != t.dim:
        raise ConfigurationError(f"feature dims differ: {s.dim} vs {t.dim}")
    net = new_mlp([s.dim, *hidden, 2], seed=seed_seq(cfg.seed, _STREAM_INIT))
    n_common = min(s.n, t.n)
    params = mlp_parameters(net)
    state = adam_init(params, cfg.learning_rate)
    base = np.arange(n_common)
    for epoch in range(cfg.epochs):
        if s.n == t.n:
            si = ti = base
        else:
            rng = np.random.default_rng(seed_seq(cfg.seed, _STREAM_SUBSAMPLE, epoch))
            si = rng.choice(s.n, n_common, replace=False) if s.n > n_common else base
            ti = rng.choice(t.n, n_common, replace=False) if t.n > n_common else base
        feats = np.vstack([s.features[si], t.features[ti]])
        doms = np.concatenate([
            np.zeros(n_common, dtype=np.int64), np.ones(n_common, dtype=np.int64)
        ])
        order = np.random.default_rng(
            seed_seq(cfg.seed, _STREAM_SHUFFLE, epoch)
        ).permutation(2 * n_common)
        for start in range(0, 2 * n_common, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, cache = forward(net, feats[idx])
            _, d_logits = softmax_cross_entropy(logits, doms[idx])
            grads = backward(net, cache, d_logits)
            adam_step(params, gradient_list(grads), state)
    return net


def domain_error(h: Mlp, s_eval: LabeledDataset, t_eval: LabeledDataset) -> float:
    """Balanced misclassification rate: mean of the two per-domain error rates.

    Predictions are argmax over the 2 domain logits, ties resolved toward the
    lower class index (i.e. source).
    """
    if h.output_dim != 2:
        raise ConfigurationError(f"domain classifier must emit 2 logits, got {h.output_dim}")
    preds_s = np.argmax(forward(h, s_eval.features)[0], axis=1)
    preds_t = np.argmax(forward(h, t_eval.features)[0], axis=1)
    return float(0.5 * ((preds_s != 0).mean() + (preds_t != 1).mean()))


def proxy_a_distance(err: float) -> float:
    """Map a balanced domain error in [0, 1] to 2 * (1 - 2 * err), unclamped."""
    err = float(err)
    if not 0.0 <= err <= 1.0:
        raise InputError(f"domain error must lie in [0, 1], got {err}")
    return 2.0 * (1.0 - 2.0 * err)


def estimate_divergence(s: LabeledDataset, t: LabeledDataset, cfg: HdhConfig,
                        hidden=DEFAULT_HIDDEN) -> tuple[DivergenceReport, Mlp]:
    """Hold out 20% of each domain, train on the rest, report held-out error.

    Returns the report together with the trained (now frozen) discriminator.
    """
    if s.n < 2 or t.n < 2:
        raise InputError(
            f"need >= 2 rows per domain to split, got {s.n} source / {t.n} target"
        )

    def split(d: LabeledDataset, stream: int):
        order = np.random.default_rng(
            seed_seq(cfg.seed, _STREAM_SPLIT, stream)
        ).permutation(d.n)
        cut = min(d.n - 1, max(1, int(round(0.8 * d.n))))
        return subset(d, order[:cut]), subset(d, order[cut:])

    s_train, s_held = split(s, 0)
    t_train, t_held = split(t, 1)
    h = train_domain_classifier(s_train, t_train, cfg, hidden)
    err = domain_error(h, s_held, t_held)
    return DivergenceReport(err, proxy_a_distance(err), s.n, t.n), h
