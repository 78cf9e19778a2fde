"""Source classifier training and distance-based unsupervised adaptation.

The classifier splits into a feature extractor (first hidden layer) and a
label head so that DANN and MMD can align the extracted representations.
Adaptation never reads target labels: ``adapt`` takes a bare feature matrix.

Methods reduce exactly: with lambda_domain == 0 (dann) or mmd_weight == 0
(mmd) the extractor and label head follow the bitwise-identical trajectory of
source_only under the same seed, because batch orders are pure functions of
(seed, epoch) and the alignment term then contributes exactly nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import cycle
from pathlib import Path

import numpy as np

from .attack import AttackConfig, generate_adversarial_domain
from .datasets import BatchIterator, LabeledDataset
from .divergence import (DivergenceReport, HdhConfig, estimate_divergence,
                         train_softmax_classifier)
from .engine import (Gradients, Mlp, adam_init, adam_step, add_gradients,
                     backward, forward, grad_reversal, gradient_list,
                     mlp_parameters, new_mlp, read_components,
                     softmax_cross_entropy, write_components)
from .errors import ConfigurationError, FormatError, InputError
from .seeding import Seed, seed_seq

DA_METHODS = ("source_only", "dann", "mmd")
DEFAULT_HIDDEN = 64

# stream ids
_STREAM_EXTRACTOR = 0
_STREAM_LABEL_HEAD = 1
_STREAM_DOMAIN_HEAD = 2
_STREAM_PRETRAIN_SHUFFLE = 60
_STREAM_ADAPT_LABELED = 70
_STREAM_ADAPT_TARGET = 71


@dataclass
class SourceClassifier:
    """Extractor + label head, plus a domain head used only by DANN.

    The extractor is the first hidden layer (relu output); the label head is
    the remaining hidden layer and the output logits.
    """

    feature_extractor: Mlp
    label_head: Mlp
    domain_head: Mlp | None = None

    @property
    def input_dim(self) -> int:
        return self.feature_extractor.input_dim

    @property
    def class_count(self) -> int:
        return self.label_head.output_dim

    def stacked(self) -> Mlp:
        """Extractor and label head as one net sharing the same arrays."""
        return Mlp(self.feature_extractor.layers + self.label_head.layers)


def new_source_classifier(input_dim: int, class_count: int,
                          hidden: int = DEFAULT_HIDDEN, seed: Seed = 0,
                          with_domain_head: bool = True) -> SourceClassifier:
    """Seeded init; each component draws from its own stream so the presence
    of the domain head never perturbs the other components' weights."""
    if class_count < 2:
        raise ConfigurationError(f"need >= 2 classes, got {class_count}")
    extractor = new_mlp([input_dim, hidden], seed=seed_seq(seed, _STREAM_EXTRACTOR),
                        final_activation="relu")
    label_head = new_mlp([hidden, hidden, class_count],
                         seed=seed_seq(seed, _STREAM_LABEL_HEAD))
    domain_head = None
    if with_domain_head:
        domain_head = new_mlp([hidden, hidden, 2],
                              seed=seed_seq(seed, _STREAM_DOMAIN_HEAD))
    return SourceClassifier(extractor, label_head, domain_head)


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 10
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
class DAConfig:
    """Settings for one adaptation method.

    lambda_domain is the final reversal strength for dann; it ramps linearly
    from 0 to this value across the epochs.  mmd_bandwidths None means the
    median pairwise-distance heuristic times (0.5, 1, 2), recomputed per
    batch in representation space.
    """

    method: str = "source_only"
    epochs: int = 20
    learning_rate: float = 0.01
    lambda_domain: float = 1.0
    mmd_weight: float = 1.0
    mmd_bandwidths: tuple[float, ...] | None = None
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.method not in DA_METHODS:
            raise ConfigurationError(
                f"method must be one of {DA_METHODS}, got {self.method!r}"
            )
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.lambda_domain < 0:
            raise ConfigurationError(f"lambda_domain must be >= 0, got {self.lambda_domain}")
        if self.mmd_weight < 0:
            raise ConfigurationError(f"mmd_weight must be >= 0, got {self.mmd_weight}")
        if self.mmd_bandwidths is not None:
            bws = tuple(float(b) for b in self.mmd_bandwidths)
            if not bws or any(b <= 0 for b in bws):
                raise ConfigurationError(
                    f"mmd_bandwidths must be positive, got {self.mmd_bandwidths}"
                )
            object.__setattr__(self, "mmd_bandwidths", bws)
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}")


def pretrain(f: SourceClassifier, labeled: LabeledDataset,
             cfg: PretrainConfig) -> SourceClassifier:
    """Cross-entropy training of extractor + label head on a labeled domain."""
    if labeled.dim != f.input_dim:
        raise ConfigurationError(
            f"dataset dim {labeled.dim} does not match classifier input {f.input_dim}"
        )
    if labeled.class_count != f.class_count:
        raise ConfigurationError(
            f"dataset has {labeled.class_count} classes, classifier expects {f.class_count}"
        )
    train_softmax_classifier(
        f.stacked(), labeled.features, labeled.labels,
        epochs=cfg.epochs, learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size, seed=seed_seq(cfg.seed, _STREAM_PRETRAIN_SHUFFLE),
    )
    return f


# --------------------------------------------------------------------------
# Maximum mean discrepancy
# --------------------------------------------------------------------------


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def _check_mmd_args(a, b, bandwidths):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise InputError(f"samples must be 2-d with equal dims, got {a.shape} / {b.shape}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise InputError(
            f"the unbiased estimate needs >= 2 rows per set, got "
            f"{a.shape[0]} / {b.shape[0]}"
        )
    bws = tuple(float(s) for s in bandwidths)
    if not bws or any(s <= 0 for s in bws):
        raise InputError(f"bandwidths must be positive, got {bandwidths}")
    return a, b, bws


def mmd2(a, b, bandwidths) -> float:
    """Unbiased squared MMD with Gaussian kernels, summed over bandwidths.

    For each sigma the kernel is exp(-||u - v||^2 / (2 sigma^2)) and the
    U-statistic drops the diagonal terms, so the estimate can be slightly
    negative for close distributions.
    """
    a, b, bws = _check_mmd_args(a, b, bandwidths)
    m, n = a.shape[0], b.shape[0]
    daa = _pairwise_sq_dists(a, a)
    dbb = _pairwise_sq_dists(b, b)
    dab = _pairwise_sq_dists(a, b)
    total = 0.0
    for sigma in bws:
        scale = 2.0 * sigma * sigma
        kaa = np.exp(-daa / scale)
        kbb = np.exp(-dbb / scale)
        kab = np.exp(-dab / scale)
        total += (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
        total += (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
        total -= 2.0 * kab.mean()
    return float(total)


def mmd2_grad(a, b, bandwidths) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of mmd2 with respect to both sample matrices."""
    a, b, bws = _check_mmd_args(a, b, bandwidths)
    m, n = a.shape[0], b.shape[0]
    daa = _pairwise_sq_dists(a, a)
    dbb = _pairwise_sq_dists(b, b)
    dab = _pairwise_sq_dists(a, b)
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    for sigma in bws:
        s2 = sigma * sigma
        kaa = np.exp(-daa / (2.0 * s2))
        np.fill_diagonal(kaa, 0.0)
        kbb = np.exp(-dbb / (2.0 * s2))
        np.fill_diagonal(kbb, 0.0)
        kab = np.exp(-dab / (2.0 * s2))
        # within-set pairs appear twice; d k(u, v)/du = k * (v - u) / sigma^2
        ga += (2.0 / (m * (m - 1) * s2)) * (kaa @ a - kaa.sum(axis=1)[:, None] * a)
        ga -= (2.0 / (m * n * s2)) * (kab @ b - kab.sum(axis=1)[:, None] * a)
        gb += (2.0 / (n * (n - 1) * s2)) * (kbb @ b - kbb.sum(axis=1)[:, None] * b)
        gb -= (2.0 / (m * n * s2)) * (kab.T @ a - kab.sum(axis=0)[:, None] * b)
    return ga, gb


def median_heuristic_bandwidths(x, scales=(0.5, 1.0, 2.0)) -> tuple[float, ...]:
    """Median pairwise distance of x, scaled; falls back to 1.0 if degenerate."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    d = np.sqrt(_pairwise_sq_dists(x, x))
    off = d[~np.eye(len(x), dtype=bool)]
    med = float(np.median(off)) if off.size else 0.0
    if med <= 0.0:
        med = 1.0
    return tuple(med * s for s in scales)


# --------------------------------------------------------------------------
# Adaptation
# --------------------------------------------------------------------------


def _dann_lambda(lambda_max: float, epoch: int, epochs: int) -> float:
    if epochs <= 1:
        return lambda_max
    return lambda_max * (epoch / (epochs - 1))


def adapt(f: SourceClassifier, labeled: LabeledDataset, target_features,
          cfg: DAConfig) -> SourceClassifier:
    """Run one adaptation method over the labeled domain and unlabeled target.

    Only target *features* enter; there is no way to pass target labels.
    """
    if labeled.dim != f.input_dim:
        raise ConfigurationError(
            f"dataset dim {labeled.dim} does not match classifier input {f.input_dim}"
        )
    if labeled.class_count != f.class_count:
        raise ConfigurationError(
            f"dataset has {labeled.class_count} classes, classifier expects {f.class_count}"
        )
    target = np.ascontiguousarray(target_features, dtype=np.float64)
    if target.ndim != 2 or target.shape[1] != f.input_dim:
        raise ConfigurationError(
            f"target features shape {target.shape} does not match input dim {f.input_dim}"
        )
    if cfg.method == "dann" and f.domain_head is None:
        raise ConfigurationError("dann needs a classifier with a domain head")
    if cfg.method == "mmd" and cfg.batch_size < 2:
        raise ConfigurationError("mmd needs batch_size >= 2 for the unbiased estimate")

    extractor, label_head, domain_head = f.feature_extractor, f.label_head, f.domain_head
    x, y = labeled.features, labeled.labels
    labeled_batches = BatchIterator(labeled.n, cfg.batch_size,
                                    seed_seq(cfg.seed, _STREAM_ADAPT_LABELED))
    target_batches = BatchIterator(len(target), cfg.batch_size,
                                   seed_seq(cfg.seed, _STREAM_ADAPT_TARGET))

    params = mlp_parameters(extractor) + mlp_parameters(label_head)
    if cfg.method == "dann":
        params += mlp_parameters(domain_head)
    state = adam_init(params, cfg.learning_rate)

    for epoch in range(cfg.epochs):
        lam = _dann_lambda(cfg.lambda_domain, epoch, cfg.epochs)
        # the target iterator is consumed only by the aligning methods, and
        # never influences the labeled batch order
        targets = (cycle(target_batches.epoch_batches(epoch))
                   if cfg.method != "source_only" else None)
        for idx in labeled_batches.epoch_batches(epoch):
            feats, cache_ext = forward(extractor, x[idx])
            logits, cache_head = forward(label_head, feats)
            _, d_logits = softmax_cross_entropy(logits, y[idx])
            g_head = backward(label_head, cache_head, d_logits)
            d_feats = g_head.input_grad
            g_domain: Gradients | None = None
            g_ext_target: Gradients | None = None

            if cfg.method == "dann":
                t_idx = next(targets)
                feats_t, cache_ext_t = forward(extractor, target[t_idx])
                dom_in = np.vstack([feats, feats_t])
                dom_labels = np.concatenate([
                    np.zeros(len(feats), dtype=np.int64),
                    np.ones(len(feats_t), dtype=np.int64),
                ])
                dom_logits, cache_dom = forward(domain_head, dom_in)
                _, d_dom = softmax_cross_entropy(dom_logits, dom_labels)
                g_domain = backward(domain_head, cache_dom, d_dom)
                if lam != 0.0:
                    # the head minimizes domain loss; the extractor sees the
                    # reversed gradient and maximizes it
                    rev = grad_reversal(g_domain.input_grad, lam)
                    d_feats = d_feats + rev[:len(feats)]
                    g_ext_target = backward(extractor, cache_ext_t, rev[len(feats):])
            elif cfg.method == "mmd" and cfg.mmd_weight != 0.0:
                t_idx = next(targets)
                if len(idx) >= 2 and len(t_idx) >= 2:
                    feats_t, cache_ext_t = forward(extractor, target[t_idx])
                    bws = cfg.mmd_bandwidths
                    if bws is None:
                        bws = median_heuristic_bandwidths(np.vstack([feats, feats_t]))
                    ga, gb = mmd2_grad(feats, feats_t, bws)
                    d_feats = d_feats + cfg.mmd_weight * ga
                    g_ext_target = backward(extractor, cache_ext_t, cfg.mmd_weight * gb)

            g_ext = backward(extractor, cache_ext, d_feats)
            if g_ext_target is not None:
                add_gradients(g_ext, g_ext_target)
            grad_arrays = gradient_list(g_ext) + gradient_list(g_head)
            if cfg.method == "dann":
                grad_arrays += gradient_list(g_domain)
            adam_step(params, grad_arrays, state)
    return f


# --------------------------------------------------------------------------
# Evaluation and the full pipeline
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    """Argmax accuracy (exact fraction) plus per-class accuracies.

    Classes absent from the dataset evaluate to nan.
    """

    accuracy: float
    per_class: tuple[float, ...]


def evaluate(f: SourceClassifier, d: LabeledDataset) -> EvalReport:
    if d.dim != f.input_dim:
        raise ConfigurationError(
            f"dataset dim {d.dim} does not match classifier input {f.input_dim}"
        )
    preds = np.argmax(forward(f.stacked(), d.features)[0], axis=1)
    correct = preds == d.labels
    per_class = []
    for c in range(d.class_count):
        mask = d.labels == c
        per_class.append(float(correct[mask].mean()) if mask.any() else float("nan"))
    return EvalReport(float(correct.mean()), tuple(per_class))


@dataclass(frozen=True)
class VariantResult:
    classifier: SourceClassifier
    eval_source: EvalReport
    eval_target: EvalReport


@dataclass(frozen=True)
class PipelineResult:
    """Both arms of one run: adversarially translated training vs plain."""

    hda: VariantResult
    baseline: VariantResult
    adversarial: LabeledDataset
    divergence_source_target: DivergenceReport
    divergence_adversarial_target: DivergenceReport


def hda_pipeline(s: LabeledDataset, t: LabeledDataset, hdh: HdhConfig,
                 atk: AttackConfig, pre: PretrainConfig,
                 da: DAConfig) -> PipelineResult:
    """Full run: discriminate domains, attack the source toward the target,
    then pretrain + adapt once on the attacked source and once on the raw
    source with identical seeds.

    With the attack disabled (steps == 0) both arms are bit-identical.
    Divergences are re-estimated with freshly trained held-out
    discriminators for both the raw and the attacked source.
    """
    if s.dim != t.dim:
        raise ConfigurationError(f"feature dims differ: {s.dim} vs {t.dim}")
    d_st, h = estimate_divergence(s, t, hdh)
    adversarial = generate_adversarial_domain(h, s, atk)
    d_at, _ = estimate_divergence(adversarial, t, hdh)

    def run_variant(labeled: LabeledDataset) -> VariantResult:
        f = new_source_classifier(s.dim, s.class_count, seed=pre.seed)
        pretrain(f, labeled, pre)
        adapt(f, labeled, t.features, da)
        return VariantResult(f, evaluate(f, s), evaluate(f, t))

    return PipelineResult(
        hda=run_variant(adversarial),
        baseline=run_variant(s),
        adversarial=adversarial,
        divergence_source_target=d_st,
        divergence_adversarial_target=d_at,
    )


# --------------------------------------------------------------------------
# Persistence: a source classifier is a named-component model file
# --------------------------------------------------------------------------


def save_source_classifier(f: SourceClassifier, path) -> None:
    components = {"extractor": f.feature_extractor, "label_head": f.label_head}
    if f.domain_head is not None:
        components["domain_head"] = f.domain_head
    write_components(path, components)


def load_source_classifier(path) -> SourceClassifier:
    components = read_components(path)
    required = {"extractor", "label_head"}
    if not required <= set(components):
        raise FormatError(
            f"{path}: classifier file must contain components {sorted(required)}, "
            f"found {sorted(components)}"
        )
    return SourceClassifier(
        components["extractor"], components["label_head"], components.get("domain_head")
    )
