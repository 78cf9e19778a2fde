"""Shared helpers: the standard shifted two-moons pair and training probes."""

import numpy as np

from hda.datasets import ShiftSpec, apply_shift, gen_two_moons
from hda.divergence import train_softmax_classifier
from hda.engine import forward, new_mlp
from hda.seeding import seed_seq

# The reference benchmark used across the suite: two interleaved moons,
# target rotated a quarter-turn about its centroid.  Seed streams match
# the sweep runner so thresholds carry over.
BENCH_N = 1000
BENCH_NOISE = 0.1
BENCH_ROTATION = np.pi / 4


def benchmark_pair(seed):
    source = gen_two_moons(BENCH_N, BENCH_NOISE, seed_seq(seed, 20))
    raw = gen_two_moons(BENCH_N, BENCH_NOISE, seed_seq(seed, 21))
    target = apply_shift(raw, ShiftSpec(rotation=BENCH_ROTATION, seed=(seed, 0)))
    return source, target


def fit_probe(d, dims, *, epochs, seed=0):
    """Train a fresh softmax classifier on a dataset; return (net, train acc)."""
    net = new_mlp(dims, seed_seq(seed, 99))
    train_softmax_classifier(net, d.features, d.labels, epochs=epochs,
                             learning_rate=0.01, batch_size=64, seed=seed)
    return net, accuracy_of(net, d)


def accuracy_of(net, d):
    logits, _ = forward(net, d.features)
    return float(np.mean(np.argmax(logits, axis=1) == d.labels))
