"""Acceptance gate: ten numbered release criteria, one test each.

Every test prints one ``[criterion NN] PASS/FAIL`` line (visible with
``pytest -s``; ``pytest -v`` additionally shows one PASSED/FAILED row per
criterion).  Each criterion enforces its own wall-clock budget, so this
module doubles as a performance smoke test.  Tolerances are pinned here
and nowhere else; do not loosen them to make a failure go away.
"""

import json
import shutil
import struct
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import benchmark_pair
from hda.adaptation import (
    DAConfig,
    PretrainConfig,
    adapt,
    evaluate,
    hda_pipeline,
    mmd2,
    new_source_classifier,
    pretrain,
)
from hda.attack import AttackConfig, fgsm_step, generate_adversarial_domain
from hda.datasets import LabeledDataset, ShiftSpec, gen_two_moons, load_idx
from hda.divergence import HdhConfig, estimate_divergence, proxy_a_distance
from hda.engine import Layer, Mlp, backward, forward, new_mlp, softmax_cross_entropy
from hda.errors import FormatError
from hda.runner import (
    BenchmarkSpec,
    ExperimentConfig,
    emit_table,
    load_run_report,
    run_experiment,
)


@contextmanager
def criterion(num, title, budget_s):
    start = time.perf_counter()
    ok = False
    try:
        yield
        elapsed = time.perf_counter() - start
        assert elapsed < budget_s, \
            f"criterion {num} took {elapsed:.1f}s, budget is {budget_s}s"
        ok = True
        print(f"[criterion {num:02d}] PASS {title} ({elapsed:.1f}s)")
    finally:
        if not ok:
            print(f"[criterion {num:02d}] FAIL {title}")


def head_bytes(f):
    nets = [f.feature_extractor, f.label_head]
    return b"".join(l.weight.tobytes() + l.bias.tobytes()
                    for net in nets for l in net.layers)


def target_loss(net, x, label):
    logits, _ = forward(net, x)
    return softmax_cross_entropy(logits, np.full(len(x), label))[0]


def kink_margin(net, x):
    """Smallest |pre-activation| over the hidden layers for batch x.

    Finite differences are only a valid derivative probe away from the
    piecewise-linear kinks, so instances are rejection-sampled until every
    hidden unit clears a margin no parameter nudge of size h can cross.
    """
    a = x
    margin = np.inf
    for layer in net.layers[:-1]:
        z = a @ layer.weight.T + layer.bias
        margin = min(margin, float(np.abs(z).min()))
        a = np.maximum(z, 0.0)
    return margin


def test_criterion_01_gradients_match_finite_differences():
    """Analytic backprop vs central differences on 50 random instances."""
    with criterion(1, "finite-difference gradient checks", 5.0):
        rng = np.random.default_rng(101)
        h = 1e-5
        for trial in range(50):
            n_layers = int(rng.integers(1, 4))
            dims = [int(rng.integers(2, 7))]
            dims += [int(rng.integers(2, 17)) for _ in range(n_layers - 1)]
            dims += [int(rng.integers(2, 6))]
            net = new_mlp(dims, seed=[101, trial])
            for layer in net.layers:
                layer.bias[:] = rng.normal(scale=0.3, size=layer.bias.shape)
            n = int(rng.integers(1, 9))
            labels = rng.integers(0, dims[-1], size=n)
            for _ in range(100):
                x = rng.uniform(0, 1, (n, dims[0]))
                if kink_margin(net, x) > 1e-3:
                    break
            else:
                raise AssertionError("no kink-free batch found")

            logits, cache = forward(net, x)
            _, d_logits = softmax_cross_entropy(logits, labels)
            grads = backward(net, cache, d_logits)

            def fd_of(arr):
                out = np.zeros_like(arr)
                flat, fout = arr.ravel(), out.ravel()
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + h
                    hi = softmax_cross_entropy(forward(net, x)[0], labels)[0]
                    flat[i] = orig - h
                    lo = softmax_cross_entropy(forward(net, x)[0], labels)[0]
                    flat[i] = orig
                    fout[i] = (hi - lo) / (2 * h)
                return out

            checked = [(grads.input_grad, fd_of(x))]
            for li, layer in enumerate(net.layers):
                checked.append((grads.weights[li], fd_of(layer.weight)))
                checked.append((grads.biases[li], fd_of(layer.bias)))
            for got, fd in checked:
                assert np.all(np.abs(got - fd) <= 1e-6 + 1e-4 * np.abs(fd))


def test_criterion_02_attack_budget_is_exact():
    """1000 attacked rows: |delta| <= 7 * 0.01 per coordinate, in [0, 1];
    a zero-epsilon attack is a bit-identical no-op."""
    with criterion(2, "attack perturbation budget", 2.0):
        rng = np.random.default_rng(202)
        h = new_mlp([4, 32, 2], seed=202)
        x = rng.uniform(0, 1, (1000, 4))
        d = LabeledDataset(x, rng.integers(0, 2, size=1000), "source", 2)

        adv = generate_adversarial_domain(h, d, AttackConfig(epsilon=0.01, steps=7))
        delta = np.abs(adv.features - x)
        assert np.all(delta <= 0.07)
        assert adv.features.min() >= 0.0 and adv.features.max() <= 1.0
        assert delta.max() > 0.0  # the attack actually moved something

        frozen = generate_adversarial_domain(h, d, AttackConfig(epsilon=0.0, steps=7))
        assert frozen.features.tobytes() == x.tobytes()


def test_criterion_03_linear_models_descend_strictly():
    """On linear 2-class models every step strictly lowers the target-label
    cross-entropy, except where the gradient vanishes or the box binds."""
    with criterion(3, "strict descent for linear models", 1.0):
        grid = np.stack(np.meshgrid(np.linspace(0.05, 0.95, 10),
                                    np.linspace(0.05, 0.95, 10)),
                        axis=-1).reshape(-1, 2)
        models = {
            "moderate": Mlp([Layer(np.array([[2.0, -1.0], [-2.0, 1.0]]),
                                   np.array([0.1, -0.1]))]),
            "steep": Mlp([Layer(np.array([[30.0, 10.0], [-30.0, -10.0]]),
                                np.zeros(2))]),
            "flat": Mlp([Layer(np.zeros((2, 2)), np.zeros(2))]),
        }
        strict_checks = 0
        for net in models.values():
            for row in grid:
                x = row[None, :]
                for _ in range(7):
                    logits, cache = forward(net, x)
                    _, d_logits = softmax_cross_entropy(logits, np.array([1]))
                    g = backward(net, cache, d_logits).input_grad
                    before = target_loss(net, x, 1)
                    x_next = fgsm_step(net, x, 1, 0.01)
                    free = (np.all(np.abs(x_next - x) > 0)
                            and np.all(x_next > 0.0) and np.all(x_next < 1.0))
                    if not np.all(g == 0.0) and free:
                        assert target_loss(net, x_next, 1) < before
                        strict_checks += 1
                    x = x_next
        assert strict_checks >= 1000  # the exemptions must not hollow it out


def test_criterion_04_divergence_endpoints_and_null():
    """Exact anchor values of the error-to-distance map, and a near-zero
    estimate when both domains are drawn from the same distribution."""
    with criterion(4, "divergence endpoints and null calibration", 30.0):
        assert proxy_a_distance(0.0) == 2.0
        assert proxy_a_distance(0.25) == 1.0
        assert proxy_a_distance(0.5) == 0.0

        within = 0
        for seed in range(5):
            a = gen_two_moons(1000, 0.1, [seed, 20])
            b = gen_two_moons(1000, 0.1, [seed, 21])
            b = LabeledDataset(b.features, b.labels, "target", 2)
            report, _ = estimate_divergence(a, b, HdhConfig(seed=seed))
            if abs(report.proxy_a_distance) <= 0.2:
                within += 1
        assert within >= 4


def test_criterion_05_attack_moves_the_source_toward_the_target():
    """Across 5 seeds the translated domain sits measurably closer to the
    target than the raw source does."""
    with criterion(5, "translated domain reduces divergence", 120.0):
        gaps = []
        closer = 0
        for seed in range(5):
            s, t = benchmark_pair(seed)
            d_st, h = estimate_divergence(s, t, HdhConfig(seed=seed))
            adv = generate_adversarial_domain(h, s, AttackConfig())
            d_at, _ = estimate_divergence(adv, t, HdhConfig(seed=seed))
            gap = d_st.proxy_a_distance - d_at.proxy_a_distance
            gaps.append(gap)
            if d_at.proxy_a_distance < d_st.proxy_a_distance:
                closer += 1
        assert closer >= 4
        assert float(np.median(gaps)) >= 0.05


def test_criterion_06_training_on_the_translated_domain_helps():
    """Across 5 seeds: pretraining on the translated domain transfers at
    least as well on average, and the adversarial-alignment method keeps
    (median: improves) its target accuracy when fed the translated domain."""
    with criterion(6, "translated training improves target accuracy", 600.0):
        pre_attacked, pre_raw = [], []
        dann_hda, dann_base = [], []
        for seed in range(5):
            s, t = benchmark_pair(seed)
            result = hda_pipeline(s, t, HdhConfig(seed=seed), AttackConfig(),
                                  PretrainConfig(seed=seed),
                                  DAConfig(method="dann", seed=seed))
            dann_hda.append(result.hda.eval_target.accuracy)
            dann_base.append(result.baseline.eval_target.accuracy)

            for bucket, labeled in ((pre_attacked, result.adversarial),
                                    (pre_raw, s)):
                f = new_source_classifier(s.dim, s.class_count, seed=seed)
                pretrain(f, labeled, PretrainConfig(seed=seed))
                bucket.append(evaluate(f, t).accuracy)

        assert float(np.mean(pre_attacked)) >= float(np.mean(pre_raw))
        gains = np.array(dann_hda) - np.array(dann_base)
        assert float(np.mean(dann_hda)) >= float(np.mean(dann_base)) - 0.01
        assert float(np.median(gains)) > 0.0


def test_criterion_07_zero_weight_methods_reduce_to_plain_training():
    """With the alignment term at zero strength, both aligning methods must
    reproduce the plain trajectory bit for bit, at every depth probed."""
    with criterion(7, "zero-weight reductions are bit-identical", 30.0):
        s, t = benchmark_pair(0)

        def adapted(method, epochs, **kwargs):
            f = new_source_classifier(s.dim, s.class_count, seed=0)
            pretrain(f, s, PretrainConfig(seed=0))
            adapt(f, s, t.features,
                  DAConfig(method=method, epochs=epochs, seed=0, **kwargs))
            return head_bytes(f)

        for epochs in (1, 20):
            plain = adapted("source_only", epochs)
            assert adapted("dann", epochs, lambda_domain=0.0) == plain
            assert adapted("mmd", epochs, mmd_weight=0.0) == plain
        # and the equality is not vacuous: live alignment diverges
        plain = adapted("source_only", 3)
        assert adapted("dann", 3, lambda_domain=1.0) != plain
        assert adapted("mmd", 3, mmd_weight=1.0) != plain


def test_criterion_08_mmd_matches_the_double_loop_oracle():
    """Vectorized estimate vs a literal all-pairs transcription."""
    with criterion(8, "kernel two-sample oracle equivalence", 2.0):
        rng = np.random.default_rng(808)
        for trial in range(4):
            m, n = rng.integers(10, 51, size=2)
            a = rng.normal(size=(int(m), 3))
            b = rng.normal(size=(int(n), 3)) + rng.normal(scale=0.5, size=3)
            bws = (0.5, 1.0, 2.0)

            total = 0.0
            for sigma in bws:
                kaa = sum(np.exp(-np.sum((a[i] - a[j]) ** 2) / (2 * sigma**2))
                          for i in range(len(a)) for j in range(len(a)) if i != j)
                kbb = sum(np.exp(-np.sum((b[i] - b[j]) ** 2) / (2 * sigma**2))
                          for i in range(len(b)) for j in range(len(b)) if i != j)
                kab = sum(np.exp(-np.sum((a[i] - b[j]) ** 2) / (2 * sigma**2))
                          for i in range(len(a)) for j in range(len(b)))
                total += (kaa / (len(a) * (len(a) - 1))
                          + kbb / (len(b) * (len(b) - 1))
                          - 2.0 * kab / (len(a) * len(b)))

            assert abs(mmd2(a, b, bws) - total) <= 1e-9
            assert abs(mmd2(a, b, bws) - mmd2(b, a, bws)) <= 1e-12


def test_criterion_09_idx_fixture_parses_exactly(tmp_path):
    """A handcrafted 2-image/2-label pair parses to the exact matrices, and
    the two corruption modes raise descriptive format errors."""
    with criterion(9, "IDX fixture and corruption handling", 1.0):
        img_path = tmp_path / "imgs.idx"
        img_path.write_bytes(struct.pack(">IIII", 0x00000803, 2, 2, 2)
                             + bytes([0, 255, 128, 64, 255, 0, 0, 0]))
        expected = np.array([[0, 255, 128, 64], [255, 0, 0, 0]],
                            dtype=np.float64) / 255.0
        np.testing.assert_array_equal(load_idx(img_path), expected)

        lbl_path = tmp_path / "labels.idx"
        lbl_path.write_bytes(struct.pack(">II", 0x00000801, 2) + bytes([7, 2]))
        np.testing.assert_array_equal(load_idx(lbl_path), [7, 2])

        bad_magic = tmp_path / "magic.idx"
        bad_magic.write_bytes(struct.pack(">IIII", 0x00000999, 2, 2, 2) + bytes(8))
        with pytest.raises(FormatError, match="0x00000999"):
            load_idx(bad_magic)

        short = tmp_path / "short.idx"
        short.write_bytes(img_path.read_bytes()[:-3])
        with pytest.raises(FormatError, match="expected"):
            load_idx(short)


def test_criterion_10_sweeps_reproduce_and_resume(tmp_path):
    """A 1-method, 3-seed sweep reruns to byte-identical records, and an
    interrupted copy resumed completes to the identical report."""
    with criterion(10, "sweep reproducibility and resume", 900.0):
        def sweep_config(out_dir):
            return ExperimentConfig(
                benchmark=BenchmarkSpec(name="two-moons-rot45",
                                        shift=ShiftSpec(rotation=np.pi / 4)),
                da_methods=[DAConfig(method="dann")],
                seeds=[0, 1, 2],
                output_dir=str(out_dir),
            )

        first = run_experiment(sweep_config(tmp_path / "a"))
        run_experiment(sweep_config(tmp_path / "b"))
        rec_a = (tmp_path / "a" / "records.jsonl").read_bytes()
        rec_b = (tmp_path / "b" / "records.jsonl").read_bytes()
        assert rec_a == rec_b

        # interrupt: keep the config and the first completed run only
        cut = tmp_path / "cut"
        cut.mkdir()
        shutil.copy(tmp_path / "a" / "config.json", cut / "config.json")
        prefix = rec_a.decode().splitlines()[:2]
        (cut / "records.jsonl").write_text("\n".join(prefix) + "\n")
        resumed = run_experiment(sweep_config(cut), resume=True)

        assert resumed.records == first.records
        assert emit_table(resumed) == emit_table(first)
        assert load_run_report(cut).records == first.records
