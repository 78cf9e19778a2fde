"""Command line interface: ``hda <subcommand>``.

Subcommands cover the individual pipeline stages (gen/shift/divergence/
attack/pretrain/adapt/eval) plus full sweeps (run) and report tables
(report).  Stage commands print a single JSON line on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import adaptation, attack, datasets, divergence, runner
from .engine import load_mlp, save_mlp
from .errors import HdaError


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _parse_vector(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",")) if text else ()


def _shift_spec(args) -> datasets.ShiftSpec:
    return datasets.ShiftSpec(
        rotation=args.rotation,
        translation=_parse_vector(args.translate),
        noise_sigma=args.shift_noise,
        channel_bias=_parse_vector(args.bias),
        seed=args.shift_seed,
    )


def _add_shift_flags(p) -> None:
    p.add_argument("--rotation", type=float, default=0.0, help="radians, 2-d only")
    p.add_argument("--translate", default="", help="comma-separated offsets")
    p.add_argument("--shift-noise", type=float, default=0.0)
    p.add_argument("--bias", default="", help="comma-separated per-feature bias")
    p.add_argument("--shift-seed", type=int, default=0)


def cmd_gen(args) -> int:
    if args.kind == "two_moons":
        d = datasets.gen_two_moons(args.n, args.noise_sigma, args.seed)
    else:
        centers = [_parse_vector(c) for c in args.centers.split(";")]
        d = datasets.gen_gaussian_blobs(args.n, centers, args.sigma, args.seed)
    datasets.save_dataset(d, args.out)
    _emit({"out": args.out, "n": d.n, "dim": d.dim, "classes": d.class_count})
    return 0


def cmd_shift(args) -> int:
    d = datasets.load_dataset(args.data)
    shifted = datasets.apply_shift(d, _shift_spec(args))
    datasets.save_dataset(shifted, args.out)
    _emit({"out": args.out, "n": shifted.n, "domain_tag": shifted.domain_tag})
    return 0


def cmd_divergence(args) -> int:
    s = datasets.load_dataset(args.source)
    t = datasets.load_dataset(args.target)
    cfg = divergence.HdhConfig(epochs=args.epochs, learning_rate=args.lr,
                               batch_size=args.batch_size, seed=args.seed)
    report, h = divergence.estimate_divergence(s, t, cfg)
    if args.save_classifier:
        save_mlp(h, args.save_classifier)
    _emit({
        "domain_error": report.domain_error,
        "proxy_a_distance": report.proxy_a_distance,
        "n_source": report.n_source,
        "n_target": report.n_target,
    })
    return 0


def cmd_attack(args) -> int:
    h = load_mlp(args.classifier)
    s = datasets.load_dataset(args.source)
    cfg = attack.AttackConfig(epsilon=args.epsilon, steps=args.steps,
                              clip_min=args.clip_min, clip_max=args.clip_max,
                              target_domain_label=args.target_label)
    adv = attack.generate_adversarial_domain(h, s, cfg)
    datasets.save_dataset(adv, args.out)
    _emit({
        "out": args.out,
        "success_rate_before": attack.attack_success_rate(h, s, cfg.target_domain_label),
        "success_rate_after": attack.attack_success_rate(h, adv, cfg.target_domain_label),
        "max_perturbation": float(np.abs(adv.features - s.features).max()),
        "budget": cfg.steps * cfg.epsilon,
    })
    return 0


def cmd_pretrain(args) -> int:
    labeled = datasets.load_dataset(args.labeled)
    f = adaptation.new_source_classifier(labeled.dim, labeled.class_count,
                                         hidden=args.hidden, seed=args.seed)
    cfg = adaptation.PretrainConfig(epochs=args.epochs, learning_rate=args.lr,
                                    batch_size=args.batch_size, seed=args.seed)
    adaptation.pretrain(f, labeled, cfg)
    adaptation.save_source_classifier(f, args.out)
    rep = adaptation.evaluate(f, labeled)
    _emit({"out": args.out, "train_accuracy": rep.accuracy})
    return 0


def cmd_adapt(args) -> int:
    f = adaptation.load_source_classifier(args.model)
    labeled = datasets.load_dataset(args.labeled)
    target = datasets.load_dataset(args.target)
    cfg = adaptation.DAConfig(
        method=args.method, epochs=args.epochs, learning_rate=args.lr,
        lambda_domain=args.lambda_domain, mmd_weight=args.mmd_weight,
        batch_size=args.batch_size, seed=args.seed,
    )
    adaptation.adapt(f, labeled, target.features, cfg)
    adaptation.save_source_classifier(f, args.out)
    _emit({"out": args.out, "method": cfg.method})
    return 0


def cmd_eval(args) -> int:
    f = adaptation.load_source_classifier(args.model)
    d = datasets.load_dataset(args.data)
    rep = adaptation.evaluate(f, d)
    per_class = [None if np.isnan(v) else v for v in rep.per_class]
    _emit({"accuracy": rep.accuracy, "per_class": per_class})
    return 0


def cmd_run(args) -> int:
    cfg = runner.load_config(args.config)
    report = runner.run_experiment(cfg, jobs=args.jobs, resume=args.resume,
                                   log=lambda msg: print(msg, file=sys.stderr))
    print(runner.emit_table(report, "markdown"), end="")
    if report.failed:
        for rec in report.failed:
            print(f"FAILED {rec.method}/{rec.variant}/seed={rec.seed}: {rec.error}",
                  file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    report = runner.load_run_report(args.runs)
    print(runner.emit_table(report, args.format), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hda",
        description="Domain adaptation with adversarially translated source domains",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset file")
    p.add_argument("--kind", choices=["two_moons", "blobs"], default="two_moons")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--centers", default="0.3,0.5;0.7,0.5",
                   help="semicolon-separated centers (blobs)")
    p.add_argument("--sigma", type=float, default=0.05, help="blob spread")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("shift", help="apply a domain shift to a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_shift_flags(p)
    p.set_defaults(handler=cmd_shift)

    p = sub.add_parser("divergence", help="proxy A-distance between two datasets")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save-classifier", default="",
                   help="optionally persist the trained discriminator")
    p.set_defaults(handler=cmd_divergence)

    p = sub.add_parser("attack", help="translate a source dataset toward the target domain")
    p.add_argument("--classifier", required=True, help="saved domain discriminator")
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--steps", type=int, default=7)
    p.add_argument("--clip-min", type=float, default=0.0)
    p.add_argument("--clip-max", type=float, default=1.0)
    p.add_argument("--target-label", type=int, default=1)
    p.set_defaults(handler=cmd_attack)

    p = sub.add_parser("pretrain", help="train a fresh source classifier")
    p.add_argument("--labeled", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("adapt", help="adapt a pretrained classifier to a target domain")
    p.add_argument("--model", required=True)
    p.add_argument("--labeled", required=True,
                   help="labeled training domain (raw or attacked source)")
    p.add_argument("--target", required=True, help="target dataset; labels are ignored")
    p.add_argument("--method", choices=list(adaptation.DA_METHODS), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--lambda-domain", type=float, default=1.0)
    p.add_argument("--mmd-weight", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_adapt)

    p = sub.add_parser("eval", help="accuracy of a saved classifier on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("run", help="run a full experiment sweep from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("report", help="re-render the table for a sweep directory")
    p.add_argument("--runs", required=True)
    p.add_argument("--format", choices=["csv", "markdown"], default="markdown")
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (HdaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
