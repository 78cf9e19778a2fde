"""Seeded experiment sweeps: config parsing, resumable runs, report tables.

A sweep is (methods x seeds); every pipeline invocation yields two per-run
records, one for the baseline arm and one for the attacked-source arm.
Records go to ``records.jsonl`` (append-only, one JSON object per line) whose
content is bit-reproducible for a given config; wall-clock timings go to a
separate ``timings.jsonl`` so reruns stay byte-comparable.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .adaptation import DAConfig, PretrainConfig, hda_pipeline
from .attack import AttackConfig
from .datasets import (LabeledDataset, ShiftSpec, apply_shift,
                       gen_gaussian_blobs, gen_two_moons, load_dataset)
from .divergence import HdhConfig
from .errors import ConfigValidationError, HdaError, UsageError
from .seeding import seed_seq

VARIANTS = ("baseline", "hda")
BENCHMARK_KINDS = ("two_moons", "blobs", "files")

# stream ids for per-run dataset generation
_STREAM_SOURCE = 20
_STREAM_TARGET = 21


@dataclass(frozen=True)
class BenchmarkSpec:
    """How to materialize (source, target) for one run seed.

    Generator kinds redraw both domains per seed; the "files" kind loads the
    same two dataset files for every seed (only training randomness varies).
    """

    name: str
    kind: str = "two_moons"
    n: int = 1000
    noise_sigma: float = 0.1
    centers: tuple[tuple[float, ...], ...] = ()
    sigma: float = 0.05
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    source_path: str | None = None
    target_path: str | None = None

    def __post_init__(self):
        if not self.name:
            raise ConfigValidationError(["benchmark.name must be non-empty"])
        if self.kind not in BENCHMARK_KINDS:
            raise ConfigValidationError(
                [f"benchmark.kind must be one of {BENCHMARK_KINDS}, got {self.kind!r}"]
            )
        if self.kind == "files" and not (self.source_path and self.target_path):
            raise ConfigValidationError(
                ["benchmark.kind 'files' needs source_path and target_path"]
            )

    def build(self, run_seed: int) -> tuple[LabeledDataset, LabeledDataset]:
        if self.kind == "files":
            return load_dataset(self.source_path), load_dataset(self.target_path)
        if self.kind == "two_moons":
            source = gen_two_moons(self.n, self.noise_sigma,
                                   seed_seq(run_seed, _STREAM_SOURCE))
            raw_target = gen_two_moons(self.n, self.noise_sigma,
                                       seed_seq(run_seed, _STREAM_TARGET))
        else:
            source = gen_gaussian_blobs(self.n, self.centers, self.sigma,
                                        seed_seq(run_seed, _STREAM_SOURCE))
            raw_target = gen_gaussian_blobs(self.n, self.centers, self.sigma,
                                            seed_seq(run_seed, _STREAM_TARGET))
        shift = replace(self.shift, seed=(run_seed, *seed_seq(self.shift.seed)))
        return source, apply_shift(raw_target, shift)


@dataclass
class ExperimentConfig:
    benchmark: BenchmarkSpec
    hdh: HdhConfig = field(default_factory=HdhConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    da_methods: list[DAConfig] = field(default_factory=lambda: [DAConfig()])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    output_dir: str = "runs"


def _parse_section(violations, section, builder):
    try:
        return builder()
    except HdaError as exc:
        violations.append(f"{section}: {exc}")
    except (TypeError, ValueError) as exc:
        violations.append(f"{section}: {exc}")
    return None


def config_from_dict(obj: dict) -> ExperimentConfig:
    """Build a validated ExperimentConfig; collects *every* violation."""
    if not isinstance(obj, dict):
        raise ConfigValidationError([f"config root must be an object, got {type(obj).__name__}"])
    violations: list[str] = []
    known = {"benchmark", "hdh", "attack", "pretrain", "da", "seeds", "output_dir"}
    for key in obj:
        if key not in known:
            violations.append(f"unknown top-level key {key!r}")

    def build_benchmark():
        raw = dict(obj.get("benchmark") or {})
        shift = ShiftSpec(**raw.pop("shift", {}))
        if "centers" in raw:
            raw["centers"] = tuple(tuple(float(v) for v in c) for c in raw["centers"])
        return BenchmarkSpec(shift=shift, **raw)

    benchmark = _parse_section(violations, "benchmark", build_benchmark)
    hdh = _parse_section(violations, "hdh", lambda: HdhConfig(**obj.get("hdh", {})))
    attack = _parse_section(violations, "attack", lambda: AttackConfig(**obj.get("attack", {})))
    pre = _parse_section(violations, "pretrain",
                         lambda: PretrainConfig(**obj.get("pretrain", {})))

    da_methods: list[DAConfig] = []
    raw_da = obj.get("da", [{}])
    if not isinstance(raw_da, list) or not raw_da:
        violations.append("da: must be a non-empty list of method configs")
    else:
        for i, entry in enumerate(raw_da):
            raw = dict(entry)
            if "mmd_bandwidths" in raw and raw["mmd_bandwidths"] is not None:
                raw["mmd_bandwidths"] = tuple(raw["mmd_bandwidths"])
            da = _parse_section(violations, f"da[{i}]", lambda r=raw: DAConfig(**r))
            if da is not None:
                da_methods.append(da)
        names = [d.method for d in da_methods]
        if len(set(names)) != len(names):
            violations.append(f"da: duplicate methods in {names}")

    seeds = obj.get("seeds", [0, 1, 2])
    if (not isinstance(seeds, list) or not seeds
            or any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in seeds)):
        violations.append(f"seeds: must be a non-empty list of ints >= 0, got {seeds!r}")
    elif len(set(seeds)) != len(seeds):
        violations.append(f"seeds: duplicates in {seeds}")

    output_dir = obj.get("output_dir", "runs")
    if not isinstance(output_dir, str) or not output_dir:
        violations.append(f"output_dir: must be a non-empty string, got {output_dir!r}")

    if violations:
        raise ConfigValidationError(violations)
    return ExperimentConfig(benchmark, hdh, attack, pre, da_methods, list(seeds), output_dir)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Inverse of config_from_dict up to semantic equality."""
    out = {
        "benchmark": asdict(cfg.benchmark),
        "hdh": asdict(cfg.hdh),
        "attack": asdict(cfg.attack),
        "pretrain": asdict(cfg.pretrain),
        "da": [asdict(d) for d in cfg.da_methods],
        "seeds": list(cfg.seeds),
        "output_dir": cfg.output_dir,
    }
    bench = out["benchmark"]
    bench["shift"] = {k: (list(v) if isinstance(v, tuple) else v)
                      for k, v in bench["shift"].items()}
    bench["centers"] = [list(c) for c in bench["centers"]]
    for d in out["da"]:
        if d["mmd_bandwidths"] is not None:
            d["mmd_bandwidths"] = list(d["mmd_bandwidths"])
    return out


def load_config(path) -> ExperimentConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigValidationError([f"{path}: not valid JSON ({exc})"]) from exc
    return config_from_dict(obj)


# --------------------------------------------------------------------------
# Records
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RunRecord:
    method: str
    variant: str
    seed: int
    status: str = "ok"
    accuracy_source: float | None = None
    accuracy_target: float | None = None
    per_class_source: tuple | None = None
    per_class_target: tuple | None = None
    domain_error: float | None = None
    proxy_a_distance: float | None = None
    n_source: int | None = None
    n_target: int | None = None
    error: str | None = None

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.method, self.variant, self.seed)


def _sanitize(value):
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, (tuple, list)):
        return [_sanitize(v) for v in value]
    return value


def record_to_json(rec: RunRecord) -> str:
    obj = {k: _sanitize(v) for k, v in asdict(rec).items()}
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def record_from_json(line: str) -> RunRecord:
    obj = json.loads(line)
    for key in ("per_class_source", "per_class_target"):
        if obj.get(key) is not None:
            obj[key] = tuple(float("nan") if v is None else v for v in obj[key])
    return RunRecord(**obj)


def run_single(cfg: ExperimentConfig, method_index: int, seed: int) -> list[RunRecord]:
    """One pipeline invocation -> the two per-variant records."""
    da = replace(cfg.da_methods[method_index], seed=seed)
    source, target = cfg.benchmark.build(seed)
    result = hda_pipeline(
        source, target,
        replace(cfg.hdh, seed=seed),
        cfg.attack,
        replace(cfg.pretrain, seed=seed),
        da,
    )
    records = []
    for variant in VARIANTS:
        arm = result.hda if variant == "hda" else result.baseline
        div = (result.divergence_adversarial_target if variant == "hda"
               else result.divergence_source_target)
        records.append(RunRecord(
            method=da.method, variant=variant, seed=seed,
            accuracy_source=arm.eval_source.accuracy,
            accuracy_target=arm.eval_target.accuracy,
            per_class_source=arm.eval_source.per_class,
            per_class_target=arm.eval_target.per_class,
            domain_error=div.domain_error,
            proxy_a_distance=div.proxy_a_distance,
            n_source=div.n_source,
            n_target=div.n_target,
        ))
    return records


def _run_single_task(config_dict: dict, method_index: int, seed: int) -> list[RunRecord]:
    return run_single(config_from_dict(config_dict), method_index, seed)


@dataclass
class Aggregate:
    mean: float
    std: float
    n: int


@dataclass
class RunReport:
    """All per-run records of a sweep plus aggregate accessors."""

    benchmark: str
    method_order: list[str]
    records: list[RunRecord]

    def ok_records(self, method: str, variant: str) -> list[RunRecord]:
        return [r for r in self.records
                if r.method == method and r.variant == variant and r.status == "ok"]

    def aggregate(self, method: str, variant: str) -> Aggregate | None:
        accs = [r.accuracy_target for r in self.ok_records(method, variant)]
        if not accs:
            return None
        mean = float(np.mean(accs))
        # population std: divide by n, not n - 1
        return Aggregate(mean, float(np.sqrt(np.mean((np.asarray(accs) - mean) ** 2))),
                         len(accs))

    @property
    def failed(self) -> list[RunRecord]:
        return [r for r in self.records if r.status != "ok"]


def _dedupe_last(records: list[RunRecord]) -> dict[tuple, RunRecord]:
    by_key: dict[tuple, RunRecord] = {}
    for rec in records:
        by_key[rec.key] = rec
    return by_key


def read_records(path) -> list[RunRecord]:
    records = []
    path = Path(path)
    if path.exists():
        for line in path.read_text().splitlines():
            if line.strip():
                records.append(record_from_json(line))
    return records


def run_experiment(cfg: ExperimentConfig, jobs: int = 1,
                   resume: bool = False, log=None) -> RunReport:
    """Execute the sweep, appending records as runs complete.

    With resume=True, (method, variant, seed) triples already recorded as ok
    are skipped; failed or missing ones are (re)computed.  A crashed run is
    recorded as failed and the sweep continues.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    records_path = out / "records.jsonl"
    timings_path = out / "timings.jsonl"
    config_path = out / "config.json"

    if records_path.exists() and not resume:
        raise UsageError(
            f"{records_path} already exists; pass resume=True (or --resume) "
            f"to continue, or use a fresh output dir"
        )
    cfg_dict = config_to_dict(cfg)
    if config_path.exists():
        stored = json.loads(config_path.read_text())
        # output_dir is where the records live; relocating a sweep is fine
        if {k: v for k, v in stored.items() if k != "output_dir"} != \
                {k: v for k, v in cfg_dict.items() if k != "output_dir"}:
            raise UsageError(
                f"{config_path} differs from the supplied config; refusing to mix sweeps"
            )
    else:
        config_path.write_text(json.dumps(cfg_dict, indent=2, sort_keys=True) + "\n")

    existing = _dedupe_last(read_records(records_path))
    done = {k for k, r in existing.items() if r.status == "ok"}

    tasks = [(mi, seed) for mi in range(len(cfg.da_methods)) for seed in cfg.seeds]
    pending = [
        (mi, seed) for mi, seed in tasks
        if not all((cfg.da_methods[mi].method, v, seed) in done for v in VARIANTS)
    ]

    def note(msg):
        if log:
            log(msg)

    def finish(mi, seed, records, elapsed):
        method = cfg.da_methods[mi].method
        with records_path.open("a") as fh:
            for rec in records:
                if rec.key in done:
                    continue
                fh.write(record_to_json(rec) + "\n")
                existing[rec.key] = rec
        with timings_path.open("a") as fh:
            for rec in records:
                fh.write(json.dumps(
                    {"method": rec.method, "variant": rec.variant, "seed": rec.seed,
                     "wall_time_s": elapsed}, sort_keys=True) + "\n")
        note(f"[{method} seed={seed}] done in {elapsed:.1f}s")

    def failure_records(mi, seed, exc) -> list[RunRecord]:
        method = cfg.da_methods[mi].method
        return [RunRecord(method=method, variant=v, seed=seed, status="failed",
                          error=f"{type(exc).__name__}: {exc}") for v in VARIANTS]

    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            started = time.perf_counter()
            futures = {(mi, seed): pool.submit(_run_single_task, cfg_dict, mi, seed)
                       for mi, seed in pending}
            for (mi, seed), fut in futures.items():
                try:
                    finish(mi, seed, fut.result(), time.perf_counter() - started)
                except Exception as exc:  # noqa: BLE001 - recorded, not raised
                    finish(mi, seed, failure_records(mi, seed, exc),
                           time.perf_counter() - started)
    else:
        for mi, seed in pending:
            started = time.perf_counter()
            try:
                records = run_single(cfg, mi, seed)
            except Exception as exc:  # noqa: BLE001 - recorded, not raised
                records = failure_records(mi, seed, exc)
            finish(mi, seed, records, time.perf_counter() - started)

    final = _dedupe_last(read_records(records_path))
    order = [d.method for d in cfg.da_methods]
    records = sorted(final.values(),
                     key=lambda r: (order.index(r.method) if r.method in order else 99,
                                    VARIANTS.index(r.variant), r.seed))
    return RunReport(cfg.benchmark.name, order, records)


def load_run_report(runs_dir) -> RunReport:
    """Rebuild a RunReport from a sweep directory (config + records)."""
    runs_dir = Path(runs_dir)
    config_path = runs_dir / "config.json"
    records_path = runs_dir / "records.jsonl"
    if not config_path.exists():
        raise UsageError(f"{config_path} not found; not a sweep directory?")
    cfg = config_from_dict(json.loads(config_path.read_text()))
    final = _dedupe_last(read_records(records_path))
    order = [d.method for d in cfg.da_methods]
    records = sorted(final.values(),
                     key=lambda r: (order.index(r.method) if r.method in order else 99,
                                    VARIANTS.index(r.variant), r.seed))
    return RunReport(cfg.benchmark.name, order, records)


# --------------------------------------------------------------------------
# Tables
# --------------------------------------------------------------------------


def _row_label(method: str, variant: str) -> str:
    return method if variant == "baseline" else f"{method} + HDA"


def _cell(agg: Aggregate | None) -> str:
    if agg is None:
        return "n/a"
    return f"{agg.mean * 100:.1f} +- {agg.std * 100:.1f}"


def emit_table(report: RunReport, fmt: str = "markdown") -> str:
    """Render target-accuracy aggregates, one row per method x variant.

    Cells are "mean +- std" in percent with one decimal; std is population
    (divide by n).  The best mean per column is bolded (markdown) or flagged
    in the ``best`` column (csv).  Output is a pure function of the records.
    """
    if fmt not in ("markdown", "csv"):
        raise UsageError(f"format must be 'markdown' or 'csv', got {fmt!r}")
    rows = []
    for method in report.method_order:
        for variant in VARIANTS:
            rows.append((method, variant, report.aggregate(method, variant)))
    means = [r[2].mean for r in rows if r[2] is not None]
    best = max(means) if means else None

    if fmt == "csv":
        lines = ["benchmark,method,variant,mean_target_accuracy_pct,std_population_pct,"
                 "n_seeds,best"]
        for method, variant, agg in rows:
            if agg is None:
                lines.append(f"{report.benchmark},{method},{variant},,,0,0")
            else:
                flag = int(best is not None and agg.mean == best)
                lines.append(
                    f"{report.benchmark},{method},{variant},{agg.mean * 100:.1f},"
                    f"{agg.std * 100:.1f},{agg.n},{flag}"
                )
        return "\n".join(lines) + "\n"

    lines = [f"| Model | {report.benchmark} |", "| --- | --- |"]
    for method, variant, agg in rows:
        cell = _cell(agg)
        if agg is not None and best is not None and agg.mean == best:
            cell = f"**{cell}**"
        lines.append(f"| {_row_label(method, variant)} | {cell} |")
    lines.append("")
    lines.append("Std is population (divided by n) over per-seed target accuracies.")
    return "\n".join(lines) + "\n"
