"""Experiment runner.

`run` executes a plan: for every replicate seed it builds the model, starts
the teacher at the student's weights, loops the configured update rule, and
logs one metrics row at iteration 0 and after every `eval_every` iterations.
Rows go to one CSV per (variant, seed); a JSON manifest ties the run together.

Determinism contract: (plan, seed) fully determines every CSV byte. One
master seed per replicate spawns independent named streams -- ``init`` (model
weights), ``data`` (main-batch order), ``exploration`` (lookahead batches when
batch_mode=different), ``augmentation`` (mixing realizations) -- so changing
k or n only consumes more of the exploration stream and leaves the rest
untouched. Wall-clock time is measured but reported only in the manifest; the
CSV wall_ms column is fixed at 0 to keep re-runs byte-identical.

Logged-row semantics: loss columns hold the training losses of the step that
completed at that iteration (NaN on the iteration-0 row); lambda_mean and
pseudo_error are recomputed from the current teacher over the full unlabeled
split; student_eval / teacher_eval score the eval split (accuracy for
two-moons, mIoU for grid-seg).
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentPlan, canonical_config, config_hash, plan_to_mapping, scenario_hash
from .fst import ExplorationBatchSet, dispatch_step
from .metrics import CSV_FIELDS, MetricsRecord, accuracy, miou, pseudo_error_rate
from .models import build, predict
from .selftrain import MixPlan, StudentState, TeacherState, TrainBatch, make_pseudo_labels
from .tasks import GRID_SEG, TWO_MOONS, LabeledBatch, Split, TaskData, UnlabeledBatch, generate, select_mix_classes

STREAM_NAMES = ("init", "data", "exploration", "augmentation")


def rng_streams(master_seed: int) -> tuple[int, dict[str, np.random.Generator]]:
    """Independent named streams from one master seed.

    Returns the integer seed for model initialization plus one generator per
    remaining stream name.
    """
    children = np.random.SeedSequence(master_seed).spawn(len(STREAM_NAMES))
    init_seed = int(children[0].generate_state(1)[0])
    gens = {name: np.random.default_rng(seq) for name, seq in zip(STREAM_NAMES[1:], children[1:])}
    return init_seed, gens


def draw_mix_plan(rng: np.random.Generator, labeled: LabeledBatch, n_unlabeled: int | None = None) -> MixPlan:
    """One mixing realization: pair each unlabeled item with a labeled source
    item and pick the classes to paste."""
    count = len(labeled) if n_unlabeled is None else n_unlabeled
    items = []
    for _ in range(count):
        src = int(rng.integers(len(labeled)))
        classes = select_mix_classes(labeled.labels[src], rng)
        items.append((src, classes))
    return MixPlan(tuple(items))


@dataclass
class _Replicate:
    """Training state and streams for one (plan, seed) run."""

    plan: ExperimentPlan
    data: TaskData
    seed: int

    def __post_init__(self):
        cfg = self.plan.trainer
        self.cfg = replace(cfg, seed=self.seed)
        init_seed, self.streams = rng_streams(self.seed)
        self.graph, params = build(self.plan.model, init_seed)
        self.student = StudentState(params=params, t=0)
        self.teacher = TeacherState(params=params.copy())  # teacher starts at the student

    def _draw_batch(self, rng: np.random.Generator, aug_rng: np.random.Generator | None) -> TrainBatch:
        cfg = self.cfg
        lab, unl = self.data.labeled, self.data.unlabeled
        li = rng.choice(len(lab), size=cfg.batch_labeled, replace=False)
        ui = rng.choice(len(unl), size=cfg.batch_unlabeled, replace=False)
        labeled = LabeledBatch(lab.inputs[li], lab.labels[li], lab.indices[li])
        unlabeled = UnlabeledBatch(unl.inputs[ui], unl.indices[ui])
        mix = None
        mix_rng = None
        if cfg.class_mix:
            if cfg.resample_augmentation:
                mix_rng = aug_rng
            else:
                mix = draw_mix_plan(aug_rng, labeled, len(unlabeled))
        return TrainBatch(labeled, unlabeled, mix=mix, mix_rng=mix_rng)

    def _exploration(self, batch: TrainBatch) -> ExplorationBatchSet | None:
        cfg = self.cfg
        if cfg.variant not in ("fst-d", "fst-w"):
            return None
        count = cfg.k if cfg.variant == "fst-d" else cfg.n
        if cfg.batch_mode == "same":
            return ExplorationBatchSet.same(batch, count)
        rng = self.streams["exploration"]
        return ExplorationBatchSet.different([self._draw_batch(rng, rng) for _ in range(count)])

    def step(self) -> MetricsRecord:
        batch = self._draw_batch(self.streams["data"], self.streams["augmentation"])
        ebs = self._exploration(batch)
        self.student, self.teacher, rec = dispatch_step(
            self.graph, self.student, self.teacher, batch, ebs, self.cfg
        )
        return rec

    def eval_record(self, base: MetricsRecord | None) -> MetricsRecord:
        """Fill evaluation fields on top of the last step's losses."""
        kind = self.plan.task.kind
        unl = self.data.unlabeled
        pl = make_pseudo_labels(self.graph, self.teacher.params, unl.inputs, self.cfg.tau)
        eps = pseudo_error_rate(pl.labels, unl.labels, self.plan.task.num_classes)
        rec = base if base is not None else MetricsRecord(iter=0, variant=self.cfg.variant)
        rec.seed = self.seed
        rec.lambda_mean = pl.lam
        rec.pseudo_error = eps
        rec.student_eval = self._score(self.student.params, kind)
        rec.teacher_eval = self._score(self.teacher.params, kind)
        return rec

    def _score(self, params, kind: str) -> float:
        ev: Split = self.data.eval
        pred = predict(self.graph, params, ev.inputs).argmax(axis=-1)
        if kind == TWO_MOONS:
            return accuracy(pred, ev.labels)
        return miou(pred, ev.labels, self.plan.task.num_classes)

    def run(self) -> list[MetricsRecord]:
        rows = [self.eval_record(None)]
        for t in range(1, self.cfg.total_iters + 1):
            rec = self.step()
            if t % self.plan.eval_every == 0:
                rows.append(self.eval_record(rec))
        return rows


# ---- CSV / manifest ------------------------------------------------------------


def _fmt17(x: float) -> str:
    return format(float(x), ".17g")


def records_to_csv(rows: list[MetricsRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow(
            [
                r.iter,
                r.variant,
                r.seed,
                _fmt17(r.loss_labeled),
                _fmt17(r.loss_unlabeled),
                _fmt17(r.lambda_mean),
                _fmt17(r.pseudo_error),
                _fmt17(r.student_eval),
                _fmt17(r.teacher_eval),
                _fmt17(0.0),  # measured time lives in the manifest; see module docstring
            ]
        )
    return buf.getvalue()


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        tmp.write_text(text)
        tmp.replace(path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


@dataclass
class RunManifest:
    run_id: str
    config_hash: str
    scenario: str
    variant: str
    seeds: tuple[int, ...]
    config: str
    versions: dict
    wall_s: float
    csv_paths: dict[int, str]  # seed -> path
    final: dict[int, dict]  # seed -> final row snapshot
    path: str = ""

    def to_json(self) -> str:
        payload = {
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "scenario": self.scenario,
            "variant": self.variant,
            "seeds": list(self.seeds),
            "config": self.config,
            "versions": self.versions,
            "wall_s": self.wall_s,
            "csv_paths": {str(k): v for k, v in self.csv_paths.items()},
            "final": {str(k): v for k, v in self.final.items()},
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str, path: str = "") -> "RunManifest":
        d = json.loads(text)
        return cls(
            run_id=d["run_id"],
            config_hash=d["config_hash"],
            scenario=d["scenario"],
            variant=d["variant"],
            seeds=tuple(d["seeds"]),
            config=d["config"],
            versions=d["versions"],
            wall_s=d["wall_s"],
            csv_paths={int(k): v for k, v in d["csv_paths"].items()},
            final={int(k): v for k, v in d["final"].items()},
            path=path,
        )


def load_manifest(path) -> RunManifest:
    p = Path(path)
    return RunManifest.from_json(p.read_text(), str(p))


def run(plan: ExperimentPlan) -> RunManifest:
    """Execute every replicate of the plan and write CSVs plus a manifest."""
    t_start = time.perf_counter()
    chash = config_hash(plan)
    run_id = f"{plan.trainer.variant}-{chash[:12]}"
    out = Path(plan.out_dir) / run_id
    out.mkdir(parents=True, exist_ok=True)
    data = generate(plan.task)

    csv_paths: dict[int, str] = {}
    final: dict[int, dict] = {}
    for seed in plan.seeds:
        rows = _Replicate(plan, data, seed).run()
        path = out / f"metrics_{plan.trainer.variant}_seed{seed}.csv"
        _write_atomic(path, records_to_csv(rows))
        csv_paths[seed] = str(path)
        last = rows[-1]
        final[seed] = {
            "iter": last.iter,
            "student_eval": last.student_eval,
            "teacher_eval": last.teacher_eval,
            "pseudo_error": last.pseudo_error,
            "lambda_mean": last.lambda_mean,
        }

    manifest = RunManifest(
        run_id=run_id,
        config_hash=chash,
        scenario=scenario_hash(plan),
        variant=plan.trainer.variant,
        seeds=plan.seeds,
        config=canonical_config(plan),
        versions={"fstlab": __version__, "numpy": np.__version__},
        wall_s=time.perf_counter() - t_start,
        csv_paths=csv_paths,
        final=final,
    )
    mpath = out / "manifest.json"
    _write_atomic(mpath, manifest.to_json())
    manifest.path = str(mpath)
    return manifest


# ---- comparison / curves ------------------------------------------------------


@dataclass(frozen=True)
class CompareRow:
    variant: str
    n_seeds: int
    mean: float
    sd: float
    delta: float | None  # vs the st baseline; None for the baseline itself or without one


def _read_rows(path: str) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def compare(manifests: list[RunManifest]) -> list[CompareRow]:
    """Per-variant mean +- sd of the final student eval, with deltas vs st."""
    if not manifests:
        raise ValueError("nothing to compare")
    scenarios = {m.scenario for m in manifests}
    if len(scenarios) != 1:
        raise ValueError("runs use different task/model scenarios and cannot be compared")
    by_variant: dict[str, list[float]] = {}
    for m in manifests:
        finals = [float(_read_rows(p)[-1]["student_eval"]) for _, p in sorted(m.csv_paths.items())]
        by_variant.setdefault(m.variant, []).extend(finals)
    means = {v: sum(vals) / len(vals) for v, vals in by_variant.items()}
    base = means.get("st")
    rows = []
    order = ["st", "naive", "improved", "fst-w", "fst-d"]
    for v in sorted(by_variant, key=lambda x: (order.index(x) if x in order else 99, x)):
        vals = by_variant[v]
        mean = means[v]
        if len(vals) > 1:
            var = sum((x - mean) ** 2 for x in vals) / (len(vals) - 1)
            sd = var**0.5
        else:
            sd = 0.0
        delta = None if (base is None or v == "st") else mean - base
        rows.append(CompareRow(v, len(vals), mean, sd, delta))
    return rows


def render_compare(rows: list[CompareRow]) -> str:
    lines = [f"{'variant':<10} {'seeds':>5} {'mean':>10} {'sd':>10} {'delta':>10}"]
    for r in rows:
        delta = "" if r.delta is None else f"{r.delta:+.4f}"
        lines.append(f"{r.variant:<10} {r.n_seeds:>5} {r.mean:>10.4f} {r.sd:>10.4f} {delta:>10}")
    return "\n".join(lines) + "\n"


CURVE_METRICS = ("pseudo_error", "student_eval", "teacher_eval", "lambda_mean", "loss_labeled", "loss_unlabeled")


def export_curves(manifests: RunManifest | list[RunManifest], out_path=None) -> str:
    """Write long-format (iter, series, value) rows for external plotting.

    Series are tagged ``metric.variant.seedN`` so merged runs stay distinct.
    """
    if isinstance(manifests, RunManifest):
        manifests = [manifests]
    if not manifests:
        raise ValueError("nothing to export")
    target = Path(out_path) if out_path else Path(manifests[0].path).parent / "curves.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "series", "value"])
    for m in manifests:
        for seed, path in sorted(m.csv_paths.items()):
            for row in _read_rows(path):
                for metric in CURVE_METRICS:
                    w.writerow([row["iter"], f"{metric}.{m.variant}.seed{seed}", row[metric]])
    _write_atomic(target, buf.getvalue())
    return str(target)
