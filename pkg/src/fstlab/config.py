"""Experiment configuration: a flat ``key = value`` format with one canonical
serialization.

A config names a task, a model, a trainer, and run bookkeeping. Unset keys
fall back to task-dependent defaults, and the canonical form always prints
the fully resolved values in a fixed key order, so its SHA-256 is a stable
identity for the run. CLI flags override file values before resolution.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .models import CONV_SEG, MLP, ModelSpec
from .selftrain import TrainerConfig
from .tasks import GRID_SEG, TWO_MOONS, TaskSpec

# key -> parser; order here is the canonical serialization order
_KEYS = (
    "task",
    "task_seed",
    "n_labeled",
    "n_unlabeled",
    "n_eval",
    "noise",
    "shift",
    "moon_gap",
    "grid_h",
    "grid_w",
    "classes",
    "shapes_per_image",
    "class_weights",
    "model",
    "widths",
    "variant",
    "lr",
    "mu",
    "mu_prime",
    "tau",
    "k",
    "n",
    "batch_mode",
    "w_reduction",
    "batch_labeled",
    "batch_unlabeled",
    "class_mix",
    "resample_augmentation",
    "iters",
    "eval_every",
    "seeds",
    "out",
)

# keys that define the scenario two runs must share to be comparable
SCENARIO_KEYS = (
    "task",
    "task_seed",
    "n_labeled",
    "n_unlabeled",
    "n_eval",
    "noise",
    "shift",
    "moon_gap",
    "grid_h",
    "grid_w",
    "classes",
    "shapes_per_image",
    "class_weights",
    "model",
    "widths",
)

_TASK_DEFAULTS = {
    TWO_MOONS: dict(n_labeled=64, n_unlabeled=256, n_eval=400, noise=0.08, batch_labeled=32, batch_unlabeled=32),
    GRID_SEG: dict(n_labeled=8, n_unlabeled=48, n_eval=32, noise=0.05, batch_labeled=4, batch_unlabeled=4),
}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blanks are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def _to_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _to_ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip() != "")


def _to_floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip() != "")


@dataclass(frozen=True)
class ExperimentPlan:
    task: TaskSpec
    model: ModelSpec
    trainer: TrainerConfig
    eval_every: int
    seeds: tuple[int, ...]
    out_dir: str

    def __post_init__(self):
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.trainer.total_iters % self.eval_every != 0:
            raise ConfigError("eval_every must divide iters")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("replicate seeds must be distinct")
        if self.trainer.batch_labeled > self.task.n_labeled:
            raise ConfigError("labeled batch larger than the labeled split")
        if self.trainer.batch_unlabeled > self.task.n_unlabeled:
            raise ConfigError("unlabeled batch larger than the unlabeled split")
        if self.trainer.class_mix and self.task.kind != GRID_SEG:
            raise ConfigError("class_mix applies to grid-seg only")
        if self.trainer.class_mix and self.trainer.batch_labeled < 1:
            raise ConfigError("class_mix needs labeled items to paste from")
        expected_model = MLP if self.task.kind == TWO_MOONS else CONV_SEG
        if self.model.kind != expected_model:
            raise ConfigError(f"task {self.task.kind} trains a {expected_model} model")


def plan_from_mapping(mapping: dict[str, str]) -> ExperimentPlan:
    """Build a validated plan from raw string key/values (file and/or flags)."""
    for key in mapping:
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}")

    def get(key: str, default=None) -> str | None:
        v = mapping.get(key)
        return v if v not in (None, "") else default

    task_kind = get("task", GRID_SEG)
    if task_kind not in (TWO_MOONS, GRID_SEG):
        raise ConfigError(f"unknown task {task_kind!r}")
    td = _TASK_DEFAULTS[task_kind]
    classes = 2 if task_kind == TWO_MOONS else int(get("classes", 3))
    weights = get("class_weights")
    task = TaskSpec(
        kind=task_kind,
        n_labeled=int(get("n_labeled", td["n_labeled"])),
        n_unlabeled=int(get("n_unlabeled", td["n_unlabeled"])),
        n_eval=int(get("n_eval", td["n_eval"])),
        noise=float(get("noise", td["noise"])),
        shift=float(get("shift", 0.0)),
        class_weights=_to_floats(weights) if weights else None,
        seed=int(get("task_seed", 0)),
        moon_gap=float(get("moon_gap", 0.1)),
        grid_hw=(int(get("grid_h", 12)), int(get("grid_w", 12))),
        num_classes=classes,
        shapes_per_image=int(get("shapes_per_image", 3)),
    )

    model_kind = get("model", MLP if task_kind == TWO_MOONS else CONV_SEG)
    widths = get("widths")
    if widths:
        widths_t = _to_ints(widths)
    elif model_kind == MLP:
        widths_t = (2, 16, 16, classes)
    else:
        widths_t = (8, 8, classes)
    if model_kind == MLP:
        model = ModelSpec(MLP, widths_t, classes, in_features=widths_t[0])
    else:
        model = ModelSpec(CONV_SEG, widths_t, classes, in_channels=1)

    trainer = TrainerConfig(
        variant=get("variant", "st"),
        gamma=float(get("lr", 0.2)),
        mu=float(get("mu", 0.999)),
        mu_prime=float(get("mu_prime", 0.999)),
        tau=float(get("tau", 0.968)),
        k=int(get("k", 3)),
        n=int(get("n", 3)),
        batch_mode=get("batch_mode", "same"),
        w_reduction=get("w_reduction", "gradients"),
        total_iters=int(get("iters", 400)),
        seed=0,
        batch_labeled=int(get("batch_labeled", td["batch_labeled"])),
        batch_unlabeled=int(get("batch_unlabeled", td["batch_unlabeled"])),
        class_mix=_to_bool(get("class_mix", "false")),
        resample_augmentation=_to_bool(get("resample_augmentation", "false")),
    )

    return ExperimentPlan(
        task=task,
        model=model,
        trainer=trainer,
        eval_every=int(get("eval_every", 20)),
        seeds=_to_ints(get("seeds", "1")),
        out_dir=get("out", "runs"),
    )


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def plan_to_mapping(plan: ExperimentPlan) -> dict[str, str]:
    """Fully resolved key/value view of a plan (every key present)."""
    t, m, tr = plan.task, plan.model, plan.trainer
    return {
        "task": t.kind,
        "task_seed": _fmt(t.seed),
        "n_labeled": _fmt(t.n_labeled),
        "n_unlabeled": _fmt(t.n_unlabeled),
        "n_eval": _fmt(t.n_eval),
        "noise": _fmt(t.noise),
        "shift": _fmt(t.shift),
        "moon_gap": _fmt(t.moon_gap),
        "grid_h": _fmt(t.grid_hw[0]),
        "grid_w": _fmt(t.grid_hw[1]),
        "classes": _fmt(t.num_classes),
        "shapes_per_image": _fmt(t.shapes_per_image),
        "class_weights": _fmt(t.class_weights) if t.class_weights else "",
        "model": m.kind,
        "widths": _fmt(m.widths),
        "variant": tr.variant,
        "lr": _fmt(tr.gamma),
        "mu": _fmt(tr.mu),
        "mu_prime": _fmt(tr.mu_prime),
        "tau": _fmt(tr.tau),
        "k": _fmt(tr.k),
        "n": _fmt(tr.n),
        "batch_mode": tr.batch_mode,
        "w_reduction": tr.w_reduction,
        "batch_labeled": _fmt(tr.batch_labeled),
        "batch_unlabeled": _fmt(tr.batch_unlabeled),
        "class_mix": _fmt(tr.class_mix),
        "resample_augmentation": _fmt(tr.resample_augmentation),
        "iters": _fmt(tr.total_iters),
        "eval_every": _fmt(plan.eval_every),
        "seeds": _fmt(plan.seeds),
        "out": plan.out_dir,
    }


def canonical_config(plan: ExperimentPlan) -> str:
    mapping = plan_to_mapping(plan)
    return "".join(f"{k} = {mapping[k]}\n" for k in _KEYS)


def config_hash(plan: ExperimentPlan) -> str:
    return hashlib.sha256(canonical_config(plan).encode()).hexdigest()


def scenario_hash(plan: ExperimentPlan) -> str:
    """Identity of the task + model combination; runs must share it to be compared."""
    mapping = plan_to_mapping(plan)
    text = "".join(f"{k} = {mapping[k]}\n" for k in SCENARIO_KEYS)
    return hashlib.sha256(text.encode()).hexdigest()
