"""Lookahead ("future self") teacher updates.

All four variants estimate one or more future student states by caching
gradient steps that are never applied to the live student, fold those
estimates into the teacher, and only then perform the single real student
update with pseudo-labels from the resulting teacher:

* ``naive``     teacher = mu * phi + (1 - mu) * (theta - gamma * g(phi)),
                discarding the current student from the average;
* ``improved``  EMA to phi' first, virtual step guided by phi', then
                teacher = mu' * phi' + (1 - mu') * (theta - gamma * g(phi'));
* ``fst-d``     a co-evolving virtual student/teacher pair takes K serial
                steps and the final virtual teacher is reassigned wholesale;
* ``fst-w``     N one-step explorations on (possibly different) batches,
                guided by the pre-EMA teacher, averaged into one future state.

Every step performs exactly one real student update regardless of how many
virtual gradients it evaluates, so T iterations train every variant's student
equally. The live student's parameter vector is never mutated: steps return
fresh states.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

from .autodiff import Graph
from .metrics import MetricsRecord
from .params import ParamVector, mean_vectors
from .selftrain import (
    StepLoss,
    StudentState,
    TeacherState,
    TrainBatch,
    TrainerConfig,
    _step_record,
    ema_update,
    training_loss,
)


@dataclass(frozen=True)
class ExplorationBatchSet:
    """Batches the virtual passes consume: K entries for fst-d, N for fst-w.

    mode "same" repeats the main batch (identical realization, mixing
    included); "different" holds independent draws from the exploration
    stream.
    """

    batches: tuple[TrainBatch, ...]
    mode: str

    @classmethod
    def same(cls, batch: TrainBatch, count: int) -> "ExplorationBatchSet":
        return cls((batch,) * count, "same")

    @classmethod
    def different(cls, batches: Sequence[TrainBatch]) -> "ExplorationBatchSet":
        return cls(tuple(batches), "different")


def snapshot(params: ParamVector) -> ParamVector:
    """Deep copy; mutations of the copy never reach the original."""
    return params.copy()


def naive_fst_step(
    graph: Graph,
    student: StudentState,
    teacher: TeacherState,
    batch: TrainBatch,
    cfg: TrainerConfig,
    loss_fn: Callable = training_loss,
) -> tuple[StudentState, TeacherState, MetricsRecord]:
    """Fold one cached future step into the EMA in place of the current student."""
    if cfg.variant != "naive":
        raise ValueError(f"naive_fst_step called with variant {cfg.variant!r}")
    t0 = time.perf_counter()
    virtual = loss_fn(graph, student.params, teacher.params, batch, cfg)  # guided by the pre-EMA teacher
    future = student.params - virtual.grad * cfg.gamma  # cached only, never applied
    phi_next = ema_update(teacher.params, future, cfg.mu)
    sl = loss_fn(graph, student.params, phi_next, batch, cfg)
    theta_next = student.params - sl.grad * cfg.gamma
    rec = _step_record(student.t + 1, cfg, sl, t0)
    return StudentState(theta_next, student.t + 1), TeacherState(phi_next), rec


def improved_fst_step(
    graph: Graph,
    student: StudentState,
    teacher: TeacherState,
    batch: TrainBatch,
    cfg: TrainerConfig,
    loss_fn: Callable = training_loss,
) -> tuple[StudentState, TeacherState, MetricsRecord]:
    """Keep the usual EMA contribution and blend the future in with mu'."""
    if cfg.variant != "improved":
        raise ValueError(f"improved_fst_step called with variant {cfg.variant!r}")
    t0 = time.perf_counter()
    phi_half = ema_update(teacher.params, student.params, cfg.mu)
    virtual = loss_fn(graph, student.params, phi_half, batch, cfg)
    future = student.params - virtual.grad * cfg.gamma
    phi_next = ema_update(phi_half, future, cfg.mu_prime)
    sl = loss_fn(graph, student.params, phi_next, batch, cfg)
    theta_next = student.params - sl.grad * cfg.gamma
    rec = _step_record(student.t + 1, cfg, sl, t0)
    return StudentState(theta_next, student.t + 1), TeacherState(phi_next), rec


def fst_d_step(
    graph: Graph,
    student: StudentState,
    teacher: TeacherState,
    batch: TrainBatch,
    ebs: ExplorationBatchSet,
    cfg: TrainerConfig,
    loss_fn: Callable = training_loss,
) -> tuple[StudentState, TeacherState, MetricsRecord]:
    """Deep exploration: K serial virtual steps of a co-evolving pair.

    The virtual student starts at a snapshot of the live student; the virtual
    teacher starts at the ordinary EMA. Each virtual step guides itself with
    the current virtual teacher, then folds the new virtual student in with
    mu'. The final virtual teacher is reassigned as the real teacher.
    """
    if cfg.variant != "fst-d":
        raise ValueError(f"fst_d_step called with variant {cfg.variant!r}")
    if cfg.k < 1:
        raise ValueError("fst-d needs at least one virtual step")
    if len(ebs.batches) != cfg.k:
        raise ValueError(f"exploration set has {len(ebs.batches)} batches, expected k={cfg.k}")
    t0 = time.perf_counter()
    theta_v = snapshot(student.params)
    phi_v = ema_update(teacher.params, student.params, cfg.mu)
    for b in ebs.batches:
        v = loss_fn(graph, theta_v, phi_v, b, cfg)
        theta_v = theta_v - v.grad * cfg.gamma
        phi_v = ema_update(phi_v, theta_v, cfg.mu_prime)
    phi_next = phi_v
    sl = loss_fn(graph, student.params, phi_next, batch, cfg)
    theta_next = student.params - sl.grad * cfg.gamma
    rec = _step_record(student.t + 1, cfg, sl, t0)
    return StudentState(theta_next, student.t + 1), TeacherState(phi_next), rec


def averaged_future(base: ParamVector, scaled_grads: Sequence[ParamVector], reduction: str) -> ParamVector:
    """Mean future student from N per-branch steps gamma * g_i.

    "gradients" folds the scaled gradients and subtracts the mean from the
    base. "weights" averages the N virtually updated students base - d_i,
    evaluated about their shared base (base + mean(-d_i)): a direct
    elementwise mean of the materialized vectors agrees only to rounding
    error, while this form keeps the two reductions bitwise interchangeable
    under the fixed fold order.
    """
    if reduction == "gradients":
        return base - mean_vectors(scaled_grads)
    if reduction == "weights":
        return base + mean_vectors([-d for d in scaled_grads])
    raise ValueError(f"unknown reduction {reduction!r}")


def fst_w_step(
    graph: Graph,
    student: StudentState,
    teacher: TeacherState,
    batch: TrainBatch,
    ebs: ExplorationBatchSet,
    cfg: TrainerConfig,
    loss_fn: Callable = training_loss,
) -> tuple[StudentState, TeacherState, MetricsRecord]:
    """Wide exploration: N parallel one-step futures, averaged.

    Every branch is guided by the pre-EMA teacher (unlike the improved rule,
    which conditions its single branch on the EMA'd teacher), so fst-w with
    N=1 is intentionally not identical to the improved rule.
    """
    if cfg.variant != "fst-w":
        raise ValueError(f"fst_w_step called with variant {cfg.variant!r}")
    if cfg.n < 1:
        raise ValueError("fst-w needs at least one exploration")
    if len(ebs.batches) != cfg.n:
        raise ValueError(f"exploration set has {len(ebs.batches)} batches, expected n={cfg.n}")
    t0 = time.perf_counter()
    scaled = [loss_fn(graph, student.params, teacher.params, b, cfg).grad * cfg.gamma for b in ebs.batches]
    future = averaged_future(student.params, scaled, cfg.w_reduction)
    phi_next = ema_update(ema_update(teacher.params, student.params, cfg.mu), future, cfg.mu_prime)
    sl = loss_fn(graph, student.params, phi_next, batch, cfg)
    theta_next = student.params - sl.grad * cfg.gamma
    rec = _step_record(student.t + 1, cfg, sl, t0)
    return StudentState(theta_next, student.t + 1), TeacherState(phi_next), rec


def dispatch_step(
    graph: Graph,
    student: StudentState,
    teacher: TeacherState,
    batch: TrainBatch,
    ebs: ExplorationBatchSet | None,
    cfg: TrainerConfig,
):
    """Route one training step to the configured update rule."""
    from .selftrain import st_step

    if cfg.variant == "st":
        return st_step(graph, student, teacher, batch, cfg)
    if cfg.variant == "naive":
        return naive_fst_step(graph, student, teacher, batch, cfg)
    if cfg.variant == "improved":
        return improved_fst_step(graph, student, teacher, batch, cfg)
    if cfg.variant == "fst-d":
        if ebs is None:
            ebs = ExplorationBatchSet.same(batch, cfg.k)
        return fst_d_step(graph, student, teacher, batch, ebs, cfg)
    if cfg.variant == "fst-w":
        if ebs is None:
            ebs = ExplorationBatchSet.same(batch, cfg.n)
        return fst_w_step(graph, student, teacher, batch, ebs, cfg)
    raise ValueError(f"unknown variant {cfg.variant!r}")
