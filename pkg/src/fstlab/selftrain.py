"""Classical teacher-student self-training.

Per step: the teacher moves first by exponential moving average of the
student, the freshly updated teacher predicts hard pseudo-labels for the
unlabeled batch, and the student takes one plain gradient-descent step on

    CE(labeled) + lambda * CE(unlabeled | pseudo-labels)

where lambda is the fraction of unlabeled pixels whose teacher confidence
exceeds the threshold tau (strict inequality), and only those pixels
contribute to the unlabeled term. Pseudo-label generation never touches any
parameter vector (stop-gradient); all step functions return new states and
leave their inputs untouched.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph
from .metrics import MetricsRecord
from .models import predict
from .params import ParamVector
from .tasks import LabeledBatch, UnlabeledBatch, apply_class_mix

VARIANTS = ("st", "naive", "improved", "fst-d", "fst-w")
BATCH_MODES = ("same", "different")
W_REDUCTIONS = ("gradients", "weights")


@dataclass(frozen=True)
class TrainerConfig:
    """All training hyperparameters. Fields a variant does not use are still
    validated so a config is either fully well-formed or rejected."""

    variant: str = "st"
    gamma: float = 0.2  # learning rate of the plain gradient-descent update
    mu: float = 0.999  # teacher EMA momentum
    mu_prime: float = 0.999  # momentum for lookahead (virtual-future) averaging
    tau: float = 0.968  # confidence threshold for reliable pseudo-labels
    k: int = 3  # serial virtual steps (fst-d)
    n: int = 3  # parallel explorations (fst-w)
    batch_mode: str = "same"
    w_reduction: str = "gradients"
    total_iters: int = 400
    seed: int = 0
    batch_labeled: int = 4
    batch_unlabeled: int = 4
    class_mix: bool = False
    resample_augmentation: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.gamma < 0:
            raise ValueError("learning rate must be >= 0")
        if not 0.0 <= self.mu <= 1.0 or not 0.0 <= self.mu_prime <= 1.0:
            raise ValueError("momenta must be in [0, 1]")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must be in (0, 1)")
        if self.k < 1 or self.n < 1:
            raise ValueError("k and n must be >= 1")
        if self.batch_mode not in BATCH_MODES:
            raise ValueError(f"unknown batch mode {self.batch_mode!r}")
        if self.w_reduction not in W_REDUCTIONS:
            raise ValueError(f"unknown reduction {self.w_reduction!r}")
        if self.total_iters < 0:
            raise ValueError("total_iters must be >= 0")
        if self.batch_labeled < 0 or self.batch_unlabeled < 1:
            raise ValueError("batch sizes out of range")


@dataclass
class StudentState:
    params: ParamVector
    t: int = 0


@dataclass
class TeacherState:
    params: ParamVector


@dataclass(frozen=True)
class PseudoLabels:
    """Hard teacher predictions with per-pixel confidence.

    `lam` is exactly mask.sum() / mask.size. Ties in the argmax break toward
    the lowest class index.
    """

    labels: np.ndarray  # int64, class ids
    confidence: np.ndarray  # max softmax per pixel
    mask: np.ndarray  # float64 {0,1}, confidence strictly above tau
    lam: float


@dataclass(frozen=True)
class MixPlan:
    """One fixed mixing realization: for each unlabeled item, the position of
    the labeled source item and the source classes to paste."""

    items: tuple[tuple[int, tuple[int, ...]], ...]


@dataclass(frozen=True)
class TrainBatch:
    """The (labeled, unlabeled) pair one step trains on.

    `mix` optionally decorates the unlabeled branch with a class-mix
    realization; `mix_rng`, when set, redraws that realization at every
    pseudo-labeling event instead of keeping it fixed.
    """

    labeled: LabeledBatch
    unlabeled: UnlabeledBatch
    mix: MixPlan | None = None
    mix_rng: np.random.Generator | None = None


def ema_update(phi: ParamVector, theta: ParamVector, m: float) -> ParamVector:
    """Teacher average: m * phi + (1 - m) * theta. Inputs are not modified."""
    return phi.ema(theta, m)


def make_pseudo_labels(graph: Graph, teacher_params: ParamVector, x_u: np.ndarray, tau: float) -> PseudoLabels:
    """Hard argmax labels from the teacher, gradient-free.

    lambda is the proportion of pixels whose max softmax strictly exceeds tau.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must be in (0, 1)")
    probs = predict(graph, teacher_params, x_u)
    labels = probs.argmax(axis=-1).astype(np.int64)
    confidence = probs.max(axis=-1)
    mask = (confidence > tau).astype(np.float64)
    lam = float(mask.sum() / mask.size)
    return PseudoLabels(labels, confidence, mask, lam)


@dataclass(frozen=True)
class StepLoss:
    total: float
    grad: ParamVector
    labeled: float
    unlabeled: float
    lam: float


def _ce_with_grad(graph: Graph, params: ParamVector, x, labels, mask) -> tuple[float, ParamVector]:
    loss = graph.forward(params, {"x": x, "labels": labels, "mask": mask}, graph.anchors["loss"])
    return float(loss), graph.backward()


def combined_loss(
    graph: Graph,
    params: ParamVector,
    labeled: LabeledBatch | None,
    x_u: np.ndarray,
    pl: PseudoLabels,
) -> StepLoss:
    """CE(labeled) + lam * CE(unlabeled, pseudo-labels, mask) with its gradient.

    The unlabeled term is skipped entirely when lam == 0, so the result then
    equals the labeled-only loss exactly.
    """
    if not 0.0 <= pl.lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {pl.lam}")
    if labeled is not None and len(labeled) > 0:
        ones = np.ones(labeled.labels.shape, dtype=np.float64)
        loss_l, grad_l = _ce_with_grad(graph, params, labeled.inputs, labeled.labels, ones)
    else:
        loss_l, grad_l = 0.0, None
    if pl.lam > 0.0:
        loss_u, grad_u = _ce_with_grad(graph, params, x_u, pl.labels, pl.mask)
        grad = grad_u * pl.lam if grad_l is None else grad_l + grad_u * pl.lam
    else:
        loss_u = 0.0
        grad = graph.make_params() if grad_l is None else grad_l
    total = loss_l + pl.lam * loss_u
    return StepLoss(total, grad, loss_l, loss_u, pl.lam)


def training_loss(graph: Graph, params: ParamVector, teacher_params: ParamVector, batch: TrainBatch, cfg: TrainerConfig) -> StepLoss:
    """Loss and gradient at `params` with pseudo-labels from `teacher_params`.

    This is the gradient every update rule evaluates, virtually or for real:
    pseudo-labels (and lambda) are regenerated from the given teacher on each
    call, then the class-mix view is applied when configured.
    """
    pl = make_pseudo_labels(graph, teacher_params, batch.unlabeled.inputs, cfg.tau)
    x_u, pl = _mixed_view(batch, pl)
    return combined_loss(graph, params, batch.labeled, x_u, pl)


def _mixed_view(batch: TrainBatch, pl: PseudoLabels) -> tuple[np.ndarray, PseudoLabels]:
    """Apply the batch's mixing plan to the unlabeled branch.

    Pasted pixels carry source ground truth, so they count as confident: the
    mixed mask is 1 there and the pseudo-label mask elsewhere; lambda is
    recomputed from the mixed mask.
    """
    plan = batch.mix
    if plan is None and batch.mix_rng is None:
        return batch.unlabeled.inputs, pl
    if batch.mix_rng is not None:
        from .harness import draw_mix_plan  # local import; harness owns batch plumbing

        plan = draw_mix_plan(batch.mix_rng, batch.labeled, len(batch.unlabeled))
    inputs, labels, masks, confs = [], [], [], []
    for i, (src_pos, classes) in enumerate(plan.items):
        mixed, mixed_labels, paste = apply_class_mix(
            batch.labeled.inputs[src_pos],
            batch.labeled.labels[src_pos],
            batch.unlabeled.inputs[i],
            pl.labels[i],
            classes,
        )
        inputs.append(mixed)
        labels.append(mixed_labels)
        masks.append(np.maximum(paste, pl.mask[i]))
        confs.append(np.maximum(paste, pl.confidence[i]))
    mask = np.stack(masks)
    mixed_pl = PseudoLabels(
        np.stack(labels), np.stack(confs), mask, float(mask.sum() / mask.size)
    )
    return np.stack(inputs), mixed_pl


def st_step(
    graph: Graph,
    student: StudentState,
    teacher: TeacherState,
    batch: TrainBatch,
    cfg: TrainerConfig,
    loss_fn=training_loss,
) -> tuple[StudentState, TeacherState, MetricsRecord]:
    """One classical self-training step: teacher EMA first, pseudo-labels from
    the new teacher, then the single real student update."""
    if cfg.variant != "st":
        raise ValueError(f"st_step called with variant {cfg.variant!r}")
    t0 = time.perf_counter()
    phi_next = ema_update(teacher.params, student.params, cfg.mu)
    sl = loss_fn(graph, student.params, phi_next, batch, cfg)
    theta_next = student.params - sl.grad * cfg.gamma
    rec = _step_record(student.t + 1, cfg, sl, t0)
    return StudentState(theta_next, student.t + 1), TeacherState(phi_next), rec


def _step_record(iteration: int, cfg: TrainerConfig, sl: StepLoss, t0: float) -> MetricsRecord:
    return MetricsRecord(
        iter=iteration,
        variant=cfg.variant,
        loss_labeled=sl.labeled,
        loss_unlabeled=sl.unlabeled,
        lambda_mean=sl.lam,
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )
