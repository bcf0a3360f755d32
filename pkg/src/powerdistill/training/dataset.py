"""Dataset-pattern trainers: SUP, UNSUP and AD-assisted UNSUP.

All three share one loop. Per batch the scalar loss is

    task + beta * distill

where ``task`` is the label distance (SUP) or the negated mean sum rate
(UNSUP), and ``distill`` is the distance to the teacher allocation. The
distance is the mean over links and batch of ``|p - q|`` (order 1) or
``(p - q)**2`` (order 2), descended in both roles.
"""

from __future__ import annotations

import dataclasses
import time
from typing import Optional, Sequence

import numpy as np

from ..nncore import Batch, Model, backward, sgd_step
from ..objective import sum_rate_batch, sum_rate_grad_batch
from ..teachers import TeacherLabel, labels_to_array
from .config import BetaSchedule, MetricsLog, TrainConfig, beta_value


def distance(p: np.ndarray, q: np.ndarray, order: int):
    """Mean per-link distance and its gradient in ``p``."""
    diff = p - q
    n = diff.size
    if order == 1:
        return float(np.abs(diff).sum() / n), np.sign(diff) / n
    return float((diff * diff).sum() / n), 2.0 * diff / n


def neg_sum_rate(batch: Batch, p: np.ndarray):
    """``-mean sum rate`` over the batch and its gradient in ``p``."""
    n = len(batch)
    rates = sum_rate_batch(batch.gain, batch.weight, batch.noise, p)
    grad = sum_rate_grad_batch(batch.gain, batch.weight, batch.noise, p)
    return -float(rates.mean()), -grad / n, rates


def clip_gradient(grad, max_norm: Optional[float]):
    if max_norm is None:
        return grad
    norm = float(np.sqrt(sum(float(np.sum(v * v)) for _, v in grad.items())))
    if norm <= max_norm:
        return grad
    scale = max_norm / norm
    return type(grad)(grad.spec, {k: v * scale for k, v in grad.items()})


@dataclasses.dataclass(frozen=True)
class Metrics:
    mean_sum_rate: float
    teacher_ratio: Optional[float]
    teacher_sum_rate: Optional[float] = None


class EvalSet:
    """A held-out set pre-stacked for repeated evaluation."""

    def __init__(self, instances: Sequence, labels: Optional[Sequence[TeacherLabel]] = None, threshold=None):
        self.instances = list(instances)
        self.batch = Batch.from_instances(self.instances, threshold)
        self.labels = labels
        self.teacher_mean = None
        if labels is not None:
            p = labels_to_array(labels)
            self.teacher_mean = float(np.mean(sum_rate_batch(self.batch.gain, self.batch.weight, self.batch.noise, p)))

    @classmethod
    def for_model(cls, model: Model, instances, labels=None) -> "EvalSet":
        threshold = model.spec.graph_threshold if model.spec.kind == "gnn" else None
        return cls(instances, labels, threshold)


def evaluate(model, dataset, labels: Optional[Sequence[TeacherLabel]] = None, chunk: int = 256) -> Metrics:
    """Mean test sum rate, plus the teacher-normalized ratio if labels are given.

    ``model`` may also be any callable mapping a :class:`Batch` to powers.
    """
    ev = dataset if isinstance(dataset, EvalSet) else (
        EvalSet.for_model(model, dataset, labels) if isinstance(model, Model) else EvalSet(dataset, labels)
    )
    b = ev.batch
    rates = []
    for start in range(0, len(b), chunk):
        part = b.take(slice(start, start + chunk))
        p = model(part)
        rates.append(sum_rate_batch(part.gain, part.weight, part.noise, p))
    mean = float(np.mean(np.concatenate(rates)))
    ratio = None
    if ev.teacher_mean is not None:
        ratio = mean / ev.teacher_mean if ev.teacher_mean > 0 else float("nan")
    return Metrics(mean, ratio, ev.teacher_mean)


def _fit(
    model: Model,
    instances,
    labels,
    cfg: TrainConfig,
    task: str,
    sched: Optional[BetaSchedule],
    test: Optional[EvalSet],
    method: str,
):
    if labels is not None and len(labels) != len(instances):
        raise ValueError("labels are not aligned with the dataset")
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    data = model.batch(instances)
    target = labels_to_array(labels) if labels is not None else None
    n = len(data)
    steps_per_epoch = -(-n // cfg.batch_size)
    eval_every = cfg.eval_every or steps_per_epoch
    if sched is not None:
        sched = sched.with_horizon(cfg.epochs - 1)
    log = MetricsLog(method)
    t0 = time.perf_counter()
    step = 0
    acc = _Accumulator()
    for epoch in range(cfg.epochs):
        beta = beta_value(sched, epoch) if sched is not None else 0.0
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            b = data.take(idx)
            p, rec = model.forward(b)
            if task == "sup":
                task_loss, upstream = distance(p, target[idx], cfg.norm_order)
                rates = sum_rate_batch(b.gain, b.weight, b.noise, p)
            else:
                task_loss, upstream, rates = neg_sum_rate(b, p)
            distill_loss = 0.0
            if sched is not None:
                distill_loss, d_grad = distance(p, target[idx], cfg.norm_order)
                upstream = upstream + beta * d_grad
            grad, _ = backward(rec, upstream)
            model.params = sgd_step(model.params, clip_gradient(grad, cfg.grad_clip), cfg.lr)
            acc.add(task_loss, distill_loss, task_loss + beta * distill_loss, rates)
            step += 1
            if step % eval_every == 0:
                index = epoch + 1 if cfg.eval_every == 0 else step
                log.append(index, beta=beta, **acc.flush(), **_test_fields(model, test),
                           wall_ms=_wall(cfg, t0))
    return model, log


class _Accumulator:
    def __init__(self):
        self.task, self.distill, self.total, self.rates = [], [], [], []

    def add(self, task, distill, total, rates):
        self.task.append(task)
        self.distill.append(distill)
        self.total.append(total)
        self.rates.append(rates)

    def flush(self) -> dict:
        out = {
            "task_loss": float(np.mean(self.task)),
            "distill_loss": float(np.mean(self.distill)),
            "loss": float(np.mean(self.total)),
            "train_sum_rate": float(np.mean(np.concatenate(self.rates))),
        }
        self.__init__()
        return out


def _test_fields(model, test: Optional[EvalSet]) -> dict:
    if test is None:
        return {}
    m = evaluate(model, test)
    return {"test_sum_rate": m.mean_sum_rate, "teacher_ratio": m.teacher_ratio}


def _wall(cfg: TrainConfig, t0: float) -> float:
    return round((time.perf_counter() - t0) * 1e3, 3) if cfg.timing else 0.0


def train_supervised(model: Model, dataset, labels, cfg: TrainConfig, test: Optional[EvalSet] = None):
    if labels is None:
        raise ValueError("supervised training needs labels")
    return _fit(model, list(dataset), labels, cfg, "sup", None, test, "sup")


def train_unsupervised(model: Model, dataset, cfg: TrainConfig, test: Optional[EvalSet] = None):
    instances = list(dataset)
    if not instances:
        raise ValueError("empty dataset")
    return _fit(model, instances, None, cfg, "unsup", None, test, "unsup")


def train_ad_unsupervised(
    model: Model, dataset, labels, cfg: TrainConfig, sched: BetaSchedule, test: Optional[EvalSet] = None,
    method: str = "ad_unsup",
):
    if labels is None:
        raise ValueError("AD training needs teacher labels")
    return _fit(model, list(dataset), labels, cfg, "unsup", sched, test, method)
