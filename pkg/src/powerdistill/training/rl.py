"""RL-pattern trainers: DPG, AD-assisted DPG, and online SUP.

Each environment step draws ``cfg.env_batch`` fresh instances, acts with
Gaussian exploration around the actor output, and stores the transitions.
The reward is the sum rate of the taken action; there is no bootstrapping,
so the critic regresses ``V(p | h, w)`` straight onto ``r`` with a squared
error. The actor then ascends ``V`` through ``d V / d p`` on a replay
minibatch, with the AD variant also descending ``beta * distance(p, p_fp)``.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from typing import Optional

import numpy as np

from ..netgen import InstanceSampler, NetworkInstance
from ..nncore import Batch, Model, backward, sgd_step
from ..objective import sum_rate_batch, sum_rate_grad_batch
from ..teachers import label_batch
from .config import BetaSchedule, MetricsLog, TrainConfig, beta_value
from .dataset import EvalSet, _wall, clip_gradient, distance, evaluate

log = logging.getLogger(__name__)

DEFAULT_RL_EVAL_EVERY = 100


@dataclasses.dataclass(frozen=True)
class Transition:
    instance_id: int
    instance: NetworkInstance
    action: np.ndarray
    reward: float


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions with cached stacked arrays."""

    def __init__(self, capacity: int, num_links: int, threshold=None):
        self.capacity = capacity
        self.threshold = threshold
        self.transitions: list = []
        self._gain = np.empty((capacity, num_links, num_links))
        self._weight = np.empty((capacity, num_links))
        self._noise = np.empty(capacity)
        self._p_max = np.empty(capacity)
        self._mask = np.empty((capacity, num_links, num_links))
        self._action = np.empty((capacity, num_links))
        self._reward = np.empty(capacity)
        self._target = np.zeros((capacity, num_links))
        self._has_target = np.zeros(capacity, dtype=bool)
        self._next = 0

    def __len__(self):
        return len(self.transitions)

    def add(self, batch: Batch, ids, instances, actions, rewards, targets=None, ok=None):
        for b in range(len(batch)):
            slot = self._next % self.capacity
            t = Transition(int(ids[b]), instances[b], actions[b].copy(), float(rewards[b]))
            if len(self.transitions) < self.capacity:
                self.transitions.append(t)
            else:
                self.transitions[slot] = t
            self._gain[slot] = batch.gain[b]
            self._weight[slot] = batch.weight[b]
            self._noise[slot] = batch.noise[b]
            self._p_max[slot] = batch.p_max[b]
            self._mask[slot] = batch.mask[b]
            self._action[slot] = actions[b]
            self._reward[slot] = rewards[b]
            if targets is not None:
                self._target[slot] = targets[b]
                self._has_target[slot] = ok[b]
            self._next += 1

    def sample(self, rng: np.random.Generator, size: int):
        n = len(self.transitions)
        idx = np.sort(rng.choice(n, size=min(size, n), replace=False))
        batch = Batch(self._gain[idx], self._weight[idx], self._noise[idx], self._p_max[idx], self._mask[idx])
        return batch, self._action[idx], self._reward[idx], self._target[idx], self._has_target[idx]


class OracleCritic:
    """Stand-in critic whose value is the true sum rate."""

    def value_and_grad(self, batch: Batch, p: np.ndarray):
        v = sum_rate_batch(batch.gain, batch.weight, batch.noise, p)
        return v, sum_rate_grad_batch(batch.gain, batch.weight, batch.noise, p)


def critic_value_and_grad(critic, batch: Batch, p: np.ndarray):
    """``V(p)`` per instance and ``d V / d p``."""
    if isinstance(critic, OracleCritic):
        return critic.value_and_grad(batch, p)
    v, rec = critic.forward(batch, p)
    _, igrad = backward(rec, np.ones_like(v))
    return v, igrad["p"]


def actor_gradient(actor: Model, critic, batch: Batch, beta: float = 0.0, target=None, has_target=None,
                   norm_order: int = 2):
    """Descent gradient for the actor: ``-mean V`` plus ``beta * distance``."""
    p, rec = actor.forward(batch)
    n = len(batch)
    v, dv = critic_value_and_grad(critic, batch, p)
    upstream = -dv / n
    distill = 0.0
    if target is not None:
        sel = has_target if has_target is not None else np.ones(n, dtype=bool)
        if np.any(sel):
            distill, dgrad = distance(p[sel], target[sel], norm_order)
            full = np.zeros_like(p)
            full[sel] = dgrad
            upstream = upstream + beta * full
    grad, _ = backward(rec, upstream)
    return grad, -float(np.mean(v)), distill, p


def _noise_std(cfg: TrainConfig, step: int) -> float:
    s0, s1 = cfg.noise_std
    frac = step / max(1, cfg.steps - 1)
    return s0 + (s1 - s0) * frac


class _TeacherCache:
    """Teacher allocations memoized by instance id; failures remembered too."""

    def __init__(self, teacher: str):
        self.teacher = teacher
        self.store: dict = {}
        self.failures = 0

    def get(self, ids, instances):
        missing = [(i, inst) for i, inst in zip(ids, instances) if i not in self.store]
        if missing:
            p, ok = label_batch([inst for _, inst in missing], self.teacher)
            for (i, _), pi, oki in zip(missing, p, ok):
                self.store[i] = (pi, bool(oki))
                if not oki:
                    self.failures += 1
                    log.warning("teacher %s failed on instance %d; skipping its distillation term", self.teacher, i)
        targets = np.stack([self.store[i][0] for i in ids])
        ok = np.array([self.store[i][1] for i in ids])
        return targets, ok


def _run(
    actor: Model,
    critic,
    env: InstanceSampler,
    cfg: TrainConfig,
    mode: str,
    sched: Optional[BetaSchedule],
    test: Optional[EvalSet],
    method: str,
):
    actor = actor.copy()
    critic = critic.copy() if isinstance(critic, Model) else critic
    rng = np.random.default_rng(cfg.seed)
    k = actor.spec.num_links
    threshold = actor.spec.graph_threshold if actor.spec.kind == "gnn" else None
    buffer = ReplayBuffer(cfg.buffer_capacity, k, threshold)
    teacher = _TeacherCache(cfg.teacher) if mode in ("ad_rl", "sup") else None
    if sched is not None:
        sched = sched.with_horizon(cfg.steps - 1)
    eval_every = cfg.eval_every or DEFAULT_RL_EVAL_EVERY
    metrics = MetricsLog(method)
    t0 = time.perf_counter()
    window = {"task": [], "distill": [], "loss": [], "rate": []}
    skipped = 0
    for step in range(cfg.steps):
        beta = beta_value(sched, step) if sched is not None else 0.0
        drawn = env.sample(cfg.env_batch)
        ids = [i for i, _ in drawn]
        instances = [inst for _, inst in drawn]
        batch = Batch.from_instances(instances, threshold)
        p = actor(batch)
        if mode == "sup":
            action = p
        else:
            std = _noise_std(cfg, step)
            action = np.clip(p + rng.normal(0.0, std, size=p.shape) * batch.p_max[:, None],
                             0.0, batch.p_max[:, None])
        reward = sum_rate_batch(batch.gain, batch.weight, batch.noise, action)
        targets = ok = None
        if teacher is not None:
            targets, ok = teacher.get(ids, instances)
        buffer.add(batch, ids, instances, action, reward, targets, ok)
        window["rate"].append(reward)

        if len(buffer) == 0:
            skipped += 1
            continue
        mb, mb_action, mb_reward, mb_target, mb_ok = buffer.sample(rng, cfg.critic_batch)
        if mode == "sup":
            sel = mb_ok
            if np.any(sel):
                p_mb, rec = actor.forward(mb)
                loss, dgrad = distance(p_mb[sel], mb_target[sel], cfg.norm_order)
                up = np.zeros_like(p_mb)
                up[sel] = dgrad
                grad, _ = backward(rec, up)
                actor.params = sgd_step(actor.params, clip_gradient(grad, cfg.grad_clip), cfg.lr)
                window["task"].append(loss)
                window["distill"].append(0.0)
                window["loss"].append(loss)
        else:
            if isinstance(critic, Model):
                v, crec = critic.forward(mb, mb_action)
                err = v - mb_reward
                cgrad, _ = backward(crec, 2.0 * err / len(err))
                critic.params = sgd_step(critic.params, clip_gradient(cgrad, cfg.grad_clip), cfg.critic_lr)
            use_target = mode == "ad_rl"
            grad, task, distill, _ = actor_gradient(
                actor, critic, mb, beta,
                mb_target if use_target else None, mb_ok if use_target else None, cfg.norm_order,
            )
            actor.params = sgd_step(actor.params, clip_gradient(grad, cfg.grad_clip), cfg.lr)
            window["task"].append(task)
            window["distill"].append(distill)
            window["loss"].append(task + beta * distill)

        if (step + 1) % eval_every == 0 or step + 1 == cfg.steps:
            fields = {
                "beta": beta,
                "task_loss": float(np.mean(window["task"])) if window["task"] else None,
                "distill_loss": float(np.mean(window["distill"])) if window["distill"] else None,
                "loss": float(np.mean(window["loss"])) if window["loss"] else None,
                "train_sum_rate": float(np.mean(np.concatenate(window["rate"]))),
                "wall_ms": _wall(cfg, t0),
            }
            if test is not None:
                m = evaluate(actor, test)
                fields.update(test_sum_rate=m.mean_sum_rate, teacher_ratio=m.teacher_ratio)
            metrics.append((step + 1) * cfg.env_batch, **fields)
            window = {"task": [], "distill": [], "loss": [], "rate": []}
    metrics.buffer = buffer
    metrics.skipped_updates = skipped
    metrics.teacher_failures = teacher.failures if teacher is not None else 0
    return actor, critic, metrics


def train_rl(actor: Model, critic, env: InstanceSampler, cfg: TrainConfig, test: Optional[EvalSet] = None):
    return _run(actor, critic, env, cfg, "rl", None, test, "rl")


def train_ad_rl(actor: Model, critic, env: InstanceSampler, cfg: TrainConfig, sched: BetaSchedule,
                test: Optional[EvalSet] = None, method: str = "ad_rl"):
    return _run(actor, critic, env, cfg, "ad_rl", sched, test, method)


def train_rl_supervised(actor: Model, env: InstanceSampler, cfg: TrainConfig, test: Optional[EvalSet] = None):
    """SUP baseline of the RL pattern: imitate teacher labels of fresh instances."""
    actor, _, metrics = _run(actor, None, env, cfg, "sup", None, test, "sup")
    return actor, metrics
