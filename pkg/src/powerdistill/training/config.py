"""Training configuration, distillation-weight schedules and metric logs."""

from __future__ import annotations

import csv
import dataclasses
import io
from typing import Optional

from ..errors import ConfigError

METHODS = ("sup", "unsup", "rl", "ad_unsup", "ad_rl")
BETA_KINDS = ("fixed", "increasing", "decreasing")
CSV_COLUMNS = (
    "epoch_or_step", "method", "beta", "task_loss", "distill_loss",
    "train_sum_rate", "test_sum_rate", "teacher_ratio", "wall_ms",
)


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    method: str = "unsup"
    lr: float = 1e-3
    epochs: int = 200              # dataset pattern
    steps: int = 5000              # RL pattern: environment steps
    batch_size: int = 64
    seed: int = 0
    norm_order: int = 2            # distance used by SUP and the distillation term
    critic_lr: float = 1e-3
    noise_std: tuple = (0.3, 0.01)  # exploration std at the first / last step, in p_max units
    buffer_capacity: int = 50_000
    critic_batch: int = 64
    env_batch: int = 1             # instances drawn per environment step
    eval_every: int = 0            # 0: once per epoch (dataset) / every 100 steps (RL)
    grad_clip: Optional[float] = None   # max global gradient norm, None = off
    teacher: str = "fplinq"        # on-the-fly labeler for the RL pattern
    timing: bool = False           # record wall-clock; off keeps logs byte-reproducible

    def __post_init__(self):
        object.__setattr__(self, "noise_std", tuple(float(x) for x in self.noise_std))
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if not self.lr > 0 or not self.critic_lr > 0:
            raise ConfigError("learning rates must be positive")
        if self.epochs < 1 or self.steps < 1:
            raise ConfigError("epochs and steps must be >= 1")
        if self.norm_order not in (1, 2):
            raise ConfigError("norm_order must be 1 or 2")
        if self.batch_size < 1 or self.critic_batch < 1 or self.env_batch < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity must be >= 1")
        if len(self.noise_std) != 2 or min(self.noise_std) < 0:
            raise ConfigError("noise_std must be a nonnegative (initial, final) pair")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["noise_std"] = list(self.noise_std)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclasses.dataclass(frozen=True)
class BetaSchedule:
    kind: str = "fixed"
    start: float = 0.5
    end: float = 0.5
    horizon: Optional[int] = None   # filled in by the trainer when None

    def __post_init__(self):
        if self.kind not in BETA_KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.start < 0 or self.end < 0:
            raise ConfigError("beta values must be nonnegative")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.kind == "increasing" and not self.end > self.start:
            raise ConfigError("an increasing schedule needs end > start")
        if self.kind == "decreasing" and not self.end < self.start:
            raise ConfigError("a decreasing schedule needs end < start")

    @classmethod
    def fixed(cls, beta: float = 0.5, horizon=None) -> "BetaSchedule":
        return cls("fixed", beta, beta, horizon)

    @classmethod
    def increasing(cls, start: float = 0.1, end: float = 1.0, horizon=None) -> "BetaSchedule":
        return cls("increasing", start, end, horizon)

    @classmethod
    def decreasing(cls, start: float = 1.0, end: float = 0.0, horizon=None) -> "BetaSchedule":
        return cls("decreasing", start, end, horizon)

    def with_horizon(self, horizon: int) -> "BetaSchedule":
        if self.horizon is not None:
            return self
        return dataclasses.replace(self, horizon=max(1, int(horizon)))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BetaSchedule":
        return cls(**d)


def beta_value(s: BetaSchedule, t: int) -> float:
    if t < 0:
        raise ValueError(f"schedule time must be >= 0, got {t}")
    if s.kind == "fixed":
        return s.start
    horizon = s.horizon or 1
    frac = min(t, horizon) / horizon
    return s.start + (s.end - s.start) * frac


class MetricsLog:
    """Append-only list of per-epoch (or per-evaluation-step) rows."""

    def __init__(self, method: str):
        self.method = method
        self.rows: list = []

    def append(self, index: int, **fields) -> None:
        if self.rows and index <= self.rows[-1]["epoch_or_step"]:
            raise ValueError("log indices must increase")
        row = {"epoch_or_step": index, "method": self.method}
        row.update(fields)
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def column(self, name: str) -> list:
        return [row.get(name) for row in self.rows]

    @property
    def final(self) -> dict:
        return self.rows[-1]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if header:
            writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)
