"""Random K-pair D2D interference networks and dataset serialization.

Gains follow a log-distance path-loss law with optional unit-mean exponential
(Rayleigh power) fading. ``gain[i, j]`` is the gain from the sender of link
``i`` to the receiver of link ``j``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError


@dataclasses.dataclass(frozen=True)
class GenConfig:
    num_links: int = 10
    area: float = 500.0            # side of the square deployment area (m)
    d_min: float = 2.0             # tx-rx pair distance range (m)
    d_max: float = 65.0
    pathloss_exp: float = 3.0
    ref_loss: float = 1.0          # linear gain at 1 m
    fading: bool = False
    noise_power: float = 1e-2
    p_max: float = 1.0
    threshold: float = 200.0       # interference-graph edge distance (m)

    def __post_init__(self):
        if int(self.num_links) != self.num_links or self.num_links < 1:
            raise ConfigError(f"num_links must be a positive integer, got {self.num_links}")
        if not self.d_min > 0:
            raise ConfigError("d_min must be positive")
        if self.d_max < self.d_min:
            raise ConfigError("d_max must be >= d_min")
        if not self.pathloss_exp > 0:
            raise ConfigError("pathloss_exp must be positive")
        for name in ("area", "ref_loss", "noise_power", "p_max", "threshold"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - fields
        if unknown:
            raise ConfigError(f"unknown GenConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclasses.dataclass(frozen=True, eq=False)
class NetworkInstance:
    gain: np.ndarray
    weight: np.ndarray
    noise_power: float
    p_max: float
    tx_pos: Optional[np.ndarray] = None
    rx_pos: Optional[np.ndarray] = None
    clipped: bool = False   # some receiver was pulled back inside the area

    def __post_init__(self):
        gain = np.array(self.gain, dtype=np.float64)
        if gain.ndim != 2 or gain.shape[0] != gain.shape[1] or gain.shape[0] < 1:
            raise ConfigError(f"gain must be a non-empty square matrix, got shape {gain.shape}")
        k = gain.shape[0]
        weight = np.array(self.weight, dtype=np.float64).reshape(-1)
        if weight.shape != (k,):
            raise ConfigError(f"weight must have {k} entries")
        if not np.all(np.isfinite(gain)) or np.any(gain < 0):
            raise ConfigError("gains must be finite and nonnegative")
        if np.any(np.diag(gain) <= 0):
            raise ConfigError("direct gains must be positive")
        if np.any(weight < 0):
            raise ConfigError("weights must be nonnegative")
        if not self.noise_power > 0 or not self.p_max > 0:
            raise ConfigError("noise_power and p_max must be positive")
        gain.setflags(write=False)
        weight.setflags(write=False)
        object.__setattr__(self, "gain", gain)
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "noise_power", float(self.noise_power))
        object.__setattr__(self, "p_max", float(self.p_max))
        for name in ("tx_pos", "rx_pos"):
            pos = getattr(self, name)
            if pos is not None:
                pos = np.array(pos, dtype=np.float64)
                if pos.shape != (k, 2):
                    raise ConfigError(f"{name} must have shape ({k}, 2)")
                pos.setflags(write=False)
                object.__setattr__(self, name, pos)

    @property
    def num_links(self) -> int:
        return self.gain.shape[0]

    def __eq__(self, other):
        if not isinstance(other, NetworkInstance):
            return NotImplemented
        return (
            np.array_equal(self.gain, other.gain)
            and np.array_equal(self.weight, other.weight)
            and self.noise_power == other.noise_power
            and self.p_max == other.p_max
            and _opt_equal(self.tx_pos, other.tx_pos)
            and _opt_equal(self.rx_pos, other.rx_pos)
            and self.clipped == other.clipped
        )

    def permuted(self, perm: Sequence[int]) -> "NetworkInstance":
        """Relabel links so new link ``a`` is old link ``perm[a]``."""
        perm = np.asarray(perm)
        return NetworkInstance(
            gain=self.gain[np.ix_(perm, perm)],
            weight=self.weight[perm],
            noise_power=self.noise_power,
            p_max=self.p_max,
            tx_pos=None if self.tx_pos is None else self.tx_pos[perm],
            rx_pos=None if self.rx_pos is None else self.rx_pos[perm],
            clipped=self.clipped,
        )

    def to_dict(self) -> dict:
        d = {}
        if self.tx_pos is not None:
            d["tx"] = self.tx_pos.tolist()
            d["rx"] = self.rx_pos.tolist()
        d.update(
            gain=self.gain.tolist(),
            weight=self.weight.tolist(),
            noise_power=self.noise_power,
            p_max=self.p_max,
        )
        if self.clipped:
            d["clipped"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkInstance":
        return cls(
            gain=d["gain"],
            weight=d["weight"],
            noise_power=d["noise_power"],
            p_max=d["p_max"],
            tx_pos=d.get("tx"),
            rx_pos=d.get("rx"),
            clipped=bool(d.get("clipped", False)),
        )


def _opt_equal(a, b):
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


@dataclasses.dataclass(frozen=True)
class InterferenceGraph:
    num_links: int
    edges: tuple          # ((j, i), ...) directed sender-j -> receiver-i, sorted
    edge_gain: tuple      # gain[j, i] for each edge

    def mask(self) -> np.ndarray:
        """Dense ``(K, K)`` 0/1 matrix, ``mask[j, i] = 1`` for edge j -> i."""
        m = np.zeros((self.num_links, self.num_links))
        for j, i in self.edges:
            m[j, i] = 1.0
        return m

    def neighbors(self, i: int) -> list:
        return [j for j, dst in self.edges if dst == i]


def complete_graph(inst: NetworkInstance) -> InterferenceGraph:
    k = inst.num_links
    edges = tuple((j, i) for j in range(k) for i in range(k) if i != j)
    return InterferenceGraph(k, edges, tuple(float(inst.gain[j, i]) for j, i in edges))


def pair_distances(tx: np.ndarray, rx: np.ndarray) -> np.ndarray:
    """``d[i, j]`` = distance from transmitter ``i`` to receiver ``j``."""
    diff = tx[:, None, :] - rx[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def build_graph(inst: NetworkInstance, threshold_m: float) -> InterferenceGraph:
    if not threshold_m > 0:
        raise ConfigError("threshold must be positive")
    if inst.tx_pos is None or inst.rx_pos is None:
        raise ConfigError("instance has no positions; use complete_graph()")
    d = pair_distances(inst.tx_pos, inst.rx_pos)
    k = inst.num_links
    edges = tuple(
        (j, i) for j in range(k) for i in range(k) if j != i and d[j, i] < threshold_m
    )
    return InterferenceGraph(k, edges, tuple(float(inst.gain[j, i]) for j, i in edges))


def graph_masks(instances: Sequence[NetworkInstance], threshold_m: Optional[float]) -> np.ndarray:
    """Stacked ``(B, K, K)`` edge masks; ``None`` threshold gives complete graphs."""
    k = instances[0].num_links
    off = 1.0 - np.eye(k)
    if threshold_m is None:
        return np.broadcast_to(off, (len(instances), k, k)).copy()
    out = np.empty((len(instances), k, k))
    for b, inst in enumerate(instances):
        if inst.tx_pos is None:
            out[b] = off
        else:
            out[b] = (pair_distances(inst.tx_pos, inst.rx_pos) < threshold_m) * off
    return out


def derived_seed(seed: int, *keys: int) -> int:
    """Independent 64-bit child seed for ``(seed, *keys)``."""
    words = np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(2, np.uint32)
    return int(words[0]) << 32 | int(words[1])


def path_gain(cfg: GenConfig, dist: np.ndarray) -> np.ndarray:
    # the log-distance law is only used from the 1 m reference distance outward
    return cfg.ref_loss * np.maximum(dist, 1.0) ** (-cfg.pathloss_exp)


def sample_instance(cfg: GenConfig, seed: int) -> NetworkInstance:
    rng = np.random.default_rng(seed)
    k = cfg.num_links
    tx = rng.uniform(0.0, cfg.area, size=(k, 2))
    # uniform on the annulus: radius density proportional to r
    r = np.sqrt(rng.uniform(cfg.d_min ** 2, cfg.d_max ** 2, size=k))
    theta = rng.uniform(0.0, 2.0 * math.pi, size=k)
    rx = tx + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    clipped = bool(np.any((rx < 0) | (rx > cfg.area)))
    rx = np.clip(rx, 0.0, cfg.area)
    gain = path_gain(cfg, pair_distances(tx, rx))
    if cfg.fading:
        gain = gain * rng.exponential(1.0, size=(k, k))
    return NetworkInstance(
        gain=gain,
        weight=np.ones(k),
        noise_power=cfg.noise_power,
        p_max=cfg.p_max,
        tx_pos=tx,
        rx_pos=rx,
        clipped=clipped,
    )


@dataclasses.dataclass(eq=False)
class Dataset:
    instances: list
    config: GenConfig
    seed: int

    def __post_init__(self):
        if not self.instances:
            raise ConfigError("a dataset needs at least one instance")
        first = self.instances[0]
        for inst in self.instances[1:]:
            if (
                inst.num_links != first.num_links
                or inst.noise_power != first.noise_power
                or inst.p_max != first.p_max
            ):
                raise ConfigError("all instances must share K, noise_power and p_max")

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[NetworkInstance]:
        return iter(self.instances)

    def __getitem__(self, idx):
        return self.instances[idx]

    @property
    def num_links(self) -> int:
        return self.instances[0].num_links

    def to_json(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "seed": self.seed,
            "instances": [inst.to_dict() for inst in self.instances],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Dataset":
        return cls(
            instances=[NetworkInstance.from_dict(d) for d in doc["instances"]],
            config=GenConfig.from_dict(doc["config"]),
            seed=doc["seed"],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_json(json.loads(Path(path).read_text()))


def generate_dataset(cfg: GenConfig, n: int, seed: int) -> Dataset:
    if n <= 0:
        raise ValueError(f"dataset size must be positive, got {n}")
    instances = [sample_instance(cfg, derived_seed(seed, i)) for i in range(n)]
    return Dataset(instances=instances, config=cfg, seed=seed)


class InstanceSampler:
    """Endless stream of fresh instances for the RL pattern.

    Instance ``n`` is ``sample_instance(cfg, derived_seed(seed, n))``, so its
    index doubles as a stable id for memoizing teacher labels.
    """

    def __init__(self, cfg: GenConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.count = 0

    def sample(self, n: int = 1) -> list:
        out = []
        for _ in range(n):
            out.append((self.count, sample_instance(self.cfg, derived_seed(self.seed, self.count))))
            self.count += 1
        return out
