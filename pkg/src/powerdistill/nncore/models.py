"""Student architectures (MLP, GNN) and the DPG critic.

All three are built on :mod:`.autodiff`. A forward pass returns the output
array plus a :class:`Record`; ``backward(record, upstream)`` turns an external
``d loss / d output`` into parameter gradients and input gradients (the
critic's ``d V / d p`` comes out this way).
"""

from __future__ import annotations

import dataclasses
import json
import math
from collections import OrderedDict
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from ..errors import ConfigError, ShapeError
from ..netgen import NetworkInstance, graph_masks
from . import autodiff as ad

KINDS = ("mlp", "gnn", "critic")
AGGREGATORS = ("sum", "max")
_LOG_FLOOR = 1e-30


@dataclasses.dataclass(frozen=True)
class ArchSpec:
    kind: str
    num_links: int
    hidden: tuple = (256, 256)      # mlp / critic layer widths
    activation: str = "relu"
    rounds: int = 2                 # gnn message-passing rounds
    aggregator: str = "sum"
    gnn_hidden: int = 64
    graph_threshold: Optional[float] = None   # gnn edge distance (m); None = complete graph

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind not in KINDS:
            raise ConfigError(f"unknown architecture kind {self.kind!r}")
        if self.num_links < 1:
            raise ConfigError("num_links must be >= 1")
        if self.activation not in ad.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"unknown aggregator {self.aggregator!r}")
        if any(h < 1 for h in self.hidden) or self.gnn_hidden < 1 or self.rounds < 1:
            raise ConfigError("layer widths and rounds must be >= 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(**d)


class ParamSet:
    """Named float64 arrays with a fixed layout and a flat-vector view."""

    def __init__(self, spec: ArchSpec, arrays):
        self.spec = spec
        self.arrays = OrderedDict((k, np.asarray(v, dtype=np.float64)) for k, v in arrays.items())

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def shapes(self):
        return [(k, v.shape) for k, v in self.arrays.items()]

    @property
    def size(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays.values()])

    def from_flat(self, vec: np.ndarray) -> "ParamSet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeError(f"flat vector has shape {vec.shape}, expected ({self.size},)")
        out, pos = OrderedDict(), 0
        for k, v in self.arrays.items():
            out[k] = vec[pos:pos + v.size].reshape(v.shape).copy()
            pos += v.size
        return type(self)(self.spec, out)

    def copy(self) -> "ParamSet":
        return type(self)(self.spec, OrderedDict((k, v.copy()) for k, v in self.arrays.items()))

    def zeros_like(self) -> "ParamSet":
        return type(self)(self.spec, OrderedDict((k, np.zeros_like(v)) for k, v in self.arrays.items()))

    def congruent(self, other: "ParamSet") -> bool:
        return self.shapes() == other.shapes()

    def equals(self, other: "ParamSet") -> bool:
        return self.congruent(other) and all(
            np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items()
        )

    def to_json(self) -> dict:
        return {k: v.tolist() for k, v in self.arrays.items()}


class Gradient(ParamSet):
    """d loss / d parameter, laid out exactly like its :class:`ParamSet`."""


def _layer_table(spec: ArchSpec):
    """``[(name, shape, fan_in, fan_out)]`` for every parameter."""
    k = spec.num_links
    table = []

    def dense(prefix, widths):
        for n, (i, o) in enumerate(zip(widths[:-1], widths[1:])):
            table.append((f"{prefix}{n}.w", (i, o), i, o))
            table.append((f"{prefix}{n}.b", (o,), None, None))

    if spec.kind == "mlp":
        dense("layer", [k * k + k, *spec.hidden, k])
    elif spec.kind == "critic":
        dense("layer", [k * k + 2 * k, *spec.hidden, 1])
    else:
        h = spec.gnn_hidden
        for r in range(spec.rounds):
            state = h if r > 0 else 0
            # message: [sender direct gain, sender weight, cross gain, sender state] -> h -> h
            fan = 3 + state
            table.append((f"msg{r}.w_node", (2, h), fan, h))
            table.append((f"msg{r}.w_edge", (1, h), fan, h))
            if state:
                table.append((f"msg{r}.w_state", (h, h), fan, h))
            table.append((f"msg{r}.b0", (h,), None, None))
            table.append((f"msg{r}.w1", (h, h), h, h))
            table.append((f"msg{r}.b1", (h,), None, None))
            # update: [own direct gain, own weight, aggregated message, own state] -> h -> h
            fan = 2 + h + state
            table.append((f"upd{r}.w_node", (2, h), fan, h))
            table.append((f"upd{r}.w_msg", (h, h), fan, h))
            if state:
                table.append((f"upd{r}.w_state", (h, h), fan, h))
            table.append((f"upd{r}.b0", (h,), None, None))
            table.append((f"upd{r}.w1", (h, h), h, h))
            table.append((f"upd{r}.b1", (h,), None, None))
        table.append(("readout.w", (h, 1), h, 1))
        table.append(("readout.b", (1,), None, None))
    return table


def init_params(spec: ArchSpec, seed: int) -> ParamSet:
    """Glorot-uniform weights, zero biases."""
    if not isinstance(spec, ArchSpec):
        raise ConfigError("init_params needs an ArchSpec")
    rng = np.random.default_rng(seed)
    arrays = OrderedDict()
    for name, shape, fan_in, fan_out in _layer_table(spec):
        if fan_in is None:
            arrays[name] = np.zeros(shape)
        else:
            a = math.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng.uniform(-a, a, size=shape)
    return ParamSet(spec, arrays)


@dataclasses.dataclass(frozen=True)
class Normalizer:
    """Standardizes log10 gains, separately for direct and cross links."""

    direct_mean: float = 0.0
    direct_std: float = 1.0
    cross_mean: float = 0.0
    cross_std: float = 1.0

    @classmethod
    def fit(cls, instances: Sequence[NetworkInstance]) -> "Normalizer":
        gain = np.stack([inst.gain for inst in instances])
        k = gain.shape[-1]
        logs = np.log10(np.maximum(gain, _LOG_FLOOR))
        direct = np.diagonal(logs, axis1=-2, axis2=-1)
        cross = logs[:, ~np.eye(k, dtype=bool)]
        dstd = float(direct.std()) or 1.0
        cstd = float(cross.std()) if cross.size else 1.0
        return cls(
            float(direct.mean()),
            dstd,
            float(cross.mean()) if cross.size else 0.0,
            cstd or 1.0,
        )

    def apply(self, gain: np.ndarray) -> np.ndarray:
        k = gain.shape[-1]
        logs = np.log10(np.maximum(gain, _LOG_FLOOR))
        eye = np.eye(k, dtype=bool)
        return np.where(
            eye,
            (logs - self.direct_mean) / self.direct_std,
            (logs - self.cross_mean) / self.cross_std,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass
class Batch:
    """Stacked instances plus the per-instance interference-graph masks."""

    gain: np.ndarray      # (B, K, K)
    weight: np.ndarray    # (B, K)
    noise: np.ndarray     # (B,)
    p_max: np.ndarray     # (B,)
    mask: np.ndarray      # (B, K, K), mask[b, j, i] = 1 for edge j -> i

    @classmethod
    def from_instances(cls, instances, threshold: Optional[float] = None) -> "Batch":
        instances = list(instances)
        return cls(
            gain=np.stack([inst.gain for inst in instances]),
            weight=np.stack([inst.weight for inst in instances]),
            noise=np.array([inst.noise_power for inst in instances]),
            p_max=np.array([inst.p_max for inst in instances]),
            mask=graph_masks(instances, threshold),
        )

    def __len__(self):
        return self.gain.shape[0]

    @property
    def num_links(self) -> int:
        return self.gain.shape[-1]

    def take(self, idx) -> "Batch":
        return Batch(self.gain[idx], self.weight[idx], self.noise[idx], self.p_max[idx], self.mask[idx])


BatchLike = Union[NetworkInstance, Sequence[NetworkInstance], Batch]


def as_batch(data: BatchLike, graph=None, threshold: Optional[float] = None) -> tuple:
    """``(batch, single)``; ``graph`` (an InterferenceGraph) overrides the mask."""
    if isinstance(data, NetworkInstance):
        b = Batch.from_instances([data], threshold)
        if graph is not None:
            if graph.num_links != data.num_links:
                raise ShapeError("graph and instance disagree on the number of links")
            b.mask = graph.mask()[None]
        return b, True
    if isinstance(data, Batch):
        return data, False
    return Batch.from_instances(data, threshold), False


@dataclasses.dataclass
class Record:
    """Everything ``backward`` needs from one forward pass."""

    output: ad.Tensor
    params: dict          # name -> leaf Tensor
    inputs: dict          # name -> leaf Tensor
    single: bool
    spec: ArchSpec

    @property
    def value(self) -> np.ndarray:
        v = self.output.value
        return v[0] if self.single else v


def _leaves(params: ParamSet):
    return OrderedDict((k, ad.Tensor(v)) for k, v in params.items())


def _dense_stack(x, leaves, n_layers, act: str):
    for n in range(n_layers):
        x = ad.dense(x, leaves[f"layer{n}.w"], leaves[f"layer{n}.b"], act if n < n_layers - 1 else None)
    return x


def _check_kind(params: ParamSet, kind: str, batch: Batch):
    if params.spec.kind != kind:
        raise ShapeError(f"expected a {kind} parameter set, got {params.spec.kind}")
    if batch.num_links != params.spec.num_links:
        raise ShapeError(f"model built for K={params.spec.num_links}, instance has K={batch.num_links}")


def _flat_features(batch: Batch, norm: Normalizer) -> np.ndarray:
    g = norm.apply(batch.gain).reshape(len(batch), -1)
    return np.concatenate([g, batch.weight], axis=1)


def _squash(z: ad.Tensor, p_max: np.ndarray) -> ad.Tensor:
    return ad.sigmoid(z) * p_max[:, None]


def mlp_forward(params: ParamSet, inst: BatchLike, norm: Optional[Normalizer] = None):
    batch, single = as_batch(inst)
    _check_kind(params, "mlp", batch)
    norm = norm or Normalizer()
    leaves = _leaves(params)
    x = ad.Tensor(_flat_features(batch, norm))
    z = _dense_stack(x, leaves, len(params.spec.hidden) + 1, params.spec.activation)
    out = _squash(z, batch.p_max)
    rec = Record(out, leaves, {"x": x}, single, params.spec)
    return rec.value, rec


def gnn_forward(params: ParamSet, inst: BatchLike, g=None, norm: Optional[Normalizer] = None):
    """Message passing over the interference graph.

    Round 0 messages are built from (sender direct gain, sender weight, cross
    gain) only; later rounds also see the sender's hidden state.
    """
    batch, single = as_batch(inst, g, params.spec.graph_threshold)
    _check_kind(params, "gnn", batch)
    spec = params.spec
    norm = norm or Normalizer()
    leaves = _leaves(params)
    act = spec.activation
    ngain = norm.apply(batch.gain)
    k = batch.num_links
    node = ad.Tensor(np.stack([np.diagonal(ngain, axis1=1, axis2=2), batch.weight], axis=-1))  # (B,K,2)
    edge = ad.Tensor(ngain[..., None])          # (B,K,K,1), [b, j, i] sender j -> receiver i
    state = None
    for r in range(spec.rounds):
        send = node @ leaves[f"msg{r}.w_node"]
        if state is not None:
            send = send + state @ leaves[f"msg{r}.w_state"]
        hidden = ad.edge_input(send, edge, leaves[f"msg{r}.w_edge"], leaves[f"msg{r}.b0"], act)
        msg = ad.dense(hidden, leaves[f"msg{r}.w1"], leaves[f"msg{r}.b1"], act)   # (B,K,K,H)
        if spec.aggregator == "sum":
            # fixed 1/(K-1) scale: still a sum (degree information survives) but
            # the update MLP sees unit-scale inputs whatever K is
            agg = ad.masked_sum(msg, batch.mask) * (1.0 / max(1, k - 1))
        else:
            agg = ad.masked_max(msg, batch.mask[..., None], axis=1)
        upd = node @ leaves[f"upd{r}.w_node"] + agg @ leaves[f"upd{r}.w_msg"] + leaves[f"upd{r}.b0"]
        if state is not None:
            upd = upd + state @ leaves[f"upd{r}.w_state"]
        upd = ad.ACTIVATIONS[act](upd)
        state = ad.dense(upd, leaves[f"upd{r}.w1"], leaves[f"upd{r}.b1"], act)  # (B,K,H)
    z = ad.reshape(state @ leaves["readout.w"] + leaves["readout.b"], (len(batch), k))
    out = _squash(z, batch.p_max)
    rec = Record(out, leaves, {"node": node, "edge": edge}, single, spec)
    return rec.value, rec


def critic_forward(params: ParamSet, inst: BatchLike, p, norm: Optional[Normalizer] = None):
    """Value estimate V(p | h, w); differentiable in the parameters and in p."""
    batch, single = as_batch(inst)
    _check_kind(params, "critic", batch)
    norm = norm or Normalizer()
    p = np.asarray(p, dtype=np.float64)
    p = p.reshape(len(batch), -1)
    if p.shape[1] != batch.num_links:
        raise ShapeError(f"power vector has {p.shape[1]} entries, expected {batch.num_links}")
    leaves = _leaves(params)
    x = ad.Tensor(_flat_features(batch, norm))
    p_in = ad.Tensor(p)
    inp = ad.concat([x, p_in * (1.0 / batch.p_max[:, None])], axis=1)
    v = _dense_stack(inp, leaves, len(params.spec.hidden) + 1, params.spec.activation)
    out = ad.reshape(v, (len(batch),))
    rec = Record(out, leaves, {"x": x, "p": p_in}, single, params.spec)
    return rec.value, rec


def backward(record: Record, upstream):
    """Reverse-mode pass: ``(Gradient, {input name: d loss / d input})``."""
    upstream = np.asarray(upstream, dtype=np.float64)
    expected = record.value.shape
    if upstream.shape != expected:
        raise ShapeError(f"upstream gradient has shape {upstream.shape}, output is {expected}")
    if record.single:
        upstream = upstream[None]
    names = list(record.params) + list(record.inputs)
    tensors = list(record.params.values()) + list(record.inputs.values())
    grads = ad.grad(record.output, upstream, tensors)
    n = len(record.params)
    pgrad = Gradient(record.spec, OrderedDict(zip(names[:n], grads[:n])))
    igrad = {}
    for name, g in zip(names[n:], grads[n:]):
        igrad[name] = g[0] if record.single else g
    return pgrad, igrad


def sgd_step(params: ParamSet, grad: ParamSet, lr: float) -> ParamSet:
    """Descent step ``params - lr * grad``; returns a new ParamSet."""
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    if not params.congruent(grad):
        raise ShapeError("gradient layout does not match the parameters")
    return ParamSet(
        params.spec,
        OrderedDict((k, v - lr * grad.arrays[k]) for k, v in params.items()),
    )


FORWARDS = {"mlp": mlp_forward, "gnn": gnn_forward}


@dataclasses.dataclass
class Model:
    """Parameters plus the normalization constants they were trained with."""

    params: ParamSet
    norm: Normalizer = dataclasses.field(default_factory=Normalizer)

    @property
    def spec(self) -> ArchSpec:
        return self.params.spec

    def forward(self, data: BatchLike, p=None):
        if self.spec.kind == "critic":
            return critic_forward(self.params, data, p, self.norm)
        return FORWARDS[self.spec.kind](self.params, data, norm=self.norm)

    def __call__(self, data: BatchLike, p=None) -> np.ndarray:
        return self.forward(data, p)[0]

    def batch(self, instances) -> Batch:
        threshold = self.spec.graph_threshold if self.spec.kind == "gnn" else None
        return Batch.from_instances(instances, threshold)

    def copy(self) -> "Model":
        return Model(self.params.copy(), self.norm)

    def to_json(self) -> dict:
        return {"arch": self.spec.to_dict(), "norm": self.norm.to_dict(), "params": self.params.to_json()}

    @classmethod
    def from_json(cls, doc: dict) -> "Model":
        spec = ArchSpec.from_dict(doc["arch"])
        template = init_params(spec, 0)
        arrays = OrderedDict()
        for name, shape in template.shapes():
            arr = np.asarray(doc["params"][name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"checkpoint parameter {name} has shape {arr.shape}, expected {shape}")
            arrays[name] = arr
        return cls(ParamSet(spec, arrays), Normalizer(**doc["norm"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "Model":
        return cls.from_json(json.loads(Path(path).read_text()))


def build_model(spec: ArchSpec, seed: int, instances=None) -> Model:
    norm = Normalizer.fit(instances) if instances is not None else Normalizer()
    return Model(init_params(spec, seed), norm)
