"""Weighted sum rate (bits/s/Hz) and its closed-form gradient in the powers.

The scalar-argument functions validate and work on one instance; the
``*_batch`` variants take stacked arrays (leading batch axes) and skip
validation so trainers can call them in tight loops.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .netgen import NetworkInstance

LN2 = math.log(2.0)


class PowerAllocation:
    """Transmit powers ``p`` with ``0 <= p[i] <= p_max`` checked on construction."""

    __slots__ = ("p", "p_max")

    def __init__(self, p, p_max: float = 1.0):
        arr = np.array(p, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("powers must be finite")
        if np.any(arr < 0) or np.any(arr > p_max):
            raise ValueError(f"powers must lie in [0, {p_max}], got {arr}")
        arr.setflags(write=False)
        self.p = arr
        self.p_max = float(p_max)

    def __array__(self, dtype=None, copy=None):
        return self.p if dtype is None else self.p.astype(dtype)

    def __len__(self):
        return len(self.p)

    def __repr__(self):
        return f"PowerAllocation({self.p.tolist()}, p_max={self.p_max})"


def as_allocation(inst: NetworkInstance, p) -> np.ndarray:
    if not isinstance(p, PowerAllocation):
        p = PowerAllocation(p, inst.p_max)
    if len(p) != inst.num_links:
        raise ValueError(f"expected {inst.num_links} powers, got {len(p)}")
    return p.p


@dataclasses.dataclass(frozen=True)
class ObjectiveReport:
    sinr: np.ndarray
    rate: np.ndarray
    sum_rate: float


def _offdiag(gain: np.ndarray) -> np.ndarray:
    k = gain.shape[-1]
    return gain * (1.0 - np.eye(k))


def interference_batch(gain, noise, p):
    """``sum_{j != i} p_j gain[j, i] + noise`` for each receiver ``i``."""
    noise = np.asarray(noise, dtype=np.float64)
    return np.einsum("...j,...ji->...i", p, _offdiag(gain)) + noise[..., None]


def sinr_batch(gain, noise, p):
    direct = np.diagonal(gain, axis1=-2, axis2=-1)
    return p * direct / interference_batch(gain, noise, p)


def sum_rate_batch(gain, weight, noise, p):
    return np.sum(weight * np.log2(1.0 + sinr_batch(gain, noise, p)), axis=-1)


def sum_rate_grad_batch(gain, weight, noise, p):
    interf = interference_batch(gain, noise, p)
    total = interf + p * np.diagonal(gain, axis1=-2, axis2=-1)
    # d rate_i / d p_k = (gain[k, i] / total_i - [k != i] gain[k, i] / interf_i) / ln 2
    own = np.einsum("...ki,...i->...k", gain, weight / total)
    cross = np.einsum("...ki,...i->...k", _offdiag(gain), weight / interf)
    return (own - cross) / LN2


def sinr(inst: NetworkInstance, p, i: int) -> float:
    p = as_allocation(inst, p)
    if not 0 <= i < inst.num_links:
        raise IndexError(f"link index {i} out of range for K={inst.num_links}")
    return float(sinr_batch(inst.gain, inst.noise_power, p)[i])


def sum_rate(inst: NetworkInstance, p) -> ObjectiveReport:
    p = as_allocation(inst, p)
    s = sinr_batch(inst.gain, inst.noise_power, p)
    rate = np.log2(1.0 + s)
    return ObjectiveReport(sinr=s, rate=rate, sum_rate=float(np.dot(inst.weight, rate)))


def sum_rate_value(inst: NetworkInstance, p) -> float:
    return sum_rate(inst, p).sum_rate


def sum_rate_grad(inst: NetworkInstance, p) -> np.ndarray:
    p = as_allocation(inst, p)
    return sum_rate_grad_batch(inst.gain, inst.weight, inst.noise_power, p)


def stack(instances):
    """Stack instances into ``(gain, weight, noise, p_max)`` batch arrays."""
    gain = np.stack([inst.gain for inst in instances])
    weight = np.stack([inst.weight for inst in instances])
    noise = np.array([inst.noise_power for inst in instances])
    p_max = np.array([inst.p_max for inst in instances])
    return gain, weight, noise, p_max
