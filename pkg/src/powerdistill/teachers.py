"""Classical power-control solvers used as teachers.

``wmmse_solve`` and ``fplinq_solve`` are the scalar-channel specializations of
the weighted-MMSE block-coordinate scheme and the fractional-programming
(quadratic transform) scheme. Both start from full power by default and ascend
the weighted sum rate monotonically. ``brute_force_solve`` enumerates a power
grid and is only meant for tiny instances.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import CapacityError, SolverError
from .netgen import Dataset, NetworkInstance
from .objective import PowerAllocation, as_allocation, stack, sum_rate_batch, sum_rate_grad_batch, sum_rate_value

TEACHERS = ("wmmse", "fplinq", "oracle")
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 500
MAX_GRID_POINTS = 10 ** 7
MAX_GRID_LINKS = 8


@dataclasses.dataclass(frozen=True)
class TeacherLabel:
    p: PowerAllocation
    teacher: str
    sum_rate: float
    iters: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "p": self.p.p.tolist(),
            "teacher": self.teacher,
            "sum_rate": self.sum_rate,
            "iters": self.iters,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict, p_max: float) -> "TeacherLabel":
        return cls(
            p=PowerAllocation(d["p"], p_max),
            teacher=d["teacher"],
            sum_rate=float(d["sum_rate"]),
            iters=int(d["iters"]),
            converged=bool(d["converged"]),
        )


@dataclasses.dataclass(frozen=True)
class SolverTrace:
    objective: list        # sum rate at the init, after every iteration and after every revival
    residual: float        # max per-link power change of the last iteration


@dataclasses.dataclass(frozen=True)
class OracleSolution:
    p: PowerAllocation
    objective: float
    levels: int


def _wmmse_step(gain, weight, noise, p_max, p):
    direct = np.diagonal(gain, axis1=-2, axis2=-1)
    sqrt_direct = np.sqrt(direct)
    v = np.sqrt(p)
    received = np.einsum("bj,bji->bi", p, gain) + noise[:, None]
    u = sqrt_direct * v / received
    mse_weight = 1.0 / (1.0 - u * sqrt_direct * v)
    num = weight * mse_weight * u * sqrt_direct
    den = np.einsum("bij,bj->bi", gain, weight * mse_weight * u * u)
    v_new = np.clip(num / den, 0.0, np.sqrt(p_max)[:, None])
    return v_new * v_new


def _fp_step(gain, weight, noise, p_max, p):
    direct = np.diagonal(gain, axis1=-2, axis2=-1)
    signal = p * direct
    total = np.einsum("bj,bji->bi", p, gain) + noise[:, None]
    interf = total - signal
    ratio = signal / interf
    y = np.sqrt(weight * (1.0 + ratio) * signal) / total
    den = np.einsum("bij,bj->bi", gain, y * y)
    p_new = weight * (1.0 + ratio) * direct * y * y / (den * den)
    return np.minimum(p_new, p_max[:, None])


_STEPS = {"wmmse": _wmmse_step, "fplinq": _fp_step}


def solve_batch(
    teacher: str,
    gain: np.ndarray,
    weight: np.ndarray,
    noise: np.ndarray,
    p_max: np.ndarray,
    init: Optional[np.ndarray] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    record_trace: bool = False,
):
    """Run WMMSE or FP on a stack of instances.

    Each instance stops updating once its max power change drops below
    ``tol``, so results do not depend on what it is batched with.
    Returns ``(p, iters, converged, residual, traces)``.
    """
    if teacher not in _STEPS:
        raise ValueError(f"unknown iterative teacher {teacher!r}")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    step = _STEPS[teacher]
    n = gain.shape[0]
    p = np.array(p_max[:, None] * np.ones(gain.shape[:2]) if init is None else init, dtype=np.float64)
    iters = np.zeros(n, dtype=int)
    residual = np.full(n, np.inf)
    active = np.ones(n, dtype=bool)
    revivals = np.zeros(n, dtype=int)
    traces = [[float(v)] for v in sum_rate_batch(gain, weight, noise, p)] if record_trace else None
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            p_new = step(gain[idx], weight[idx], noise[idx], p_max[idx], p[idx])
        bad = ~np.all(np.isfinite(p_new), axis=1)
        if np.any(bad):
            raise SolverError(
                f"{teacher}: non-finite power at iteration {it}",
                iteration=it,
                instance_index=int(idx[np.argmax(bad)]),
            )
        change = np.max(np.abs(p_new - p[idx]), axis=1)
        p[idx] = p_new
        iters[idx] = it
        residual[idx] = change
        if record_trace:
            vals = sum_rate_batch(gain[idx], weight[idx], noise[idx], p_new)
            for b, v in zip(idx, vals):
                traces[b].append(float(v))
        done = idx[change < tol]
        if done.size:
            revived = _revive(gain[done], weight[done], noise[done], p_max[done], p[done], revivals[done])
            for b, p_b in zip(done, revived):
                if p_b is None:
                    active[b] = False
                    continue
                p[b] = p_b
                revivals[b] += 1
                if record_trace:
                    traces[b].append(float(sum_rate_batch(gain[b], weight[b], noise[b], p_b)))
    converged = ~active
    return p, iters, converged, residual, traces


OFF_LEVEL = 1e-6       # powers below this fraction of p_max count as switched off
REVIVE_STEPS = (1e-1, 1e-2, 1e-3, 1e-4)


def _revive(gain, weight, noise, p_max, p, used):
    """Switch back on a link stuck at zero whose gradient points inward.

    Zero is a fixed point of both multiplicative updates even where turning
    the link on would help. For each converged instance, the off link with the
    largest positive gradient is set to the first trial power (a fraction of
    p_max) that does not lower the objective. Each instance may revive at most
    K times, so the loop terminates. Returns per instance the new powers or
    None when the point is already stationary.
    """
    grad = sum_rate_grad_batch(gain, weight, noise, p)
    base = sum_rate_batch(gain, weight, noise, p)
    out = []
    for b in range(len(p)):
        off = (p[b] <= OFF_LEVEL * p_max[b]) & (grad[b] > 0)
        if not np.any(off) or used[b] >= p.shape[1]:
            out.append(None)
            continue
        i = int(np.argmax(np.where(off, grad[b], -np.inf)))
        choice = None
        for frac in REVIVE_STEPS:
            trial = p[b].copy()
            trial[i] = frac * p_max[b]
            if sum_rate_batch(gain[b], weight[b], noise[b], trial) >= base[b]:
                choice = trial
                break
        out.append(choice)
    return out


def _solve_one(teacher, inst, init, max_iter, tol):
    p0 = as_allocation(inst, inst.p_max * np.ones(inst.num_links) if init is None else init)
    gain, weight, noise, p_max = stack([inst])
    p, iters, conv, resid, traces = solve_batch(
        teacher, gain, weight, noise, p_max, p0[None, :], max_iter, tol, record_trace=True
    )
    alloc = PowerAllocation(p[0], inst.p_max)
    label = TeacherLabel(
        p=alloc,
        teacher=teacher,
        sum_rate=sum_rate_value(inst, alloc),
        iters=int(iters[0]),
        converged=bool(conv[0]),
    )
    return label, SolverTrace(objective=traces[0], residual=float(resid[0]))


def wmmse_solve(inst: NetworkInstance, init=None, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL):
    return _solve_one("wmmse", inst, init, max_iter, tol)


def fplinq_solve(inst: NetworkInstance, init=None, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL):
    return _solve_one("fplinq", inst, init, max_iter, tol)


def brute_force_solve(inst: NetworkInstance, levels: int) -> OracleSolution:
    k = inst.num_links
    if levels < 2:
        raise ValueError("need at least 2 power levels")
    if k > MAX_GRID_LINKS or levels ** k > MAX_GRID_POINTS:
        raise CapacityError(f"grid of {levels}^{k} points exceeds the brute-force guard")
    grid = np.linspace(0.0, inst.p_max, levels)
    best_val, best_p = -np.inf, None
    chunk = max(1, 2 ** 16 // levels)
    # digits are reversed so enumeration runs in colexicographic order (last link
    # most significant); argmax keeps the first maximizer, so ties resolve to the
    # colex-smallest vector, e.g. (1, 0) before (0, 1)
    combos = itertools.product(range(levels), repeat=k)
    while True:
        block = np.array(list(itertools.islice(combos, chunk * levels)), dtype=int)
        if block.size == 0:
            break
        p = grid[block[:, ::-1]]
        vals = sum_rate_batch(inst.gain[None], inst.weight[None], np.array([inst.noise_power]), p)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_p = float(vals[j]), p[j]
    return OracleSolution(p=PowerAllocation(best_p, inst.p_max), objective=best_val, levels=levels)


def label_dataset(
    ds: Sequence[NetworkInstance],
    teacher: str = "fplinq",
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    levels: int = 11,
) -> list:
    """One label per instance, order-aligned; full-power initialization."""
    if teacher not in TEACHERS:
        raise ValueError(f"unknown teacher {teacher!r}; choose from {TEACHERS}")
    labels = []
    for idx, inst in enumerate(ds):
        try:
            if teacher == "oracle":
                sol = brute_force_solve(inst, levels)
                labels.append(TeacherLabel(sol.p, "oracle", sol.objective, levels ** inst.num_links, True))
            else:
                labels.append(_solve_one(teacher, inst, None, max_iter, tol)[0])
        except SolverError as exc:
            raise SolverError(f"instance {idx}: {exc}", exc.iteration, idx) from exc
    return labels


def label_batch(instances: Sequence[NetworkInstance], teacher: str, max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL):
    """Vectorized labeling for on-the-fly use; returns ``(p, ok)`` arrays.

    Instances whose solve goes non-finite are reported through ``ok`` rather
    than raising, so the caller can skip them.
    """
    gain, weight, noise, p_max = stack(instances)
    try:
        p = solve_batch(teacher, gain, weight, noise, p_max, None, max_iter, tol)[0]
        return p, np.ones(len(instances), dtype=bool)
    except SolverError:
        out = np.zeros_like(weight)
        ok = np.zeros(len(instances), dtype=bool)
        for b in range(len(instances)):
            try:
                out[b] = solve_batch(teacher, gain[b:b + 1], weight[b:b + 1], noise[b:b + 1],
                                     p_max[b:b + 1], None, max_iter, tol)[0][0]
                ok[b] = True
            except SolverError:
                pass
        return out, ok


def labels_to_array(labels: Sequence[TeacherLabel]) -> np.ndarray:
    return np.stack([lab.p.p for lab in labels])


def save_labels(labels: Sequence[TeacherLabel], path) -> None:
    Path(path).write_text(json.dumps([lab.to_dict() for lab in labels]))


def load_labels(path, p_max: float = 1.0) -> list:
    return [TeacherLabel.from_dict(d, p_max) for d in json.loads(Path(path).read_text())]
