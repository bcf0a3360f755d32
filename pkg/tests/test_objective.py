import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from powerdistill.netgen import NetworkInstance
from powerdistill.objective import (
    PowerAllocation,
    sinr,
    sum_rate,
    sum_rate_batch,
    sum_rate_grad,
    sum_rate_grad_batch,
    sum_rate_value,
)

from conftest import central_diff, random_instance, rel_err


def inst_of(h, sigma, w=None):
    h = np.asarray(h, dtype=float)
    return NetworkInstance(gain=h, weight=np.ones(len(h)) if w is None else w, noise_power=sigma, p_max=1.0)


def test_sinr_single_link():
    assert sinr(inst_of([[1.0]], 1.0), [1.0], 0) == 1.0


def test_sinr_zero_power():
    inst = inst_of([[1.0, 0.5], [0.5, 1.0]], 0.1)
    assert sinr(inst, [0.0, 1.0], 0) == 0.0


def test_sinr_two_links():
    inst = inst_of([[1.0, 0.5], [0.5, 1.0]], 0.1)
    assert sinr(inst, [1.0, 1.0], 0) == pytest.approx(1.0 / 0.6, rel=1e-12)


def test_sinr_uses_sender_to_receiver_orientation():
    # gain[j][i] is sender j -> receiver i, so receiver 0 hears sender 1 through gain[1][0]
    inst = inst_of([[1.0, 0.9], [0.1, 1.0]], 0.1)
    assert sinr(inst, [1.0, 1.0], 0) == pytest.approx(1.0 / (0.1 + 0.1))
    assert sinr(inst, [1.0, 1.0], 1) == pytest.approx(1.0 / (0.9 + 0.1))


def test_sinr_index_out_of_range():
    with pytest.raises(IndexError):
        sinr(inst_of([[1.0]], 1.0), [1.0], 1)


def test_power_allocation_bounds():
    with pytest.raises(ValueError):
        PowerAllocation([0.5, 1.5], 1.0)
    with pytest.raises(ValueError):
        PowerAllocation([-0.1], 1.0)
    assert np.array_equal(np.asarray(PowerAllocation([0.2, 1.0])), [0.2, 1.0])


def test_sum_rate_examples():
    assert sum_rate_value(inst_of([[1.0]], 1.0), [1.0]) == 1.0
    inst = inst_of([[1.0, 0.5], [0.5, 1.0]], 0.1)
    assert sum_rate_value(inst, [0.0, 0.0]) == 0.0
    assert sum_rate_value(inst, [1.0, 1.0]) == pytest.approx(2 * math.log2(1 + 1 / 0.6), rel=1e-12)
    assert sum_rate_value(inst, [1.0, 1.0]) == pytest.approx(2.830, abs=5e-4)


def test_single_link_gradient():
    g = sum_rate_grad(inst_of([[1.0]], 1.0), [1.0])
    assert g[0] == pytest.approx(1.0 / (2.0 * math.log(2.0)), rel=1e-12)


def test_symmetric_gradient_components_equal():
    inst = inst_of([[1.0, 0.3], [0.3, 1.0]], 0.05)
    g = sum_rate_grad(inst, [0.4, 0.4])
    assert g[0] == g[1]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 12))
def test_report_consistency(seed, k):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, k)
    p = rng.uniform(0, 1, size=k)
    rep = sum_rate(inst, p)
    assert np.allclose(rep.rate, np.log2(1 + rep.sinr), rtol=0, atol=0)
    assert math.isclose(rep.sum_rate, float(np.sum(inst.weight * rep.rate)), rel_tol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 10), c=st.floats(1e-3, 1e3))
def test_scale_invariance(seed, k, c):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, k)
    p = rng.uniform(0, 1, size=k)
    scaled = NetworkInstance(gain=inst.gain * c, weight=inst.weight, noise_power=inst.noise_power * c, p_max=1.0)
    assert np.allclose(sum_rate(scaled, p).sinr, sum_rate(inst, p).sinr, rtol=1e-12)
    assert sum_rate_value(scaled, p) == pytest.approx(sum_rate_value(inst, p), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(h=st.floats(1e-3, 1e3), s=st.floats(1e-3, 1e3), p1=st.floats(0, 1), p2=st.floats(0, 1))
def test_single_link_monotone(h, s, p1, p2):
    inst = inst_of([[h]], s)
    if p2 - p1 > 1e-9:
        assert sum_rate_value(inst, [p1]) < sum_rate_value(inst, [p2])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 12))
        inst = random_instance(rng, k)
        p = rng.uniform(0.05, 0.95, size=k)
        fd = central_diff(lambda x: sum_rate_batch(inst.gain, inst.weight, inst.noise_power, x), p)
        worst = max(worst, rel_err(sum_rate_grad(inst, p), fd))
    assert worst <= 1e-5


def test_batch_matches_single(rng):
    insts = [random_instance(rng, 5) for _ in range(6)]
    p = rng.uniform(0, 1, size=(6, 5))
    gain = np.stack([i.gain for i in insts])
    w = np.stack([i.weight for i in insts])
    noise = np.array([i.noise_power for i in insts])
    batch = sum_rate_batch(gain, w, noise, p)
    grads = sum_rate_grad_batch(gain, w, noise, p)
    for b, inst in enumerate(insts):
        assert batch[b] == pytest.approx(sum_rate_value(inst, p[b]), rel=1e-13)
        assert np.allclose(grads[b], sum_rate_grad(inst, p[b]), rtol=1e-13)
