import numpy as np
import pytest

from powerdistill.netgen import GenConfig, NetworkInstance, generate_dataset

# interference-limited geometry used by the learning tests and benchmarks
DENSE = GenConfig(num_links=10, area=200.0, noise_power=1e-5)


def random_instance(rng: np.random.Generator, k: int, noise: float = None) -> NetworkInstance:
    """Dense instance with log-uniform gains and a dominant diagonal on average."""
    gain = 10.0 ** rng.uniform(-3.0, 0.0, size=(k, k))
    gain[np.diag_indices(k)] = 10.0 ** rng.uniform(-0.5, 0.5, size=k)
    weight = rng.uniform(0.5, 1.5, size=k)
    sigma = noise if noise is not None else 10.0 ** rng.uniform(-3.0, -1.0)
    return NetworkInstance(gain=gain, weight=weight, noise_power=sigma, p_max=1.0)


def central_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat, g = x.reshape(-1), out.reshape(-1)
    for n in range(flat.size):
        old = flat[n]
        flat[n] = old + h
        up = f(x)
        flat[n] = old - h
        down = f(x)
        flat[n] = old
        g[n] = (up - down) / (2 * h)
    return out


def rel_err(a, b) -> float:
    """Max abs deviation scaled by the larger max-magnitude of the two vectors."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_data():
    cfg = GenConfig(num_links=4, area=100.0, noise_power=1e-4)
    return cfg, generate_dataset(cfg, 40, 1), generate_dataset(cfg, 20, 2)


def model_fd_error(kind: str, seed: int, k: int = 4, activation: str = "relu", aggregator: str = "sum") -> float:
    """Backprop vs central differences for every parameter and input of a small model.

    The loss is a fixed random linear functional of the output, so the
    upstream gradient is exact.
    """
    from powerdistill.netgen import sample_instance
    from powerdistill.nncore import ArchSpec, ParamSet, backward, build_model

    rng = np.random.default_rng(seed)
    spec = ArchSpec(kind, k, hidden=(12, 10), activation=activation, aggregator=aggregator, gnn_hidden=6,
                    graph_threshold=60.0 if kind == "gnn" else None)
    cfg = GenConfig(num_links=k, area=80.0)
    instances = [sample_instance(cfg, seed * 100 + b) for b in range(3)]
    model = build_model(spec, seed, instances)
    # perturb biases away from zero so every path is exercised
    arrays = {n: v + (0.1 * rng.standard_normal(v.shape) if n.endswith("b") or ".b" in n else 0.0)
              for n, v in model.params.items()}
    model.params = ParamSet(spec, arrays)
    batch = model.batch(instances)
    p = rng.uniform(0.1, 0.9, size=(3, k))
    out, rec = model.forward(batch, p) if kind == "critic" else model.forward(batch)
    c = rng.standard_normal(out.shape)
    grad, igrad = backward(rec, c)

    def loss_at(flat):
        m = model.copy()
        m.params = model.params.from_flat(flat)
        o = m(batch, p) if kind == "critic" else m(batch)
        return float(np.sum(c * o))

    errs = [rel_err(grad.flat(), central_diff(loss_at, model.params.flat()))]
    if kind == "critic":
        fd_p = central_diff(lambda q: float(np.sum(c * model(batch, q))), p)
        errs.append(rel_err(igrad["p"], fd_p))
    return max(errs)


# acceptance results, printed once at the end of the session
ACCEPTANCE: dict = {}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.setdefault(n, []).append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        for line in ACCEPTANCE[n]:
            terminalreporter.write_line(line)
