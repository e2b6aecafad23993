import numpy as np
import pytest

from adaptive_tickets.masking import BinaryMask
from adaptive_tickets.tensor import ParamSet, init_params


def random_mask(shapes, rng, p=0.5):
    return BinaryMask([rng.random(s) < p for s in shapes])


def flatten(params: ParamSet) -> np.ndarray:
    return np.concatenate([w.reshape(-1) for w in params.weights] + list(params.biases))


def unflatten(flat, like: ParamSet) -> ParamSet:
    flat = np.asarray(flat, dtype=np.float64)
    weights, biases, pos = [], [], 0
    for w in like.weights:
        weights.append(flat[pos : pos + w.size].reshape(w.shape))
        pos += w.size
    for b in like.biases:
        biases.append(flat[pos : pos + b.size].copy())
        pos += b.size
    return ParamSet(weights, biases)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net():
    params = init_params([3, 5, 4, 2], seed=7)
    # non-zero biases so bias paths are exercised
    for i, b in enumerate(params.biases):
        b[:] = np.linspace(-0.3, 0.3, b.size) * (i + 1)
    return params


# filled by tests/test_acceptance.py, echoed once at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
