import numpy as np
import pytest

from vflsim import nn

FD_STEP = 1e-5
# denominators below this are treated as absolute error (both sides ~0)
REL_FLOOR = 1e-4


def rel_err(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_FLOOR)


def central_diff(f, array: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Numerical gradient of scalar ``f()`` w.r.t. ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = array[idx]
        array[idx] = old + h
        up = f()
        array[idx] = old - h
        down = f()
        array[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def min_relu_margin(model: nn.MlpModel, x) -> float:
    """Smallest |pre-activation| feeding a relu; finite differences are unreliable near 0."""
    _, trace = nn.forward(model, x)
    margins = [np.abs(z).min() for z, layer in zip(trace.pre_activations, model.layers)
               if layer.activation == "relu"]
    return float(min(margins)) if margins else np.inf


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(capsys):
    def record(tag: str, ok: bool, detail: str) -> bool:
        line = f"{tag}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
