import numpy as np
import pytest

from fslsage.numcore import MLPSpec, ParamVector

ACCEPTANCE_LINES: list[str] = []


def random_spec(rng, head="softmax_xent", n_layers=None, max_width=6, in_dim=None):
    L = int(rng.integers(1, 4)) if n_layers is None else n_layers
    dims = [int(rng.integers(1, max_width + 1)) for _ in range(L + 1)]
    if in_dim is not None:
        dims[0] = in_dim
    if head == "softmax_xent":
        dims[-1] = max(dims[-1], 2)
    acts = tuple(rng.choice(["relu", "tanh", "identity"]) for _ in range(L))
    return MLPSpec(tuple(dims), acts, head)


def random_params(spec, rng, scale=0.8):
    return ParamVector(rng.normal(scale=scale, size=spec.n_params), spec.manifest())


def random_labels(spec, rng, n):
    if spec.head == "softmax_xent":
        return rng.integers(0, spec.out_dim, size=n)
    return rng.normal(size=(n, spec.out_dim))


def rel_err(a, b):
    a, b = np.asarray(a, float).ravel(), np.asarray(b, float).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-30)
    return float(np.linalg.norm(a - b) / denom)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
