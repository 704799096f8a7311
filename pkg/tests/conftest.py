import numpy as np
import pytest

from lobsad import nnet

# one line per acceptance criterion, shown in the terminal summary
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(line)


def finite_difference_grad(loss_fn, model, h=1e-5):
    """Central finite differences over every parameter; independent oracle."""
    flat = nnet.get_flat_params(model)
    grad = np.empty(flat.size)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (loss_fn(nnet.set_flat_params(model, up))
                   - loss_fn(nnet.set_flat_params(model, down))) / (2 * h)
    return grad


def relative_error(a, b, floor=1e-12):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return np.linalg.norm(a - b) / denom


def identity_model(dim: int) -> nnet.MlpModel:
    """Single linear layer acting as the identity map."""
    model = nnet.mlp_init(0, layer_dims=(dim, dim))
    return nnet.set_flat_params(
        model, np.concatenate([np.eye(dim).ravel(), np.zeros(dim)]))


def sample_safe_model_batch(rng, dims, batch_rows=4, min_preact=1e-4):
    """Random model + batch whose pre-activations sit away from the ReLU kink,
    so central differences at h=1e-5 stay on one side of every hinge."""
    for _ in range(200):
        seed = int(rng.integers(0, 2**31))
        model = nnet.mlp_init(seed, layer_dims=dims)
        flat = nnet.get_flat_params(model) + 0.1 * rng.standard_normal(model.n_params())
        model = nnet.set_flat_params(model, flat)
        batch = rng.normal(size=(batch_rows, dims[0]))
        _, tape = nnet.forward(model, batch)
        if min(np.abs(z).min() for z in tape.preacts) > min_preact:
            return model, batch
    raise AssertionError("could not sample a kink-safe model/batch")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
