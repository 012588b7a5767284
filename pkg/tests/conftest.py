import numpy as np
import pytest

from exp3cil.learner import ModelState, grow_head, init_model, overall_loss_and_grad


def finite_difference_grads(X, y, model, old_model, cfg, eps=1e-5):
    """Central differences of the overall loss with respect to every parameter entry."""
    out = {}
    for name, p in model.params().items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            params = {k: v.copy() for k, v in model.params().items()}
            params[name][idx] += eps
            up = overall_loss_and_grad(X, y, model.with_params(params), old_model, cfg)[0]
            params[name][idx] -= 2 * eps
            down = overall_loss_and_grad(X, y, model.with_params(params), old_model, cfg)[0]
            g[idx] = (up - down) / (2 * eps)
        out[name] = g
    return out


def gradient_mismatches(analytic, numeric, rel=1e-4, floor=1e-6):
    """Entries where neither the relative nor the absolute tolerance holds."""
    bad = []
    for name in analytic:
        a, n = analytic[name], numeric[name]
        diff = np.abs(a - n)
        ok = (diff <= rel * np.maximum(np.abs(a), np.abs(n))) | (diff <= floor)
        bad.extend((name, idx) for idx in zip(*np.nonzero(~ok)))
    return bad


def random_setup(rng, arch=(5, 7, 4), old_classes=3, new_classes=2, batch=5):
    old = init_model(old_classes, rng, arch)
    # current model: perturbed copy of the old one with grown head
    cur = grow_head(old, new_classes, rng)
    cur = cur.with_params({k: v + 0.3 * rng.normal(size=v.shape) for k, v in cur.params().items()})
    X = rng.normal(size=(batch, arch[0]))
    y = rng.integers(0, old_classes + new_classes, batch)
    return cur, old, X, y


def identity_model(dim, head) -> ModelState:
    eye = np.eye(dim)
    return ModelState(eye.copy(), np.zeros(dim), eye.copy(), np.zeros(dim), np.asarray(head, dtype=float),
                      activation="identity", scale=10.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
