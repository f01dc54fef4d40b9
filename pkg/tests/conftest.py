import numpy as np
import pytest

from axsty.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by
    coordinate. Independent of the autodiff engine's own grad_check."""
    x = np.array(x, dtype=np.float64, copy=True)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn(x)
        flat[i] = orig - step
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-4) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_grad_against_fd(build_loss, x0: np.ndarray, tol: float = 1e-3,
                          step: float = 1e-5) -> float:
    """Backprop through build_loss(Tensor) and compare with numeric_grad."""
    leaf = Tensor(x0.copy(), requires_grad=True)
    build_loss(leaf).backward()
    analytic = leaf.grad
    fd = numeric_grad(lambda arr: build_loss(Tensor(arr)).item(), x0, step=step)
    err = max_rel_err(analytic, fd)
    assert err < tol, f"gradient mismatch: max rel err {err:.3e} >= {tol}"
    return err
