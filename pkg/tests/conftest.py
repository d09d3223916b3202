import numpy as np
import pytest

from atrousseg.labels import derive_record


def rel_err(a, b, tiny: float = 1e-12) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0)) + tiny
    return float(np.abs(a - b).max(initial=0.0) / denom)


def numeric_gradient(fn, x, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar-valued fn at x (f64)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn(x)
        flat[i] = orig - eps
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_record(rng):
    """A 16x16, 3-class record with all derived channels."""
    image = rng.random((3, 16, 16)).astype(np.float32)
    mask = rng.integers(0, 3, (16, 16))
    return derive_record(image, mask, 3)
