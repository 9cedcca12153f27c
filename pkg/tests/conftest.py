import numpy as np
import pytest

from impromptu.tensor import Tensor


def numeric_grad(f, x: Tensor, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of scalar f w.r.t. x, elementwise."""
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(f().data)
        flat[i] = orig - h
        lo = float(f().data)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_grads(build, params, h: float = 1e-3, tol: float = 1e-2):
    """build() -> scalar Tensor; asserts analytic grads match finite differences."""
    out = build()
    out.backward()
    for p in params:
        assert p.grad is not None, "no gradient reached input"
        num = numeric_grad(build, p, h=h)
        err = rel_error(p.grad, num)
        assert err < tol, f"gradient mismatch: rel error {err:.4g} (tol {tol})"
        p.grad = None


@pytest.fixture
def rng_np():
    return np.random.default_rng(1234)
