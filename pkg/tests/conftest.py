import numpy as np
import pytest

from thermoshape.core import GrayImage, Rng


def random_gray(rng: Rng, w: int, h: int, scale: float = 1.0,
                offset: float = 0.0) -> GrayImage:
    data = np.array([rng.next_below(256) for _ in range(w * h)],
                    dtype=np.uint8).reshape(h, w)
    return GrayImage(w, h, data, scale=scale, offset=offset)


def central_diff_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Finite-difference gradient of scalar f() w.r.t. entries of x,
    mutating x in place entry by entry."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        fp = f()
        x[i] = orig - eps
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2.0 * eps)
    return g


@pytest.fixture
def rng():
    return Rng(20240817)
