import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def away_from_zero(x: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    """Push coordinates out of the relu kink neighborhood."""
    out = x.copy()
    small = np.abs(out) < margin
    out[small] = np.where(out[small] >= 0, margin * 2, -margin * 2)
    return out


def pool_safe(rng: np.random.Generator, shape: tuple, margin: float = 1e-3) -> np.ndarray:
    """Random tensor whose 2x2 windows have a top-two gap above margin, so
    pooling argmaxes cannot flip inside a finite-difference stencil."""
    *lead, h, w = shape
    while True:
        x = rng.normal(size=shape)
        win = x.reshape(*lead, h // 2, 2, w // 2, 2).swapaxes(-3, -2).reshape(-1, 4)
        s = np.sort(win, axis=-1)
        if (s[:, 3] - s[:, 2] > margin).all():
            return x
