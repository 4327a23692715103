import math

import numpy as np
import pytest

from panocube.geometry import ErpImage


def analytic_sphere_fn(d):
    """Smooth test function on the sphere: 0.5 + 0.5*sin(3*lon)*cos(2*lat)."""
    lam = np.arctan2(d[..., 0], d[..., 2])
    phi = np.arcsin(np.clip(d[..., 1], -1.0, 1.0))
    return 0.5 + 0.5 * np.sin(3.0 * lam) * np.cos(2.0 * phi)


def analytic_erp(width: int, height: int) -> ErpImage:
    vv, uu = np.meshgrid(np.arange(height) + 0.5, np.arange(width) + 0.5, indexing="ij")
    lam = (uu / width) * 2.0 * math.pi - math.pi
    phi = (0.5 - vv / height) * math.pi
    vals = 0.5 + 0.5 * np.sin(3.0 * lam) * np.cos(2.0 * phi)
    return ErpImage(vals[..., None])


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    return math.inf if mse == 0.0 else 10.0 * math.log10(peak**2 / mse)


@pytest.fixture(scope="session")
def erp_1024():
    return analytic_erp(1024, 512)
