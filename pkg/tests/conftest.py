import numpy as np
import pytest

from ubct import autodiff as ad
from ubct.physics import Geometry


@pytest.fixture(autouse=True)
def _fresh_tape():
    """Keep one test's recorded ops from leaking into the next."""
    yield
    ad._STATE.tape = []


def finite_difference(f, x, h=1e-5):
    """Central-difference gradient of scalar f() w.r.t. array x (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * h)
    return g


def grad_rel_err(g_ad, g_fd):
    scale = max(np.max(np.abs(g_fd)), np.max(np.abs(g_ad)), 1e-12)
    return np.max(np.abs(g_ad - g_fd)) / scale


@pytest.fixture(scope="session")
def tiny_geom():
    """Small geometry for fast network/training tests."""
    return Geometry(n=16, n_views=12, n_dets=23)


@pytest.fixture(scope="session")
def default_geom():
    return Geometry()
