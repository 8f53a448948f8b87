"""Shared fixtures and independent oracle helpers."""

import numpy as np
import pytest

from spincavity import ModelParams


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_density_matrix(rng, dim: int) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def brute_force_min_transverse_variance(rho, sx, sy, sz, n_angles=3600) -> float:
    """Scan variances over transverse directions; independent of eigen-solvers."""
    ops = [sx, sy, sz]
    mean = np.array([np.trace(o @ rho).real for o in ops])
    n = mean / np.linalg.norm(mean)
    seed = np.eye(3)[np.argmin(np.abs(n))]
    e1 = seed - (seed @ n) * n
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    best = np.inf
    for theta in np.linspace(0, np.pi, n_angles, endpoint=False):
        u = np.cos(theta) * e1 + np.sin(theta) * e2
        s_u = u[0] * ops[0] + u[1] * ops[1] + u[2] * ops[2]
        var = np.trace(s_u @ s_u @ rho).real - np.trace(s_u @ rho).real ** 2
        best = min(best, var)
    return best


def params_for(d: float, n0: float = 4.0, g: float = 0.1, **kw) -> ModelParams:
    """ModelParams at kappa=1 with scaled detuning d and resonant photon number n0."""
    return ModelParams(
        kappa=1.0, g=g, delta=d / 2, beta=np.sqrt(n0) / 2, **kw
    )
