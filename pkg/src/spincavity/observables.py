"""Spin moments, the spin-squeezing parameter, optima and scaling fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, PolarizationError, ShapeError
from .hilbert import QuantumState, SpinAlgebra, spin_operators
from .models import ModelParams, derive_params


@dataclass(frozen=True)
class SpinMoments:
    """First and symmetrized second moments of the collective spin."""

    mean: np.ndarray        # (3,) <S>
    covariance: np.ndarray  # (3, 3), <S_a S_b + S_b S_a>/2 - <S_a><S_b>


@dataclass(frozen=True)
class SqueezingCurve:
    times: np.ndarray
    xi2: np.ndarray
    t_m: float
    xi2_m: float
    boundary: bool


@dataclass(frozen=True)
class OptimalSqueezing:
    t_m: float
    xi2_m: float
    boundary: bool


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    prefactor: float
    r_squared: float
    n_range: tuple[int, int]


# Second-moment operator stacks are reused across every record point of a
# run, so cache them per atom number.
_MOMENT_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _moment_ops(spin: SpinAlgebra) -> tuple[np.ndarray, np.ndarray]:
    cached = _MOMENT_CACHE.get(spin.n_atoms)
    if cached is not None:
        return cached
    ops = np.stack([spin.sx, spin.sy, spin.sz])
    prods = np.empty((3, 3, spin.dim, spin.dim), dtype=complex)
    for a in range(3):
        for b in range(3):
            prods[a, b] = (ops[a] @ ops[b] + ops[b] @ ops[a]) / 2
    if len(_MOMENT_CACHE) > 8:
        _MOMENT_CACHE.clear()
    _MOMENT_CACHE[spin.n_atoms] = (ops, prods)
    return ops, prods


def spin_moments(rho_s: np.ndarray | QuantumState, spin: SpinAlgebra) -> SpinMoments:
    """Exact first and symmetrized second moments of a spin-only state."""
    rho = rho_s.rho if isinstance(rho_s, QuantumState) else rho_s
    if rho.shape != (spin.dim, spin.dim):
        raise ShapeError("state dimension does not match the spin algebra")
    ops, prods = _moment_ops(spin)
    mean = np.einsum("aij,ji->a", ops, rho).real
    second = np.einsum("abij,ji->ab", prods, rho).real
    cov = second - np.outer(mean, mean)
    return SpinMoments(mean, cov)


def _transverse_pair(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal pair spanning the plane perpendicular to ``direction``.

    Built from the coordinate axis least aligned with the direction, which
    keeps the construction stable; any rotation of the pair leaves the
    minimal transverse variance unchanged.
    """
    e = np.zeros(3)
    e[int(np.argmin(np.abs(direction)))] = 1.0
    e1 = e - np.dot(e, direction) * direction
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(direction, e1)
    return e1, e2


def transverse_covariance(moments: SpinMoments) -> np.ndarray:
    """2x2 covariance block in the plane perpendicular to the polarization."""
    norm = np.linalg.norm(moments.mean)
    if norm == 0:
        raise PolarizationError("zero polarization: transverse plane undefined")
    n = moments.mean / norm
    e1, e2 = _transverse_pair(n)
    c = moments.covariance
    return np.array(
        [
            [e1 @ c @ e1, e1 @ c @ e2],
            [e2 @ c @ e1, e2 @ c @ e2],
        ]
    )


def min_transverse_variance(moments: SpinMoments) -> float:
    return float(np.linalg.eigvalsh(transverse_covariance(moments))[0])


def squeezing_from_moments(
    moments: SpinMoments, n_atoms: int, tol_polarization: float = 1e-6
) -> float:
    """Wineland parameter N min_perp Var(S_perp) / |<S>|^2 from moments."""
    norm = float(np.linalg.norm(moments.mean))
    if norm <= tol_polarization * n_atoms:
        raise PolarizationError(
            f"polarization {norm:.3e} below tolerance; xi^2 is ill-defined"
        )
    return n_atoms * min_transverse_variance(moments) / norm**2


def squeezing_parameter(
    rho_s: np.ndarray | QuantumState,
    spin: SpinAlgebra,
    tol_polarization: float = 1e-6,
) -> float:
    """Spin-squeezing parameter xi^2 of a spin-only state (Wineland)."""
    return squeezing_from_moments(
        spin_moments(rho_s, spin), spin.n_atoms, tol_polarization
    )


def variance_referenced_squeezing(
    rho_s: np.ndarray | QuantumState, spin: SpinAlgebra
) -> float:
    """Minimal transverse variance normalized to the CSS value N/4.

    Equals the Wineland parameter with the polarization frozen at its
    initial CSS length N/2; this is the number the analytic one-axis
    twisting optimum refers to at finite N.
    """
    moments = spin_moments(rho_s, spin)
    return 4.0 * min_transverse_variance(moments) / spin.n_atoms


def find_optimal_squeezing(
    times: np.ndarray, xi2: np.ndarray
) -> OptimalSqueezing:
    """Grid minimum of a squeezing curve, refined parabolically.

    The boundary flag is raised when the minimum sits at the final grid
    point (the curve was still decreasing; extend t_end).  Ties break to
    the earliest time.
    """
    times = np.asarray(times, dtype=float)
    xi2 = np.asarray(xi2, dtype=float)
    if times.shape != xi2.shape or times.size < 5:
        raise DomainError("need >= 5 aligned samples to locate an optimum")
    i = int(np.argmin(xi2))
    if i == times.size - 1:
        return OptimalSqueezing(float(times[i]), float(xi2[i]), True)
    if i == 0:
        return OptimalSqueezing(float(times[0]), float(xi2[0]), False)
    t0, t1, t2 = times[i - 1 : i + 2]
    y0, y1, y2 = xi2[i - 1 : i + 2]
    denom = (t1 - t0) * (y1 - y2) - (t1 - t2) * (y1 - y0)
    if denom == 0:
        return OptimalSqueezing(float(t1), float(y1), False)
    t_m = t1 - 0.5 * ((t1 - t0) ** 2 * (y1 - y2) - (t1 - t2) ** 2 * (y1 - y0)) / denom
    t_m = float(np.clip(t_m, t0, t2))
    # value of the interpolating parabola at its vertex
    la = np.array(
        [
            (t_m - t1) * (t_m - t2) / ((t0 - t1) * (t0 - t2)),
            (t_m - t0) * (t_m - t2) / ((t1 - t0) * (t1 - t2)),
            (t_m - t0) * (t_m - t1) / ((t2 - t0) * (t2 - t1)),
        ]
    )
    xi2_m = float(la @ (y0, y1, y2))
    return OptimalSqueezing(t_m, min(xi2_m, float(y1)), False)


def squeezing_curve(times: np.ndarray, xi2: np.ndarray) -> SqueezingCurve:
    opt = find_optimal_squeezing(times, xi2)
    return SqueezingCurve(
        np.asarray(times, float), np.asarray(xi2, float), opt.t_m, opt.xi2_m, opt.boundary
    )


def photon_number(state: QuantumState, p: ModelParams) -> float:
    """Lab-frame photon number <a' a> = <(b' + alpha*)(b + alpha)> exactly."""
    if len(state.dims) != 2:
        raise ShapeError("photon_number needs a composite spin*cavity state")
    dp = derive_params(p)
    ds, dc = state.dims
    rho4 = state.rho.reshape(ds, dc, ds, dc)
    rho_c = np.einsum("kikj->ij", rho4)  # trace out spin
    n = np.arange(dc)
    nbar = float(np.real(np.sum(n * np.diagonal(rho_c))))
    # <b> from the single lower diagonal of b
    bexp = np.sum(np.sqrt(n[1:]) * np.diagonal(rho_c, offset=-1))
    value = nbar + dp.alpha * np.conj(bexp) + np.conj(dp.alpha) * bexp + abs(dp.alpha) ** 2
    return float(np.real(value))


def fit_scaling(points: list[tuple[int, float]]) -> ScalingFit:
    """Least-squares power law xi2_m = prefactor * N^exponent in log-log."""
    if len(points) < 4:
        raise DomainError("scaling fit needs at least 4 points")
    ns = np.array([float(n) for n, _ in points])
    ys = np.array([float(y) for _, y in points])
    if np.any(ns <= 0) or np.any(ys <= 0):
        raise DomainError("scaling fit needs positive N and xi2_m")
    lx, ly = np.log(ns), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return ScalingFit(
        exponent=float(slope),
        prefactor=float(np.exp(intercept)),
        r_squared=r2,
        n_range=(int(ns.min()), int(ns.max())),
    )


def moments_for_composite(
    rho: np.ndarray, dims: tuple[int, ...], spin: SpinAlgebra
) -> SpinMoments:
    """Moments of the reduced spin state of a composite density matrix."""
    ds, dc = dims
    rho4 = rho.reshape(ds, dc, ds, dc)
    rho_s = np.einsum("ikjk->ij", rho4)
    return spin_moments(rho_s, spin)


_ALGEBRA_CACHE: dict[int, SpinAlgebra] = {}


def spin_algebra_for(n_atoms: int) -> SpinAlgebra:
    """Cached spin algebra lookup used by the recording helpers."""
    alg = _ALGEBRA_CACHE.get(n_atoms)
    if alg is None:
        alg = spin_operators(n_atoms)
        if len(_ALGEBRA_CACHE) > 8:
            _ALGEBRA_CACHE.clear()
        _ALGEBRA_CACHE[n_atoms] = alg
    return alg
