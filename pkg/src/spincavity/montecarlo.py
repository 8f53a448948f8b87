"""Reproducible trajectory ensembles and their statistics.

Trajectory k draws its noise from a stream seeded by
``splitmix64(base_seed XOR golden_increment * k)``, so every trajectory is a
pure function of (model, grid, base_seed, k).  Results are merged in
trajectory-index order whatever the execution order or worker count, which
makes every ensemble output bit-reproducible.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import observables
from .errors import EnsembleError, SpinCavityError
from .integrators import (
    GaussianStream,
    TimeGrid,
    evolve_homodyne_trajectory,
    splitmix64,
    _GOLDEN,
    _MASK,
)
from .models import LindbladModel

__all__ = [
    "EnsembleSpec",
    "EnsembleResult",
    "GaussianStream",
    "run_ensemble",
    "summarize",
    "trajectory_seed",
]


def trajectory_seed(base_seed: int, k: int) -> int:
    """Stream seed of trajectory k: mix(base_seed XOR golden-ratio-step * k)."""
    return splitmix64((int(base_seed) ^ ((_GOLDEN * k) & _MASK)) & _MASK)


@dataclass(frozen=True)
class EnsembleSpec:
    model: LindbladModel
    rho0: np.ndarray
    grid: TimeGrid
    n_traj: int
    base_seed: int

    def __post_init__(self) -> None:
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if self.model.monitored is None:
            raise ValueError("ensemble needs a model with a monitored channel")


@dataclass
class EnsembleResult:
    times: np.ndarray
    xi2_curves: np.ndarray          # (n_traj, T)
    mean_xi2: np.ndarray            # (T,)
    stderr_xi2: np.ndarray          # (T,)
    mean_photocurrent: np.ndarray   # (T,)
    mean_spin: np.ndarray           # (T, 3)
    mean_min_variance: np.ndarray   # (T,)
    per_traj_optima: list[observables.OptimalSqueezing]
    mean_curve_optimum: observables.OptimalSqueezing
    n_traj: int
    base_seed: int


def _trajectory_task(args) -> tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    k, model, rho0, grid, seed = args
    try:
        rec = evolve_homodyne_trajectory(model, rho0, grid, seed)
    except SpinCavityError as exc:
        raise EnsembleError(f"trajectory {k} (seed {seed}) aborted: {exc}") from exc
    n_atoms = model.dims[0] - 1
    n_rec = len(rec.times)
    xi2 = np.empty(n_rec)
    varmin = np.empty(n_rec)
    for i in range(n_rec):
        mom = observables.SpinMoments(rec.means[i], rec.covariances[i])
        varmin[i] = observables.min_transverse_variance(mom)
        xi2[i] = observables.squeezing_from_moments(mom, n_atoms)
    return k, xi2, varmin, rec.photocurrent, rec.means


def run_ensemble(spec: EnsembleSpec, workers: int = 1) -> EnsembleResult:
    """Run the ensemble and reduce it in trajectory-index order.

    ``workers`` only controls execution; outputs are bit-identical for any
    value because each trajectory is deterministic in its seed and the
    reduction order is fixed.
    """
    n_traj = spec.n_traj
    tasks = [
        (k, spec.model, spec.rho0, spec.grid, trajectory_seed(spec.base_seed, k))
        for k in range(n_traj)
    ]
    if workers > 1 and n_traj > 1:
        chunk = max(1, math.ceil(n_traj / (4 * workers)))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_trajectory_task, tasks, chunksize=chunk))
    else:
        raw = [_trajectory_task(t) for t in tasks]

    raw.sort(key=lambda item: item[0])
    n_rec = len(spec.grid.times)
    xi2_curves = np.empty((n_traj, n_rec))
    varmin = np.empty((n_traj, n_rec))
    photocurrents = np.empty((n_traj, n_rec))
    means = np.empty((n_traj, n_rec, 3))
    for k, xi2, vm, pc, mn in raw:
        xi2_curves[k] = xi2
        varmin[k] = vm
        photocurrents[k] = pc
        means[k] = mn

    mean_xi2 = xi2_curves.mean(axis=0)
    if n_traj > 1:
        stderr_xi2 = xi2_curves.std(axis=0, ddof=1) / math.sqrt(n_traj)
    else:
        stderr_xi2 = np.zeros(n_rec)
    per_traj = [
        observables.find_optimal_squeezing(spec.grid.times, xi2_curves[k])
        for k in range(n_traj)
    ]
    mean_opt = observables.find_optimal_squeezing(spec.grid.times, mean_xi2)
    return EnsembleResult(
        times=spec.grid.times,
        xi2_curves=xi2_curves,
        mean_xi2=mean_xi2,
        stderr_xi2=stderr_xi2,
        mean_photocurrent=photocurrents.mean(axis=0),
        mean_spin=means.mean(axis=0),
        mean_min_variance=varmin.mean(axis=0),
        per_traj_optima=per_traj,
        mean_curve_optimum=mean_opt,
        n_traj=n_traj,
        base_seed=spec.base_seed,
    )


@dataclass
class EnsembleSummary:
    rows: list[tuple[float, float, float, float]]  # (t, mean xi2, stderr, mean I)
    optimum: observables.OptimalSqueezing
    optimum_stderr: float


def summarize(result: EnsembleResult, n_batches: int = 10) -> EnsembleSummary:
    """Per-time rows plus the mean-curve optimum with a batch-means stderr."""
    rows = [
        (
            float(t),
            float(m),
            float(s),
            float(i),
        )
        for t, m, s, i in zip(
            result.times, result.mean_xi2, result.stderr_xi2, result.mean_photocurrent
        )
    ]
    n_traj = result.n_traj
    if n_traj >= 2:
        n_batches = min(n_batches, n_traj)
        batch_of = np.arange(n_traj) * n_batches // n_traj
        optima = []
        for b in range(n_batches):
            curve = result.xi2_curves[batch_of == b].mean(axis=0)
            optima.append(observables.find_optimal_squeezing(result.times, curve).xi2_m)
        opt_stderr = float(np.std(optima, ddof=1) / math.sqrt(n_batches))
    else:
        opt_stderr = 0.0
    return EnsembleSummary(rows, result.mean_curve_optimum, opt_stderr)
