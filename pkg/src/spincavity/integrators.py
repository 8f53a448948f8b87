"""Deterministic master-equation propagation and Ito homodyne trajectories.

The deterministic path runs an adaptive embedded Runge-Kutta pair on the
vectorized Lindblad right-hand side; the stochastic path is plain Ito
Euler-Maruyama with exact trace renormalization after every step.

The right-hand side is specialized to the model structure:

* reduced models (Hamiltonian and jumps all diagonal): elementwise action
  of the per-entry rate matrix;
* the full model (Hamiltonian block-diagonal over the spin index, jumps
  acting on the cavity factor): batched per-block kernels;
* anything else: generic dense matrix products.

All three produce identical mathematics; the specialization only keeps the
large runs at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    DomainError,
    ShapeError,
    StepSizeError,
    StiffnessError,
    ToleranceError,
)
from .hilbert import QuantumState
from .models import LindbladModel
from . import observables

_DIAG_GUARD = -1e-4  # most negative tolerated diagonal entry mid-trajectory
_MAX_HALVINGS = 3


@dataclass(frozen=True)
class TimeGrid:
    """Output grid (dt_record) and stochastic substep (dt_step) for one run."""

    t_end: float
    dt_record: float
    dt_step: float | None = None

    def __post_init__(self) -> None:
        if not 0 < self.dt_record <= self.t_end:
            raise ValueError("need 0 < dt_record <= t_end")
        n = self.t_end / self.dt_record
        if abs(n - round(n)) > 1e-9 * max(n, 1):
            raise ValueError("t_end must be an integer multiple of dt_record")
        if self.dt_step is not None:
            if not 0 < self.dt_step <= self.dt_record:
                raise ValueError("need 0 < dt_step <= dt_record")
            m = self.dt_record / self.dt_step
            if abs(m - round(m)) > 1e-9 * max(m, 1):
                raise ValueError("dt_record must be an integer multiple of dt_step")

    @property
    def n_record(self) -> int:
        return int(round(self.t_end / self.dt_record))

    @property
    def n_sub(self) -> int:
        if self.dt_step is None:
            raise ValueError("grid has no stochastic substep")
        return int(round(self.dt_record / self.dt_step))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_record + 1) * self.dt_record


def default_dt_step(model: LindbladModel) -> float:
    """Conservative Euler-Maruyama step from the fastest model rate."""
    meta = model.meta
    p = meta.get("params")
    dp = meta.get("derived")
    if dp is None or p is None:
        raise ValueError("model carries no parameter metadata")
    if model.order_tag == "full":
        return 2e-3 / p.kappa
    n = meta["n_atoms"]
    rate = max(dp.kappa_tilde * n**2, p.kappa, abs(dp.chi) * n**2)
    return 2e-3 / rate


# ---------------------------------------------------------------------------
# right-hand-side kernels


def _is_diagonal(m: np.ndarray) -> bool:
    return not np.any(m - np.diag(np.diagonal(m)))


class _DiagonalRHS:
    """Elementwise Lindblad action for models with all-diagonal operators."""

    kind = "diagonal"

    def __init__(self, model: LindbladModel):
        h = np.diagonal(model.hamiltonian)
        lam = (-1j * (h[:, None] - h[None, :])).astype(complex)
        for jump in model.jumps:
            l = np.diagonal(jump)
            abs2 = (l * l.conj()).real
            lam += np.outer(l, l.conj()) - 0.5 * (abs2[:, None] + abs2[None, :])
        self.lam = lam

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return self.lam * rho


class _SpinBlockRHS:
    """Batched per-spin-block Lindblad action for the full model.

    Uses the drift form K rho + rho K' + sum_j c_j rho c_j' with
    K_m = -i H_m - (sum_j c_j' c_j) / 2 per spin block m.
    """

    kind = "spin-blocks"

    def __init__(self, model: LindbladModel, h4: np.ndarray, c_ops: list[np.ndarray]):
        ds, dc = model.dims
        self.ds, self.dc = ds, dc
        idx = np.arange(ds)
        h_blocks = h4[idx, :, idx, :]  # (ds, dc, dc)
        csum = np.zeros((dc, dc), dtype=complex)
        for c in c_ops:
            csum += c.conj().T @ c
        self.k_blocks = -1j * h_blocks - 0.5 * csum[None, :, :]
        self.kd_blocks = self.k_blocks.conj().transpose(0, 2, 1)
        self.c_ops = [(c, c.conj().T) for c in c_ops]

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        ds, dc = self.ds, self.dc
        rho4 = rho.reshape(ds, dc, ds, dc)
        # K rho: batched over the left spin index
        out = np.matmul(self.k_blocks, rho4.reshape(ds, dc, ds * dc)).reshape(
            ds, dc, ds, dc
        )
        # rho K': batched over the right spin index
        out += np.einsum("mipk,pkj->mipj", rho4, self.kd_blocks, optimize=True)
        for c, cd in self.c_ops:
            tmp = np.matmul(c, rho4.reshape(ds, dc, ds * dc)).reshape(ds, dc, ds, dc)
            out += np.matmul(tmp, cd)
        return out.reshape(ds * dc, ds * dc)


class _DenseRHS:
    """Generic dense Lindblad action."""

    kind = "dense"

    def __init__(self, model: LindbladModel):
        h = model.hamiltonian
        csum = np.zeros_like(h)
        self.jumps = []
        for jump in model.jumps:
            jd = jump.conj().T
            csum += jd @ jump
            self.jumps.append((jump, jd))
        self.k = -1j * h - 0.5 * csum
        self.kd = self.k.conj().T

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        out = self.k @ rho + rho @ self.kd
        for jump, jd in self.jumps:
            out += jump @ rho @ jd
        return out


def build_rhs(model: LindbladModel):
    """Pick the fastest faithful right-hand-side kernel for a model."""
    ops = [model.hamiltonian] + model.jumps
    if all(_is_diagonal(op) for op in ops):
        return _DiagonalRHS(model)
    if len(model.dims) == 2:
        ds, dc = model.dims
        h4 = model.hamiltonian.reshape(ds, dc, ds, dc)
        off = h4.copy()
        idx = np.arange(ds)
        off[idx, :, idx, :] = 0
        if not np.any(off):
            c_ops = []
            ok = True
            for jump in model.jumps:
                c = jump[:dc, :dc]
                if np.array_equal(jump, np.kron(np.eye(ds), c)):
                    c_ops.append(c)
                else:
                    ok = False
                    break
            if ok:
                return _SpinBlockRHS(model, h4, c_ops)
    return _DenseRHS(model)


# ---------------------------------------------------------------------------
# deterministic propagation


@dataclass
class MasterEquationResult:
    times: np.ndarray
    states: list[np.ndarray] | None


def _hermitize(rho: np.ndarray) -> np.ndarray:
    return (rho + rho.conj().T) / 2


def evolve_master_equation(
    model: LindbladModel,
    rho0: np.ndarray | QuantumState,
    grid: TimeGrid,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    method: str = "DOP853",
    callback=None,
    store_states: bool = True,
    max_state_bytes: int = 1 << 27,
) -> MasterEquationResult:
    """Adaptive Runge-Kutta propagation of d rho/dt = L(rho).

    States are re-Hermitized at every record point and handed to
    ``callback(t, rho)`` when given; set ``store_states=False`` for large
    sweeps where only the callback output is needed.
    """
    rho = rho0.rho if isinstance(rho0, QuantumState) else rho0
    dim = model.dim
    if rho.shape != (dim, dim):
        raise ShapeError("initial state does not match the model dimension")
    rhs = build_rhs(model)

    def f(_t: float, y: np.ndarray) -> np.ndarray:
        return rhs(y.reshape(dim, dim)).reshape(-1)

    times = grid.times
    states: list[np.ndarray] | None = [] if store_states else None

    rho_now = _hermitize(rho.astype(complex))
    if callback is not None:
        callback(0.0, rho_now)
    if states is not None:
        states.append(rho_now.copy())

    # Integrate in chunks of record points so memory stays bounded for
    # large dimensions while the solver keeps its step across record points.
    state_bytes = 16 * dim * dim
    chunk_len = max(1, int(max_state_bytes // max(state_bytes, 1)))
    y = rho_now.reshape(-1)
    pos = 1
    while pos <= grid.n_record:
        t_eval = times[pos : min(pos + chunk_len, grid.n_record + 1)]
        sol = solve_ivp(
            f,
            (times[pos - 1], t_eval[-1]),
            y,
            method=method,
            t_eval=t_eval,
            rtol=rtol,
            atol=atol,
        )
        if not sol.success:
            raise StiffnessError(
                f"integrator failed at t~{sol.t[-1] if len(sol.t) else times[pos - 1]:.3g}: "
                f"{sol.message} (consider a larger n_max or smaller t_end)"
            )
        for col, t in enumerate(sol.t):
            rho_rec = _hermitize(sol.y[:, col].reshape(dim, dim))
            if callback is not None:
                callback(float(t), rho_rec)
            if states is not None:
                states.append(rho_rec.copy())
            last = rho_rec
        y = last.reshape(-1)
        pos += len(t_eval)

    trace_err = abs(float(np.real(np.trace(last))) - 1.0)
    if trace_err > 1e-9:
        raise ToleranceError(f"trace drifted by {trace_err:.2e} during propagation")
    return MasterEquationResult(times, states)


# ---------------------------------------------------------------------------
# deterministic counter-based noise


_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """Stateless 64-bit finalizer (splitmix64)."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class GaussianStream:
    """Counter-based N(0, 1) stream: splitmix64 outputs fed to Box-Muller.

    The i-th raw word is ``finalize(seed + i * golden_ratio_increment)``, so
    the stream is stateless up to the draw counter and identical wherever it
    is replayed; no generator state is shared between trajectories.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.counter = 0

    def _uniforms(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = (np.uint64(self.seed) + idx * np.uint64(_GOLDEN)) + np.uint64(_GOLDEN)
            z ^= z >> np.uint64(30)
            z *= np.uint64(0xBF58476D1CE4E5B9)
            z ^= z >> np.uint64(27)
            z *= np.uint64(0x94D049BB133111EB)
            z ^= z >> np.uint64(31)
        # top 53 bits, offset to (0, 1) so log never sees zero
        return ((z >> np.uint64(11)).astype(np.float64) + 0.5) / 9007199254740992.0

    def normals(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self._uniforms(2 * pairs)
        r = np.sqrt(-2.0 * np.log(u[:pairs]))
        theta = 2.0 * np.pi * u[pairs:]
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]


# ---------------------------------------------------------------------------
# stochastic propagation


@dataclass
class TrajectoryRecord:
    """Conditional-evolution record at the grid's record points."""

    seed: int
    times: np.ndarray
    photocurrent: np.ndarray       # interval-averaged I(t), units sqrt(kappa)
    means: np.ndarray              # (T, 3) spin means
    covariances: np.ndarray        # (T, 3, 3) symmetrized spin covariances
    wiener_sum: np.ndarray         # running sum of dW at record points
    photon: np.ndarray | None = None
    states: list[np.ndarray] | None = None


class _RetryInterval(Exception):
    pass


class _DiagonalSME:
    """Euler-Maruyama stepping with all-diagonal operators (elementwise)."""

    def __init__(self, model: LindbladModel):
        mon = model.monitored
        self.eta = mon.eta
        self.sqrt_eta = math.sqrt(mon.eta)
        rhs = _DiagonalRHS(model)
        md = np.diagonal(model.jumps[mon.jump_index]) * np.exp(-1j * mon.phi)
        b2 = md[:, None] + md.conj()[None, :]
        self.meas_diag = 2.0 * md.real
        self.real_ok = not (np.any(rhs.lam.imag) or np.any(b2.imag))
        if self.real_ok:
            self.lam = np.ascontiguousarray(rhs.lam.real)
            self.b2 = np.ascontiguousarray(b2.real)
        else:
            self.lam = rhs.lam
            self.b2 = b2

    def prepare(self, rho: np.ndarray) -> np.ndarray:
        if self.real_ok and not np.any(rho.imag):
            return np.ascontiguousarray(rho.real)
        self.real_ok = False
        self.lam = self.lam.astype(complex)
        self.b2 = self.b2.astype(complex)
        return rho.astype(complex)

    def finish(self, rho: np.ndarray) -> np.ndarray:
        return rho.astype(complex) if self.real_ok else rho

    def step_interval(self, rho: np.ndarray, dt: float, dws: np.ndarray):
        """Advance one record interval; returns (rho, sum <M+M'> dt)."""
        meas = self.meas_diag
        meas_sum = 0.0
        for dw in dws:
            diag = np.real(np.diagonal(rho))
            s = float(meas @ diag)
            meas_sum += s * dt
            c = self.sqrt_eta * dw
            drift = self.lam * rho
            diff = self.b2 * rho
            rho = rho * (1.0 - c * s)
            rho += dt * drift
            rho += c * diff
            tr = float(np.real(np.trace(rho)))
            if not np.isfinite(tr) or tr <= 0:
                raise _RetryInterval
            rho /= tr
            if np.min(np.real(np.diagonal(rho))) < _DIAG_GUARD:
                raise _RetryInterval
        return rho, meas_sum


class _DenseSME:
    """Euler-Maruyama stepping with dense matrices."""

    def __init__(self, model: LindbladModel):
        mon = model.monitored
        self.eta = mon.eta
        self.sqrt_eta = math.sqrt(mon.eta)
        self.rhs = _DenseRHS(model)
        self.m_op = model.jumps[mon.jump_index] * np.exp(-1j * mon.phi)
        self.md_op = self.m_op.conj().T

    def prepare(self, rho: np.ndarray) -> np.ndarray:
        return rho.astype(complex)

    def finish(self, rho: np.ndarray) -> np.ndarray:
        return rho

    def step_interval(self, rho: np.ndarray, dt: float, dws: np.ndarray):
        meas_sum = 0.0
        for dw in dws:
            mrho = self.m_op @ rho
            s = 2.0 * float(np.real(np.trace(mrho)))
            meas_sum += s * dt
            c = self.sqrt_eta * dw
            rho = rho * (1.0 - c * s) + dt * self.rhs(rho) + c * (mrho + mrho.conj().T)
            rho = (rho + rho.conj().T) / 2
            tr = float(np.real(np.trace(rho)))
            if not np.isfinite(tr) or tr <= 0:
                raise _RetryInterval
            rho /= tr
            if np.min(np.real(np.diagonal(rho))) < _DIAG_GUARD:
                raise _RetryInterval
        return rho, meas_sum


def _bridge(dws: np.ndarray, dt: float, stream: GaussianStream) -> np.ndarray:
    """Refine Wiener increments to half steps (Brownian bridge)."""
    z = stream.normals(len(dws))
    first = 0.5 * dws + 0.5 * math.sqrt(dt) * z
    out = np.empty(2 * len(dws))
    out[0::2] = first
    out[1::2] = dws - first
    return out


def _build_sme(model: LindbladModel):
    if model.monitored is None:
        raise ValueError("model has no monitored channel")
    ops = [model.hamiltonian] + model.jumps
    if all(_is_diagonal(op) for op in ops):
        return _DiagonalSME(model)
    return _DenseSME(model)


def evolve_homodyne_trajectory(
    model: LindbladModel,
    rho0: np.ndarray | QuantumState,
    grid: TimeGrid,
    seed: int,
    noise: np.ndarray | None = None,
    store_states: bool = False,
    record_photon: bool | None = None,
) -> TrajectoryRecord:
    """One Ito Euler-Maruyama homodyne trajectory.

    dr = L(rho) dt + sqrt(eta) H[L e^{-i phi}](rho) dW, with the state
    re-Hermitized and exactly renormalized after every step.  The recorded
    photocurrent is the interval average of
    sqrt(eta) <L e^{-i phi} + L' e^{i phi}> dt + dW over each record step.

    ``noise`` injects the Wiener increments directly (testing hook); by
    default they come from the trajectory's own counter-based stream.
    If an interval drives a diagonal entry of rho below the positivity
    guard, it is retried with halved steps (bridged noise) up to 3 times.
    """
    rho = rho0.rho if isinstance(rho0, QuantumState) else rho0
    if rho.shape != (model.dim, model.dim):
        raise ShapeError("initial state does not match the model dimension")
    if grid.dt_step is None:
        raise ValueError("stochastic evolution needs grid.dt_step")
    stepper = _build_sme(model)

    n_rec, n_sub = grid.n_record, grid.n_sub
    dt = grid.dt_step
    times = grid.times

    composite = len(model.dims) == 2
    n_atoms = model.dims[0] - 1
    spin = observables.spin_algebra_for(n_atoms)
    params = model.meta.get("params")
    if record_photon is None:
        record_photon = composite and params is not None

    stream = GaussianStream(seed)
    if noise is not None and len(noise) != n_rec * n_sub:
        raise ValueError("injected noise length must equal n_record * n_sub")

    photocurrent = np.zeros(n_rec + 1)
    wiener_sum = np.zeros(n_rec + 1)
    means = np.zeros((n_rec + 1, 3))
    covs = np.zeros((n_rec + 1, 3, 3))
    photon = np.zeros(n_rec + 1) if record_photon else None
    states: list[np.ndarray] | None = [] if store_states else None

    def record(k: int, rho_c: np.ndarray) -> None:
        rho_h = _hermitize(rho_c)
        if composite:
            mom = observables.moments_for_composite(rho_h, model.dims, spin)
            if photon is not None:
                photon[k] = observables.photon_number(
                    QuantumState(rho_h, model.dims), params
                )
        else:
            mom = observables.spin_moments(rho_h, spin)
        means[k] = mom.mean
        covs[k] = mom.covariance
        if states is not None:
            states.append(rho_h)

    record(0, rho.astype(complex))
    w_total = 0.0
    rho_w = stepper.prepare(rho)

    for k in range(1, n_rec + 1):
        if noise is not None:
            dws = np.asarray(noise[(k - 1) * n_sub : k * n_sub], dtype=float)
        else:
            dws = stream.normals(n_sub) * math.sqrt(dt)
        dt_local, dws_local = dt, dws
        for attempt in range(_MAX_HALVINGS + 1):
            try:
                rho_new, meas_sum = stepper.step_interval(
                    rho_w.copy(), dt_local, dws_local
                )
                break
            except _RetryInterval:
                if attempt == _MAX_HALVINGS:
                    raise StepSizeError(
                        f"positivity guard failed at t~{times[k]:.4g} even after "
                        f"{_MAX_HALVINGS} halvings of dt_step={dt:.3g}"
                    )
                dws_local = _bridge(dws_local, dt_local, stream)
                dt_local /= 2
        rho_w = rho_new
        dw_sum = float(np.sum(dws))
        w_total += dw_sum
        photocurrent[k] = (stepper.sqrt_eta * meas_sum + dw_sum) / grid.dt_record
        wiener_sum[k] = w_total
        record(k, stepper.finish(rho_w))

    return TrajectoryRecord(
        seed=seed,
        times=times,
        photocurrent=photocurrent,
        means=means,
        covariances=covs,
        wiener_sum=wiener_sum,
        photon=photon,
        states=states,
    )


# ---------------------------------------------------------------------------
# conditional-vs-unconditional consistency


@dataclass
class ConsistencyReport:
    times: np.ndarray
    deviations: np.ndarray
    stderrs: np.ndarray
    max_deviation: float


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(_hermitize(a - b)))))


def unconditional_consistency_check(
    model: LindbladModel,
    rho0: np.ndarray | QuantumState,
    grid: TimeGrid,
    n_traj: int,
    seed: int,
    n_batches: int = 10,
) -> ConsistencyReport:
    """Trajectory-averaged conditional state vs the deterministic solution.

    Returns per-record-time trace distances of the ensemble mean to the
    master-equation state, with batch-means standard errors.
    """
    if n_traj < 100:
        raise DomainError("consistency check needs n_traj >= 100")
    from .montecarlo import trajectory_seed  # deferred: montecarlo imports us

    det = evolve_master_equation(model, rho0, grid, store_states=True)
    n_rec = grid.n_record + 1
    dim = model.dim
    batch_of = np.arange(n_traj) * n_batches // n_traj
    sums = np.zeros((n_batches, n_rec, dim, dim), dtype=complex)
    for k in range(n_traj):
        rec = evolve_homodyne_trajectory(
            model, rho0, grid, trajectory_seed(seed, k), store_states=True
        )
        sums[batch_of[k]] += np.stack(rec.states)
    counts = np.bincount(batch_of, minlength=n_batches).astype(float)

    mean_states = sums.sum(axis=0) / n_traj
    deviations = np.array(
        [trace_distance(mean_states[i], det.states[i]) for i in range(n_rec)]
    )
    batch_dev = np.zeros((n_batches, n_rec))
    for b in range(n_batches):
        for i in range(n_rec):
            batch_dev[b, i] = trace_distance(sums[b, i] / counts[b], det.states[i])
    stderrs = batch_dev.std(axis=0, ddof=1) / math.sqrt(n_batches)
    return ConsistencyReport(
        grid.times, deviations, stderrs, float(deviations.max())
    )
