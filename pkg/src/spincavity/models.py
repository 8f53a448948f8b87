"""Physical parameters and concrete Lindblad models.

Two families of models are built here from the same parameter set:

* the full atom-cavity model, formulated in the displaced cavity frame
  (mode b with <b> = 0 in the uncoupled stationary state), with the single
  photon-loss channel sqrt(kappa) b;
* reduced spin-only models obtained by adiabatic elimination of the cavity,
  either at second order (dispersive one-axis twisting plus collective
  dephasing) or at third order (Sz^3 Hamiltonian correction and an
  epsilon Sz^2 jump-operator correction).

Rates are conventionally measured in units of kappa and times in 1/kappa;
nothing here enforces kappa = 1, but the CLI works that way.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import hilbert
from .errors import FactorizationError, SizingError


@dataclass(frozen=True)
class ModelParams:
    """Physical inputs: cavity linewidth, coupling, detuning, drive, detection."""

    kappa: float
    g: float
    delta: float
    beta: float
    eta: float = 1.0
    phi: float = 0.0

    def __post_init__(self) -> None:
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        if self.g < 0:
            raise ValueError("g must be >= 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0 (drive phase convention)")
        if not 0 <= self.eta <= 1:
            raise ValueError("eta must lie in [0, 1]")


@dataclass(frozen=True)
class DerivedParams:
    """Quantities derived from ModelParams; see derive_params for formulas."""

    epsilon: float
    d: float
    n0: float
    alpha: complex
    chi: float
    kappa_tilde: float
    theta_s: float

    @property
    def jump_phase(self) -> complex:
        """e^{i theta_s} = (d - i)^2 / (1 + d^2)."""
        return complex(math.cos(self.theta_s), math.sin(self.theta_s))

    @property
    def sz2_coefficient(self) -> complex:
        """Coefficient of epsilon*Sz^2 inside the reduced jump operator."""
        return 2 * (self.d - 1j) / (1 + self.d**2)


def derive_params(p: ModelParams) -> DerivedParams:
    """Derived quantities of the driven cavity and of the reduced models.

    alpha is the uncoupled steady-state amplitude of the driven field,
    n0 = (2 beta / kappa)^2 the stationary photon number on resonance, and
    chi, kappa_tilde the dispersive coupling and collective dephasing rates
    of the second-order reduced model.  theta_s is the phase of the reduced
    jump operator; at d = 0 the branch is fixed to +pi.
    """
    eps = p.g / p.kappa
    d = 2 * p.delta / p.kappa
    n0 = (2 * p.beta / p.kappa) ** 2
    alpha = -1j * p.beta / (-1j * p.delta + p.kappa / 2)
    abs_alpha2 = abs(alpha) ** 2
    denom = p.kappa**2 + 4 * p.delta**2
    chi = p.delta * 4 * p.g**2 * abs_alpha2 / denom
    kappa_tilde = 4 * p.g**2 * abs_alpha2 * p.kappa / denom
    # (d - i)^2 = (d^2 - 1) - 2 i d; the + 0.0 kills a negative zero so that
    # atan2 lands on +pi rather than -pi at d = 0.
    theta_s = math.atan2(-2.0 * d + 0.0, d * d - 1.0)
    return DerivedParams(eps, d, n0, alpha, chi, kappa_tilde, theta_s)


@dataclass(frozen=True)
class Monitored:
    """Which jump channel is homodyne-monitored, with phase and efficiency."""

    jump_index: int
    phi: float
    eta: float


@dataclass
class LindbladModel:
    """Hamiltonian, jump operators and monitoring metadata for one model."""

    hamiltonian: np.ndarray
    jumps: list[np.ndarray]
    dims: tuple[int, ...]
    order_tag: str  # 'full' | 'reduced-2nd' | 'reduced-3rd'
    monitored: Monitored | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    def __post_init__(self) -> None:
        if self.monitored is not None and not (
            0 <= self.monitored.jump_index < len(self.jumps)
        ):
            raise ValueError("monitored jump index out of range")


def default_n_max(derived: DerivedParams, initial_cavity: str) -> int:
    """Fock truncation rule; the margin halves for a displaced-vacuum start."""
    nbar = abs(derived.alpha) ** 2
    if initial_cavity == "lab_vacuum":
        margin = 6 * math.sqrt(nbar + 1) + 8
    else:
        margin = 3 * math.sqrt(nbar + 1) + 4
    return max(2, math.ceil(nbar + margin))


def build_full_model(
    p: ModelParams,
    n_atoms: int,
    n_max: int | None = None,
    initial_cavity: str = "lab_vacuum",
    dim_cap: int = hilbert.DEFAULT_DIM_CAP,
) -> tuple[LindbladModel, hilbert.QuantumState]:
    """Full atom-cavity model in the displaced frame, plus its initial state.

    H = -delta b'b (x)-embedded + g Sz (x) (b'b + alpha b' + alpha* b), with
    the single jump sqrt(kappa) b.  The initial state is the CSS along +x
    times either the lab vacuum (coherent state of amplitude -alpha in the
    b frame) or the displaced vacuum |0>_b for transient-free runs.
    """
    if initial_cavity not in ("lab_vacuum", "displaced_vacuum"):
        raise ValueError(f"unknown initial_cavity {initial_cavity!r}")
    dp = derive_params(p)
    if n_max is None:
        n_max = default_n_max(dp, initial_cavity)
    ds, dc = n_atoms + 1, n_max + 1
    if ds * dc > dim_cap:
        raise SizingError(
            f"composite dimension {ds * dc} exceeds cap {dim_cap}; "
            "reduce n_atoms/n_max or raise dim_cap"
        )
    spin = hilbert.spin_operators(n_atoms, dim_cap)
    cav = hilbert.cavity_operators(n_max, dim_cap)
    ident_s = np.eye(ds, dtype=complex)

    b = cav.b
    b_op = cav.number_op + dp.alpha * b.conj().T + np.conj(dp.alpha) * b
    hamiltonian = hilbert.tensor_embed(ident_s, -p.delta * cav.number_op)
    hamiltonian += p.g * hilbert.tensor_embed(spin.sz, b_op)
    jump = math.sqrt(p.kappa) * hilbert.tensor_embed(ident_s, b)

    if initial_cavity == "lab_vacuum":
        psi_c = hilbert.coherent_state(-dp.alpha, n_max)
    else:
        psi_c = np.zeros(dc, dtype=complex)
        psi_c[0] = 1.0
    rho_c = np.outer(psi_c, psi_c.conj())
    rho0 = np.kron(hilbert.css_x_state(n_atoms).rho, rho_c)

    model = LindbladModel(
        hamiltonian,
        [jump],
        (ds, dc),
        "full",
        Monitored(0, p.phi, p.eta),
        meta={
            "params": p,
            "derived": dp,
            "n_atoms": n_atoms,
            "n_max": n_max,
            "initial_cavity": initial_cavity,
        },
    )
    return model, hilbert.QuantumState(rho0, (ds, dc))


def build_reduced_model(
    p: ModelParams,
    n_atoms: int,
    order: str = "second",
    oat_only: bool = False,
    dim_cap: int = hilbert.DEFAULT_DIM_CAP,
) -> LindbladModel:
    """Spin-only reduced model at second or third elimination order.

    second: H = chi Sz^2, jump sqrt(kappa_tilde) e^{i theta_s} Sz.
    third:  adds the Sz^3 Hamiltonian term and the epsilon Sz^2 jump
    correction; the resulting single-channel dissipator carries the
    order-epsilon^4 completion automatically.

    ``oat_only`` keeps the Hamiltonian and drops the dissipative channel
    (diagnostic switch for the pure one-axis-twisting benchmark).
    """
    if order not in ("second", "third"):
        raise ValueError(f"unknown elimination order {order!r}")
    dp = derive_params(p)
    if dp.epsilon >= 1:
        raise ValueError("reduced models need epsilon = g/kappa < 1")
    if dp.epsilon * math.sqrt(n_atoms) > 0.5:
        warnings.warn(
            f"epsilon*sqrt(N) = {dp.epsilon * math.sqrt(n_atoms):.2f} > 0.5: "
            "the elimination expansion converges slowly here",
            stacklevel=2,
        )
    spin = hilbert.spin_operators(n_atoms, dim_cap)
    m = spin.sz_diag

    h_diag = dp.chi * m**2
    l_diag = math.sqrt(dp.kappa_tilde) * dp.jump_phase * m.astype(complex)
    if order == "third":
        # kappa_tilde * (1 - d^2)/(1 + d^2) * epsilon is the Sz^3 coefficient
        # of the third-order Hamiltonian; it vanishes identically at d = 1.
        h_diag = h_diag - dp.kappa_tilde * (1 - dp.d**2) / (
            1 + dp.d**2
        ) * dp.epsilon * m**3
        l_diag = l_diag + math.sqrt(dp.kappa_tilde) * dp.jump_phase * (
            dp.sz2_coefficient * dp.epsilon
        ) * m**2

    hamiltonian = np.diag(h_diag.astype(complex))
    jumps = [] if oat_only else [np.diag(l_diag)]
    monitored = None if oat_only else Monitored(0, p.phi, p.eta)
    tag = "reduced-2nd" if order == "second" else "reduced-3rd"
    return LindbladModel(
        hamiltonian,
        jumps,
        (n_atoms + 1,),
        tag,
        monitored,
        meta={"params": p, "derived": dp, "n_atoms": n_atoms, "oat_only": oat_only},
    )


@dataclass(frozen=True)
class JumpFactorizationReport:
    """Result of the rank-1 check of the third-order dissipator."""

    kossakowski: np.ndarray
    determinant: complex
    eigenvalues: tuple[float, float]
    expected_eigenvalue: float
    jump_residual: float
    rank_one: bool


def verify_jump_factorization(
    p: ModelParams, det_tol: float = 1e-12
) -> JumpFactorizationReport:
    """Check that the third-order dissipator factorizes through one channel.

    In the operator basis {Sz, Sz^2} the expanded dissipator coefficients,
    including the order-epsilon^4 completion of the Sz^2 . Sz^2 entry, form
    the 2x2 matrix

        kappa_tilde * [[1, conj(m) eps], [m eps, |m|^2 eps^2]],

    m = 2(d - i)/(1 + d^2), which must be exactly rank 1 with nonzero
    eigenvalue kappa_tilde (1 + 4 eps^2 / (1 + d^2)) and eigenvector
    reproducing the reduced jump operator up to a global phase.
    """
    dp = derive_params(p)
    kt, eps = dp.kappa_tilde, dp.epsilon
    mcoef = dp.sz2_coefficient
    mat = kt * np.array(
        [
            [1.0, np.conj(mcoef) * eps],
            [mcoef * eps, abs(mcoef) ** 2 * eps**2],
        ],
        dtype=complex,
    )
    determinant = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
    evals, evecs = np.linalg.eigh(mat)
    expected = kt * (1 + 4 * eps**2 / (1 + dp.d**2))

    # jump vector implied by the dominant eigenpair vs the stated one
    v = np.sqrt(max(evals[1], 0.0)) * evecs[:, 1]
    w = math.sqrt(kt) * np.array([1.0, mcoef * eps], dtype=complex)
    phase = np.vdot(v, w)
    if abs(phase) > 0:
        v = v * phase / abs(phase)
    wnorm = np.linalg.norm(w)
    jump_residual = float(np.linalg.norm(v - w) / wnorm) if wnorm > 0 else 0.0

    scale = max(kt**2, np.finfo(float).tiny)
    rank_one = abs(determinant) < det_tol * scale and abs(evals[0]) < det_tol * max(
        kt, np.finfo(float).tiny
    )
    if not rank_one:
        raise FactorizationError(
            f"dissipator coefficient matrix is not rank 1: det={determinant:.3e}, "
            f"eigenvalues={evals}"
        )
    return JumpFactorizationReport(
        kossakowski=mat,
        determinant=determinant,
        eigenvalues=(float(evals[0]), float(evals[1])),
        expected_eigenvalue=expected,
        jump_residual=jump_residual,
        rank_one=rank_one,
    )


def optimal_homodyne_phase(d: float) -> float:
    """Homodyne phase maximizing the mean-field Sz signal: -2 arctan(1/d).

    The d -> 0+ limit is pi; at exactly d = 0 the value pi is returned even
    though the resonant QND scenario conventionally measures at phi = 0
    (the two differ only by the sign of the photocurrent there).
    """
    if d == 0:
        return math.pi
    return -2.0 * math.atan(1.0 / d)


def completion_generator(
    spin: hilbert.SpinAlgebra, derived: DerivedParams
):
    """The order-epsilon^4 single-channel completion as a superoperator.

    Returns a callable rho -> kappa_tilde |m eps|^2 (Sz^2 rho Sz^2
    - {Sz^4, rho}/2); subtracting it from the third-order model generator
    leaves exactly the elimination-series terms through epsilon^3.
    """
    rate = derived.kappa_tilde * abs(derived.sz2_coefficient * derived.epsilon) ** 2
    m2 = spin.sz_diag**2
    sz2 = np.diag(m2.astype(complex))
    sz4 = np.diag((m2**2).astype(complex))

    def gen(rho: np.ndarray) -> np.ndarray:
        return rate * (sz2 @ rho @ sz2 - 0.5 * (sz4 @ rho + rho @ sz4))

    return gen


def lindblad_generator(model: LindbladModel):
    """Superoperator rho -> -i[H, rho] + sum_k D[L_k](rho) for any model."""
    h = model.hamiltonian
    jumps = [(L, L.conj().T, L.conj().T @ L) for L in model.jumps]

    def gen(rho: np.ndarray) -> np.ndarray:
        out = -1j * (h @ rho - rho @ h)
        for L, Ld, LdL in jumps:
            out += L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL)
        return out

    return gen
