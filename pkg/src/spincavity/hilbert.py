"""Operator algebras and states for the collective spin and the cavity mode.

Basis conventions fixed here and relied on by every other module:

* spin: maximal total-spin sector S = N/2 (dimension N + 1), ordered by
  decreasing Sz eigenvalue, so ``sz = diag(S, S-1, ..., -S)``;
* cavity: truncated Fock space ordered by increasing occupation;
* composite operators: Kronecker products with the spin factor first.

Everything is stored dense.  At the scales this package targets (reduced
models of dimension N + 1, composite dimensions of a few thousand) dense
kernels are simpler and fast enough, and they fix file outputs bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import ShapeError, SizingError, TruncationError

#: Default cap on any Hilbert-space dimension (per composite factor product).
#: Guards accidental O(dim^4) superoperator blowup.
DEFAULT_DIM_CAP = 4096


@dataclass(frozen=True)
class SpinAlgebra:
    """Collective spin operators in the maximal sector S = N/2."""

    n_atoms: int
    dim: int
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    s_plus: np.ndarray
    s_minus: np.ndarray

    @property
    def total_spin(self) -> float:
        return self.n_atoms / 2

    @property
    def sz_diag(self) -> np.ndarray:
        """Sz eigenvalues in basis order (S, S-1, ..., -S)."""
        return np.real(np.diagonal(self.sz))


@dataclass(frozen=True)
class CavityAlgebra:
    """Truncated Fock-space ladder operators for the displaced cavity mode."""

    n_max: int
    b: np.ndarray
    number_op: np.ndarray

    @property
    def dim(self) -> int:
        return self.n_max + 1


@dataclass
class QuantumState:
    """Density matrix together with the factor dimensions it lives on.

    ``dims`` is ``(N + 1,)`` for a spin-only state and
    ``(N + 1, n_max + 1)`` for a state on spin (x) cavity.
    """

    rho: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self) -> None:
        d = int(np.prod(self.dims))
        if self.rho.ndim != 2 or self.rho.shape != (d, d):
            raise ShapeError(
                f"state of shape {self.rho.shape} does not match dims {self.dims}"
            )

    @property
    def space_tag(self) -> str:
        return "spin" if len(self.dims) == 1 else "spin*cavity"

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    def trace(self) -> float:
        return float(np.real(np.trace(self.rho)))

    def hermiticity_defect(self) -> float:
        """Operator norm of rho - rho^dagger."""
        return float(np.linalg.norm(self.rho - self.rho.conj().T, ord=2))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh((self.rho + self.rho.conj().T) / 2)[0])


def spin_operators(n_atoms: int, dim_cap: int = DEFAULT_DIM_CAP) -> SpinAlgebra:
    """Build the collective spin algebra for N atoms in the S = N/2 sector.

    The ladder operators are constructed from their action in the |S, m>
    basis; sx, sy follow from s_plus and s_minus.
    """
    if n_atoms < 1:
        raise SizingError("n_atoms must be a positive integer")
    dim = n_atoms + 1
    if dim > dim_cap:
        raise SizingError(f"spin dimension {dim} exceeds cap {dim_cap}")
    s = n_atoms / 2
    m = s - np.arange(dim)  # decreasing: S, S-1, ..., -S

    s_minus = np.zeros((dim, dim), dtype=complex)
    # S-|S, m> = sqrt(S(S+1) - m(m-1)) |S, m-1>; m = m[i] sits at index i.
    for i in range(dim - 1):
        mi = m[i]
        s_minus[i + 1, i] = np.sqrt(s * (s + 1) - mi * (mi - 1))
    s_plus = s_minus.conj().T

    sx = (s_plus + s_minus) / 2
    sy = (s_plus - s_minus) / 2j
    sz = np.diag(m).astype(complex)
    return SpinAlgebra(n_atoms, dim, sx, sy, sz, s_plus, s_minus)


def cavity_operators(n_max: int, dim_cap: int = DEFAULT_DIM_CAP) -> CavityAlgebra:
    """Truncated Fock-space lowering operator; b |n> = sqrt(n) |n-1>."""
    if n_max < 1:
        raise SizingError("n_max must be >= 1")
    if n_max + 1 > dim_cap:
        raise SizingError(f"cavity dimension {n_max + 1} exceeds cap {dim_cap}")
    dim = n_max + 1
    b = np.zeros((dim, dim), dtype=complex)
    for n in range(1, dim):
        b[n - 1, n] = np.sqrt(n)
    number_op = np.diag(np.arange(dim, dtype=float)).astype(complex)
    return CavityAlgebra(n_max, b, number_op)


def tensor_embed(spin_op: np.ndarray, cavity_op: np.ndarray) -> np.ndarray:
    """Kronecker composite with the spin factor first: A (x) B."""
    for op in (spin_op, cavity_op):
        if op.ndim != 2 or op.shape[0] != op.shape[1]:
            raise ShapeError("tensor_embed operands must be square")
    return np.kron(spin_op, cavity_op)


def partial_trace_cavity(state: QuantumState) -> QuantumState:
    """Trace out the cavity factor of a spin (x) cavity state."""
    if len(state.dims) != 2:
        raise ShapeError("partial_trace_cavity needs a composite state")
    ds, dc = state.dims
    rho4 = state.rho.reshape(ds, dc, ds, dc)
    rho_s = np.einsum("ikjk->ij", rho4)
    return QuantumState(rho_s, (ds,))


def css_x_vector(n_atoms: int) -> np.ndarray:
    """Coherent spin state along +x as a state vector in the sz basis.

    Amplitudes are binomial, sqrt(C(N, k)) / 2^(N/2), computed in log space
    so the construction stays finite up to the dimension cap.
    """
    if n_atoms < 1:
        raise SizingError("n_atoms must be a positive integer")
    k = np.arange(n_atoms + 1)
    log_amp = 0.5 * (
        gammaln(n_atoms + 1) - gammaln(k + 1) - gammaln(n_atoms - k + 1)
    ) - (n_atoms / 2) * np.log(2.0)
    return np.exp(log_amp).astype(complex)


def css_x_state(n_atoms: int) -> QuantumState:
    """Density matrix of the coherent spin state along +x."""
    psi = css_x_vector(n_atoms)
    return QuantumState(np.outer(psi, psi.conj()), (n_atoms + 1,))


def coherent_amplitudes(amplitude: complex, n_max: int) -> np.ndarray:
    """Unnormalized truncated coherent-state coefficients e^{-|A|^2/2} A^n / sqrt(n!).

    The squared norm deficit of the returned vector equals the Poisson tail
    beyond the truncation, which is what the truncation check measures.
    """
    dim = n_max + 1
    c = np.zeros(dim, dtype=complex)
    c[0] = np.exp(-abs(amplitude) ** 2 / 2)
    for n in range(1, dim):
        c[n] = c[n - 1] * amplitude / np.sqrt(n)
    return c


def coherent_state(
    amplitude: complex, n_max: int, max_deficit: float = 1e-8
) -> np.ndarray:
    """Normalized coherent state vector of the cavity mode.

    Raises TruncationError when the Poisson tail lost to truncation exceeds
    ``max_deficit`` (the |amplitude|^2 <~ n_max/2 safety rule, made precise).
    """
    c = coherent_amplitudes(amplitude, n_max)
    norm2 = float(np.sum(np.abs(c) ** 2))
    deficit = 1.0 - norm2
    if deficit > max_deficit:
        raise TruncationError(
            f"coherent amplitude {amplitude} loses weight {deficit:.3e} "
            f"at n_max={n_max} (allowed {max_deficit:.1e})"
        )
    return c / np.sqrt(norm2)
