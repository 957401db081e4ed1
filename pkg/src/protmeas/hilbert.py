"""Dense complex linear algebra over small Hilbert spaces.

Grid spaces (``grid1d`` and ``pointer``) carry the cell width ``dx`` as the
measure of their inner product, so amplitudes approximate a continuum
wavefunction with ``sum |psi_n|^2 dx = 1``. Spin spaces use plain sums.
Composite spaces are row-major over their factors: for factors of dimension
``(d0, d1)`` the flat index is ``i0 * d1 + i1``, which is also the layout of
``np.kron``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import NotHermitianError, NumericalError, SizeError, SpaceMismatchError

MAX_COMPOSITE_DIM = 16384
HERMITIAN_TOL = 1e-12
IMAG_TOL = 1e-10

SPACE_KINDS = ("spin", "grid1d", "pointer")
GRID_KINDS = ("grid1d", "pointer")


@dataclass(frozen=True)
class HilbertSpace:
    kind: str
    dimension: int
    x_min: float | None = None
    x_max: float | None = None

    def __post_init__(self):
        if self.kind not in SPACE_KINDS:
            raise ValueError(f"unknown space kind {self.kind!r}; expected one of {SPACE_KINDS}")
        if int(self.dimension) != self.dimension or self.dimension < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {self.dimension}")
        if self.is_grid:
            if self.x_min is None or self.x_max is None:
                raise ValueError(f"{self.kind} space needs x_min and x_max")
            if not self.x_max > self.x_min:
                raise ValueError("grid spaces need x_max > x_min")

    @property
    def is_grid(self) -> bool:
        return self.kind in GRID_KINDS

    @property
    def dx(self) -> float:
        if not self.is_grid:
            raise AttributeError("discrete spaces have no cell width")
        return (self.x_max - self.x_min) / self.dimension

    @property
    def weight(self) -> float:
        """Measure attached to each basis element in inner products."""
        return self.dx if self.is_grid else 1.0

    @property
    def coordinates(self) -> np.ndarray:
        """Cell centres ``x_min + (n + 1/2) dx``."""
        return self.x_min + (np.arange(self.dimension) + 0.5) * self.dx

    @property
    def factors(self) -> tuple["HilbertSpace", ...]:
        return (self,)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.dimension,)


@dataclass(frozen=True)
class CompositeSpace:
    factors: tuple[HilbertSpace, ...]
    max_dimension: int = field(default=MAX_COMPOSITE_DIM, compare=False)

    def __post_init__(self):
        flat: list[HilbertSpace] = []
        for f in self.factors:
            flat.extend(f.factors)
        object.__setattr__(self, "factors", tuple(flat))
        if len(self.factors) < 2:
            raise ValueError("a composite space needs at least two factors")
        if self.dimension > self.max_dimension:
            raise SizeError(
                f"composite dimension {self.dimension} exceeds the maximum {self.max_dimension}"
            )

    @property
    def dimension(self) -> int:
        return int(np.prod([f.dimension for f in self.factors]))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.dimension for f in self.factors)

    @property
    def weight(self) -> float:
        return float(np.prod([f.weight for f in self.factors]))

    @property
    def is_grid(self) -> bool:
        return False


Space = Union[HilbertSpace, CompositeSpace]


def _as_composite(a: Space, b: Space, max_dimension: int) -> CompositeSpace:
    return CompositeSpace(a.factors + b.factors, max_dimension=max_dimension)


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray
    space: Space

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != self.space.dimension:
            raise SpaceMismatchError(
                f"{amps.size} amplitudes for a space of dimension {self.space.dimension}"
            )
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def inner(self, other: "StateVector") -> complex:
        """<self|other> with the space's measure."""
        _check_same_space(self.space, other.space)
        return complex(np.vdot(self.amplitudes, other.amplitudes) * self.space.weight)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2) * self.space.weight))

    def normalized(self, fix_phase: bool = False) -> "StateVector":
        """Unit-norm copy.

        With ``fix_phase`` the largest-magnitude amplitude is rotated to be real
        and nonnegative; otherwise the phase is left alone.
        """
        n = self.norm()
        if n == 0:
            raise NumericalError("cannot normalize the zero vector")
        amps = self.amplitudes / n
        if fix_phase:
            k = int(np.argmax(np.abs(amps)))
            amps = amps * np.exp(-1j * np.angle(amps[k]))
        return StateVector(amps, self.space)

    def fidelity(self, other: "StateVector") -> float:
        """|<self|other>| for normalized states."""
        return abs(self.inner(other))

    def reshaped(self) -> np.ndarray:
        return self.amplitudes.reshape(self.space.shape)

    def __repr__(self):
        return f"StateVector(dim={self.space.dimension}, norm={self.norm():.12g})"


@dataclass(frozen=True, eq=False)
class Operator:
    matrix: np.ndarray
    space: Space
    hermitian: bool = False

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        d = self.space.dimension
        if m.shape != (d, d):
            raise SpaceMismatchError(f"matrix shape {m.shape} does not match dimension {d}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.hermitian:
            res = hermiticity_residual(m)
            if res > HERMITIAN_TOL:
                raise NotHermitianError(f"hermitian flag set but max|M - M^H| = {res:.3g}")

    def apply(self, psi: StateVector) -> StateVector:
        _check_same_space(self.space, psi.space)
        return StateVector(self.matrix @ psi.amplitudes, psi.space)

    def adjoint(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.space, self.hermitian)

    def __add__(self, other: "Operator") -> "Operator":
        _check_same_space(self.space, other.space)
        return Operator(self.matrix + other.matrix, self.space, self.hermitian and other.hermitian)

    def __sub__(self, other: "Operator") -> "Operator":
        _check_same_space(self.space, other.space)
        return Operator(self.matrix - other.matrix, self.space, self.hermitian and other.hermitian)

    def __mul__(self, c) -> "Operator":
        c = complex(c)
        return Operator(self.matrix * c, self.space, self.hermitian and c.imag == 0)

    __rmul__ = __mul__

    def __matmul__(self, other: "Operator") -> "Operator":
        _check_same_space(self.space, other.space)
        return Operator(self.matrix @ other.matrix, self.space)

    def __repr__(self):
        return f"Operator(dim={self.space.dimension}, hermitian={self.hermitian})"


def hermiticity_residual(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


def hermitian_operator(matrix, space: Space) -> Operator:
    """Symmetrize ``matrix`` to exact hermiticity and wrap it."""
    m = np.asarray(matrix, dtype=complex)
    return Operator(0.5 * (m + m.conj().T), space, hermitian=True)


def _check_same_space(a: Space, b: Space) -> None:
    if a != b:
        raise SpaceMismatchError(f"space mismatch: {a} vs {b}")


# --- tensor structure -------------------------------------------------------


def tensor_state(a: StateVector, b: StateVector, max_dimension: int = MAX_COMPOSITE_DIM) -> StateVector:
    space = _as_composite(a.space, b.space, max_dimension)
    return StateVector(np.kron(a.amplitudes, b.amplitudes), space)


def tensor_op(a: Operator, b: Operator, max_dimension: int = MAX_COMPOSITE_DIM) -> Operator:
    space = _as_composite(a.space, b.space, max_dimension)
    return Operator(np.kron(a.matrix, b.matrix), space, a.hermitian and b.hermitian)


def embed(op: Operator, composite: CompositeSpace, factor_index: int) -> Operator:
    """Lift an operator on one factor to the whole composite space."""
    if not 0 <= factor_index < len(composite.factors):
        raise IndexError(f"factor index {factor_index} out of range")
    if composite.factors[factor_index] != op.space:
        raise SpaceMismatchError("operator space does not match the requested factor")
    m = np.ones((1, 1), dtype=complex)
    for i, f in enumerate(composite.factors):
        m = np.kron(m, op.matrix if i == factor_index else np.eye(f.dimension))
    return Operator(m, composite, op.hermitian)


# --- measurement-facing primitives --------------------------------------------


def expectation(op: Operator, psi: StateVector) -> float:
    """Real expectation value <psi|op|psi> of a hermitian operator."""
    if not op.hermitian:
        raise NotHermitianError("expectation requires a hermitian operator")
    _check_same_space(op.space, psi.space)
    val = np.vdot(psi.amplitudes, op.matrix @ psi.amplitudes) * psi.space.weight
    if abs(val.imag) > IMAG_TOL:
        raise NumericalError(f"imaginary residue {val.imag:.3g} in expectation value")
    return float(val.real)


def pointer_marginal(psi: StateVector, factor_index: int) -> np.ndarray:
    """Probabilities of the basis cells of one factor, summed over all others.

    For a grid factor ``p_n = sum_rest |Psi|^2 * weight``; the result sums to 1
    for a normalized state.
    """
    space = psi.space
    if not isinstance(space, CompositeSpace):
        raise SpaceMismatchError("pointer_marginal needs a state on a composite space")
    if not 0 <= factor_index < len(space.factors):
        raise IndexError(f"factor index {factor_index} out of range for {len(space.factors)} factors")
    dens = np.abs(psi.reshaped()) ** 2 * space.weight
    axes = tuple(i for i in range(len(space.factors)) if i != factor_index)
    return dens.sum(axis=axes)


# --- constructors -------------------------------------------------------------

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def spin_space() -> HilbertSpace:
    return HilbertSpace("spin", 2)


def identity(space: Space) -> Operator:
    return Operator(np.eye(space.dimension), space, hermitian=True)


def zero_operator(space: Space) -> Operator:
    return Operator(np.zeros((space.dimension, space.dimension)), space, hermitian=True)


def basis_state(space: Space, index: int) -> StateVector:
    amps = np.zeros(space.dimension, dtype=complex)
    amps[index] = 1.0 / np.sqrt(space.weight)
    return StateVector(amps, space)


def spin_state(theta: float, phi: float = 0.0) -> StateVector:
    """Qubit state with Bloch angles (theta, phi)."""
    return StateVector([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)], spin_space())


def bloch_vector(psi: StateVector) -> np.ndarray:
    if psi.space != spin_space():
        raise SpaceMismatchError("Bloch vectors are defined for spin-1/2 states only")
    a = psi.normalized().amplitudes
    return np.array([np.real(np.vdot(a, PAULI[k] @ a)) for k in "xyz"])


def pauli(axis: Sequence[float] | str) -> Operator:
    """``n . sigma`` for a unit axis or one of 'x', 'y', 'z'."""
    if isinstance(axis, str):
        return Operator(PAULI[axis], spin_space(), hermitian=True)
    n = np.asarray(axis, dtype=float)
    m = n[0] * PAULI["x"] + n[1] * PAULI["y"] + n[2] * PAULI["z"]
    return hermitian_operator(m, spin_space())


def projector(psi: StateVector) -> Operator:
    """|psi><psi| including the space measure, so it is idempotent."""
    a = psi.normalized().amplitudes
    return hermitian_operator(np.outer(a, a.conj()) * psi.space.weight, psi.space)


def position_operator(space: HilbertSpace) -> Operator:
    return Operator(np.diag(space.coordinates), space, hermitian=True)


def momentum_wavenumbers(space: HilbertSpace) -> np.ndarray:
    """Eigenvalues of the spectral momentum operator in FFT order.

    The Nyquist mode of an even grid is set to zero so the operator is an odd
    (real antisymmetric) derivative.
    """
    k = 2 * np.pi * np.fft.fftfreq(space.dimension, d=space.dx)
    if space.dimension % 2 == 0:
        k[space.dimension // 2] = 0.0
    return k


def momentum_operator(space: HilbertSpace) -> Operator:
    """Spectral (Fourier) momentum ``P = F^H diag(k) F`` on a periodic grid."""
    n = space.dimension
    k = momentum_wavenumbers(space)
    f = np.fft.fft(np.eye(n), axis=0, norm="ortho")
    return hermitian_operator(f.conj().T @ (k[:, None] * f), space)


def central_difference(space: HilbertSpace) -> np.ndarray:
    """First-derivative matrix, central differences with Dirichlet boundaries."""
    n, dx = space.dimension, space.dx
    d = np.zeros((n, n))
    i = np.arange(n - 1)
    d[i, i + 1] = 1.0 / (2 * dx)
    d[i + 1, i] = -1.0 / (2 * dx)
    return d


def laplacian(space: HilbertSpace) -> np.ndarray:
    """Three-point Laplacian with Dirichlet boundaries."""
    n, dx = space.dimension, space.dx
    return (np.diag(-2.0 * np.ones(n)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)) / dx**2


def gaussian_state(space: HilbertSpace, center: float = 0.0, sigma: float = 1.0, k: float = 0.0) -> StateVector:
    """Normalized Gaussian packet with density standard deviation ``sigma``."""
    x = space.coordinates
    amps = np.exp(-((x - center) ** 2) / (4 * sigma**2) + 1j * k * x)
    return StateVector(amps, space).normalized()


def random_state(space: Space, rng: np.random.Generator) -> StateVector:
    amps = rng.normal(size=space.dimension) + 1j * rng.normal(size=space.dimension)
    return StateVector(amps, space).normalized()


def random_hermitian(space: Space, rng: np.random.Generator, scale: float = 1.0) -> Operator:
    d = space.dimension
    m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return hermitian_operator(scale * (m + m.conj().T) / 2, space)
