"""Protection mechanisms: Zeno projections, energy gaps and magnetic fields."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import NumericalError, PreconditionError, SpaceMismatchError
from .hilbert import (
    CompositeSpace,
    Operator,
    StateVector,
    bloch_vector,
    hermitian_operator,
    pauli,
    spin_space,
)

BRANCH_FLOOR = 1e-15
GAP_TOL = 1e-9


@dataclass(frozen=True)
class Unprotected:
    pass


@dataclass(frozen=True, eq=False)
class Zeno:
    """``n`` equally spaced projections onto ``chi`` at ``t_j = j tau / n``."""

    n: int
    chi: StateVector

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"Zeno projection count must be a positive integer, got {self.n}")
        if abs(self.chi.norm() - 1) > 1e-9:
            raise ValueError("Zeno protected state must be normalized")


@dataclass(frozen=True, eq=False)
class EnergyGap:
    h_sys: Operator
    level_index: int = 0

    def __post_init__(self):
        if not self.h_sys.hermitian:
            raise ValueError("energy-gap protection needs a hermitian Hamiltonian")
        e = np.linalg.eigvalsh(self.h_sys.matrix)
        if not 0 <= self.level_index < e.size:
            raise ValueError(f"level index {self.level_index} out of range")
        gaps = np.abs(np.delete(e, self.level_index) - e[self.level_index])
        if gaps.min() <= GAP_TOL * max(1.0, np.abs(e).max()):
            raise ValueError(f"level {self.level_index} is degenerate (gap {gaps.min():.3g})")

    @property
    def gap(self) -> float:
        e = np.linalg.eigvalsh(self.h_sys.matrix)
        return float(np.abs(np.delete(e, self.level_index) - e[self.level_index]).min())

    def protected_state(self) -> StateVector:
        _, v = np.linalg.eigh(self.h_sys.matrix)
        psi = StateVector(v[:, self.level_index], self.h_sys.space)
        return psi.normalized(fix_phase=True)


@dataclass(frozen=True, eq=False)
class Magnetic:
    """Field along ``axis`` with Larmor frequency ``omega``."""

    axis: tuple[float, float, float]
    omega: float

    def __post_init__(self):
        axis = tuple(float(a) for a in self.axis)
        if len(axis) != 3 or abs(np.linalg.norm(axis) - 1) > 1e-12:
            raise ValueError("magnetic axis must be a unit 3-vector")
        if not self.omega > 0:
            raise ValueError("magnetic omega must be positive")
        object.__setattr__(self, "axis", axis)

    @classmethod
    def along(cls, psi: StateVector, omega: float) -> "Magnetic":
        """Field pointing along the Bloch vector of ``psi``."""
        n = bloch_vector(psi)
        return cls(tuple(n / np.linalg.norm(n)), omega)

    def to_energy_gap(self) -> EnergyGap:
        return EnergyGap(protection_hamiltonian(self), 0)


ProtectionScheme = Union[Unprotected, Zeno, EnergyGap, Magnetic]


def protection_hamiltonian(scheme: ProtectionScheme) -> Operator | None:
    """The system Hamiltonian that realizes ``scheme``; ``None`` for Zeno/unprotected.

    A magnetic field gives ``-(omega/2) n.sigma``, whose nondegenerate ground
    state is spin-up along ``n``.
    """
    if isinstance(scheme, EnergyGap):
        return scheme.h_sys
    if isinstance(scheme, Magnetic):
        return hermitian_operator(-0.5 * scheme.omega * pauli(scheme.axis).matrix, spin_space())
    if isinstance(scheme, (Zeno, Unprotected)):
        return None
    raise TypeError(f"unknown protection scheme {scheme!r}")


def require_hamiltonian(scheme: ProtectionScheme) -> Operator:
    h = protection_hamiltonian(scheme)
    if h is None:
        raise PreconditionError(f"{type(scheme).__name__} protection has no Hamiltonian")
    return h


def protected_state(scheme: ProtectionScheme) -> StateVector | None:
    if isinstance(scheme, Zeno):
        return scheme.chi
    if isinstance(scheme, Magnetic):
        return scheme.to_energy_gap().protected_state()
    if isinstance(scheme, EnergyGap):
        return scheme.protected_state()
    return None


def zeno_project(psi: StateVector, chi: StateVector, survive: bool) -> tuple[StateVector, float]:
    """Unnormalized projection of a system(x)pointer state onto ``chi`` or its complement.

    Returns the branch state and its Born probability.
    """
    space = psi.space
    if not isinstance(space, CompositeSpace) or space.factors[0] != chi.space:
        raise SpaceMismatchError("Zeno projection needs a composite state whose first factor is chi's space")
    sys = space.factors[0]
    c = chi.amplitudes * np.sqrt(sys.weight)
    c = c / np.linalg.norm(c)
    m = psi.reshaped().reshape(sys.dimension, -1)
    kept = np.outer(c, c.conj() @ m)
    branch = kept if survive else m - kept
    out = StateVector(branch.reshape(-1), space)
    return out, out.norm() ** 2


def zeno_step(psi: StateVector, chi: StateVector, rng: np.random.Generator) -> tuple[StateVector, bool]:
    """Projective check of whether the system is still in ``chi``.

    Draws one uniform ``u`` from ``rng``; the state survives when ``u`` falls
    below the Born probability of the ``chi`` branch. The sampled branch is
    renormalized.
    """
    kept, p_keep = zeno_project(psi, chi, True)
    survived = bool(rng.random() < p_keep)
    branch, p = (kept, p_keep) if survived else zeno_project(psi, chi, False)
    if p < BRANCH_FLOOR:
        raise NumericalError(f"sampled a Zeno branch of probability {p:.3g}")
    return StateVector(branch.amplitudes / np.sqrt(p), psi.space), survived


def survival_probability(run) -> float:
    """Probability that a Zeno-protected run stayed in the protected state.

    ``run`` is either a single trajectory (the product of the survival branch
    probabilities it followed) or an iterable of measurement records (the
    empirical survival frequency).
    """
    zeno = getattr(run, "zeno", None)
    if zeno is not None:
        if not all(zeno.outcomes):
            return 0.0
        return float(np.prod(zeno.probabilities))
    if hasattr(run, "zeno"):
        raise PreconditionError("survival probability requested for a run without Zeno protection")
    records = list(run)
    if not records or any(not isinstance(r.scheme, Zeno) for r in records):
        raise PreconditionError("survival frequency needs a non-empty ensemble of Zeno records")
    return float(np.mean([r.survived for r in records]))


def ensure_compatible(psi: StateVector, scheme: ProtectionScheme, tol: float = 1e-9) -> None:
    """Raise if ``psi`` is not the state ``scheme`` protects."""
    chi = protected_state(scheme)
    if chi is None:
        return
    if psi.space != chi.space:
        raise PreconditionError("state and protection act on different spaces")
    if abs(psi.normalized().inner(chi)) < 1 - tol:
        raise PreconditionError(f"state is not protected by {type(scheme).__name__}")
