"""Wavefunction reconstruction from regional density and flux measurements.

Units: hbar = m = 1, so the local velocity is j / rho.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError, ProtectionTooWeakError, SpaceMismatchError
from .hilbert import (
    HilbertSpace,
    Operator,
    StateVector,
    central_difference,
    expectation,
    hermitian_operator,
    laplacian,
)
from .measurement import MeasurementConfig, run_protective_ideal
from .protection import EnergyGap, ProtectionScheme

RHO_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class RegionPartition:
    space: HilbertSpace
    groups: tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.space.kind != "grid1d":
            raise SpaceMismatchError("regions partition a grid1d space")
        groups = tuple(np.asarray(g, dtype=int) for g in self.groups)
        cells = np.concatenate(groups) if groups else np.array([], dtype=int)
        if any(g.size == 0 for g in groups):
            raise ValueError("every region needs at least one cell")
        if cells.size != self.space.dimension or not np.array_equal(np.sort(cells), np.arange(self.space.dimension)):
            raise ValueError("regions must partition the grid exactly")
        object.__setattr__(self, "groups", groups)

    @classmethod
    def uniform(cls, space: HilbertSpace, n_regions: int) -> "RegionPartition":
        """Contiguous regions of (nearly) equal size, in grid order."""
        if not 1 <= n_regions <= space.dimension:
            raise ValueError(f"cannot split {space.dimension} cells into {n_regions} regions")
        return cls(space, tuple(np.array_split(np.arange(space.dimension), n_regions)))

    def __len__(self):
        return len(self.groups)

    @property
    def volumes(self) -> np.ndarray:
        return np.array([g.size for g in self.groups]) * self.space.dx

    @property
    def centers(self) -> np.ndarray:
        x = self.space.coordinates
        return np.array([x[g].mean() for g in self.groups])

    @property
    def bounds(self) -> np.ndarray:
        """(n, 2) array of [left, right) cell-edge bounds, valid for contiguous regions."""
        x, dx = self.space.coordinates, self.space.dx
        return np.array([[x[g].min() - dx / 2, x[g].max() + dx / 2] for g in self.groups])

    def region_of(self, x: float) -> int:
        for n, (lo, hi) in enumerate(self.bounds):
            if lo <= x < hi:
                return n
        raise ValueError(f"x = {x} lies outside the grid")


def _check_index(part: RegionPartition, n: int) -> None:
    if not 0 <= n < len(part):
        raise IndexError(f"region index {n} out of range for {len(part)} regions")


def projector_observable(part: RegionPartition, n: int) -> Operator:
    """Normalized regional projector: 1/v_n on the cells of region n."""
    _check_index(part, n)
    diag = np.zeros(part.space.dimension)
    diag[part.groups[n]] = 1.0 / part.volumes[n]
    return Operator(np.diag(diag), part.space, hermitian=True)


def flux_observable(part: RegionPartition, n: int) -> Operator:
    """Regional current ``(1/2i)(A_n D + D A_n)`` with central-difference D."""
    a = projector_observable(part, n).matrix
    d = central_difference(part.space)
    return hermitian_operator((a @ d + d @ a) / 2j, part.space)


@dataclass
class DensityField:
    values: np.ndarray
    partition: RegionPartition
    raw: np.ndarray | None = None
    norm_error: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values < 0):
            raise ValueError("densities must be nonnegative")
        total = float(self.values @ self.partition.volumes)
        if abs(total - 1) > 1e-6:
            raise ValueError(f"density integrates to {total}, not 1")


@dataclass
class FluxField:
    values: np.ndarray
    partition: RegionPartition
    norm_error: float = 0.0


def _regional_values(psi, part, observable, mode, scheme, cfg):
    if psi.space != part.space:
        raise SpaceMismatchError("state and partition live on different grids")
    exact = np.array([expectation(observable(part, n), psi) for n in range(len(part))])
    if mode == "exact":
        return exact, 0.0
    if mode != "protective":
        raise ValueError("mode must be 'exact' or 'protective'")
    if not isinstance(scheme, EnergyGap):
        raise PreconditionError("protective reconstruction uses energy-gap (self) protection")
    cfg = cfg or MeasurementConfig()
    records = [
        run_protective_ideal(psi, observable(part, n), scheme, cfg, label=f"region{n}", check=False)
        for n in range(len(part))
    ]
    measured = np.array([r.outcome for r in records])
    dev = float(np.max(np.abs(measured - exact)))
    if dev > cfg.tolerance:
        raise ProtectionTooWeakError(
            f"protective regional values deviate from exact ones by {dev:.3g} > {cfg.tolerance:.3g}"
        )
    return measured, max(r.norm_error for r in records)


def measure_density(
    psi: StateVector,
    part: RegionPartition,
    mode: str = "exact",
    scheme: ProtectionScheme | None = None,
    cfg: MeasurementConfig | None = None,
) -> DensityField:
    """Regional average densities, exactly or via one protective run per region.

    Protective values are clipped at zero and rescaled to unit total
    probability; the unprocessed readings are kept in ``raw``.
    """
    measured, norm_error = _regional_values(psi.normalized(), part, projector_observable, mode, scheme, cfg)
    vals = np.clip(measured, 0, None)
    vals = vals / float(vals @ part.volumes)
    return DensityField(vals, part, raw=measured, norm_error=norm_error)


def measure_flux(
    psi: StateVector,
    part: RegionPartition,
    mode: str = "exact",
    scheme: ProtectionScheme | None = None,
    cfg: MeasurementConfig | None = None,
) -> FluxField:
    measured, norm_error = _regional_values(psi.normalized(), part, flux_observable, mode, scheme, cfg)
    return FluxField(measured, part, norm_error=norm_error)


@dataclass
class ReconstructedState:
    region_amplitudes: np.ndarray
    state: StateVector
    flagged: np.ndarray
    nodes: list[float] = field(default_factory=list)
    fidelity: float | None = None

    def compare(self, reference: StateVector) -> float:
        """Store and return |<reference|reconstruction>|."""
        self.fidelity = abs(reference.normalized().inner(self.state))
        return self.fidelity


def _roughness(seq: np.ndarray, lo: int, hi: int) -> float:
    lo, hi = max(lo, 1), min(hi, seq.size - 1)
    if hi <= lo:
        return 0.0
    d2 = seq[lo - 1:hi - 1] - 2 * seq[lo:hi] + seq[lo + 1:hi + 1]
    return float(np.sum(np.abs(d2) ** 2))


def _resolve_nodes(signed: np.ndarray, amp: np.ndarray, phase: np.ndarray, flagged: np.ndarray) -> np.ndarray:
    """Insert sign flips at density minima where the amplitude passes through zero.

    Density and current cannot tell a simple zero from a touch-down; the
    smoother continuation (smallest local second differences of the complex
    amplitude) is taken, so a real eigenstate keeps its sign change.
    """
    n = amp.size
    for i in range(1, n - 1):
        if flagged[i] or not (amp[i] < amp[i - 1] and amp[i] <= amp[i + 1]):
            continue
        best, best_r = None, None
        for start in (None, i, i + 1):
            trial = signed.copy()
            if start is not None:
                trial[start:] *= -1
            psi = trial * np.exp(1j * phase)
            r = _roughness(psi, i - 3, i + 4)
            if best_r is None or r < best_r * (1 - 1e-9):
                best, best_r = start, r
        if best is not None:
            signed[best:] *= -1
    return signed


def reconstruct_wavefunction(
    rho: DensityField,
    j: FluxField,
    part: RegionPartition,
    rho_floor: float = RHO_FLOOR,
) -> ReconstructedState:
    """Wavefunction (up to global phase) from regional density and current.

    Amplitude per region is sqrt(rho_n); the phase integrates the velocity
    j_n / rho_n with the trapezoidal rule between region centres. Regions
    below ``rho_floor`` carry no usable velocity: their phase is continued
    from the previous region and they are flagged, as are regions holding a
    detected node. The first region above the floor is real and positive.
    The grid state interpolates the signed amplitude and the phase linearly
    between region centres.
    """
    if rho.partition is not part or j.partition is not part:
        if not (len(rho.values) == len(j.values) == len(part)):
            raise ValueError("density, flux and partition disagree in size")
    rv = np.asarray(rho.values, dtype=float)
    if abs(float(rv @ part.volumes) - 1) > 1e-6:
        raise PreconditionError("density is not normalized")
    low = rv < rho_floor
    if low.all():
        raise PreconditionError("every region is below the density floor")
    amp = np.sqrt(rv)
    c = part.centers
    vel = np.where(low, 0.0, np.asarray(j.values, dtype=float) / np.where(low, 1.0, rv))
    phase = np.zeros(len(part))
    for n in range(1, len(part)):
        if low[n]:
            phase[n] = phase[n - 1]
        elif low[n - 1]:
            phase[n] = phase[n - 1] + (c[n] - c[n - 1]) * vel[n]
        else:
            phase[n] = phase[n - 1] + 0.5 * (c[n] - c[n - 1]) * (vel[n - 1] + vel[n])
    first = int(np.argmax(~low))
    phase -= phase[first]

    signed = _resolve_nodes(amp.copy(), amp, phase, low)
    if signed[first] < 0:
        signed = -signed
    flagged = low.copy()
    nodes = []
    for n in range(1, len(part)):
        if signed[n - 1] * signed[n] < 0:
            a0, a1 = abs(signed[n - 1]), abs(signed[n])
            x_star = c[n - 1] + (c[n] - c[n - 1]) * a0 / (a0 + a1)
            nodes.append(float(x_star))
            flagged[part.region_of(x_star)] = True

    x = part.space.coordinates
    grid = np.interp(x, c, signed) * np.exp(1j * np.interp(x, c, phase))
    state = StateVector(grid, part.space).normalized()
    return ReconstructedState(signed * np.exp(1j * phase), state, flagged, nodes)


# --- test states with closed forms ------------------------------------------------


def harmonic_hamiltonian(space: HilbertSpace, omega: float = 1.0) -> Operator:
    """``-1/2 d^2/dx^2 + omega^2 x^2 / 2`` with the three-point Laplacian."""
    x = space.coordinates
    return hermitian_operator(-0.5 * laplacian(space) + np.diag(0.5 * omega**2 * x**2), space)


def harmonic_eigenstate(space: HilbertSpace, level: int, omega: float = 1.0) -> StateVector:
    """Eigenvector of the discretized oscillator, sign fixed to match the analytic state."""
    _, v = np.linalg.eigh(harmonic_hamiltonian(space, omega).matrix)
    psi = StateVector(v[:, level], space).normalized()
    ref = harmonic_state(space, level, omega)
    return psi if psi.inner(ref).real >= 0 else StateVector(-psi.amplitudes, space)


def harmonic_state(space: HilbertSpace, level: int, omega: float = 1.0) -> StateVector:
    """Analytic oscillator eigenfunction sampled on the grid."""
    from numpy.polynomial.hermite import hermval

    xi = np.sqrt(omega) * space.coordinates
    coef = np.zeros(level + 1)
    coef[level] = 1.0
    return StateVector(hermval(xi, coef) * np.exp(-xi**2 / 2), space).normalized()


def boosted_gaussian(space: HilbertSpace, k: float, center: float = 0.0, sigma: float = 1.0) -> StateVector:
    x = space.coordinates
    return StateVector(np.exp(-((x - center) ** 2) / (4 * sigma**2) + 1j * k * x), space).normalized()


def box_state(space: HilbertSpace, level: int) -> StateVector:
    """Particle-in-a-box eigenfunction (level >= 1) with walls at the grid edges."""
    x = space.coordinates
    length = space.x_max - space.x_min
    return StateVector(np.sin(level * np.pi * (x - space.x_min) / length), space).normalized()
