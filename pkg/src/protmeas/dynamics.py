"""Crank-Nicolson evolution of a system coupled to a pointer.

The composite Hamiltonian is

    H(t) = H_prot (x) I + I (x) H_ptr + g(t) A (x) P

with ``P`` the pointer momentum. Whenever ``H_ptr`` is a function of ``P``
(the default is zero, an infinitely massive pointer), pointer momentum is
conserved and the Crank-Nicolson step matrix is block diagonal in the
pointer's Fourier basis: one system-sized block per momentum mode. The
``block`` engine exploits that and never materializes composite matrices.
The ``dense`` engine builds the full composite matrix and is kept as an
independent check and as the fallback for pointer Hamiltonians that do not
commute with ``P``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NumericalError, PreconditionError, SizeError, SpaceMismatchError
from .hilbert import (
    CompositeSpace,
    HilbertSpace,
    Operator,
    StateVector,
    hermitian_operator,
    momentum_operator,
    momentum_wavenumbers,
    pointer_marginal,
    tensor_op,
    identity,
)
from .protection import BRANCH_FLOOR, Zeno

COUPLING_SHAPES = ("sin2", "smooth_rect")
DENSE_LIMIT = 4096
QUADRATURE_TOL = 1e-8


@dataclass(frozen=True)
class CouplingProfile:
    """Coupling strength g(t) on [0, tau] with unit time integral.

    ``sin2`` is ``(2/tau) sin^2(pi t / tau)``. ``smooth_rect`` is flat with
    sin^2 ramps occupying ``ramp_fraction`` of tau at each end.
    """

    shape: str = "sin2"
    tau: float = 1.0
    ramp_fraction: float = 0.1

    def __post_init__(self):
        if self.shape not in COUPLING_SHAPES:
            raise ValueError(f"unknown coupling shape {self.shape!r}; expected one of {COUPLING_SHAPES}")
        if not self.tau > 0:
            raise ValueError("coupling duration tau must be positive")
        if not 0 < self.ramp_fraction <= 0.5:
            raise ValueError("ramp_fraction must lie in (0, 1/2]")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        tau = self.tau
        if self.shape == "sin2":
            g = (2.0 / tau) * np.sin(np.pi * t / tau) ** 2
        else:
            r = self.ramp_fraction * tau
            height = 1.0 / (tau - r)
            ramp_in = np.sin(0.5 * np.pi * np.clip(t, 0, r) / r) ** 2
            ramp_out = np.sin(0.5 * np.pi * np.clip(tau - t, 0, r) / r) ** 2
            g = height * np.minimum(ramp_in, ramp_out)
        return np.where((t < 0) | (t > tau), 0.0, g)


@dataclass(frozen=True, eq=False)
class EvolutionSpec:
    H_protection: Operator
    A: Operator
    coupling: CouplingProfile
    composite: CompositeSpace
    H_pointer: Operator | None = None

    def __post_init__(self):
        if len(self.composite.factors) != 2:
            raise SpaceMismatchError("evolution needs a system (x) pointer composite")
        system, pointer = self.composite.factors
        if not pointer.is_grid:
            raise SpaceMismatchError("the second factor must be a pointer grid")
        for name, op, space in (("H_protection", self.H_protection, system), ("A", self.A, system)):
            if op.space != space:
                raise SpaceMismatchError(f"{name} does not act on the system factor")
            if not op.hermitian:
                raise ValueError(f"{name} must be hermitian")
        if self.H_pointer is not None:
            if self.H_pointer.space != pointer or not self.H_pointer.hermitian:
                raise ValueError("H_pointer must be a hermitian operator on the pointer factor")

    @property
    def system(self) -> HilbertSpace:
        return self.composite.factors[0]

    @property
    def pointer(self) -> HilbertSpace:
        return self.composite.factors[1]


def free_pointer_hamiltonian(pointer: HilbertSpace, mass: float) -> Operator:
    """Kinetic term ``P^2 / 2M`` built from the spectral momentum."""
    p = momentum_operator(pointer).matrix
    return hermitian_operator(p @ p / (2.0 * mass), pointer)


def build_hamiltonian(spec: EvolutionSpec, t: float) -> Operator:
    """Dense composite Hamiltonian at time ``t``."""
    tau = spec.coupling.tau
    if not 0 <= t <= tau:
        raise ValueError(f"t = {t} outside [0, {tau}]")
    if spec.composite.dimension > DENSE_LIMIT:
        raise SizeError(f"dense Hamiltonian limited to dimension {DENSE_LIMIT}")
    sys_id, ptr_id = identity(spec.system), identity(spec.pointer)
    h = tensor_op(spec.H_protection, ptr_id).matrix
    if spec.H_pointer is not None:
        h = h + tensor_op(sys_id, spec.H_pointer).matrix
    g = float(spec.coupling(t))
    if g != 0.0:
        h = h + g * tensor_op(spec.A, momentum_operator(spec.pointer)).matrix
    return hermitian_operator(h, spec.composite)


# --- engines ------------------------------------------------------------------


class BlockEngine:
    """CN stepping in the (H_prot eigenbasis) x (pointer Fourier) basis.

    Internal states have shape ``(..., K, d)``: K pointer momentum modes, d
    system levels. Leading axes batch independent states (Zeno branches).
    """

    def __init__(self, spec: EvolutionSpec, pointer_energies: np.ndarray | None = None):
        self.spec = spec
        sys, ptr = spec.system, spec.pointer
        self.d, self.K = sys.dimension, ptr.dimension
        self.weight = spec.composite.weight
        self.x = ptr.coordinates
        self.p = momentum_wavenumbers(ptr)
        self.h_ptr = np.zeros(self.K) if pointer_energies is None else pointer_energies
        hp = spec.H_protection.matrix
        if np.any(hp):
            self.E, self.V = np.linalg.eigh(hp)
        else:
            self.E, self.V = np.zeros(self.d), np.eye(self.d, dtype=complex)
        at = self.V.conj().T @ spec.A.matrix @ self.V
        self.A_t = 0.5 * (at + at.conj().T)
        w, u = np.linalg.eigh(self.A_t)
        keep = np.abs(w) > 1e-12 * max(1.0, np.abs(w).max())
        self.rank = int(keep.sum())
        self.low_rank = self.d >= 16 and self.rank <= self.d // 4
        self.aw, self.au = w[keep], u[:, keep]
        self._wb_cache = None

    # basis changes
    def to_internal(self, psi: StateVector) -> np.ndarray:
        m = psi.amplitudes.reshape(self.d, self.K)
        z = np.fft.fft(m, axis=1, norm="ortho")
        return (self.V.conj().T @ z).T.copy()

    def to_state(self, y: np.ndarray) -> StateVector:
        z = self.V @ y.T
        return StateVector(np.fft.ifft(z, axis=1, norm="ortho").reshape(-1), self.spec.composite)

    # diagnostics
    def norm(self, y: np.ndarray) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(y) ** 2, axis=(-2, -1)) * self.weight)

    def marginal(self, y: np.ndarray) -> np.ndarray:
        amps = np.fft.ifft(y, axis=-2, norm="ortho")
        return np.sum(np.abs(amps) ** 2, axis=-1) * self.weight

    def pointer_mean(self, y: np.ndarray) -> np.ndarray:
        return self.marginal(y) @ self.x

    def observable_mean(self, y: np.ndarray) -> np.ndarray:
        if self.low_rank:
            ry = np.abs(y @ self.au.conj()) ** 2
            return np.sum(ry * self.aw, axis=(-2, -1)) * self.weight
        ay = y @ self.A_t.T
        return np.real(np.sum(y.conj() * ay, axis=(-2, -1))) * self.weight

    # dynamics
    def step(self, y: np.ndarray, t_mid: float, dt: float) -> np.ndarray:
        g = float(self.spec.coupling(t_mid))
        diag = self.E[None, :] + self.h_ptr[:, None]          # (K, d)
        cp = g * self.p                                       # (K,)
        if self.low_rank:
            return self._step_woodbury(y, diag, cp, dt)
        h = diag[:, :, None] * np.eye(self.d)[None] + cp[:, None, None] * self.A_t[None]
        eye = np.eye(self.d)[None]
        u = np.linalg.solve(eye + 0.5j * dt * h, eye - 0.5j * dt * h)
        return np.einsum("kij,...kj->...ki", u, y)

    def _step_woodbury(self, y, diag, cp, dt):
        # (D + R C R^H) x = b with D diagonal and C = (i dt/2) g p_k diag(aw)
        R, aw = self.au, self.aw
        if self._wb_cache is None or self._wb_cache[0] != dt:
            # everything but the coupling strength is time independent
            inv_dp = 1.0 / (1 + 0.5j * dt * diag)                  # (K, d)
            G = (R.conj().T[None] * inv_dp[:, None, :]) @ R       # (K, r, r)
            self._wb_cache = (dt, inv_dp, 1 - 0.5j * dt * diag, G)
        _, inv_dp, Dm, G = self._wb_cache
        c = 0.5j * dt * cp[:, None] * aw[None, :]              # (K, r)
        ry = y @ R.conj()                                      # (..., K, r)
        b = Dm * y - (c * ry) @ R.T
        bd = b * inv_dp
        S = np.eye(R.shape[1])[None] + c[:, :, None] * G
        z = c * (bd @ R.conj())
        S_b = np.broadcast_to(S, z.shape[:-1] + S.shape[-2:])
        q = np.linalg.solve(S_b, z[..., None])[..., 0]
        return bd - (q @ R.T) * inv_dp

    def project(self, y: np.ndarray, chi: StateVector, survive: bool) -> tuple[np.ndarray, np.ndarray]:
        """Branch of ``y`` in ``chi`` (or its complement) and its probability."""
        c = self.V.conj().T @ (chi.amplitudes * np.sqrt(self.spec.system.weight))
        c = c / np.linalg.norm(c)
        amp = y @ c.conj()                                     # (..., K)
        kept = amp[..., None] * c
        branch = kept if survive else y - kept
        return branch, self.norm(branch) ** 2


class DenseEngine:
    """Reference CN integrator on the full composite matrix."""

    def __init__(self, spec: EvolutionSpec):
        if spec.composite.dimension > DENSE_LIMIT:
            raise SizeError(f"dense engine limited to dimension {DENSE_LIMIT}")
        self.spec = spec
        sys_id, ptr_id = identity(spec.system), identity(spec.pointer)
        self.h0 = tensor_op(spec.H_protection, ptr_id).matrix
        if spec.H_pointer is not None:
            self.h0 = self.h0 + tensor_op(sys_id, spec.H_pointer).matrix
        self.hc = tensor_op(spec.A, momentum_operator(spec.pointer)).matrix
        self.weight = spec.composite.weight
        self.x = spec.pointer.coordinates
        self.ax = tensor_op(spec.A, ptr_id).matrix
        self.K = spec.pointer.dimension

    def to_internal(self, psi):
        return psi.amplitudes.copy()

    def to_state(self, y):
        return StateVector(y, self.spec.composite)

    def norm(self, y):
        return np.sqrt(np.sum(np.abs(y) ** 2) * self.weight)

    def marginal(self, y):
        return np.sum(np.abs(y.reshape(-1, self.K)) ** 2, axis=0) * self.weight

    def pointer_mean(self, y):
        return self.marginal(y) @ self.x

    def observable_mean(self, y):
        return float(np.real(np.vdot(y, self.ax @ y)) * self.weight)

    def step(self, y, t_mid, dt):
        h = self.h0 + float(self.spec.coupling(t_mid)) * self.hc
        eye = np.eye(h.shape[0])
        try:
            return scipy.linalg.solve(eye + 0.5j * dt * h, (eye - 0.5j * dt * h) @ y)
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError(f"singular Crank-Nicolson step matrix: {exc}") from exc

    def project(self, y, chi, survive):
        from .protection import zeno_project

        branch, p = zeno_project(StateVector(y, self.spec.composite), chi, survive)
        return branch.amplitudes.copy(), p


def pointer_energies(spec: EvolutionSpec) -> np.ndarray | None:
    """Diagonal of H_ptr in the pointer Fourier basis, or None if it does not commute with P."""
    if spec.H_pointer is None:
        return np.zeros(spec.pointer.dimension)
    f = np.fft.fft(np.eye(spec.pointer.dimension), axis=0, norm="ortho")
    hk = f @ spec.H_pointer.matrix @ f.conj().T
    off = hk - np.diag(np.diag(hk))
    scale = max(1.0, np.abs(hk).max())
    if np.abs(off).max() > 1e-9 * scale:
        return None
    return np.real(np.diag(hk))


def make_engine(spec: EvolutionSpec, method: str = "auto"):
    if method not in ("auto", "block", "dense"):
        raise ValueError(f"unknown engine {method!r}")
    if method == "dense":
        return DenseEngine(spec)
    energies = pointer_energies(spec)
    if energies is None:
        if method == "block":
            raise PreconditionError("block engine needs a pointer Hamiltonian that commutes with P")
        return DenseEngine(spec)
    return BlockEngine(spec, energies)


# --- trajectories ---------------------------------------------------------------


@dataclass
class ZenoRecord:
    mode: str                      # "ideal" or "selective"
    times: np.ndarray
    probabilities: list[float] = field(default_factory=list)   # of the branch followed
    outcomes: list[bool] = field(default_factory=list)         # True = survived

    @property
    def survived(self) -> bool:
        return all(self.outcomes)


@dataclass
class Trajectory:
    times: np.ndarray
    dt: float
    stride: int
    snapshot_indices: list[int]
    snapshots: list[StateVector]
    norm_drift: np.ndarray         # per step |d norm| of the unitary update
    norm_error: np.ndarray         # |norm - 1| after every unitary step
    pointer_means: np.ndarray      # <X> at every time point
    observable_means: np.ndarray   # <A (x) I> at every time point
    zeno: ZenoRecord | None = None
    direction: int = 1

    @property
    def initial(self) -> StateVector:
        return self.snapshots[0]

    @property
    def final(self) -> StateVector:
        return self.snapshots[-1]

    @property
    def max_norm_error(self) -> float:
        return float(self.norm_error.max()) if self.norm_error.size else 0.0


def step_count(tau: float, dt: float, zeno_n: int | None = None) -> tuple[int, float]:
    """Number of CN steps and the effective step size.

    Without Zeno the step is shrunk to ``tau / ceil(tau / dt)``. Under Zeno
    ``dt`` has to divide ``tau / N`` exactly.
    """
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    if dt > tau / 100 * (1 + 1e-12):
        raise PreconditionError(f"dt = {dt} exceeds tau/100 = {tau / 100}")
    if zeno_n is None:
        n = int(np.ceil(tau / dt - 1e-9))
        return n, tau / n
    per = (tau / zeno_n) / dt
    if abs(per - round(per)) > 1e-9 * max(1.0, per):
        raise PreconditionError(
            f"dt = {dt} does not divide tau/N = {tau / zeno_n}; use dt = tau/(N*m) for integer m"
        )
    n = int(round(per)) * zeno_n
    return n, tau / n


def evolve(
    psi0: StateVector,
    spec: EvolutionSpec,
    dt: float,
    stride: int = 1,
    zeno: Zeno | None = None,
    rng: np.random.Generator | None = None,
    method: str = "auto",
    direction: int = 1,
) -> Trajectory:
    """Integrate the composite state over the measurement window.

    With ``zeno`` the system is projected onto ``zeno.chi`` at ``t_j = j tau/N``.
    Without ``rng`` the run is post-selected on survival (ideal mode);
    with ``rng`` each projection samples its branch (selective mode).
    ``direction=-1`` integrates from ``tau`` back to 0 with the inverse
    Cayley steps, which undoes a forward run.
    """
    if psi0.space != spec.composite:
        raise SpaceMismatchError("initial state does not live on the evolution's composite space")
    if abs(psi0.norm() - 1) > 1e-9:
        raise PreconditionError("initial state must be normalized")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    tau = spec.coupling.tau
    n_steps, h = step_count(tau, dt, zeno.n if zeno is not None else None)
    if zeno is not None and direction != 1:
        raise PreconditionError("Zeno projections are not time-reversible")

    mids = (np.arange(n_steps) + 0.5) * h
    if abs(float(np.sum(spec.coupling(mids))) * h - 1.0) > QUADRATURE_TOL:
        raise NumericalError("coupling profile does not integrate to 1 on this time grid")

    engine = make_engine(spec, method)
    times = np.arange(n_steps + 1) * h
    if direction == -1:
        times = times[::-1]
    y = engine.to_internal(psi0)
    snaps, snap_idx = [psi0], [0]
    drift = np.empty(n_steps)
    err = np.empty(n_steps)
    xm = np.empty(n_steps + 1)
    am = np.empty(n_steps + 1)
    xm[0], am[0] = engine.pointer_mean(y), engine.observable_mean(y)
    zrec = None
    per = None
    if zeno is not None:
        per = n_steps // zeno.n
        zrec = ZenoRecord("selective" if rng is not None else "ideal", times[per::per].copy())

    norm = engine.norm(y)
    for k in range(n_steps):
        t_mid = times[k] + 0.5 * direction * h
        y = engine.step(y, t_mid, direction * h)
        new = engine.norm(y)
        drift[k] = abs(new - norm)
        err[k] = abs(new - 1.0)
        if zeno is not None and (k + 1) % per == 0:
            y = _zeno_branch(engine, y, zeno.chi, rng, zrec)
            new = engine.norm(y)
        norm = new
        xm[k + 1], am[k + 1] = engine.pointer_mean(y), engine.observable_mean(y)
        if (k + 1) % stride == 0 or k + 1 == n_steps:
            snaps.append(engine.to_state(y))
            snap_idx.append(k + 1)

    return Trajectory(times, h, stride, snap_idx, snaps, drift, err, xm, am, zrec, direction)


def _zeno_branch(engine, y, chi, rng, rec: ZenoRecord):
    kept, p_keep = engine.project(y, chi, True)
    p_keep = float(p_keep)
    survive = True if rng is None else bool(rng.random() < p_keep)
    if survive:
        branch, p = kept, p_keep
    else:
        branch, p = engine.project(y, chi, False)
        p = float(p)
    if p < BRANCH_FLOOR:
        raise NumericalError(f"Zeno branch probability {p:.3g} below floor")
    rec.probabilities.append(p)
    rec.outcomes.append(survive)
    return branch / np.sqrt(p)


def pointer_mean(psi: StateVector, pointer_factor: int = 1) -> float:
    ptr = psi.space.factors[pointer_factor]
    return float(pointer_marginal(psi, pointer_factor) @ ptr.coordinates)


def pointer_shift(traj: Trajectory, pointer_factor: int = 1) -> float:
    """Centre-of-pointer displacement <X>_final - <X>_initial."""
    first, last = traj.snapshots[0], traj.snapshots[-1]
    if traj.direction == -1:
        first, last = last, first
    return pointer_mean(last, pointer_factor) - pointer_mean(first, pointer_factor)


def ehrenfest_residual(traj: Trajectory, spec: EvolutionSpec, reference: str = "instantaneous") -> float:
    """max_k |d<X>/dt - g(t_k) a_k| with centred differences in t.

    ``reference="instantaneous"`` uses ``a_k = <A (x) I>`` at t_k, which the
    exact dynamics satisfies identically, so the residual measures integrator
    error. ``reference="initial"`` uses the initial-state value, i.e. the
    premise that the system state does not change; this exposes runs where
    the measured state is disturbed.
    """
    if traj.stride != 1:
        raise PreconditionError("ehrenfest_residual needs a trajectory recorded with stride 1")
    if reference not in ("instantaneous", "initial"):
        raise ValueError("reference must be 'instantaneous' or 'initial'")
    xs = np.array([pointer_mean(s) for s in traj.snapshots])
    a_op = tensor_op(spec.A, identity(spec.pointer))
    from .hilbert import expectation

    if reference == "initial":
        a = np.full(len(xs), expectation(a_op, traj.snapshots[0]))
    else:
        a = np.array([expectation(a_op, s) for s in traj.snapshots])
    t = traj.times
    dxdt = (xs[2:] - xs[:-2]) / (t[2:] - t[:-2])
    return float(np.max(np.abs(dxdt - spec.coupling(t[1:-1]) * a[1:-1])))
