"""Protective, realistic-protective and projective measurement protocols."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    BlockEngine,
    CouplingProfile,
    EvolutionSpec,
    Trajectory,
    evolve,
    free_pointer_hamiltonian,
    make_engine,
    pointer_shift,
    step_count,
)
from .errors import NumericalError, PreconditionError, ProtectionTooWeakError, SpaceMismatchError
from .hilbert import (
    CompositeSpace,
    HilbertSpace,
    Operator,
    StateVector,
    expectation,
    gaussian_state,
    tensor_state,
    zero_operator,
)
from .protection import (
    BRANCH_FLOOR,
    EnergyGap,
    Magnetic,
    ProtectionScheme,
    Unprotected,
    Zeno,
    protection_hamiltonian,
)

DEGENERACY_TOL = 1e-9


@dataclass(frozen=True)
class PointerConfig:
    cells: int = 256
    x_min: float = -2.0
    x_max: float = 3.0
    sigma: float | None = None     # None: 5% of the grid span
    center: float = 0.0
    mass: float | None = None      # None: no free pointer evolution

    @property
    def width(self) -> float:
        return 0.05 * (self.x_max - self.x_min) if self.sigma is None else self.sigma

    def space(self) -> HilbertSpace:
        return HilbertSpace("pointer", self.cells, self.x_min, self.x_max)

    def initial_state(self) -> StateVector:
        return gaussian_state(self.space(), self.center, self.width)


@dataclass(frozen=True)
class MeasurementConfig:
    tau: float = 1.0
    dt: float | None = None        # None: tau/2000, rounded to divide tau/N under Zeno
    shape: str = "sin2"
    pointer: PointerConfig = field(default_factory=PointerConfig)
    tolerance: float = 1e-3
    method: str = "auto"
    max_dimension: int = 16384

    def step_for(self, scheme: ProtectionScheme) -> float:
        if self.dt is not None:
            return self.dt
        if isinstance(scheme, Zeno):
            return self.tau / (scheme.n * int(np.ceil(2000 / scheme.n)))
        return self.tau / 2000


@dataclass(frozen=True)
class Binning:
    lo: float = -1.0
    hi: float = 2.0
    width: float = 0.02

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValueError("binning needs at least two bins")

    @property
    def n_bins(self) -> int:
        return int(round((self.hi - self.lo) / self.width))

    @property
    def edges(self) -> np.ndarray:
        return self.lo + self.width * np.arange(self.n_bins + 1)


DEFAULT_BINNING = Binning()


@dataclass
class MeasurementRecord:
    observable: str
    scheme: ProtectionScheme
    outcome: float
    expected: float
    survived: bool
    seed: int | None
    tau: float
    dt: float
    n: int | None = None
    norm_error: float = 0.0
    survival: float | None = None

    @property
    def residual(self) -> float:
        return abs(self.outcome - self.expected)

    def to_dict(self) -> dict:
        return {
            "observable": self.observable,
            "scheme": describe_scheme(self.scheme),
            "outcome": self.outcome,
            "expected": self.expected,
            "residual": self.residual,
            "survived": self.survived,
            "survival_probability": self.survival,
            "seed": self.seed,
            "tau": self.tau,
            "dt": self.dt,
            "n": self.n,
            "norm_error": self.norm_error,
        }


@dataclass
class OutcomeDistribution:
    edges: np.ndarray
    probabilities: np.ndarray
    n_samples: int
    mean: float
    variance: float
    survived_fraction: float | None = None
    support: np.ndarray | None = None   # eigenvalues, for projective outcomes
    norm_error: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise NumericalError("outcome probabilities must be nonnegative and sum to 1")

    @classmethod
    def from_samples(cls, samples, edges, **extra) -> "OutcomeDistribution":
        samples = np.asarray(samples, dtype=float)
        idx = np.clip(np.searchsorted(edges, samples, side="right") - 1, 0, len(edges) - 2)
        counts = np.bincount(idx, minlength=len(edges) - 1)
        return cls(
            np.asarray(edges, dtype=float),
            counts / samples.size,
            int(samples.size),
            float(samples.mean()),
            float(samples.var()),
            **extra,
        )

    def to_dict(self) -> dict:
        out = {
            "n_samples": self.n_samples,
            "mean": self.mean,
            "variance": self.variance,
            "survived_fraction": self.survived_fraction,
            "edges": self.edges.tolist(),
            "probabilities": self.probabilities.tolist(),
            "norm_error": self.norm_error,
        }
        if self.support is not None:
            out["support"] = self.support.tolist()
        return out


def describe_scheme(scheme: ProtectionScheme) -> dict:
    if isinstance(scheme, Zeno):
        return {"kind": "zeno", "n": scheme.n}
    if isinstance(scheme, Magnetic):
        return {"kind": "magnetic", "axis": list(scheme.axis), "omega": scheme.omega}
    if isinstance(scheme, EnergyGap):
        return {"kind": "energy_gap", "level_index": scheme.level_index, "gap": scheme.gap}
    return {"kind": "none"}


def run_seed_sequence(seed: int, run_index: int) -> np.random.SeedSequence:
    """Per-run stream derived from (master seed, run index)."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(int(run_index),))


def run_rng(seed: int, run_index: int) -> np.random.Generator:
    return np.random.default_rng(run_seed_sequence(seed, run_index))


# --- protective ---------------------------------------------------------------


def _check_compatible(psi: StateVector, scheme: ProtectionScheme, tol: float = 1e-9) -> None:
    if isinstance(scheme, Zeno):
        if psi.space != scheme.chi.space or abs(psi.normalized().inner(scheme.chi)) < 1 - tol:
            raise PreconditionError("state is not the Zeno-protected state")
        return
    h = protection_hamiltonian(scheme)
    if h is None:
        return
    if h.space != psi.space:
        raise PreconditionError("state and protection Hamiltonian act on different spaces")
    a = psi.normalized().amplitudes
    ha = h.matrix @ a
    e = np.vdot(a, ha).real / np.vdot(a, a).real
    scale = max(1.0, np.abs(np.linalg.eigvalsh(h.matrix)).max())
    if np.linalg.norm(ha - e * a) / np.linalg.norm(a) > 1e-7 * scale:
        raise PreconditionError("state is not an eigenstate of the protection Hamiltonian")
    ev = np.linalg.eigvalsh(h.matrix)
    if np.sum(np.abs(ev - e) < 1e-9 * scale) > 1:
        raise PreconditionError("protected level is degenerate")


def evolution_spec(system: HilbertSpace, A: Operator, scheme: ProtectionScheme, cfg: MeasurementConfig) -> EvolutionSpec:
    ptr = cfg.pointer.space()
    h = protection_hamiltonian(scheme)
    if h is None:
        h = zero_operator(system)
    h_ptr = None if cfg.pointer.mass is None else free_pointer_hamiltonian(ptr, cfg.pointer.mass)
    composite = CompositeSpace((system, ptr), max_dimension=cfg.max_dimension)
    return EvolutionSpec(h, A, CouplingProfile(cfg.shape, cfg.tau), composite, h_ptr)


def protective_trajectory(psi, A, scheme, cfg: MeasurementConfig, stride: int | None = None, rng=None) -> Trajectory:
    spec = evolution_spec(psi.space, A, scheme, cfg)
    psi0 = tensor_state(psi.normalized(), cfg.pointer.initial_state(), cfg.max_dimension)
    zeno = scheme if isinstance(scheme, Zeno) else None
    dt = cfg.step_for(scheme)
    return evolve(psi0, spec, dt, stride=stride or 10**12, zeno=zeno, rng=rng, method=cfg.method)


def run_protective_ideal(
    psi: StateVector,
    A: Operator,
    scheme: ProtectionScheme,
    cfg: MeasurementConfig = MeasurementConfig(),
    label: str = "A",
    check: bool = True,
) -> MeasurementRecord:
    """Pointer shift of an ideal protective measurement of ``A`` on ``psi``.

    Zeno runs are post-selected on survival. Raises ProtectionTooWeakError
    (with the record attached) when the shift misses <A> by more than
    ``cfg.tolerance`` and ``check`` is set.
    """
    _check_compatible(psi, scheme)
    psi = psi.normalized()
    traj = protective_trajectory(psi, A, scheme, cfg)
    survival = None
    if traj.zeno is not None:
        survival = float(np.prod(traj.zeno.probabilities))
    rec = MeasurementRecord(
        observable=label,
        scheme=scheme,
        outcome=pointer_shift(traj),
        expected=expectation(A, psi),
        survived=True,
        seed=None,
        tau=cfg.tau,
        dt=traj.dt,
        n=scheme.n if isinstance(scheme, Zeno) else None,
        norm_error=traj.max_norm_error,
        survival=survival,
    )
    if check and rec.residual > cfg.tolerance:
        raise ProtectionTooWeakError(
            f"protective outcome {rec.outcome:.6g} misses <A> = {rec.expected:.6g} "
            f"by {rec.residual:.3g} > {cfg.tolerance:.3g}",
            rec,
        )
    return rec


# --- realistic ------------------------------------------------------------------


def sample_readout(marginal: np.ndarray, space: HilbertSpace, u_cell: float, u_pos: float) -> float:
    """Position drawn from the piecewise-constant density defined by ``marginal``."""
    cdf = np.cumsum(marginal)
    cell = int(np.searchsorted(cdf, u_cell * cdf[-1], side="right"))
    cell = min(cell, marginal.size - 1)
    return float(space.x_min + (cell + u_pos) * space.dx)


def run_realistic(
    psi: StateVector,
    A: Operator,
    scheme: ProtectionScheme,
    cfg: MeasurementConfig,
    seed: int,
    n_runs: int,
    binning: Binning = DEFAULT_BINNING,
) -> OutcomeDistribution:
    """Histogram of single pointer readouts over ``n_runs`` realistic runs.

    Zeno runs sample every projection branch; failed branches stay in the
    histogram. Run ``i`` draws all of its randomness from the stream
    ``(seed, i)``, so results do not depend on batching or run order.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if isinstance(scheme, Unprotected):
        raise PreconditionError("realistic runs need Zeno or energy-gap protection")
    edges = binning.edges
    space = cfg.pointer.space()
    if isinstance(scheme, Zeno):
        readouts, survived, norm_err = _zeno_readouts(psi.normalized(), A, scheme, cfg, seed, n_runs)
        return OutcomeDistribution.from_samples(
            readouts, edges, survived_fraction=float(np.mean(survived)), norm_error=norm_err
        )
    traj = protective_trajectory(psi.normalized(), A, scheme, cfg)
    from .hilbert import pointer_marginal

    marg = pointer_marginal(traj.final, 1)
    readouts = np.empty(n_runs)
    for i in range(n_runs):
        u = run_rng(seed, i).random(2)
        readouts[i] = sample_readout(marg, space, u[0], u[1])
    return OutcomeDistribution.from_samples(readouts, edges, norm_error=traj.max_norm_error)


def _zeno_readouts(psi, A, scheme: Zeno, cfg, seed, n_runs):
    """Selective Zeno runs, batched over runs that share a branch history.

    Each run consumes N uniforms for its projections and two for its readout.
    Runs with identical histories share one state, so the work scales with
    the number of distinct histories rather than with ``n_runs``.
    """
    spec = evolution_spec(psi.space, A, scheme, cfg)
    engine = make_engine(spec, cfg.method)
    n_steps, dt = step_count(cfg.tau, cfg.step_for(scheme), scheme.n)
    per = n_steps // scheme.n
    uniforms = np.stack([run_rng(seed, i).random(scheme.n + 2) for i in range(n_runs)])

    psi0 = tensor_state(psi, cfg.pointer.initial_state(), cfg.max_dimension)
    y0 = engine.to_internal(psi0)
    groups = [np.arange(n_runs)]
    states = y0[None]
    survived = np.ones(n_runs, dtype=bool)
    norm_err = 0.0
    batched = isinstance(engine, BlockEngine)
    for j in range(scheme.n):
        for s in range(per):
            t_mid = (j * per + s + 0.5) * dt
            if batched:
                states = engine.step(states, t_mid, dt)
            else:
                states = np.stack([engine.step(y, t_mid, dt) for y in states])
        norms = np.array([engine.norm(y) for y in states])
        norm_err = max(norm_err, float(np.abs(norms - 1).max()))
        new_groups, new_states = [], []
        for runs, y in zip(groups, states):
            kept, p_keep = engine.project(y, scheme.chi, True)
            p_keep = float(p_keep)
            stay = uniforms[runs, j] < p_keep
            for mask, surv in ((stay, True), (~stay, False)):
                if not mask.any():
                    continue
                branch, p = (kept, p_keep) if surv else engine.project(y, scheme.chi, False)
                p = float(p)
                if p < BRANCH_FLOOR:
                    raise NumericalError(f"sampled a Zeno branch of probability {p:.3g}")
                new_groups.append(runs[mask])
                new_states.append(branch / np.sqrt(p))
                if not surv:
                    survived[runs[mask]] = False
        groups, states = new_groups, np.stack(new_states)

    space = cfg.pointer.space()
    readouts = np.empty(n_runs)
    for runs, y in zip(groups, states):
        marg = engine.marginal(y)
        for i in runs:
            readouts[i] = sample_readout(marg, space, uniforms[i, -2], uniforms[i, -1])
    return readouts, survived, norm_err


def distribution_overlap(d1: OutcomeDistribution, d2: OutcomeDistribution) -> float:
    """Sum over bins of min(p1, p2)."""
    if d1.edges.shape != d2.edges.shape or not np.array_equal(d1.edges, d2.edges):
        raise ValueError("distributions use different binnings")
    return float(np.minimum(d1.probabilities, d2.probabilities).sum())


# --- projective -------------------------------------------------------------------


def eigen_decomposition(A: Operator) -> tuple[np.ndarray, list[np.ndarray]]:
    """Distinct eigenvalues (ascending) and orthonormal bases of their eigenspaces."""
    if not A.hermitian:
        raise PreconditionError("projective measurement needs a hermitian observable")
    w, v = np.linalg.eigh(A.matrix)
    values, bases = [], []
    start = 0
    for i in range(1, w.size + 1):
        if i == w.size or w[i] - w[start] > DEGENERACY_TOL:
            values.append(float(np.mean(w[start:i])))
            bases.append(v[:, start:i])
            start = i
    return np.array(values), bases


def born_probabilities(psi: StateVector, A: Operator) -> tuple[np.ndarray, np.ndarray]:
    if psi.space != A.space:
        raise SpaceMismatchError("state and observable act on different spaces")
    values, bases = eigen_decomposition(A)
    a = psi.normalized().amplitudes * np.sqrt(psi.space.weight)
    probs = np.array([np.sum(np.abs(b.conj().T @ a) ** 2) for b in bases])
    return values, probs / probs.sum()


def run_projective(psi: StateVector, A: Operator, seed: int, n_runs: int) -> OutcomeDistribution:
    """Eigenvalue samples with Born probabilities; one bin per distinct eigenvalue."""
    values, probs = born_probabilities(psi, A)
    outcomes = np.empty(n_runs, dtype=int)
    cdf = np.cumsum(probs)
    for i in range(n_runs):
        u = run_rng(seed, i).random()
        outcomes[i] = min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), values.size - 1)
    samples = values[outcomes]
    if values.size > 1:
        mids = 0.5 * (values[1:] + values[:-1])
        pad = 0.5 * np.min(np.diff(values))
    else:
        mids, pad = np.array([]), 0.5
    edges = np.concatenate([[values[0] - pad], mids, [values[-1] + pad]])
    counts = np.bincount(outcomes, minlength=values.size)
    return OutcomeDistribution(
        edges, counts / n_runs, n_runs, float(samples.mean()), float(samples.var()), support=values
    )
