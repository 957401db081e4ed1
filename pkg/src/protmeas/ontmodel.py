"""Finite ontological models: reproduction, overlap and protective-consistency checks.

A model has ``m`` ontic states indexed ``0..m-1``. Preparations map a state
label to a probability vector over them; projective responses map a
measurement label to an ``(outcomes, m)`` matrix of outcome probabilities,
one row per distinct eigenvalue (listed in ``outcome_values``). A model may
also fix the result ``f(lambda, A)`` of a protective measurement of each
observable; ``protective_response=None`` means it makes no such claim.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .errors import ModelError, PreconditionError, SpaceMismatchError, UnboundLabelError
from .hilbert import Operator, StateVector, bloch_vector, expectation
from .measurement import born_probabilities, eigen_decomposition
from .presets import qubit_observable, qubit_state

NORMALIZATION_TOL = 1e-12
GAP_TOL = 1e-6
DUPLICATE_FIDELITY = 1e-9
MIN_KS_RESOLUTION = 100
KS_STATES = ("0", "1", "+", "-", "+i", "-i")
KS_MEASUREMENTS = ("sigma_x", "sigma_y", "sigma_z", "P0")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class OnticModel:
    n_ontic: int
    preparations: Mapping[str, np.ndarray]
    projective_response: Mapping[str, np.ndarray]
    outcome_values: Mapping[str, np.ndarray]
    protective_response: Mapping[str, np.ndarray] | None = None
    states: Mapping[str, StateVector] = field(default_factory=dict)
    measurements: Mapping[str, Operator] = field(default_factory=dict)
    name: str = "model"

    def __post_init__(self):
        m = int(self.n_ontic)
        if m < 1:
            raise ModelError("a model needs at least one ontic state")
        preps = {}
        for label, mu in self.preparations.items():
            mu = _frozen(mu)
            if mu.shape != (m,):
                raise ModelError(f"preparation {label!r} has shape {mu.shape}, expected ({m},)")
            if np.any(mu < 0) or abs(mu.sum() - 1) > NORMALIZATION_TOL:
                raise ModelError(f"preparation {label!r} is not a probability vector")
            preps[label] = mu
        resp, values = {}, {}
        for label, xi in self.projective_response.items():
            xi = _frozen(xi)
            if xi.ndim != 2 or xi.shape[1] != m:
                raise ModelError(f"response {label!r} has shape {xi.shape}, expected (outcomes, {m})")
            if np.any(xi < 0) or np.max(np.abs(xi.sum(axis=0) - 1)) > NORMALIZATION_TOL:
                raise ModelError(f"response {label!r} does not sum to one over outcomes")
            if label not in self.outcome_values or len(self.outcome_values[label]) != xi.shape[0]:
                raise ModelError(f"response {label!r} needs one outcome value per row")
            resp[label], values[label] = xi, _frozen(self.outcome_values[label])
        prot = None
        if self.protective_response is not None:
            prot = {}
            for label, f in self.protective_response.items():
                f = _frozen(f)
                if f.shape != (m,):
                    raise ModelError(f"protective response {label!r} has shape {f.shape}, expected ({m},)")
                prot[label] = f
            prot = MappingProxyType(prot)
        object.__setattr__(self, "n_ontic", m)
        object.__setattr__(self, "preparations", MappingProxyType(preps))
        object.__setattr__(self, "projective_response", MappingProxyType(resp))
        object.__setattr__(self, "outcome_values", MappingProxyType(values))
        object.__setattr__(self, "protective_response", prot)
        object.__setattr__(self, "states", MappingProxyType(dict(self.states)))
        object.__setattr__(self, "measurements", MappingProxyType(dict(self.measurements)))

    def state_label(self, psi) -> str:
        """Label bound to ``psi`` (a label or a state equal to a bound one up to phase)."""
        if isinstance(psi, str):
            if psi not in self.preparations or psi not in self.states:
                raise UnboundLabelError(f"state label {psi!r} is not bound in {self.name}")
            return psi
        for label, chi in self.states.items():
            if chi.space == psi.space and label in self.preparations:
                if abs(chi.normalized().inner(psi.normalized())) > 1 - DUPLICATE_FIDELITY:
                    return label
        raise UnboundLabelError(f"state is not bound to any preparation of {self.name}")

    def operator_label(self, op) -> str:
        if isinstance(op, str):
            if op not in self.measurements:
                raise UnboundLabelError(f"operator label {op!r} is not bound in {self.name}")
            return op
        for label, a in self.measurements.items():
            if a.space == op.space and np.allclose(a.matrix, op.matrix, atol=1e-12):
                return label
        raise UnboundLabelError(f"operator is not bound to any measurement of {self.name}")

    def outcome_probabilities(self, psi_label: str, m_label: str) -> np.ndarray:
        if m_label not in self.projective_response:
            raise UnboundLabelError(f"no projective response for {m_label!r} in {self.name}")
        return self.projective_response[m_label] @ self.preparations[psi_label]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_ontic": self.n_ontic,
            "states": sorted(self.preparations),
            "measurements": sorted(self.projective_response),
            "protective_response": None if self.protective_response is None else sorted(self.protective_response),
        }


@dataclass(frozen=True)
class ReproductionReport:
    psi: str
    measurement: str
    outcomes: np.ndarray
    predicted: np.ndarray
    born: np.ndarray
    eps: float

    @property
    def residuals(self) -> np.ndarray:
        return np.abs(self.predicted - self.born)

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max())

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.eps

    def to_dict(self) -> dict:
        return {
            "psi": self.psi,
            "measurement": self.measurement,
            "outcomes": self.outcomes.tolist(),
            "predicted": self.predicted.tolist(),
            "born": self.born.tolist(),
            "residuals": self.residuals.tolist(),
            "max_residual": self.max_residual,
            "eps": self.eps,
            "passed": self.passed,
        }


def check_projective_reproduction(model: OnticModel, psi, M, eps: float = 1e-2) -> ReproductionReport:
    """Compare the model's outcome statistics for (psi, M) with the Born rule."""
    p_label, m_label = model.state_label(psi), model.operator_label(M)
    predicted = model.outcome_probabilities(p_label, m_label)
    outcomes = model.outcome_values[m_label]
    values, probs = born_probabilities(model.states[p_label], model.measurements[m_label])
    born = np.zeros(outcomes.size)
    for v, p in zip(values, probs):
        hit = np.flatnonzero(np.abs(outcomes - v) <= 1e-9)
        if hit.size == 0:
            raise ModelError(f"eigenvalue {v} of {m_label!r} has no outcome in {model.name}")
        born[hit[0]] += p
    return ReproductionReport(p_label, m_label, outcomes, predicted, born, eps)


def support_overlap(mu1, mu2) -> float:
    mu1, mu2 = np.asarray(mu1, dtype=float), np.asarray(mu2, dtype=float)
    if mu1.shape != mu2.shape:
        raise ValueError(f"distributions over different ontic sets: {mu1.shape} vs {mu2.shape}")
    return float(np.minimum(mu1, mu2).sum())


@dataclass(frozen=True)
class ContradictionCertificate:
    """An ontic state both preparations can produce but which would have to
    yield two different protective results."""

    ontic_index: int
    observable: str
    psi_labels: tuple[str, str]
    expectations: tuple[float, float]
    masses: tuple[float, float]
    tol: float = GAP_TOL

    def __post_init__(self):
        self.verify()

    @property
    def joint_mass(self) -> float:
        return min(self.masses)

    @property
    def gap(self) -> float:
        return abs(self.expectations[0] - self.expectations[1])

    def verify(self, model: OnticModel | None = None) -> None:
        """Raise ModelError unless the cited evidence holds (re-read from ``model`` if given)."""
        masses = self.masses
        if model is not None:
            masses = tuple(float(model.preparations[p][self.ontic_index]) for p in self.psi_labels)
            if not np.allclose(masses, self.masses, rtol=0, atol=1e-15):
                raise ModelError("certificate masses do not match the model")
        if not min(masses) > 0:
            raise ModelError("certificate cites an ontic state outside a preparation's support")
        if not self.gap > self.tol:
            raise ModelError("certificate cites expectations that agree within tolerance")

    def to_dict(self) -> dict:
        return {
            "ontic_index": self.ontic_index,
            "observable": self.observable,
            "psi_labels": list(self.psi_labels),
            "expectations": list(self.expectations),
            "masses": list(self.masses),
            "joint_mass": self.joint_mass,
            "tol": self.tol,
        }


def check_protective_consistency(model: OnticModel, psi1, psi2, A, tol: float = GAP_TOL):
    """``None`` when the model survives; otherwise a ContradictionCertificate.

    A shared ontic state of two preparations must give both states' protective
    results at once, which is impossible when their expectation values differ.
    If the model fixes ``f(lambda, A)``, every ontic state in a preparation's
    support must also carry that preparation's expectation value; a mismatch
    there is a reproduction failure of the model itself and raises ModelError.
    """
    l1, l2 = model.state_label(psi1), model.state_label(psi2)
    a_label = model.operator_label(A)
    op = model.measurements[a_label]
    if not op.hermitian:
        raise PreconditionError("protective consistency needs a hermitian observable")
    e1 = expectation(op, model.states[l1])
    e2 = expectation(op, model.states[l2])
    mu1, mu2 = model.preparations[l1], model.preparations[l2]
    shared = np.minimum(mu1, mu2)

    f = None if model.protective_response is None else model.protective_response.get(a_label)
    if f is not None:
        for label, mu, e in ((l1, mu1, e1), (l2, mu2, e2)):
            bad = (mu > 0) & (np.abs(f - e) > tol) & ~(shared > 0)
            if np.any(bad):
                raise ModelError(
                    f"{model.name} assigns protective results other than <A> = {e:.6g} "
                    f"inside the support of {label!r} (ontic state {int(np.argmax(bad))})"
                )
    if abs(e1 - e2) <= tol or not np.any(shared > 0):
        return None
    k = int(np.argmax(shared))
    return ContradictionCertificate(k, a_label, (l1, l2), (e1, e2), (float(mu1[k]), float(mu2[k])), tol)


# --- models ------------------------------------------------------------------------


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors (equal-area Fibonacci lattice)."""
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z**2)
    phi = np.pi * (1 + np.sqrt(5)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _qubit_axis(op: Operator) -> tuple[np.ndarray, np.ndarray]:
    """Outcome values (descending) and the Bloch axis of the upper eigenvector."""
    if op.space.dimension != 2:
        raise SpaceMismatchError("the sphere model handles qubit measurements only")
    values, bases = eigen_decomposition(op)
    if values.size != 2:
        raise PreconditionError("qubit measurement must have two distinct outcomes")
    up = StateVector(bases[1][:, 0], op.space)
    return values[::-1].copy(), bloch_vector(up)


def build_ks_model(
    resolution: int,
    states: Mapping[str, StateVector] | Sequence[str] | None = None,
    measurements: Mapping[str, Operator] | Sequence[str] | None = None,
) -> OnticModel:
    """Kochen-Specker qubit model on a Fibonacci sphere lattice.

    Ontic states are unit vectors l. Preparing a state with Bloch vector n
    gives weight proportional to max(0, n.l); a measurement whose upper
    eigenvector has Bloch vector m returns the upper outcome iff l.m > 0
    (lattice points exactly on the equator split 1/2 : 1/2). The lattice is
    equal-area, so area weights are uniform and drop out on normalization.
    """
    if int(resolution) != resolution or resolution < MIN_KS_RESOLUTION:
        raise ValueError(f"sphere resolution must be an integer >= {MIN_KS_RESOLUTION}, got {resolution}")
    states = _named(states if states is not None else KS_STATES, qubit_state)
    measurements = _named(measurements if measurements is not None else KS_MEASUREMENTS, qubit_observable)
    lam = fibonacci_sphere(int(resolution))
    preps = {}
    for label, psi in states.items():
        w = np.maximum(0.0, lam @ bloch_vector(psi))
        preps[label] = w / w.sum()
    resp, values = {}, {}
    for label, op in measurements.items():
        vals, axis = _qubit_axis(op)
        s = lam @ axis
        up = np.where(s > 0, 1.0, np.where(s < 0, 0.0, 0.5))
        resp[label], values[label] = np.stack([up, 1 - up]), vals
    return OnticModel(
        int(resolution), preps, resp, values, None, states, measurements, name=f"ks[{int(resolution)}]"
    )


def build_psi_ontic_model(
    states: Mapping[str, StateVector] | Sequence,
    measurements: Mapping[str, Operator] | Sequence[str] | None = None,
) -> OnticModel:
    """Control model with one ontic state per quantum state.

    Responses follow the Born rule and the protective result of each ontic
    state is its expectation value, so the model reproduces quantum
    predictions exactly and never shares support between distinct states.
    """
    states = _named(states, qubit_state)
    labels = list(states)
    for i, a in enumerate(labels):
        for b in labels[i + 1:]:
            sa, sb = states[a], states[b]
            if sa.space == sb.space and abs(sa.normalized().inner(sb.normalized())) > 1 - DUPLICATE_FIDELITY:
                raise ValueError(f"states {a!r} and {b!r} coincide up to a global phase")
    if measurements is None:
        if any(s.space.dimension != 2 for s in states.values()):
            raise ValueError("measurements must be given for non-qubit states")
        measurements = KS_MEASUREMENTS
    measurements = _named(measurements, qubit_observable)
    m = len(labels)
    preps = {label: np.eye(m)[i] for i, label in enumerate(labels)}
    resp, values, prot = {}, {}, {}
    for label, op in measurements.items():
        vals, _ = eigen_decomposition(op)
        vals = vals[::-1].copy()
        xi = np.zeros((vals.size, m))
        for i, s in enumerate(labels):
            v, p = born_probabilities(states[s], op)
            xi[:, i] = p[::-1]
        resp[label], values[label] = xi, vals
        if op.hermitian:
            prot[label] = np.array([expectation(op, states[s]) for s in labels])
    return OnticModel(m, preps, resp, values, prot, states, measurements, name=f"psi-ontic[{m}]")


def _named(items, factory) -> dict:
    if isinstance(items, Mapping):
        return dict(items)
    out = {}
    for item in items:
        if isinstance(item, str):
            out[item] = factory(item)
        else:
            out[f"s{len(out)}"] = item
    return out


def ks_overlap_continuum(n1, n2) -> float:
    """Overlap of two sphere-model preparations in the continuum limit, by 2-D quadrature.

    Each density is max(0, n.l) / pi on the unit sphere.
    """
    from scipy.integrate import IntegrationWarning, dblquad

    n1, n2 = np.asarray(n1, dtype=float), np.asarray(n2, dtype=float)

    def integrand(theta, phi):
        l = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
        return min(max(0.0, n1 @ l), max(0.0, n2 @ l)) / np.pi * np.sin(theta)

    with warnings.catch_warnings():
        # kinks of min/max limit the attainable accuracy, far below what callers need
        warnings.simplefilter("ignore", IntegrationWarning)
        val, _ = dblquad(integrand, 0, 2 * np.pi, 0, np.pi, epsabs=1e-10, epsrel=1e-10)
    return float(val)
