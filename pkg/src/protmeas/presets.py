"""Named qubit states and observables shared by the models and the runner."""

from __future__ import annotations

import numpy as np

from .hilbert import Operator, StateVector, pauli, projector, spin_space

_S = 1 / np.sqrt(2)
_QUBIT_STATES = {
    "0": (1, 0),
    "1": (0, 1),
    "+": (_S, _S),
    "-": (_S, -_S),
    "+i": (_S, 1j * _S),
    "-i": (_S, -1j * _S),
}


def qubit_state_names() -> list[str]:
    return list(_QUBIT_STATES)


def qubit_observable_names() -> list[str]:
    return ["P0", "P1", "P+", "P-", "sigma_x", "sigma_y", "sigma_z"]


def qubit_state(name: str) -> StateVector:
    try:
        amps = _QUBIT_STATES[name]
    except KeyError:
        raise KeyError(f"unknown qubit state {name!r}; expected one of {qubit_state_names()}") from None
    return StateVector(np.array(amps, dtype=complex), spin_space())


def qubit_observable(name: str) -> Operator:
    if name.startswith("sigma_") and name[6:] in ("x", "y", "z"):
        return pauli(name[6:])
    if name.startswith("P") and name[1:] in _QUBIT_STATES:
        return projector(qubit_state(name[1:]))
    raise KeyError(f"unknown qubit observable {name!r}; expected one of {qubit_observable_names()}")


def qubit_operator(matrix) -> Operator:
    """Hermitian qubit observable from a 2x2 nested list (complex entries allowed)."""
    m = np.asarray(matrix, dtype=complex)
    if m.shape != (2, 2):
        raise ValueError(f"qubit observable must be 2x2, got shape {m.shape}")
    return Operator(m, spin_space(), hermitian=True)
