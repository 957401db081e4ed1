"""Experiment configuration: YAML files checked against a strict JSON schema.

``validate`` collects every problem (schema and semantic) with the path of
the offending field instead of stopping at the first one. The builders turn
validated sub-trees into the domain objects the runner needs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from importlib import resources
from typing import Any

import jsonschema
import numpy as np
import yaml

from .hilbert import HilbertSpace, Operator, StateVector, hermitian_operator, position_operator, random_hermitian, random_state, spin_space, spin_state
from .measurement import Binning, MeasurementConfig, PointerConfig, run_rng
from .presets import qubit_observable, qubit_observable_names, qubit_state, qubit_state_names
from .protection import EnergyGap, Magnetic, Unprotected, Zeno
from .reconstruct import box_state, boosted_gaussian, harmonic_eigenstate, harmonic_hamiltonian

GRID_STATE_PRESETS = ("harmonic", "boosted_gaussian", "box")
SWEEPS = {
    "protective": ("dt", "tau", "omega_tau", "zeno_n", "sigma"),
    "realistic-sweep": ("dt", "tau", "omega_tau", "zeno_n", "sigma"),
    "reconstruct": ("regions",),
    "ont-check": ("resolution",),
}
INTEGER_SWEEPS = ("zeno_n", "regions", "resolution")
DEFAULT_DT_STEPS = 2000


@dataclass(frozen=True)
class ConfigIssue:
    path: str
    message: str

    def __str__(self):
        return f"{self.path or '<root>'}: {self.message}"


class ConfigError(ValueError):
    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration; sub-specs stay plain dicts so the echo is exact."""

    command: str
    seed: int | None = None
    description: str | None = None
    system: dict | None = None
    states: list | None = None
    observable: dict | None = None
    protection: Any = None
    coupling: dict | None = None
    pointer: dict | None = None
    method: str | None = None
    tolerance: float | None = None
    runs: int | None = None
    mode: str | None = None
    binning: dict | None = None
    sweep: dict | None = None
    regions: int | None = None
    targets: list | None = None
    models: list | None = None
    measurements: list | None = None
    pairs: list | None = None
    eps: float | None = None
    tol: float | None = None
    checks: list | None = None
    output: dict | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        issues = validate(data)
        if issues:
            raise ConfigError(issues)
        return cls(**data)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None:
                out[f.name] = v
        return out

    def with_overrides(self, seed: int | None = None, path: str | None = None, fmt: str | None = None) -> "ExperimentConfig":
        data = self.to_dict()
        if seed is not None:
            data["seed"] = int(seed)
        if path is not None or fmt is not None:
            out = dict(data.get("output") or {})
            if path is not None:
                out["path"] = path
            if fmt is not None:
                out["format"] = fmt
            data["output"] = out
        return ExperimentConfig.from_dict(data)

    @property
    def master_seed(self) -> int:
        return 0 if self.seed is None else int(self.seed)

    @property
    def protections(self) -> list[dict]:
        p = self.protection
        if p is None:
            return [{"kind": "none"}]
        return list(p) if isinstance(p, list) else [p]


# --- loading and validation ---------------------------------------------------------


def schema() -> dict:
    return json.loads(resources.files("protmeas").joinpath("config_schema.json").read_text())


def parse_text(text: str) -> Any:
    return yaml.safe_load(text)


def load_config(path) -> ExperimentConfig:
    """Read, parse and validate a config file. OSError propagates; bad content raises ConfigError."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = parse_text(text)
    except yaml.YAMLError as exc:
        raise ConfigError([ConfigIssue("", f"not valid YAML: {exc}")]) from None
    return ExperimentConfig.from_dict(data)


def _path(parts) -> str:
    return "/".join(str(p) for p in parts)


def validate(data: Any) -> list[ConfigIssue]:
    """Every schema and semantic violation in ``data``; empty when runnable."""
    if not isinstance(data, dict):
        return [ConfigIssue("", "configuration must be a mapping")]
    validator = jsonschema.Draft202012Validator(schema())
    issues = []
    for err in sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path))):
        issues.append(ConfigIssue(_path(err.absolute_path), _schema_message(err)))
    if issues:
        return issues
    issues = _semantic_issues(data)
    if issues:
        return issues
    return _preflight(ExperimentConfig(**data))


def _schema_message(err) -> str:
    if err.validator == "enum":
        return f"{err.instance!r} is not valid; expected one of {', '.join(map(str, err.validator_value))}"
    if err.validator == "additionalProperties":
        return err.message.replace("Additional properties are not allowed", "unknown key(s)")
    if err.validator == "oneOf":
        return "does not match any allowed form (a mapping or a list of mappings with valid keys)"
    return err.message


def _semantic_issues(d: dict) -> list[ConfigIssue]:
    issues: list[ConfigIssue] = []

    def bad(path, msg):
        issues.append(ConfigIssue(path, msg))

    cmd = d["command"]
    system = d.get("system", {"kind": "spin"})
    is_grid = system["kind"] == "grid1d"
    if is_grid:
        for key in ("cells", "x_min", "x_max"):
            if key not in system:
                bad(f"system/{key}", "required for a grid1d system")
        if "x_min" in system and "x_max" in system and not system["x_max"] > system["x_min"]:
            bad("system/x_max", "must exceed x_min")
    else:
        for key in ("cells", "x_min", "x_max"):
            if key in system:
                bad(f"system/{key}", "only meaningful for a grid1d system")

    pointer = d.get("pointer", {})
    if pointer.get("x_min", -2.0) >= pointer.get("x_max", 3.0):
        bad("pointer/x_max", "must exceed x_min")
    binning = d.get("binning", {})
    if binning.get("lo", -1.0) >= binning.get("hi", 2.0):
        bad("binning/hi", "must exceed lo")

    coupling = d.get("coupling", {})
    tau = coupling.get("tau", 1.0)
    dt = coupling.get("dt")
    if dt is not None and dt > tau / 100:
        bad("coupling/dt", f"dt = {dt} is too coarse; use dt <= tau/100 = {tau / 100:g}")

    def check_state(spec, path):
        kinds = [k for k in ("preset", "amplitudes", "bloch", "random") if k in spec]
        if len(kinds) != 1:
            bad(path, "give exactly one of preset, amplitudes, bloch, random")
            return
        kind = kinds[0]
        if "count" in spec and kind != "random":
            bad(f"{path}/count", "count only applies to random states")
        if kind == "preset":
            name = spec["preset"]
            if is_grid and name not in GRID_STATE_PRESETS:
                bad(f"{path}/preset", f"{name!r} is a qubit state; grid presets are {', '.join(GRID_STATE_PRESETS)}")
            if not is_grid and name in GRID_STATE_PRESETS:
                bad(f"{path}/preset", f"{name!r} needs a grid1d system; qubit presets are {', '.join(qubit_state_names())}")
            if name == "box" and spec.get("level", 1) < 1:
                bad(f"{path}/level", "box levels start at 1")
        elif kind == "bloch" and is_grid:
            bad(f"{path}/bloch", "Bloch angles describe qubit states only")
        elif kind == "amplitudes":
            n = system.get("cells", 0) if is_grid else 2
            if len(spec["amplitudes"]) != n:
                bad(f"{path}/amplitudes", f"expected {n} amplitudes, got {len(spec['amplitudes'])}")
            elif not any(abs(_complex(a)) > 0 for a in spec["amplitudes"]):
                bad(f"{path}/amplitudes", "state has zero norm")

    for i, s in enumerate(d.get("states", [])):
        check_state(s, f"states/{i}")
    for i, t in enumerate(d.get("targets", [])):
        check_state(t["state"], f"targets/{i}/state")

    obs = d.get("observable")
    if obs is not None:
        kinds = [k for k in ("preset", "matrix", "random") if k in obs]
        if len(kinds) != 1:
            bad("observable", "give exactly one of preset, matrix, random")
        elif kinds[0] == "preset":
            if is_grid and obs["preset"] != "position":
                bad("observable/preset", f"{obs['preset']!r} is a qubit observable; grid systems support 'position'")
            if not is_grid and obs["preset"] == "position":
                bad("observable/preset", f"'position' needs a grid1d system; qubit presets are {', '.join(qubit_observable_names())}")
        elif kinds[0] == "matrix":
            n = system.get("cells", 0) if is_grid else 2
            m = obs["matrix"]
            if len(m) != n or any(len(row) != n for row in m):
                bad("observable/matrix", f"expected a {n}x{n} matrix")
            else:
                a = np.array([[_complex(x) for x in row] for row in m])
                if np.max(np.abs(a - a.conj().T)) > 1e-12:
                    bad("observable/matrix", "observable must be hermitian")

    prot = d.get("protection")
    prot_list = [] if prot is None else (prot if isinstance(prot, list) else [prot])
    prot_path = (lambda i: f"protection/{i}") if isinstance(prot, list) else (lambda i: "protection")
    for i, p in enumerate(prot_list):
        path = prot_path(i)
        kind = p["kind"]
        allowed = {
            "none": set(),
            "magnetic": {"omega_tau", "omega", "axis"},
            "zeno": {"n"},
            "energy_gap": {"hamiltonian", "level", "omega_tau", "omega", "axis"},
        }[kind]
        for key in p:
            if key != "kind" and key not in allowed:
                bad(f"{path}/{key}", f"not used by {kind} protection")
        if kind == "magnetic":
            if is_grid:
                bad(f"{path}/kind", "magnetic protection acts on spin systems")
            if ("omega" in p) == ("omega_tau" in p):
                bad(path, "magnetic protection needs exactly one of omega, omega_tau")
            if "axis" in p and not math.isclose(float(np.linalg.norm(p["axis"])), 1.0, abs_tol=1e-9):
                bad(f"{path}/axis", "axis must be a unit vector")
        if kind == "zeno" and "n" not in p:
            bad(f"{path}/n", "zeno protection needs a projection count")
        if kind == "energy_gap":
            if is_grid and "hamiltonian" not in p:
                bad(f"{path}/hamiltonian", "grid energy-gap protection needs a hamiltonian preset")
            if not is_grid and "hamiltonian" in p:
                bad(f"{path}/hamiltonian", "spin energy-gap protection is specified by a field (omega/omega_tau, axis)")
            if not is_grid and ("omega" in p) == ("omega_tau" in p):
                bad(path, "spin energy-gap protection needs exactly one of omega, omega_tau")
        if kind == "none" and cmd in ("protective", "realistic-sweep"):
            bad(f"{path}/kind", "protective runs need a protection scheme")

    sweep = d.get("sweep")
    zeno_ns = [p["n"] for p in prot_list if p["kind"] == "zeno" and "n" in p]
    if sweep is not None:
        param = sweep["parameter"]
        if param not in SWEEPS[cmd]:
            bad("sweep/parameter", f"{cmd} sweeps support {', '.join(SWEEPS[cmd])}")
        for j, v in enumerate(sweep["values"]):
            if param in INTEGER_SWEEPS and (v != int(v) or v < 1):
                bad(f"sweep/values/{j}", f"{param} values must be positive integers")
            elif not v > 0:
                bad(f"sweep/values/{j}", f"{param} values must be positive")
        if param == "zeno_n":
            if not any(p["kind"] == "zeno" for p in prot_list):
                bad("sweep/parameter", "sweeping zeno_n needs zeno protection")
            zeno_ns = [int(v) for v in sweep["values"] if v == int(v) and v >= 1]
        if param == "resolution" and any(v < 100 for v in sweep["values"]):
            bad("sweep/values", "sphere resolution must be >= 100")
        if param == "regions" and is_grid and any(v > system.get("cells", 0) for v in sweep["values"]):
            bad("sweep/values", "cannot use more regions than grid cells")
    dts = [dt] if dt is not None else []
    taus = [tau]
    if sweep is not None and sweep["parameter"] == "dt":
        dts = list(sweep["values"])
    if sweep is not None and sweep["parameter"] == "tau":
        taus = list(sweep["values"])
    for n in zeno_ns:
        for t in taus:
            for h in dts:
                ratio = t / n / h
                if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
                    k = max(1, math.ceil(DEFAULT_DT_STEPS / n))
                    bad(
                        "coupling/dt" if sweep is None or sweep["parameter"] != "dt" else "sweep/values",
                        f"dt = {h:g} does not divide tau/N = {t / n:g} (N = {n}); "
                        f"use dt = tau/(N*k) for an integer k, e.g. {t / (n * k):.12g}",
                    )

    if cmd in ("protective", "realistic-sweep"):
        if "states" not in d:
            bad("states", f"{cmd} needs at least one state")
        if "observable" not in d:
            bad("observable", f"{cmd} needs an observable")
        if prot is None:
            bad("protection", f"{cmd} needs a protection scheme")
    if cmd == "realistic-sweep":
        mode = d.get("mode", "readout")
        if mode not in ("readout", "survival"):
            bad("mode", "realistic-sweep modes are readout, survival")
        n_states = sum(s.get("count", 1) for s in d.get("states", []))
        if mode == "readout" and n_states != 2:
            bad("states", "readout sweeps compare exactly two states")
        if mode == "survival" and not all(p["kind"] == "zeno" for p in prot_list):
            bad("protection", "survival sweeps need zeno protection")
        if len(prot_list) > 1:
            bad("protection", "realistic sweeps use a single protection scheme")
    if cmd == "protective" and d.get("mode") is not None:
        bad("mode", "protective runs take no mode")
    if cmd == "reconstruct":
        if not is_grid:
            bad("system/kind", "reconstruction needs a grid1d system")
        if "targets" not in d:
            bad("targets", "reconstruct needs at least one target")
        if "regions" not in d and (sweep is None or sweep["parameter"] != "regions"):
            bad("regions", "reconstruct needs a region count")
        if is_grid and d.get("regions", 1) > system.get("cells", 0):
            bad("regions", "cannot use more regions than grid cells")
        wants_protective = any("protective" in t.get("modes", ["exact"]) for t in d.get("targets", []))
        if wants_protective and not any(p["kind"] == "energy_gap" for p in prot_list):
            bad("protection", "protective reconstruction needs energy_gap protection")
    if cmd == "ont-check":
        if is_grid:
            bad("system/kind", "ontological-model checks use qubit states")
        if "models" not in d:
            bad("models", "ont-check needs at least one model")
        names = [m.get("name", m["kind"]) for m in d.get("models", [])]
        if len(set(names)) != len(names):
            bad("models", "model names must be unique (set name: explicitly)")
        for i, s in enumerate(d.get("states", [])):
            if "preset" not in s:
                bad(f"states/{i}", "ont-check states must be named presets")
        state_names = [s.get("preset") for s in d.get("states", [])] or qubit_state_names()
        meas_names = d.get("measurements") or qubit_observable_names()
        for i, (s1, s2, a) in enumerate(d.get("pairs", [])):
            for j, s in enumerate((s1, s2)):
                if s not in state_names:
                    bad(f"pairs/{i}/{j}", f"state {s!r} is not among the configured states")
            if a not in meas_names:
                bad(f"pairs/{i}/2", f"observable {a!r} is not among the configured measurements")

    return issues


def _preflight(cfg: "ExperimentConfig") -> list[ConfigIssue]:
    """Build every state, observable and protection and check they fit together."""
    from .errors import ProtmeasError
    from .measurement import _check_compatible

    issues = []
    try:
        space = build_system(cfg)
    except (ValueError, ProtmeasError) as exc:
        return [ConfigIssue("system", str(exc))]
    tau = float((cfg.coupling or {}).get("tau", 1.0))
    if cfg.command in ("protective", "realistic-sweep"):
        for label, spec, idx in expand_states(cfg):
            path = f"states/{label}"
            try:
                rng = record_rng(cfg, idx)
                psi = build_state(spec, space, rng)
                build_observable(cfg.observable, space, rng if cfg.observable.get("random") else None)
            except (ValueError, ProtmeasError) as exc:
                issues.append(ConfigIssue(path, str(exc)))
                continue
            for j, p in enumerate(cfg.protections):
                try:
                    _check_compatible(psi, build_protection(p, psi, tau))
                except (ValueError, ProtmeasError) as exc:
                    issues.append(ConfigIssue(f"protection/{j}" if isinstance(cfg.protection, list) else "protection", f"{label}: {exc}"))
    if cfg.command == "reconstruct":
        for i, t in enumerate(cfg.targets):
            try:
                psi = build_state(t["state"], space, record_rng(cfg, i))
                if "protective" in t.get("modes", ["exact"]):
                    spec = next(p for p in cfg.protections if p["kind"] == "energy_gap")
                    _check_compatible(psi, build_protection(spec, psi, tau))
            except (ValueError, ProtmeasError) as exc:
                issues.append(ConfigIssue(f"targets/{i}", str(exc)))
    return issues


# --- builders ----------------------------------------------------------------------


def _complex(x) -> complex:
    return complex(x[0], x[1]) if isinstance(x, list) else complex(x)


def build_system(cfg: ExperimentConfig) -> HilbertSpace:
    s = cfg.system or {"kind": "spin"}
    if s["kind"] == "spin":
        return spin_space()
    return HilbertSpace("grid1d", int(s["cells"]), float(s["x_min"]), float(s["x_max"]))


def build_state(spec: dict, space: HilbertSpace, rng: np.random.Generator | None = None) -> StateVector:
    if "preset" in spec:
        name = spec["preset"]
        if name == "harmonic":
            return harmonic_eigenstate(space, int(spec.get("level", 0)), float(spec.get("omega", 1.0)))
        if name == "boosted_gaussian":
            return boosted_gaussian(space, float(spec.get("k", 0.0)), float(spec.get("center", 0.0)), float(spec.get("sigma", 1.0)))
        if name == "box":
            return box_state(space, int(spec.get("level", 1)))
        return qubit_state(name)
    if "amplitudes" in spec:
        return StateVector(np.array([_complex(a) for a in spec["amplitudes"]]), space).normalized()
    if "bloch" in spec:
        return spin_state(*map(float, spec["bloch"]))
    if rng is None:
        raise ValueError("random states need a generator")
    return random_state(space, rng)


def state_label(spec: dict, index: int) -> str:
    if "preset" in spec:
        name = spec["preset"]
        if name in GRID_STATE_PRESETS:
            extra = {k: spec[k] for k in ("level", "k", "sigma", "center", "omega") if k in spec}
            return name + "".join(f"_{k}{v}" for k, v in extra.items())
        return name
    return f"state{index}"


def expand_states(cfg: ExperimentConfig) -> list[tuple[str, dict, int]]:
    """(label, spec, record index) per state, with random entries repeated ``count`` times."""
    out, idx = [], 0
    for spec in cfg.states or []:
        for _ in range(int(spec.get("count", 1))):
            out.append((state_label(spec, idx), spec, idx))
            idx += 1
    return out


def build_observable(spec: dict, space: HilbertSpace, rng: np.random.Generator | None = None) -> tuple[str, Operator]:
    if "preset" in spec:
        name = spec["preset"]
        if name == "position":
            return name, position_operator(space)
        return name, qubit_observable(name)
    if "matrix" in spec:
        m = np.array([[_complex(x) for x in row] for row in spec["matrix"]])
        return "matrix", hermitian_operator(m, space)
    if rng is None:
        raise ValueError("random observables need a generator")
    return "random", random_hermitian(space, rng, float(spec.get("scale", 1.0)))


def build_protection(spec: dict, psi: StateVector, tau: float):
    kind = spec["kind"]
    if kind == "none":
        return Unprotected()
    if kind == "zeno":
        return Zeno(int(spec["n"]), psi.normalized())
    if kind == "energy_gap" and "hamiltonian" in spec:
        h = spec["hamiltonian"]
        ham = harmonic_hamiltonian(psi.space, float(h.get("omega", 1.0)))
        level = spec.get("level")
        if level is None:
            _, v = np.linalg.eigh(ham.matrix)
            level = int(np.argmax(np.abs(v.conj().T @ psi.amplitudes)))
        return EnergyGap(ham, int(level))
    omega = float(spec["omega"]) if "omega" in spec else float(spec["omega_tau"]) / tau
    field_ = Magnetic(tuple(spec["axis"]), omega) if "axis" in spec else Magnetic.along(psi, omega)
    return field_ if kind == "magnetic" else field_.to_energy_gap()


def build_measurement_config(cfg: ExperimentConfig) -> MeasurementConfig:
    c = cfg.coupling or {}
    p = cfg.pointer or {}
    pointer = PointerConfig(
        cells=int(p.get("cells", 256)),
        x_min=float(p.get("x_min", -2.0)),
        x_max=float(p.get("x_max", 3.0)),
        sigma=None if "sigma" not in p else float(p["sigma"]),
        center=float(p.get("center", 0.0)),
        mass=None if "mass" not in p else float(p["mass"]),
    )
    return MeasurementConfig(
        tau=float(c.get("tau", 1.0)),
        dt=None if "dt" not in c else float(c["dt"]),
        shape=c.get("shape", "sin2"),
        pointer=pointer,
        tolerance=float(cfg.tolerance) if cfg.tolerance is not None else 1e-3,
        method=cfg.method or "auto",
    )


def build_binning(cfg: ExperimentConfig) -> Binning:
    b = cfg.binning or {}
    return Binning(float(b.get("lo", -1.0)), float(b.get("hi", 2.0)), float(b.get("width", 0.02)))


def record_rng(cfg: ExperimentConfig, index: int) -> np.random.Generator:
    return run_rng(cfg.master_seed, index)
