"""Scenario dispatch: turns a validated config into a result envelope.

Every number in an envelope is a function of (config, seed) alone. Work
items are independent and merged in a fixed order, so ``jobs`` only changes
the wall time.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import resources

import numpy as np
from scipy.stats import spearmanr

from . import __version__
from .config import (
    ExperimentConfig,
    build_binning,
    build_measurement_config,
    build_observable,
    build_protection,
    build_state,
    build_system,
    expand_states,
    load_config,
    record_rng,
)
from .measurement import (
    _check_compatible,
    distribution_overlap,
    run_protective_ideal,
    run_realistic,
)
from .ontmodel import (
    KS_MEASUREMENTS,
    build_ks_model,
    build_psi_ontic_model,
    check_projective_reproduction,
    check_protective_consistency,
    support_overlap,
)
from .presets import qubit_state_names
from .reconstruct import RegionPartition, measure_density, measure_flux, reconstruct_wavefunction

ACCEPTANCE_PRESETS = (
    "spin_p0_ideal",
    "random_qubit_shift",
    "zeno_survival_scaling",
    "realistic_overlap_sweep",
    "ho_reconstruction",
    "ks_contradiction",
    "numerical_hygiene",
)


# --- presets --------------------------------------------------------------------------


def _scenario_dir():
    return resources.files("protmeas").joinpath("scenarios")


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in _scenario_dir().iterdir() if p.name.endswith(".yaml"))


def preset_path(name: str):
    path = _scenario_dir().joinpath(f"{name}.yaml")
    if not path.is_file():
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return path


def load_preset(name: str) -> ExperimentConfig:
    with resources.as_file(preset_path(name)) as p:
        return load_config(p)


def preset_description(name: str) -> str:
    return load_preset(name).description or ""


# --- helpers ----------------------------------------------------------------------------


def derived_seed(master: int, *keys: int) -> int:
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _pmap(func, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, tasks))


def _sweep_values(cfg: ExperimentConfig) -> list:
    if cfg.sweep is None:
        return [None]
    param = cfg.sweep["parameter"]
    vals = cfg.sweep["values"]
    return [int(v) for v in vals] if param in ("zeno_n", "regions", "resolution") else [float(v) for v in vals]


def _apply_sweep(cfg: ExperimentConfig, value):
    """Measurement config and protection specs with the swept parameter substituted."""
    mcfg = build_measurement_config(cfg)
    prots = [dict(p) for p in cfg.protections]
    if value is None:
        return mcfg, prots
    param = cfg.sweep["parameter"]
    if param == "dt":
        mcfg = replace(mcfg, dt=value)
    elif param == "tau":
        mcfg = replace(mcfg, tau=value)
    elif param == "sigma":
        mcfg = replace(mcfg, pointer=replace(mcfg.pointer, sigma=value))
    elif param == "omega_tau":
        for p in prots:
            if p["kind"] in ("magnetic", "energy_gap") and "hamiltonian" not in p:
                p.pop("omega", None)
                p["omega_tau"] = value
    elif param == "zeno_n":
        for p in prots:
            if p["kind"] == "zeno":
                p["n"] = value
    return mcfg, prots


def _spectral_range(A) -> float:
    w = np.linalg.eigvalsh(A.matrix)
    return float(w[-1] - w[0])


def _loglog_slope(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


# --- protective ---------------------------------------------------------------------------


def _protective_task(task):
    data, value, state_idx, prot_idx = task
    cfg = ExperimentConfig(**data)
    space = build_system(cfg)
    label, spec, rec_idx = expand_states(cfg)[state_idx]
    rng = record_rng(cfg, rec_idx)
    psi = build_state(spec, space, rng)
    obs_rng = rng if cfg.observable.get("random") else None
    a_label, A = build_observable(cfg.observable, space, obs_rng)
    mcfg, prots = _apply_sweep(cfg, value)
    scheme = build_protection(prots[prot_idx], psi, mcfg.tau)
    rec = run_protective_ideal(psi, A, scheme, mcfg, label=a_label, check=cfg.tolerance is not None)
    spread = _spectral_range(A)
    return {
        "sweep_value": value,
        "state": label,
        "protection": prots[prot_idx]["kind"],
        "observable": a_label,
        "outcome": rec.outcome,
        "expected": rec.expected,
        "residual": rec.residual,
        "relative_residual": rec.residual / spread if spread > 0 else rec.residual,
        "norm_error": rec.norm_error,
        "survival_probability": rec.survival,
        "tau": rec.tau,
        "dt": rec.dt,
        "n": rec.n,
    }


def run_protective(cfg: ExperimentConfig, jobs: int = 1) -> tuple[list, dict]:
    states = expand_states(cfg)
    tasks = [
        (cfg.to_dict(), v, i, j)
        for v in _sweep_values(cfg)
        for i in range(len(states))
        for j in range(len(cfg.protections))
    ]
    records = _pmap(_protective_task, tasks, jobs)
    summary = {
        "n_records": len(records),
        "outcomes": [r["outcome"] for r in records],
        "max_residual": max(r["residual"] for r in records),
        "max_relative_residual": max(r["relative_residual"] for r in records),
        "max_norm_error": max(r["norm_error"] for r in records),
    }
    if len(cfg.protections) > 1:
        # compare schemes at the finest step; coarser steps carry step-size error
        finest = records
        if cfg.sweep is not None and cfg.sweep["parameter"] == "dt":
            finest = [r for r in records if r["sweep_value"] == min(_sweep_values(cfg))]
        groups: dict = {}
        for r in finest:
            groups.setdefault((r["sweep_value"], r["state"]), []).append(r["outcome"])
        summary["protection_spread"] = max(max(g) - min(g) for g in groups.values())
    if cfg.sweep is not None and cfg.sweep["parameter"] == "dt" and len(_sweep_values(cfg)) >= 3:
        slopes = []
        series: dict = {}
        for r in records:
            series.setdefault((r["state"], r["protection"]), []).append((r["dt"], r["outcome"]))
        for pts in series.values():
            pts.sort(reverse=True)
            dts = np.array([p[0] for p in pts])
            out = np.array([p[1] for p in pts])
            # successive differences shrink like dt^order for a method of that order
            slopes.append(_loglog_slope(dts[:-1], np.abs(np.diff(out))))
        summary["dt_order_slope_min"] = float(min(slopes))
        summary["dt_order_slope_max"] = float(max(slopes))
    return records, summary


# --- realistic sweeps ---------------------------------------------------------------------------


def _realistic_task(task):
    data, sweep_idx, value, state_idx = task
    cfg = ExperimentConfig(**data)
    space = build_system(cfg)
    label, spec, rec_idx = expand_states(cfg)[state_idx]
    rng = record_rng(cfg, rec_idx)
    psi = build_state(spec, space, rng)
    _, A = build_observable(cfg.observable, space, rng if cfg.observable.get("random") else None)
    mcfg, prots = _apply_sweep(cfg, value)
    scheme = build_protection(prots[0], psi, mcfg.tau)
    if (cfg.mode or "readout") == "survival":
        rec = run_protective_ideal(psi, A, scheme, mcfg, check=False)
        return {
            "sweep_value": value,
            "state": label,
            "survival_probability": rec.survival,
            "failure_probability": 1.0 - rec.survival,
            "outcome": rec.outcome,
            "expected": rec.expected,
            "norm_error": rec.norm_error,
            "dt": rec.dt,
        }
    seed = derived_seed(cfg.master_seed, sweep_idx, state_idx)
    dist = run_realistic(psi, A, scheme, mcfg, seed, int(cfg.runs or 1000), build_binning(cfg))
    return {"sweep_value": value, "state": label, "distribution": dist}


def run_realistic_sweep(cfg: ExperimentConfig, jobs: int = 1) -> tuple[list, dict]:
    values = _sweep_values(cfg)
    states = expand_states(cfg)
    tasks = [(cfg.to_dict(), k, v, i) for k, v in enumerate(values) for i in range(len(states))]
    results = _pmap(_realistic_task, tasks, jobs)
    if (cfg.mode or "readout") == "survival":
        xs = [r["sweep_value"] for r in results]
        summary = {
            "failure_probabilities": [r["failure_probability"] for r in results],
            "max_norm_error": max(r["norm_error"] for r in results),
        }
        if cfg.sweep is not None and len(values) >= 2:
            summary["survival_slope"] = _loglog_slope(xs, summary["failure_probabilities"])
        return results, summary

    records = []
    for k, v in enumerate(values):
        (a, b) = results[2 * k: 2 * k + 2]
        da, db = a["distribution"], b["distribution"]
        records.append({
            "sweep_value": v,
            "overlap": distribution_overlap(da, db),
            f"mean[{a['state']}]": da.mean,
            f"mean[{b['state']}]": db.mean,
            f"variance[{a['state']}]": da.variance,
            f"variance[{b['state']}]": db.variance,
            f"survived[{a['state']}]": da.survived_fraction,
            f"survived[{b['state']}]": db.survived_fraction,
            "runs": da.n_samples,
            "norm_error": max(da.norm_error, db.norm_error),
            "histograms": {a["state"]: da.probabilities.tolist(), b["state"]: db.probabilities.tolist()},
        })
    overlaps = [r["overlap"] for r in records]
    summary = {
        "overlaps": overlaps,
        "overlap_final": overlaps[int(np.argmax(values))] if values[0] is not None else overlaps[0],
        "max_norm_error": max(r["norm_error"] for r in records),
        "bin_edges": build_binning(cfg).edges.tolist(),
    }
    if len(values) >= 3:
        rho = spearmanr(values, overlaps).statistic
        summary["spearman"] = float(rho) if np.isfinite(rho) else float("nan")
    return records, summary


# --- reconstruction ------------------------------------------------------------------------------


def _reconstruct_task(task):
    data, value, target_idx, mode = task
    cfg = ExperimentConfig(**data)
    space = build_system(cfg)
    target = cfg.targets[target_idx]
    psi = build_state(target["state"], space, record_rng(cfg, target_idx))
    n_regions = int(value if value is not None else cfg.regions)
    part = RegionPartition.uniform(space, n_regions)
    scheme, mcfg = None, None
    if mode == "protective":
        mcfg, prots = _apply_sweep(cfg, None)
        spec = next(p for p in prots if p["kind"] == "energy_gap")
        scheme = build_protection(spec, psi, mcfg.tau)
        _check_compatible(psi, scheme)
    rho = measure_density(psi, part, mode, scheme, mcfg)
    j = measure_flux(psi, part, mode, scheme, mcfg)
    rec = reconstruct_wavefunction(rho, j, part)
    fid = rec.compare(psi)
    out = {
        "target": target["name"],
        "mode": mode,
        "regions": n_regions,
        "fidelity": fid,
        "max_abs_flux": float(np.max(np.abs(j.values))),
        "norm_error": max(rho.norm_error, j.norm_error),
        "flagged": int(rec.flagged.sum()),
        "nodes": rec.nodes,
    }
    if mode == "protective":
        exact_rho = measure_density(psi, part, "exact")
        exact_j = measure_flux(psi, part, "exact")
        out["max_density_error"] = float(np.max(np.abs(rho.raw - exact_rho.values)))
        out["max_flux_error"] = float(np.max(np.abs(j.values - exact_j.values)))
    return out


def run_reconstruct(cfg: ExperimentConfig, jobs: int = 1) -> tuple[list, dict]:
    values = _sweep_values(cfg)
    tasks = [
        (cfg.to_dict(), v, i, mode)
        for v in values
        for i, t in enumerate(cfg.targets)
        for mode in t.get("modes", ["exact"])
    ]
    records = _pmap(_reconstruct_task, tasks, jobs)
    summary = {
        "min_fidelity": min(r["fidelity"] for r in records),
        "max_norm_error": max(r["norm_error"] for r in records),
    }
    for r in records:
        key = f"{r['target']}.{r['mode']}" + ("" if values[0] is None else f".{r['regions']}")
        summary[f"fidelity.{key}"] = r["fidelity"]
        summary[f"max_abs_flux.{key}"] = r["max_abs_flux"]
        if "max_density_error" in r:
            summary[f"max_density_error.{key}"] = r["max_density_error"]
    return records, summary


# --- ontological models --------------------------------------------------------------------------


def _ont_task(task):
    data, value, model_idx = task
    cfg = ExperimentConfig(**data)
    mspec = cfg.models[model_idx]
    states = [s["preset"] for s in cfg.states] if cfg.states else qubit_state_names()
    meas = list(cfg.measurements or KS_MEASUREMENTS)
    name = mspec.get("name", mspec["kind"])
    if mspec["kind"] == "ks":
        res = int(value if value is not None else mspec.get("resolution", 10_000))
        model = build_ks_model(res, states, meas)
        if value is not None:
            name = f"{name}@{res}"
    else:
        model = build_psi_ontic_model(states, meas)
    eps = float(cfg.eps or 1e-2)
    tol = float(cfg.tol or 1e-6)
    records = []
    for s in states:
        for m in meas:
            rep = check_projective_reproduction(model, s, m, eps)
            records.append({"model": name, "check": "reproduction", **rep.to_dict()})
    for a in range(len(states)):
        for b in range(a + 1, len(states)):
            s1, s2 = states[a], states[b]
            ov = support_overlap(model.preparations[s1], model.preparations[s2])
            records.append({"model": name, "check": "overlap", "psi": s1, "psi2": s2, "overlap": ov})
    for s1, s2, obs in cfg.pairs or []:
        cert = check_protective_consistency(model, s1, s2, obs, tol)
        records.append({
            "model": name,
            "check": "protective_consistency",
            "psi": s1,
            "psi2": s2,
            "observable": obs,
            "passed": cert is None,
            "certificate": None if cert is None else cert.to_dict(),
        })
    return name, mspec["kind"], (model.n_ontic if mspec["kind"] == "ks" else None), records


def run_ont_check(cfg: ExperimentConfig, jobs: int = 1) -> tuple[list, dict]:
    values = _sweep_values(cfg)
    tasks = [
        (cfg.to_dict(), v, i)
        for v in values
        for i, m in enumerate(cfg.models)
        if v is None or m["kind"] == "ks" or v == values[0]
    ]
    results = _pmap(_ont_task, tasks, jobs)
    records, summary = [], {}
    sweep_series: dict = {}
    for name, kind, res, recs in results:
        records.extend(recs)
        repro = [r for r in recs if r["check"] == "reproduction"]
        max_res = max(r["max_residual"] for r in repro)
        summary[f"max_residual.{name}"] = max_res
        summary[f"reproduction_passed.{name}"] = int(all(r["passed"] for r in repro))
        for r in recs:
            if r["check"] == "overlap":
                summary[f"overlap.{name}.{r['psi']}|{r['psi2']}"] = r["overlap"]
        cons = [r for r in recs if r["check"] == "protective_consistency"]
        summary[f"certificates.{name}"] = sum(not r["passed"] for r in cons)
        if kind == "ks" and values[0] is not None:
            base = name.split("@")[0]
            sweep_series.setdefault(base, []).append((res, max_res))
    for base, pts in sweep_series.items():
        if len(pts) >= 2:
            summary[f"residual_slope.{base}"] = _loglog_slope([p[0] for p in pts], [p[1] for p in pts])
    return records, summary


# --- envelope ---------------------------------------------------------------------------------------

COMMANDS = {
    "protective": run_protective,
    "realistic-sweep": run_realistic_sweep,
    "reconstruct": run_reconstruct,
    "ont-check": run_ont_check,
}


def evaluate_checks(cfg: ExperimentConfig, summary: dict) -> list[dict]:
    out = []
    for chk in cfg.checks or []:
        value = summary.get(chk["metric"])
        ok = isinstance(value, (int, float)) and not (isinstance(value, float) and math.isnan(value))
        if ok and "min" in chk:
            ok = value >= chk["min"]
        if ok and "max" in chk:
            ok = value <= chk["max"]
        out.append({**chk, "value": value, "passed": bool(ok)})
    return out


def run_command(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    """Run ``cfg`` and return its result envelope (a JSON-ready dict)."""
    start = time.perf_counter()
    records, summary = COMMANDS[cfg.command](cfg, jobs)
    checks = evaluate_checks(cfg, summary)
    return _clean({
        "config": cfg.to_dict(),
        "version": __version__,
        "command": cfg.command,
        "seed": cfg.master_seed,
        "records": records,
        "summaries": summary,
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
        "wall_time": time.perf_counter() - start,
    })


def _clean(obj):
    """Plain Python containers and scalars only; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def deterministic_view(envelope: dict) -> dict:
    """The envelope without its wall-time entries, for reproducibility comparisons."""
    if isinstance(envelope, dict):
        return {k: deterministic_view(v) for k, v in envelope.items() if k != "wall_time"}
    if isinstance(envelope, list):
        return [deterministic_view(v) for v in envelope]
    return envelope


def to_json(envelope: dict) -> str:
    return json.dumps(envelope, indent=2, allow_nan=False) + "\n"


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, (list, dict)):
        return json.dumps(v, separators=(",", ":"))
    return str(v)


def to_csv(records: list[dict]) -> str:
    """Header row plus one row per record; floats use the shortest round-trip repr."""
    columns: list[str] = []
    for r in records:
        for k in r:
            if k not in columns:
                columns.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in records:
        w.writerow([_csv_cell(r.get(c)) for c in columns])
    return buf.getvalue()
