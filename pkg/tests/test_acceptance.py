"""Acceptance criteria, one test each, run on the bundled presets.

Each test prints a PASS/FAIL line in the terminal summary. The long presets
run once per session through the ``preset_envelope`` cache.
"""

import numpy as np
import pytest
from scipy.stats import spearmanr

from protmeas.errors import ModelError
from protmeas.ontmodel import ContradictionCertificate, build_ks_model, ks_overlap_continuum
from protmeas.runner import ACCEPTANCE_PRESETS

pytestmark = pytest.mark.slow

# pinned from the 10^4-point lattice sum of min(mu_0, mu_+)
KS_OVERLAP_BASELINE = 0.2929025252100529


def within(label, value, lo=-np.inf, hi=np.inf):
    return (label, value, value is not None and lo <= value <= hi)


def test_presets_mirror_criteria():
    assert len(ACCEPTANCE_PRESETS) == 7


def test_spin_protective_measurement(preset_envelope, criterion):
    env = preset_envelope("spin_p0_ideal")
    by_state = {r["state"]: r["outcome"] for r in env["records"]}
    criterion(1, "spin protective measurement", [
        within("shift |0>", by_state["0"], 1.0 - 1e-3, 1.0 + 1e-3),
        within("shift |+>", by_state["+"], 0.5 - 1e-3, 0.5 + 1e-3),
        within("wall_time", env["wall_time"], hi=30.0),
    ])


def test_pointer_shift_is_expectation(preset_envelope, criterion):
    env = preset_envelope("random_qubit_shift")
    recs = env["records"]
    rel = max(r["relative_residual"] for r in recs)
    criterion(2, "pointer shift equals <A>", [
        ("records", len(recs), len(recs) == 10),
        within("max relative residual", rel, hi=1e-2),
        within("wall_time", env["wall_time"], hi=300.0),
    ])


def test_zeno_scaling(preset_envelope, criterion):
    env = preset_envelope("zeno_survival_scaling")
    ns = np.array([r["sweep_value"] for r in env["records"]], dtype=float)
    fail = np.array([r["failure_probability"] for r in env["records"]])
    slope = float(np.polyfit(np.log(ns), np.log(fail), 1)[0])
    criterion(3, "Zeno survival scaling", [
        ("N values", ns.astype(int).tolist(), ns.astype(int).tolist() == [16, 32, 64, 128, 256, 512, 1024]),
        within("log-log slope", slope, -1.15, -0.85),
        within("wall_time", env["wall_time"], hi=300.0),
    ])


def test_realistic_overlap_limit(preset_envelope, criterion):
    env = preset_envelope("realistic_overlap_sweep")
    recs = sorted(env["records"], key=lambda r: r["sweep_value"])
    ns = [r["sweep_value"] for r in recs]
    overlaps = [r["overlap"] for r in recs]
    rho = float(spearmanr(ns, overlaps)[0])
    criterion(4, "realistic overlap limit", [
        ("runs per point", recs[-1]["runs"], all(r["runs"] == 10_000 for r in recs)),
        within("spearman", rho, hi=-0.9),
        within("overlap at N=1024", overlaps[ns.index(1024)], hi=0.05),
        within("wall_time", env["wall_time"], hi=600.0),
    ])


def test_reconstruction(preset_envelope, criterion):
    env = preset_envelope("ho_reconstruction")
    rec = {(r["target"], r["mode"]): r for r in env["records"]}
    ho_flux = max(r["max_abs_flux"] for (t, _), r in rec.items() if t.startswith("ho"))
    criterion(5, "wavefunction reconstruction", [
        ("regions", rec[("ho0", "exact")]["regions"], rec[("ho0", "exact")]["regions"] == 64),
        within("fidelity ho0 exact", rec[("ho0", "exact")]["fidelity"], lo=0.999),
        within("fidelity ho0 protective", rec[("ho0", "protective")]["fidelity"], lo=0.995),
        within("fidelity boosted", rec[("boosted", "exact")]["fidelity"], lo=0.99),
        within("max |j| for oscillator states", ho_flux, hi=1e-8),
        within("wall_time", env["wall_time"], hi=600.0),
    ])


def test_ontological_model_checks(preset_envelope, criterion):
    env = preset_envelope("ks_contradiction")
    s = env["summaries"]
    overlap = s["overlap.ks.0|+"]
    continuum = ks_overlap_continuum([0, 0, 1], [1, 0, 0])
    cert = next(r for r in env["records"] if r.get("model") == "ks" and r.get("certificate"))["certificate"]
    try:
        fields = {k: v for k, v in cert.items() if k != "joint_mass"}
        fields.update(psi_labels=tuple(cert["psi_labels"]), expectations=tuple(cert["expectations"]),
                      masses=tuple(cert["masses"]))
        ContradictionCertificate(**fields).verify(build_ks_model(10_000))
        revalidated = True
    except ModelError:
        revalidated = False
    criterion(6, "ontological-model checks", [
        within("KS reproduction residual", s["max_residual.ks"], hi=1e-2),
        within("KS overlap", overlap, lo=1e-12),
        within("overlap vs baseline", abs(overlap - KS_OVERLAP_BASELINE), hi=1e-12),
        within("overlap vs continuum", abs(overlap - continuum), hi=1e-4),
        ("certificate revalidates", revalidated, revalidated),
        within("certificate joint mass", min(cert["masses"]), lo=1e-300),
        within("certificate gap", abs(cert["expectations"][0] - cert["expectations"][1]), lo=cert["tol"]),
        within("psi-ontic residual", s["max_residual.psi_ontic"], hi=1e-12),
        ("psi-ontic certificates", s["certificates.psi_ontic"], s["certificates.psi_ontic"] == 0),
        within("wall_time", env["wall_time"], hi=60.0),
    ])


def test_numerical_hygiene(preset_envelope, criterion):
    env = preset_envelope("numerical_hygiene")
    s = env["summaries"]
    drift = max(
        preset_envelope(name)["summaries"].get("max_norm_error", 0.0) for name in ACCEPTANCE_PRESETS
    )
    criterion(7, "numerical hygiene", [
        within("max norm drift (all presets)", drift, hi=1e-8),
        within("order slope min", s["dt_order_slope_min"], 1.7, 2.3),
        within("order slope max", s["dt_order_slope_max"], 1.7, 2.3),
        within("Zeno vs energy-gap spread", s["protection_spread"], hi=1e-3),
    ])
