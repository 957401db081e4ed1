import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from protmeas.errors import ModelError, UnboundLabelError
from protmeas.hilbert import expectation, pauli, random_hermitian, random_state, spin_space
from protmeas.ontmodel import (
    KS_MEASUREMENTS,
    KS_STATES,
    ContradictionCertificate,
    OnticModel,
    build_ks_model,
    build_psi_ontic_model,
    check_projective_reproduction,
    check_protective_consistency,
    fibonacci_sphere,
    ks_overlap_continuum,
    support_overlap,
)
from protmeas.presets import qubit_observable, qubit_state

# discrete overlap of the |0> and |+> preparations on the 10^4-point lattice
KS_OVERLAP_1E4 = 0.2929025252100529


@pytest.fixture(scope="module")
def ks():
    return build_ks_model(10_000)


def max_ks_residual(model):
    return max(
        check_projective_reproduction(model, s, m).max_residual for s in KS_STATES for m in KS_MEASUREMENTS
    )


class TestModelInvariants:
    def test_preparations_must_be_probabilities(self):
        xi = {"M": np.array([[1.0, 0.0], [0.0, 1.0]])}
        vals = {"M": np.array([1.0, -1.0])}
        with pytest.raises(ModelError):
            OnticModel(2, {"a": np.array([0.6, 0.6])}, xi, vals)
        with pytest.raises(ModelError):
            OnticModel(2, {"a": np.array([1.5, -0.5])}, xi, vals)
        with pytest.raises(ModelError):
            OnticModel(2, {"a": np.array([1.0])}, xi, vals)

    def test_responses_must_sum_to_one(self):
        with pytest.raises(ModelError):
            OnticModel(2, {"a": np.array([0.5, 0.5])}, {"M": np.array([[0.5, 0.5], [0.4, 0.5]])},
                       {"M": np.array([1.0, -1.0])})
        with pytest.raises(ModelError):
            OnticModel(2, {"a": np.array([0.5, 0.5])}, {"M": np.eye(2)}, {"M": np.array([1.0])})

    def test_model_is_immutable(self, ks):
        with pytest.raises(TypeError):
            ks.preparations["0"] = np.zeros(ks.n_ontic)
        with pytest.raises(ValueError):
            ks.preparations["0"][0] = 1.0

    def test_unbound_labels(self, ks):
        with pytest.raises(UnboundLabelError):
            check_projective_reproduction(ks, "up", "sigma_z")
        with pytest.raises(UnboundLabelError):
            check_projective_reproduction(ks, "0", "sigma_w")
        with pytest.raises(UnboundLabelError):
            check_projective_reproduction(ks, qubit_state("0"), 2.0 * pauli("z"))

    def test_quantum_objects_resolve_to_labels(self, ks):
        assert ks.state_label(qubit_state("+")) == "+"
        assert ks.operator_label(qubit_observable("P0")) == "P0"


class TestProjectiveReproduction:
    def test_psi_ontic_is_exact(self):
        model = build_psi_ontic_model(KS_STATES)
        for s in KS_STATES:
            for m in KS_MEASUREMENTS:
                assert check_projective_reproduction(model, s, m).max_residual <= 1e-12

    def test_ks_sigma_z(self, ks):
        for s in ("0", "+"):
            report = check_projective_reproduction(ks, s, "sigma_z")
            assert report.passed and report.max_residual <= 1e-2

    def test_uniform_response_is_caught(self, ks):
        xi = {"sigma_z": np.full((2, ks.n_ontic), 0.5)}
        broken = OnticModel(ks.n_ontic, ks.preparations, xi, {"sigma_z": np.array([1.0, -1.0])},
                            states=ks.states, measurements={"sigma_z": pauli("z")})
        report = check_projective_reproduction(broken, "0", "sigma_z")
        assert not report.passed
        np.testing.assert_allclose(report.residuals, [0.5, 0.5], atol=1e-12)
        assert check_projective_reproduction(broken, "+", "sigma_z").max_residual <= 1e-12

    def test_ks_residual_decreases_like_inverse_resolution(self):
        res = np.array([max_ks_residual(build_ks_model(n)) for n in (1_000, 10_000, 100_000)])
        assert res[0] > res[1] > res[2]
        slope = np.polyfit(np.log([1e3, 1e4, 1e5]), np.log(res), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.3)


class TestKsModel:
    def test_normalization(self, ks):
        for mu in ks.preparations.values():
            assert mu.sum() == pytest.approx(1.0, abs=1e-12)
            assert mu.min() >= 0

    def test_up_state_support_is_upper_hemisphere(self, ks):
        lam = fibonacci_sphere(ks.n_ontic)
        np.testing.assert_array_equal(ks.preparations["0"] > 0, lam[:, 2] > 0)

    def test_fibonacci_lattice_is_balanced(self):
        lam = fibonacci_sphere(4000)
        np.testing.assert_allclose(np.linalg.norm(lam, axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(lam.mean(axis=0), 0.0, atol=1e-3)

    def test_resolution_floor(self):
        with pytest.raises(ValueError):
            build_ks_model(99)
        with pytest.raises(ValueError):
            build_ks_model(150.5)

    def test_protective_response_is_undefined(self, ks):
        assert ks.protective_response is None


class TestOverlap:
    def test_trivial_cases(self):
        mu = np.array([0.2, 0.3, 0.5])
        assert support_overlap(mu, mu) == pytest.approx(1.0)
        assert support_overlap([1, 0, 0], [0, 0.5, 0.5]) == 0.0
        with pytest.raises(ValueError):
            support_overlap([1.0], [0.5, 0.5])

    def test_ks_baseline(self, ks):
        value = support_overlap(ks.preparations["0"], ks.preparations["+"])
        assert value == pytest.approx(KS_OVERLAP_1E4, abs=1e-12)

    def test_continuum_oracle(self):
        # the lattice value approaches 1 - 1/sqrt(2) computed by 2-D quadrature
        cont = ks_overlap_continuum([0, 0, 1], [1, 0, 0])
        assert cont == pytest.approx(1 - 1 / np.sqrt(2), abs=1e-7)
        assert KS_OVERLAP_1E4 == pytest.approx(cont, abs=1e-4)

    def test_psi_ontic_states_never_overlap(self):
        model = build_psi_ontic_model(KS_STATES)
        for a in KS_STATES:
            for b in KS_STATES:
                expected = 1.0 if a == b else 0.0
                assert support_overlap(model.preparations[a], model.preparations[b]) == expected


class TestProtectiveConsistency:
    def test_ks_zero_plus_certificate(self, ks):
        cert = check_protective_consistency(ks, "0", "+", "P0")
        assert isinstance(cert, ContradictionCertificate)
        assert cert.expectations == pytest.approx((1.0, 0.5), abs=1e-12)
        assert cert.joint_mass > 0
        cert.verify(ks)

    def test_equal_states_pass(self, ks):
        assert check_protective_consistency(ks, "+", "+", "P0") is None

    def test_psi_ontic_passes_every_pair(self):
        model = build_psi_ontic_model(KS_STATES)
        for a in KS_STATES:
            for b in KS_STATES:
                for m in KS_MEASUREMENTS:
                    assert check_protective_consistency(model, a, b, m) is None

    def test_duplicate_states_are_rejected(self):
        psi = qubit_state("+")
        with pytest.raises(ValueError):
            build_psi_ontic_model({"a": psi, "b": psi.__class__(1j * psi.amplitudes, psi.space)})

    def test_certificate_rejects_bad_evidence(self, ks):
        with pytest.raises(ModelError):
            ContradictionCertificate(0, "P0", ("0", "+"), (1.0, 0.5), (0.0, 0.1))
        with pytest.raises(ModelError):
            ContradictionCertificate(0, "P0", ("0", "+"), (0.5, 0.5), (0.1, 0.1))
        cert = check_protective_consistency(ks, "0", "+", "P0")
        forged = ContradictionCertificate(cert.ontic_index, "P0", cert.psi_labels, cert.expectations,
                                          (cert.masses[0] * 2, cert.masses[1]))
        with pytest.raises(ModelError):
            forged.verify(ks)

    def test_wrong_protective_values_are_a_model_error(self):
        model = build_psi_ontic_model(["0", "+"], ["P0"])
        bad = OnticModel(2, model.preparations, model.projective_response, model.outcome_values,
                         {"P0": np.array([1.0, 0.9])}, model.states, model.measurements)
        with pytest.raises(ModelError):
            check_protective_consistency(bad, "0", "+", "P0")


def random_model(seed):
    """Two random qubit preparations on m <= 20 ontic states with random supports."""
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 21))
    mus = []
    for _ in range(2):
        w = rng.random(m) * (rng.random(m) < 0.5)
        if not w.any():
            w[rng.integers(m)] = 1.0
        mus.append(w / w.sum())
    same = rng.random() < 0.15
    s1 = random_state(spin_space(), rng)
    s2 = s1 if same else random_state(spin_space(), rng)
    a = random_hermitian(spin_space(), rng)
    e1, e2 = expectation(a, s1), expectation(a, s2)
    f = None
    if rng.random() < 0.5:
        # consistent wherever only one preparation reaches
        f = rng.normal(size=m)
        f[(mus[0] > 0) & ~(mus[1] > 0)] = e1
        f[(mus[1] > 0) & ~(mus[0] > 0)] = e2
        f = {"A": f}
    xi = {"A": np.vstack([np.full(m, 0.5), np.full(m, 0.5)])}
    model = OnticModel(m, {"s1": mus[0], "s2": mus[1]}, xi, {"A": np.array([1.0, -1.0])}, f,
                       {"s1": s1, "s2": s2}, {"A": a})
    return model, abs(e1 - e2), support_overlap(*mus)


class TestMonotoneContrapositive:
    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_pass_iff_no_overlap_or_no_gap(self, seed):
        model, gap, overlap = random_model(seed)
        result = check_protective_consistency(model, "s1", "s2", "A")
        assert (result is None) == (overlap == 0 or gap <= 1e-6)
        if result is not None:
            result.verify(model)
            assert result.gap > 1e-6 and result.joint_mass > 0
