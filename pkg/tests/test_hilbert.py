import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from protmeas.errors import NotHermitianError, NumericalError, SizeError, SpaceMismatchError
from protmeas.hilbert import (
    CompositeSpace,
    HilbertSpace,
    Operator,
    StateVector,
    basis_state,
    bloch_vector,
    central_difference,
    embed,
    expectation,
    gaussian_state,
    hermitian_operator,
    identity,
    momentum_operator,
    pauli,
    pointer_marginal,
    position_operator,
    projector,
    random_hermitian,
    random_state,
    spin_space,
    spin_state,
    tensor_op,
    tensor_state,
)

GRID = HilbertSpace("grid1d", 64, -3.0, 5.0)
PTR = HilbertSpace("pointer", 32, -2.0, 3.0)


def complex_vectors(n):
    floats = st.floats(-1, 1, allow_nan=False)
    return st.lists(st.tuples(floats, floats), min_size=n, max_size=n).filter(
        lambda v: sum(a * a + b * b for a, b in v) > 1e-3
    ).map(lambda v: np.array([complex(a, b) for a, b in v]))


class TestSpaces:
    def test_grid_geometry(self):
        assert GRID.dx == pytest.approx(0.125)
        assert GRID.coordinates[0] == pytest.approx(-3.0 + 0.0625)
        assert GRID.coordinates[-1] == pytest.approx(5.0 - 0.0625)
        assert GRID.weight == GRID.dx

    def test_spin_has_unit_weight(self):
        assert spin_space().weight == 1.0
        with pytest.raises(AttributeError):
            spin_space().dx

    @pytest.mark.parametrize("kwargs", [
        dict(kind="qutrit", dimension=3),
        dict(kind="spin", dimension=1),
        dict(kind="grid1d", dimension=8),
        dict(kind="grid1d", dimension=8, x_min=1.0, x_max=1.0),
    ])
    def test_invalid_spaces(self, kwargs):
        with pytest.raises(ValueError):
            HilbertSpace(**kwargs)

    def test_composite_flattens_and_caps(self):
        c = CompositeSpace((CompositeSpace((spin_space(), spin_space())), PTR))
        assert c.shape == (2, 2, 32)
        assert c.weight == pytest.approx(PTR.dx)
        with pytest.raises(SizeError):
            CompositeSpace((GRID, GRID, GRID), max_dimension=1000)


class TestStates:
    def test_basis_state_is_normalized_on_grid(self):
        assert basis_state(GRID, 3).norm() == pytest.approx(1.0)

    def test_zero_vector_cannot_be_normalized(self):
        with pytest.raises(NumericalError):
            StateVector(np.zeros(2), spin_space()).normalized()

    def test_wrong_length(self):
        with pytest.raises(SpaceMismatchError):
            StateVector(np.ones(3), spin_space())

    def test_amplitudes_are_read_only(self):
        psi = spin_state(0.3)
        with pytest.raises(ValueError):
            psi.amplitudes[0] = 0

    def test_fix_phase(self):
        psi = StateVector([1j, 0.5j], spin_space()).normalized(fix_phase=True)
        assert psi.amplitudes[0].imag == pytest.approx(0.0)
        assert psi.amplitudes[0].real > 0

    def test_gaussian_density_width(self):
        space = HilbertSpace("pointer", 512, -4.0, 4.0)
        g = gaussian_state(space, center=0.5, sigma=0.3)
        rho = np.abs(g.amplitudes) ** 2 * space.dx
        x = space.coordinates
        assert rho @ x == pytest.approx(0.5, abs=1e-10)
        assert np.sqrt(rho @ (x - 0.5) ** 2) == pytest.approx(0.3, rel=1e-6)

    def test_bloch_vectors_of_named_states(self):
        np.testing.assert_allclose(bloch_vector(spin_state(0.0)), [0, 0, 1], atol=1e-15)
        np.testing.assert_allclose(bloch_vector(spin_state(np.pi / 2)), [1, 0, 0], atol=1e-15)
        np.testing.assert_allclose(bloch_vector(spin_state(np.pi / 2, np.pi / 2)), [0, 1, 0], atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(complex_vectors(5), complex_vectors(5))
    def test_inner_product_properties(self, a, b):
        space = HilbertSpace("grid1d", 5, 0.0, 2.0)
        u, v = StateVector(a, space).normalized(), StateVector(b, space).normalized()
        assert u.inner(v) == pytest.approx(np.conj(v.inner(u)), abs=1e-12)
        assert abs(u.inner(v)) <= 1 + 1e-12
        assert u.inner(u).real == pytest.approx(1.0, abs=1e-12)


class TestOperators:
    def test_hermitian_flag_is_checked(self):
        with pytest.raises(NotHermitianError):
            Operator(np.array([[0, 1], [0, 0]]), spin_space(), hermitian=True)

    def test_expectation_needs_hermitian(self):
        op = Operator(np.array([[0, 1], [0, 0]]), spin_space())
        with pytest.raises(NotHermitianError):
            expectation(op, spin_state(0.1))

    def test_space_mismatch(self):
        with pytest.raises(SpaceMismatchError):
            pauli("z").apply(basis_state(GRID, 0))

    def test_algebra(self):
        x, z = pauli("x"), pauli("z")
        np.testing.assert_allclose((x @ z - z @ x).matrix, -2j * pauli("y").matrix)
        assert (x + z).hermitian and (2.0 * x).hermitian and not (1j * x).hermitian

    def test_pauli_axis(self):
        n = np.array([1.0, 2.0, 2.0]) / 3
        w = np.linalg.eigvalsh(pauli(n).matrix)
        np.testing.assert_allclose(w, [-1, 1], atol=1e-14)

    def test_projector_is_idempotent_on_grid(self):
        p = projector(gaussian_state(GRID, 1.0, 0.5))
        np.testing.assert_allclose(p.matrix @ p.matrix, p.matrix, atol=1e-12)

    def test_expectation_of_position(self):
        g = gaussian_state(GRID, 1.0, 0.4)
        assert expectation(position_operator(GRID), g) == pytest.approx(1.0, abs=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_random_expectations_are_real_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        space = HilbertSpace("spin", 2)
        a, psi = random_hermitian(space, rng), random_state(space, rng)
        w = np.linalg.eigvalsh(a.matrix)
        assert w[0] - 1e-12 <= expectation(a, psi) <= w[-1] + 1e-12


class TestTensor:
    def test_tensor_state_matches_kron(self):
        a, b = spin_state(0.7, 0.2), gaussian_state(PTR, 0.0, 0.3)
        ab = tensor_state(a, b)
        np.testing.assert_allclose(ab.amplitudes, np.kron(a.amplitudes, b.amplitudes))
        assert ab.norm() == pytest.approx(1.0)

    def test_embed_equals_kron_with_identity(self):
        c = CompositeSpace((spin_space(), PTR))
        e = embed(pauli("x"), c, 0)
        np.testing.assert_allclose(e.matrix, tensor_op(pauli("x"), identity(PTR)).matrix)
        e1 = embed(position_operator(PTR), c, 1)
        np.testing.assert_allclose(e1.matrix, np.kron(np.eye(2), np.diag(PTR.coordinates)))

    def test_embed_rejects_wrong_factor(self):
        c = CompositeSpace((spin_space(), PTR))
        with pytest.raises(SpaceMismatchError):
            embed(pauli("x"), c, 1)
        with pytest.raises(IndexError):
            embed(pauli("x"), c, 2)

    def test_pointer_marginal_of_product_state(self):
        b = gaussian_state(PTR, 0.3, 0.4)
        m = pointer_marginal(tensor_state(spin_state(1.0), b), 1)
        np.testing.assert_allclose(m, np.abs(b.amplitudes) ** 2 * PTR.dx, atol=1e-14)
        assert m.sum() == pytest.approx(1.0)


class TestDerivatives:
    def test_spectral_momentum_is_exact_on_grid_plane_waves(self):
        space = HilbertSpace("pointer", 64, 0.0, 2 * np.pi)
        k = 5
        wave = np.exp(1j * k * space.coordinates)
        np.testing.assert_allclose(momentum_operator(space).matrix @ wave, k * wave, atol=1e-11)

    def test_momentum_generates_translations_of_gaussians(self):
        # [X, P] = i holds on smooth packets away from the edges
        space = HilbertSpace("pointer", 256, -2.0, 3.0)
        g = gaussian_state(space, 0.5, 0.05).amplitudes
        x, p = np.diag(space.coordinates), momentum_operator(space).matrix
        comm = (x @ p - p @ x) @ g
        np.testing.assert_allclose(comm, 1j * g, atol=1e-8)

    def test_central_difference_on_polynomial(self):
        d = central_difference(GRID)
        x = GRID.coordinates
        np.testing.assert_allclose((d @ x**2)[1:-1], 2 * x[1:-1], atol=1e-12)

    def test_hermitian_operator_symmetrizes(self):
        m = np.array([[1, 2], [0, 1]], dtype=complex)
        assert hermitian_operator(m, spin_space()).hermitian
