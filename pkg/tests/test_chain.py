import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import EXAMPLE2_Q, three_state_model
from openchain import errors
from openchain.chain import (
    escape_profile,
    matrix_power,
    spectral_radius,
    validate_jump_matrix,
)


def three_state_symmetric(q):
    return np.array([[0.0, q, q], [q, 0.0, q], [q, q, 0.0]])


class TestValidation:
    def test_example2_is_valid(self):
        jump = validate_jump_matrix(EXAMPLE2_Q)
        assert jump.size == 3
        assert jump.rho < 1.0

    def test_identity_one_vertex_rejected(self):
        with pytest.raises(errors.SpectralRadiusNotSubunit):
            validate_jump_matrix([[1.0]])

    def test_disconnected_self_loops_rejected(self):
        with pytest.raises(errors.NotIrreducible):
            validate_jump_matrix([[0.5, 0.0], [0.0, 0.5]])

    def test_negative_entry_rejected(self):
        with pytest.raises(errors.NegativeEntry):
            validate_jump_matrix([[0.5, -0.1], [0.2, 0.3]])

    def test_row_sum_above_slack_rejected(self):
        with pytest.raises(errors.RowSumExceedsOne):
            validate_jump_matrix([[0.6, 0.5], [0.2, 0.3]])

    def test_tiny_row_excess_is_renormalized(self):
        q = np.array([[0.0, 0.5], [0.5, 0.5 + 4e-13]])
        jump = validate_jump_matrix(q)
        assert jump.entries[1].sum() <= 1.0
        e = escape_profile(jump).escape_vector
        assert e[1] == 0.0

    def test_periodic_chain_rejected(self):
        # two-cycle without self-loops, scaled below radius 1: period 2
        with pytest.raises(errors.NotAperiodic):
            validate_jump_matrix([[0.0, 0.9], [0.9, 0.0]])

    def test_one_vertex_zero_matrix_is_valid(self):
        # everything escapes each step; no cycles means no period constraint
        jump = validate_jump_matrix([[0.0]])
        assert jump.rho == 0.0

    def test_nonsquare_rejected(self):
        with pytest.raises(ValueError):
            validate_jump_matrix([[0.1, 0.2]])

    def test_entries_are_frozen(self):
        jump = validate_jump_matrix(EXAMPLE2_Q)
        with pytest.raises(ValueError):
            jump.entries[0, 0] = 0.5


class TestEscapeProfile:
    def test_example2_escape_vector(self):
        jump = validate_jump_matrix(EXAMPLE2_Q)
        e = escape_profile(jump).escape_vector
        assert np.allclose(e, [0.25, 0.5, 0.0], atol=1e-15)

    def test_one_vertex(self):
        e = escape_profile(validate_jump_matrix([[0.5]])).escape_vector
        assert e == pytest.approx([0.5])

    def test_three_state_symmetric(self):
        jump = validate_jump_matrix(three_state_symmetric(0.3))
        e = escape_profile(jump).escape_vector
        assert np.allclose(e, 1 - 2 * 0.3, atol=1e-15)

    def test_row_sums_plus_escape_are_one(self):
        for q in (EXAMPLE2_Q, three_state_symmetric(0.45)):
            jump = validate_jump_matrix(q)
            e = escape_profile(jump).escape_vector
            residual = np.abs(e + jump.entries.sum(axis=1) - 1.0).max()
            assert residual < 1e-12


class TestSpectralRadius:
    def test_one_vertex(self):
        assert spectral_radius([[0.37]]) == pytest.approx(0.37, abs=1e-12)

    def test_three_state_symmetric_is_2q(self):
        # dense eigensolver oracle: eigenvalues are {2q, -q, -q}
        q = 0.21
        m = three_state_symmetric(q)
        oracle = np.abs(np.linalg.eigvals(m)).max()
        assert oracle == pytest.approx(2 * q, abs=1e-12)
        assert spectral_radius(m) == pytest.approx(2 * q, rel=1e-10)

    def test_example2_matches_dense_oracle(self):
        m = np.array(EXAMPLE2_Q)
        oracle = np.abs(np.linalg.eigvals(m)).max()
        rho = spectral_radius(m)
        assert 0.0 < rho < 1.0
        assert rho == pytest.approx(oracle, abs=1e-9)

    def test_reducible_matrices(self):
        # deflation fallback path: block maximum over the SCCs
        assert spectral_radius([[0.5, 0.0], [0.0, 0.25]]) == pytest.approx(0.5, abs=1e-10)
        assert spectral_radius([[0.0, 1.0], [0.0, 0.0]]) == pytest.approx(0.0, abs=1e-10)

    @given(st.integers(min_value=1, max_value=6), st.randoms(use_true_random=False))
    @settings(max_examples=40, deadline=None)
    def test_random_nonnegative_vs_dense_oracle(self, S, rnd):
        rng = np.random.default_rng(rnd.randrange(2**32))
        m = rng.random((S, S)) * rng.random() * 0.9
        m[rng.random((S, S)) < 0.3] = 0.0  # sprinkle zeros, possibly reducible
        oracle = np.abs(np.linalg.eigvals(m)).max()
        assert spectral_radius(m) == pytest.approx(oracle, abs=1e-8)


class TestMatrixPower:
    def test_power_zero_is_identity(self):
        jump = validate_jump_matrix(EXAMPLE2_Q)
        assert np.array_equal(matrix_power(jump, 0), np.eye(3))

    def test_closed_form_corrected_exponents(self):
        # closed form of the symmetric three-state power with the uniform
        # exponent k (the printed form mixes k and n; re-derived via the
        # eigendecomposition: eigenvalues q*{2, -1, -1})
        q = 0.3
        m = three_state_symmetric(q)
        for k in (1, 2, 5, 8):
            diag = (q**k / 3) * (2**k + 2 * (-1) ** k)
            off = (q**k / 3) * (2**k - (-1) ** k)
            closed = np.full((3, 3), off)
            np.fill_diagonal(closed, diag)
            assert np.abs(matrix_power(m, k) - closed).max() < 1e-12

    def test_k8_matches_eigendecomposition_oracle(self):
        m = three_state_symmetric(0.3)
        w, v = np.linalg.eig(m)
        oracle = (v * w**8) @ np.linalg.inv(v)
        assert np.abs(matrix_power(m, 8) - oracle.real).max() < 1e-12

    @given(
        st.integers(min_value=0, max_value=6),
        st.integers(min_value=0, max_value=6),
        st.floats(min_value=0.01, max_value=0.45),
    )
    @settings(max_examples=30, deadline=None)
    def test_power_additivity(self, a, b, q):
        m = three_state_symmetric(q)
        left = matrix_power(m, a + b)
        right = matrix_power(m, a) @ matrix_power(m, b)
        assert np.abs(left - right).max() < 1e-12


class TestContractionInvariant:
    def test_powers_shrink_below_one_by_64(self):
        for mat in (
            np.array(EXAMPLE2_Q),
            three_state_symmetric(0.45),
            np.array([[0.5]]),
            three_state_model(0.4, 0.25).jump.entries,
        ):
            p64 = matrix_power(mat, 64)
            assert np.abs(p64).sum(axis=1).max() < 1.0
