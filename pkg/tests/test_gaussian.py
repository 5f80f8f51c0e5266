"""Covariance recursion, Gaussian conditioning, and correlation conventions."""

import numpy as np
import pytest

from gaussid.gaussian import (
    ConditioningError,
    GaussianState,
    condition,
    condition_sequential,
    correlation,
    propagate_covariance,
)


def make_state(mean, coeffs, cond_var, names=None):
    mean = np.asarray(mean, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    cond_var = np.asarray(cond_var, dtype=float)
    if names is None:
        names = tuple(f"n{i}" for i in range(len(mean)))
    return GaussianState(order=tuple(names), mean=mean, coeffs=coeffs, cond_var=cond_var)


def random_state(rng, n):
    coeffs = np.triu(rng.uniform(-3.0, 3.0, size=(n, n)), k=1)
    cond_var = rng.uniform(0.0, 5.0, size=n)
    mean = rng.normal(size=n)
    return make_state(mean, coeffs, cond_var)


def closed_form_cov(coeffs, cond_var):
    n = len(cond_var)
    inv = np.linalg.inv(np.eye(n) - coeffs)
    return inv.T @ np.diag(cond_var) @ inv


class TestPropagation:
    def test_no_coefficients_gives_diagonal(self):
        st = propagate_covariance(make_state([0.0, 0.0], np.zeros((2, 2)), [2.0, 3.0]))
        np.testing.assert_allclose(st.cov, np.diag([2.0, 3.0]))

    def test_two_node_chain_unit_coefficient(self):
        st = propagate_covariance(make_state([0.0, 0.0], [[0.0, 1.0], [0.0, 0.0]], [1.0, 1.0]))
        np.testing.assert_allclose(st.cov, [[1.0, 1.0], [1.0, 2.0]])

    def test_deterministic_child(self):
        # Zero innovation: the child is exactly twice the parent.
        st = propagate_covariance(make_state([0.0, 0.0], [[0.0, 2.0], [0.0, 0.0]], [1.0, 0.0]))
        np.testing.assert_allclose(st.cov, [[1.0, 2.0], [2.0, 4.0]])

    def test_matches_closed_form(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            n = int(rng.integers(1, 9))
            st = random_state(rng, n)
            got = propagate_covariance(st).cov
            want = closed_form_cov(st.coeffs, st.cond_var)
            np.testing.assert_allclose(got, want, atol=1e-10, rtol=1e-10)

    def test_result_is_positive_semidefinite(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            n = int(rng.integers(2, 9))
            st = propagate_covariance(random_state(rng, n))
            eigs = np.linalg.eigvalsh(st.cov)
            assert eigs.min() >= -1e-10

    def test_original_state_unchanged(self):
        st = make_state([0.0], np.zeros((1, 1)), [1.0])
        out = propagate_covariance(st)
        assert st.cov is None
        assert out is not st


class TestStateValidation:
    def test_lower_triangle_rejected(self):
        with pytest.raises(ValueError, match="upper triangular"):
            make_state([0.0, 0.0], [[0.0, 0.0], [1.0, 0.0]], [1.0, 1.0])

    def test_diagonal_rejected(self):
        with pytest.raises(ValueError, match="upper triangular"):
            make_state([0.0], [[0.5]], [1.0])

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            make_state([0.0], [[0.0]], [-1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            GaussianState(
                order=("a", "b"),
                mean=np.zeros(3),
                coeffs=np.zeros((2, 2)),
                cond_var=np.ones(2),
            )


class TestConditioning:
    def test_single_noisy_observation(self):
        # x ~ N(0,1), o = x + N(0,1); observing o = 2 gives x | o ~ N(1, 0.5).
        st = propagate_covariance(
            make_state([0.0, 0.0], [[0.0, 1.0], [0.0, 0.0]], [1.0, 1.0])
        )
        mean, cov = condition(st, {1: 2.0})
        assert mean[0] == pytest.approx(1.0)
        assert cov[0, 0] == pytest.approx(0.5)

    def test_empty_observation_is_identity(self):
        rng = np.random.default_rng(2)
        st = propagate_covariance(random_state(rng, 4))
        mean, cov = condition(st, {})
        np.testing.assert_allclose(mean, st.mean)
        np.testing.assert_allclose(cov, st.cov)

    def test_two_rows_match_precision_pooling(self):
        # Two independent noisy looks at x are the same as one pooled look.
        st2 = propagate_covariance(
            make_state(
                [0.0, 0.0, 0.0],
                [[0.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
                [1.0, 2.0, 2.0],
            )
        )
        mean2, cov2 = condition(st2, {1: 1.0, 2: 3.0})
        pooled = propagate_covariance(
            make_state([0.0, 0.0], [[0.0, 1.0], [0.0, 0.0]], [1.0, 1.0])
        )
        mean1, cov1 = condition(pooled, {1: 2.0})
        assert mean2[0] == pytest.approx(mean1[0], abs=1e-12)
        assert cov2[0, 0] == pytest.approx(cov1[0, 0], abs=1e-12)

    def test_sequential_matches_joint(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            n = int(rng.integers(3, 9))
            base = random_state(rng, n)
            # strictly positive innovations keep the evidence block regular
            st = propagate_covariance(
                make_state(base.mean, base.coeffs, base.cond_var + 0.5)
            )
            k = int(rng.integers(1, n))
            idx = rng.choice(n, size=k, replace=False)
            obs = {int(i): float(rng.normal()) for i in idx}
            m_joint, c_joint = condition(st, obs)
            m_seq, c_seq = condition_sequential(st, obs)
            np.testing.assert_allclose(m_seq, m_joint, atol=1e-9)
            np.testing.assert_allclose(c_seq, c_joint, atol=1e-9)

    def test_conditioning_never_inflates_variance(self):
        rng = np.random.default_rng(41)
        for _ in range(20):
            n = int(rng.integers(3, 8))
            base = random_state(rng, n)
            st = propagate_covariance(
                make_state(base.mean, base.coeffs, base.cond_var + 0.5)
            )
            obs = {n - 1: 0.7}
            _, cov = condition(st, obs)
            prior_diag = np.diag(st.cov)[: n - 1]
            np.testing.assert_array_less(np.diag(cov), prior_diag + 1e-12)

    def test_posterior_is_positive_semidefinite(self):
        rng = np.random.default_rng(43)
        for _ in range(20):
            n = int(rng.integers(3, 8))
            base = random_state(rng, n)
            st = propagate_covariance(
                make_state(base.mean, base.coeffs, base.cond_var + 0.5)
            )
            _, cov = condition(st, {0: 1.0, n - 1: -1.0})
            assert np.linalg.eigvalsh(cov).min() >= -1e-10

    def test_singular_evidence_block_raises(self):
        # Two deterministic copies of the same node: evidence block is rank 1.
        st = propagate_covariance(
            make_state(
                [0.0, 0.0, 0.0],
                [[0.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
                [1.0, 0.0, 0.0],
            )
        )
        with pytest.raises(ConditioningError) as exc:
            condition(st, {1: 1.0, 2: 2.0})
        assert exc.value.condition_estimate > 1e12 or not np.isfinite(
            exc.value.condition_estimate
        )

    def test_unpropagated_state_rejected(self):
        st = make_state([0.0], np.zeros((1, 1)), [1.0])
        with pytest.raises(ValueError, match="propagate_covariance"):
            condition(st, {0: 1.0})

    def test_out_of_range_index(self):
        st = propagate_covariance(make_state([0.0], np.zeros((1, 1)), [1.0]))
        with pytest.raises(ValueError, match="out of range"):
            condition(st, {3: 1.0})


class TestCorrelation:
    def test_perfect_dependence(self):
        cov = np.array([[1.0, 2.0], [2.0, 4.0]])
        assert correlation(cov, 0, 1) == pytest.approx(1.0)

    def test_zero_variance_convention(self):
        cov = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert correlation(cov, 0, 1) == 0.0

    def test_plain_value(self):
        cov = np.array([[4.0, -2.0], [-2.0, 4.0]])
        assert correlation(cov, 0, 1) == pytest.approx(-0.5)

    def test_clamped_against_rounding(self):
        cov = np.array([[1.0, 1.0 + 1e-14], [1.0 + 1e-14, 1.0]])
        assert correlation(cov, 0, 1) == 1.0
