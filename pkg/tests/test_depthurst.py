"""Tests for dependent-comparison covariance structures.

Structured covariances are checked against hand-expanded matrices,
identification layouts against round trips and constraint counts, and
the rotation family against exact invariance of the standardized model.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paircomp.depthurst import (
    DependenceSpec,
    IdentificationStrategy,
    NonPositiveDefiniteError,
    StructuralParams,
    admissible_c_interval,
    apply_identification,
    build_covariance,
    contrast_matrix,
    default_pair_effect_cov,
    equivalence_rotation,
    full_design,
    pair_effect_design,
    pair_means,
    standardize,
)

# Four-object stimulus correlation matrix with worths (0.5, 0, -0.5, 0);
# used throughout as a known dependent-model configuration.
FOUR_OBJECT_CORR = np.array([
    [1.0, 0.8, 0.7, 0.8],
    [0.8, 1.0, 0.6, 0.7],
    [0.7, 0.6, 1.0, 0.6],
    [0.8, 0.7, 0.6, 1.0],
])
FOUR_OBJECT_MU = np.array([0.5, 0.0, -0.5, 0.0])

# Correlation estimates for the six university programs (alphabetical
# order) under the row-sum identification with a free pair-noise
# variance; the first row sums to one off the diagonal.
UNIVERSITY_CORR = np.array([
    [1.000, 0.058, 0.724, 0.171, -0.303, 0.350],
    [0.058, 1.000, 0.185, 0.054, -0.139, 0.316],
    [0.724, 0.185, 1.000, 0.331, -0.298, 0.339],
    [0.171, 0.054, 0.331, 1.000, -0.496, 0.144],
    [-0.303, -0.139, -0.298, -0.496, 1.000, 0.287],
    [0.350, 0.316, 0.339, 0.144, 0.287, 1.000],
])


def takane_spec(n=4, H=2):
    return DependenceSpec(kind="takane", n_objects=n, H=H)


def random_correlation(rng, n):
    """A draw that is comfortably positive definite with unit diagonal."""
    W = rng.normal(size=(n, n + 2))
    S = W @ W.T + n * np.eye(n)
    d = 1.0 / np.sqrt(np.diag(S))
    return S * np.outer(d, d)


class TestPairEffectStructure:
    def test_incidence_matrix_for_three_objects(self):
        # comparisons (1,2), (1,3), (2,3) against effects
        # V_1(2), V_1(3), V_2(1), V_2(3), V_3(1), V_3(2)
        expected = np.array([
            [1.0, 0.0, -1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, -1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0, -1.0],
        ])
        np.testing.assert_array_equal(pair_effect_design(3), expected)

    def test_effect_covariance_blocks(self):
        cov = default_pair_effect_cov(0.4, 3)
        assert cov.shape == (6, 6)
        np.testing.assert_array_equal(np.diag(cov), np.ones(6))
        # V_1(2) and V_1(3) share judged object 1
        assert cov[0, 1] == 0.4
        # V_1(2) and V_2(1) do not
        assert cov[0, 2] == 0.0

    @pytest.mark.parametrize("n", [3, 4, 5, 6])
    @pytest.mark.parametrize("b", [-0.2, 0.0, 0.5, 0.9])
    def test_projected_effects_collapse_to_two_terms(self, n, b):
        # B Sigma_V(b) B' equals b A A' + 2 (1 - b) I for the
        # shared-object builder
        if n > 2 and b < -1.0 / (n - 2):
            pytest.skip("b outside the admissible range")
        B = pair_effect_design(n)
        lhs = B @ default_pair_effect_cov(b, n) @ B.T
        A = full_design(n).values
        rhs = b * (A @ A.T) + 2.0 * (1.0 - b) * np.eye(A.shape[0])
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestBuildCovariance:
    def test_stimulus_covariance_expansion_by_hand(self):
        # Var(Z_ij) = 2 - 2 sigma_ij + omega^2 and
        # Cov(Z_ij, Z_kl) = sigma_ik - sigma_il - sigma_jk + sigma_jl,
        # expanded entry by entry for the four-object configuration
        params = StructuralParams(mu=FOUR_OBJECT_MU,
                                  sigma_t=FOUR_OBJECT_CORR,
                                  tau=np.zeros(0), omega_sq=1.0)
        expected = np.array([
            [1.4, 0.1, 0.1, -0.3, -0.3, 0.0],
            [0.1, 1.6, 0.1, 0.5, 0.0, -0.5],
            [0.1, 0.1, 1.4, 0.0, 0.3, 0.3],
            [-0.3, 0.5, 0.0, 1.8, 0.3, -0.5],
            [-0.3, 0.0, 0.3, 0.3, 1.6, 0.3],
            [0.0, -0.5, 0.3, -0.5, 0.3, 1.8],
        ])
        got = build_covariance(takane_spec(), params, full_design(4))
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_identity_stimulus_covariance_gives_overlap_pattern(self):
        # with Sigma_T = I the stimulus part is A A': diagonal 2,
        # +/-1 for comparisons sharing an object, 0 otherwise
        params = StructuralParams(mu=np.zeros(4), sigma_t=np.eye(4),
                                  tau=np.zeros(0), omega_sq=1.0)
        got = build_covariance(takane_spec(), params, full_design(4))
        overlap = np.array([
            [2.0, 1.0, 1.0, -1.0, -1.0, 0.0],
            [1.0, 2.0, 1.0, 1.0, 0.0, -1.0],
            [1.0, 1.0, 2.0, 0.0, 1.0, 1.0],
            [-1.0, 1.0, 0.0, 2.0, 1.0, -1.0],
            [-1.0, 0.0, 1.0, 1.0, 2.0, 1.0],
            [0.0, -1.0, 1.0, -1.0, 1.0, 2.0],
        ])
        np.testing.assert_allclose(got - np.eye(6), overlap, atol=1e-12)

    def test_object_random_effect_reduces_to_identity(self):
        spec = DependenceSpec(kind="object-random-effect", n_objects=4)
        params = StructuralParams(mu=np.zeros(4), sigma_t=np.zeros((4, 4)),
                                  tau=np.zeros(0), sigma_sq=0.0)
        got = build_covariance(spec, params, full_design(4))
        np.testing.assert_allclose(got, np.eye(6), atol=1e-14)

    def test_object_random_effect_scales_overlap(self):
        spec = DependenceSpec(kind="object-random-effect", n_objects=4)
        params = StructuralParams(mu=np.zeros(4), sigma_t=np.zeros((4, 4)),
                                  tau=np.zeros(0), sigma_sq=0.5)
        got = build_covariance(spec, params, full_design(4))
        A = full_design(4).values
        np.testing.assert_allclose(got, 0.5 * (A @ A.T) + np.eye(6),
                                   atol=1e-12)

    def test_independent_kind_is_identity(self):
        spec = DependenceSpec(kind="independent", n_objects=5)
        params = StructuralParams(mu=np.zeros(5), sigma_t=np.eye(5),
                                  tau=np.zeros(0))
        got = build_covariance(spec, params, full_design(5))
        np.testing.assert_array_equal(got, np.eye(10))

    def test_pair_effect_model_variances_by_hand(self):
        # Var(Z_ij) = var_i + var_j - 2 cov_ij + 2 for i, j < n and
        # var_i + 2 when j is the reference object
        spec = DependenceSpec(kind="tsai-bockenholt", n_objects=4)
        sigma = np.array([[1.5, 1.0, 1.3], [1.0, 4.0, 2.5],
                          [1.3, 2.5, 3.0]])
        params = StructuralParams(mu=np.array([-0.2, 1.0, -1.5]),
                                  sigma_t=sigma, tau=np.zeros(0), b=0.5)
        got = build_covariance(spec, params, full_design(4))
        np.testing.assert_allclose(np.diag(got),
                                   [5.5, 3.9, 3.5, 4.0, 6.0, 5.0],
                                   atol=1e-12)

    def test_pair_effect_model_matches_dense_construction(self):
        spec = DependenceSpec(kind="tsai-bockenholt", n_objects=4)
        sigma = np.array([[1.5, 1.0, 1.3], [1.0, 4.0, 2.5],
                          [1.3, 2.5, 3.0]])
        params = StructuralParams(mu=np.array([-0.2, 1.0, -1.5]),
                                  sigma_t=sigma, tau=np.zeros(0), b=0.5)
        A = full_design(4).values
        B = pair_effect_design(4)
        dense = (A[:, :3] @ sigma @ A[:, :3].T
                 + B @ default_pair_effect_cov(0.5, 4) @ B.T)
        got = build_covariance(spec, params, full_design(4))
        np.testing.assert_allclose(got, dense, atol=1e-12)

    def test_non_positive_definite_error_carries_eigenvalue(self):
        params = StructuralParams(mu=np.zeros(4), sigma_t=np.eye(4),
                                  tau=np.zeros(0), omega_sq=1e-14)
        with pytest.raises(NonPositiveDefiniteError) as err:
            build_covariance(takane_spec(), params, full_design(4))
        assert err.value.smallest_eigenvalue < 1e-10

    def test_wrong_reduced_dimension_rejected(self):
        spec = DependenceSpec(kind="tsai-bockenholt", n_objects=4)
        params = StructuralParams(mu=np.zeros(3), sigma_t=np.eye(4),
                                  tau=np.zeros(0), b=0.2)
        with pytest.raises(ValueError, match="dimension 3"):
            build_covariance(spec, params, full_design(4))


class TestStandardize:
    def test_three_object_model_by_hand(self):
        # Sigma_T = I, omega^2 = 1: each comparison has variance 3,
        # comparisons sharing an object correlate +/- 1/3
        params = StructuralParams(mu=np.array([0.3, -0.1, 0.0]),
                                  sigma_t=np.eye(3), tau=np.zeros(0),
                                  omega_sq=1.0)
        model = standardize(takane_spec(3), params, full_design(3))
        s = np.sqrt(3.0)
        np.testing.assert_allclose(model.tau_star,
                                   [-0.4 / s, -0.3 / s, 0.1 / s],
                                   atol=1e-12)
        corr = model.correlation.values
        np.testing.assert_allclose(np.diag(corr), np.ones(3), atol=1e-14)
        np.testing.assert_allclose(corr[0, 1], 1.0 / 3.0, atol=1e-12)
        np.testing.assert_allclose(corr[0, 2], -1.0 / 3.0, atol=1e-12)
        np.testing.assert_allclose(corr[1, 2], 1.0 / 3.0, atol=1e-12)

    def test_four_object_threshold_scaling(self):
        params = StructuralParams(mu=FOUR_OBJECT_MU,
                                  sigma_t=FOUR_OBJECT_CORR,
                                  tau=np.zeros(0), omega_sq=1.0)
        model = standardize(takane_spec(), params, full_design(4))
        np.testing.assert_allclose(model.tau_star[0], -0.5 / np.sqrt(1.4),
                                   atol=1e-12)
        np.testing.assert_allclose(model.cutpoints[:, 0], model.tau_star,
                                   atol=1e-14)

    def test_ordinal_cutpoints(self):
        tau2 = 0.25
        params = StructuralParams(mu=FOUR_OBJECT_MU,
                                  sigma_t=FOUR_OBJECT_CORR,
                                  tau=np.array([-tau2, tau2]),
                                  omega_sq=1.0)
        model = standardize(takane_spec(H=3), params, full_design(4))
        m = pair_means(takane_spec(H=3), params, full_design(4))
        sd = np.sqrt(np.diag(build_covariance(takane_spec(H=3), params,
                                              full_design(4))))
        np.testing.assert_allclose(model.cutpoints[:, 0], (-tau2 - m) / sd,
                                   atol=1e-12)
        np.testing.assert_allclose(model.cutpoints[:, 1], (tau2 - m) / sd,
                                   atol=1e-12)
        assert model.cutpoints.shape == (6, 2)


class TestContrastsAndPerturbations:
    def test_contrast_matrix_shape(self):
        K = contrast_matrix(3)
        np.testing.assert_array_equal(K, [[1.0, 0.0, -1.0],
                                          [0.0, 1.0, -1.0]])

    def test_two_distinct_covariances_share_contrasts(self):
        # the identity and its perturbation by d 1' + 1 d' with
        # d = (-1/8, 1/4, 1/8) both contrast to [[2, 1], [1, 2]]
        sigma_1 = np.eye(3)
        d = np.array([-0.125, 0.25, 0.125])
        sigma_2 = sigma_1 + np.outer(d, np.ones(3)) + np.outer(np.ones(3), d)
        np.testing.assert_allclose(
            sigma_2,
            [[0.750, 0.125, 0.0], [0.125, 1.5, 0.375], [0.0, 0.375, 1.250]],
            atol=1e-15)
        K = contrast_matrix(3)
        target = np.array([[2.0, 1.0], [1.0, 2.0]])
        np.testing.assert_allclose(K @ sigma_1 @ K.T, target, atol=1e-15)
        np.testing.assert_allclose(K @ sigma_2 @ K.T, target, atol=1e-15)

    def test_rank_one_perturbations_leave_contrasts_alone(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(3, 7))
            sigma = random_correlation(rng, n)
            d = rng.normal(scale=0.05, size=n)
            perturbed = (sigma + np.outer(d, np.ones(n))
                         + np.outer(np.ones(n), d))
            K = contrast_matrix(n)
            np.testing.assert_allclose(K @ perturbed @ K.T,
                                       K @ sigma @ K.T, atol=1e-12)

    def test_perturbations_leave_latent_covariance_alone(self):
        # A 1 = 0, so the comparison covariance cannot distinguish
        # Sigma_T from Sigma_T + d 1' + 1 d'
        rng = np.random.default_rng(11)
        spec = takane_spec()
        A = full_design(4)
        for _ in range(20):
            sigma = random_correlation(rng, 4)
            d = rng.normal(scale=0.05, size=4)
            base = StructuralParams(mu=FOUR_OBJECT_MU, sigma_t=sigma,
                                    tau=np.zeros(0), omega_sq=1.0)
            moved = StructuralParams(
                mu=FOUR_OBJECT_MU,
                sigma_t=sigma + np.outer(d, np.ones(4))
                + np.outer(np.ones(4), d),
                tau=np.zeros(0), omega_sq=1.0)
            np.testing.assert_allclose(build_covariance(spec, moved, A),
                                       build_covariance(spec, base, A),
                                       atol=1e-12)


class TestIdentificationLayouts:
    def test_fixed_omega_layout_size_and_names(self):
        layout = apply_identification(
            takane_spec(),
            IdentificationStrategy(kind="unit-diagonal-omega-fixed"))
        assert layout.size == 9
        assert layout.n_constraints == 6
        assert layout.natural_names == (
            "mu_1", "mu_2", "mu_3",
            "corr_12", "corr_13", "corr_14",
            "corr_23", "corr_24", "corr_34")

    def test_row_sum_layout_size_for_six_objects(self):
        layout = apply_identification(
            takane_spec(n=6, H=3),
            IdentificationStrategy(kind="unit-diagonal-row-sum"))
        # 5 worths + 14 free correlations + noise variance + threshold
        assert layout.size == 21
        assert layout.n_constraints == 8
        assert layout.natural_names[-2:] == ("omega_sq", "tau_2")
        assert len(layout.natural_names) == 22  # includes the implied one

    def test_reduced_differences_layout_size(self):
        spec = DependenceSpec(kind="tsai-bockenholt", n_objects=4)
        layout = apply_identification(
            spec, IdentificationStrategy(kind="reduced-differences"))
        assert layout.size == 10
        assert layout.n_constraints == 5
        assert layout.natural_names == (
            "mu_diff_1", "mu_diff_2", "mu_diff_3",
            "var_diff_1", "var_diff_2", "var_diff_3",
            "cov_diff_12", "cov_diff_13", "cov_diff_23", "b")

    @pytest.mark.parametrize("kind,spec,seed", [
        ("unit-diagonal-omega-fixed", takane_spec(), 21),
        ("unit-diagonal-row-sum", takane_spec(n=6, H=3), 22),
        ("reduced-differences",
         DependenceSpec(kind="tsai-bockenholt", n_objects=4, H=3), 23),
    ])
    def test_free_vector_round_trip(self, kind, spec, seed):
        layout = apply_identification(spec,
                                      IdentificationStrategy(kind=kind))
        rng = np.random.default_rng(seed)
        for _ in range(10):
            psi = rng.normal(scale=0.6, size=layout.size)
            params = layout.extract(psi)
            np.testing.assert_allclose(layout.embed(params), psi,
                                       atol=1e-10)

    def test_extract_satisfies_constraints(self):
        layout = apply_identification(
            takane_spec(n=6, H=3),
            IdentificationStrategy(kind="unit-diagonal-row-sum", anchor=0,
                                   reference=-1))
        rng = np.random.default_rng(3)
        for _ in range(10):
            params = layout.extract(rng.normal(scale=0.4, size=layout.size))
            np.testing.assert_allclose(np.diag(params.sigma_t), np.ones(6),
                                       atol=1e-14)
            assert params.mu[5] == 0.0
            np.testing.assert_allclose(params.sigma_t[0].sum() - 1.0, 1.0,
                                       atol=1e-12)
            assert params.omega_sq > 0

    def test_reduced_extract_keeps_b_in_range(self):
        spec = DependenceSpec(kind="tsai-bockenholt", n_objects=4)
        layout = apply_identification(
            spec, IdentificationStrategy(kind="reduced-differences"))
        rng = np.random.default_rng(5)
        for _ in range(20):
            params = layout.extract(rng.normal(scale=2.0, size=layout.size))
            assert -0.5 < params.b < 1.0
            # covariance from a Cholesky factor is positive definite
            assert np.linalg.eigvalsh(params.sigma_t)[0] > 0

    def test_known_configuration_round_trips_to_natural_values(self):
        layout = apply_identification(
            takane_spec(),
            IdentificationStrategy(kind="unit-diagonal-omega-fixed"))
        params = StructuralParams(mu=FOUR_OBJECT_MU,
                                  sigma_t=FOUR_OBJECT_CORR,
                                  tau=np.zeros(0), omega_sq=1.0)
        psi = layout.embed(params)
        np.testing.assert_allclose(
            layout.natural(psi),
            [0.5, 0.0, -0.5, 0.8, 0.7, 0.8, 0.6, 0.7, 0.6], atol=1e-12)

    def test_reduced_known_configuration_round_trips(self):
        spec = DependenceSpec(kind="tsai-bockenholt", n_objects=4)
        layout = apply_identification(
            spec, IdentificationStrategy(kind="reduced-differences"))
        sigma = np.array([[1.5, 1.0, 1.3], [1.0, 4.0, 2.5],
                          [1.3, 2.5, 3.0]])
        params = StructuralParams(mu=np.array([-0.2, 1.0, -1.5]),
                                  sigma_t=sigma, tau=np.zeros(0), b=0.5)
        psi = layout.embed(params)
        np.testing.assert_allclose(
            layout.natural(psi),
            [-0.2, 1.0, -1.5, 1.5, 4.0, 3.0, 1.0, 1.3, 2.5, 0.5],
            atol=1e-12)

    def test_default_start_is_feasible(self):
        for spec, kind in [
            (takane_spec(), "unit-diagonal-omega-fixed"),
            (takane_spec(n=6, H=3), "unit-diagonal-row-sum"),
            (DependenceSpec(kind="tsai-bockenholt", n_objects=4),
             "reduced-differences"),
        ]:
            layout = apply_identification(spec,
                                          IdentificationStrategy(kind=kind))
            psi = layout.default_start()
            params = layout.extract(psi)
            cov = build_covariance(spec, params, full_design(spec.n_objects))
            assert np.linalg.eigvalsh(cov)[0] > 0
            if spec.H >= 3:
                assert params.tau[-1] > 0

    def test_default_start_accepts_warm_values(self):
        layout = apply_identification(
            takane_spec(n=6, H=3),
            IdentificationStrategy(kind="unit-diagonal-row-sum"))
        worths = np.array([1.3, 0.7, 0.3, 0.4, 0.4, 0.0])
        psi = layout.default_start(worths=worths,
                                   thresholds=np.array([-0.2, 0.2]))
        params = layout.extract(psi)
        np.testing.assert_allclose(params.mu, worths, atol=1e-12)
        np.testing.assert_allclose(params.tau, [-0.2, 0.2], atol=1e-12)

    def test_threshold_round_trip_for_wider_scales(self):
        for H in (3, 4, 5):
            layout = apply_identification(
                takane_spec(n=4, H=H),
                IdentificationStrategy(kind="unit-diagonal-omega-fixed"))
            rng = np.random.default_rng(H)
            psi = rng.normal(scale=0.5, size=layout.size)
            params = layout.extract(psi)
            assert params.tau.shape == (H - 1,)
            np.testing.assert_allclose(params.tau, -params.tau[::-1],
                                       atol=1e-14)
            assert np.all(np.diff(params.tau) >= 0)
            np.testing.assert_allclose(layout.embed(params), psi,
                                       atol=1e-10)

    def test_strategy_spec_mismatches_rejected(self):
        with pytest.raises(ValueError, match="pair-effect"):
            apply_identification(
                takane_spec(),
                IdentificationStrategy(kind="reduced-differences"))
        with pytest.raises(ValueError, match="stimulus-covariance"):
            apply_identification(
                DependenceSpec(kind="tsai-bockenholt", n_objects=4),
                IdentificationStrategy(kind="unit-diagonal-row-sum"))

    def test_wrong_psi_length_rejected(self):
        layout = apply_identification(
            takane_spec(),
            IdentificationStrategy(kind="unit-diagonal-omega-fixed"))
        with pytest.raises(ValueError, match="expected 9"):
            layout.extract(np.zeros(8))

    def test_independent_layout_has_worths_and_thresholds_only(self):
        spec = DependenceSpec(kind="independent", n_objects=3, H=3)
        layout = apply_identification(
            spec, IdentificationStrategy(kind="unit-diagonal-omega-fixed"))
        assert layout.names == ("mu_1", "mu_2", "log_tau_2")
        assert layout.natural_names == ("mu_1", "mu_2", "tau_2")
        assert layout.n_constraints == 1
        psi = np.array([0.4, -0.2, np.log(0.3)])
        params = layout.extract(psi)
        np.testing.assert_allclose(params.mu, [0.4, -0.2, 0.0])
        np.testing.assert_allclose(params.sigma_t, np.eye(3))
        np.testing.assert_allclose(params.tau, [-0.3, 0.3], atol=1e-12)
        np.testing.assert_allclose(layout.embed(params), psi, atol=1e-12)
        cov = build_covariance(spec, params, full_design(3))
        np.testing.assert_allclose(cov, np.eye(3))

    def test_independent_rejects_covariance_strategies(self):
        spec = DependenceSpec(kind="independent", n_objects=3)
        with pytest.raises(ValueError, match="no covariance"):
            apply_identification(
                spec, IdentificationStrategy(kind="unit-diagonal-row-sum"))


class TestEquivalenceRotation:
    def _university_params(self):
        mu = np.array([0.405, 1.346, 0.308, 0.748, 0.371, 0.0])
        return StructuralParams(mu=mu, sigma_t=UNIVERSITY_CORR,
                                tau=np.array([-0.205, 0.205]),
                                omega_sq=0.180)

    def test_rotation_scales_components(self):
        params = self._university_params()
        rotated = equivalence_rotation(params, 1.1)
        np.testing.assert_allclose(rotated.mu, np.sqrt(1.1) * params.mu,
                                   atol=1e-14)
        np.testing.assert_allclose(rotated.tau, np.sqrt(1.1) * params.tau,
                                   atol=1e-14)
        np.testing.assert_allclose(rotated.omega_sq, 1.1 * 0.180,
                                   atol=1e-14)
        np.testing.assert_allclose(np.diag(rotated.sigma_t), np.ones(6),
                                   atol=1e-14)

    def test_rotation_preserves_standardized_model(self):
        spec = takane_spec(n=6, H=3)
        A = full_design(6)
        params = self._university_params()
        base = standardize(spec, params, A)
        for c in (0.5, 0.9, 1.13):
            rotated = equivalence_rotation(params, c)
            moved = standardize(spec, rotated, A)
            np.testing.assert_allclose(moved.tau_star, base.tau_star,
                                       atol=1e-8)
            np.testing.assert_allclose(moved.cutpoints, base.cutpoints,
                                       atol=1e-8)
            np.testing.assert_allclose(moved.correlation.values,
                                       base.correlation.values, atol=1e-8)

    @given(st.floats(min_value=0.05, max_value=1.45))
    @settings(max_examples=30, deadline=None)
    def test_rotation_invariance_property(self, c):
        spec = takane_spec()
        A = full_design(4)
        params = StructuralParams(mu=FOUR_OBJECT_MU,
                                  sigma_t=FOUR_OBJECT_CORR,
                                  tau=np.zeros(0), omega_sq=1.0)
        lo, hi = admissible_c_interval(FOUR_OBJECT_CORR)
        if not lo + 1e-6 < c < hi - 1e-6:
            return
        base = standardize(spec, params, A)
        moved = standardize(spec, equivalence_rotation(params, c), A)
        np.testing.assert_allclose(moved.tau_star, base.tau_star,
                                   atol=1e-10)
        np.testing.assert_allclose(moved.correlation.values,
                                   base.correlation.values, atol=1e-10)

    def test_admissible_interval_matches_closed_form(self):
        # for an equicorrelation matrix the upper endpoint is
        # n / ((n - 1) (1 - rho)) and every c in (0, 1] is admissible
        for n, rho in [(3, 0.0), (4, 0.3), (6, 0.2)]:
            E = np.full((n, n), rho)
            np.fill_diagonal(E, 1.0)
            lo, hi = admissible_c_interval(E)
            np.testing.assert_allclose(hi, n / ((n - 1) * (1.0 - rho)),
                                       rtol=1e-6)
            assert lo < 1e-6

    def test_university_rotation_extremes(self):
        lo, hi = admissible_c_interval(UNIVERSITY_CORR)
        assert 1.125 < hi < 1.14
        rotated = equivalence_rotation(self._university_params(), 1.13)
        np.testing.assert_allclose(rotated.sigma_t[3, 4], -0.690,
                                   atol=5e-4)
        # the most negative correlation approaches its admissible floor
        edge = equivalence_rotation(self._university_params(), hi - 1e-6)
        assert edge.sigma_t[3, 4] < rotated.sigma_t[3, 4]

    def test_rotation_outside_interval_reports_it(self):
        params = self._university_params()
        with pytest.raises(NonPositiveDefiniteError,
                           match="admissible interval"):
            equivalence_rotation(params, 1.5)

    def test_nonpositive_c_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            equivalence_rotation(self._university_params(), 0.0)

    def test_interval_requires_positive_definite_input(self):
        bad = np.full((4, 4), -0.9)
        np.fill_diagonal(bad, 1.0)
        with pytest.raises(NonPositiveDefiniteError):
            admissible_c_interval(bad)


class TestSerialization:
    def test_spec_round_trip(self):
        spec = DependenceSpec(kind="tsai-bockenholt", n_objects=5, H=3)
        doc = spec.to_json_dict()
        assert DependenceSpec.from_json_dict(doc) == spec

    def test_strategy_round_trip(self):
        strat = IdentificationStrategy(kind="unit-diagonal-row-sum",
                                       reference=2, anchor=1)
        doc = strat.to_json_dict()
        assert IdentificationStrategy.from_json_dict(doc) == strat

    def test_unknown_kinds_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            DependenceSpec(kind="factorial", n_objects=4)
        with pytest.raises(ValueError, match="kind"):
            IdentificationStrategy(kind="fixed-trace")
        with pytest.raises(ValueError, match="builder"):
            DependenceSpec(kind="tsai-bockenholt", n_objects=4,
                           pair_effect_builder="unknown")
