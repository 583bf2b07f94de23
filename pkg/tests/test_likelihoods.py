"""Collapsed likelihoods against independent oracles: 1-D/2-D quadrature over
the confusion/truth simplexes, hand-evaluated gamma ratios, and the
singleton-cluster equivalence with the independent per-user model."""

import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import gammaln

from crowdclust.data import (
    ClusterParams,
    Hyperparameters,
    LabelMatrix,
    Partition,
    build_counts,
)
from crowdclust.errors import ValidationError
from crowdclust.likelihoods import (
    ModelKind,
    log_collapsed_likelihood_cbcc,
    log_collapsed_likelihood_hcbcc,
    log_collapsed_z_prior,
    log_crp_partition,
    prior_correlation_cbcc,
)
from crowdclust.posterior import set_partitions


def hypers_c2(beta=2.0, eta1=0.5, epsilon=1.0, mu1=0.5):
    return Hyperparameters(
        eta=np.array([[eta1, 1 - eta1], [1 - eta1, eta1]]),
        beta=np.array([beta, beta]),
        epsilon=epsilon,
        mu=np.array([mu1, 1 - mu1]),
    )


def quad_row_integral(n_row, beta_t, eta_row):
    """1-D quadrature oracle for one confusion row with C = 2:
    integral of p^n1 (1-p)^n2 under Beta(beta eta1, beta eta2)."""
    a, b = beta_t * eta_row[0], beta_t * eta_row[1]
    const = math.exp(gammaln(a + b) - gammaln(a) - gammaln(b))

    def integrand(p):
        return const * p ** (n_row[0] + a - 1) * (1 - p) ** (n_row[1] + b - 1)

    val, err = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-12, epsrel=1e-10)
    assert err < 1e-8
    return val


class TestModelKind:
    def test_parse(self):
        assert ModelKind.parse("HCBCC") is ModelKind.HCBCC
        assert ModelKind.parse("mv") is ModelKind.MAJORITY_VOTE
        with pytest.raises(ValidationError, match="unknown model"):
            ModelKind.parse("em")


class TestCbccCollapsedLikelihood:
    def test_single_annotation_predictive(self):
        labels = LabelMatrix.from_entries(1, 1, 2, [(0, 0, 1)])
        counts = build_counts(labels, np.array([1]), Partition.single_cluster(1))
        value = log_collapsed_likelihood_cbcc(counts, hypers_c2(beta=2.0, eta1=0.5))
        assert value == pytest.approx(math.log(0.5), abs=1e-12)

    def test_zero_annotations(self):
        labels = LabelMatrix.from_entries(3, 2, 2, [])
        counts = build_counts(labels, np.array([1, 2, 1]), Partition.single_cluster(2))
        assert log_collapsed_likelihood_cbcc(counts, hypers_c2()) == 0.0

    def test_against_quadrature_one_cluster(self):
        entries = [(0, 0, 1), (0, 1, 2), (1, 0, 1), (1, 1, 1)]
        labels = LabelMatrix.from_entries(2, 2, 2, entries)
        z = np.array([1, 2])
        hypers = hypers_c2(beta=3.0, eta1=0.7)
        counts = build_counts(labels, z, Partition.single_cluster(2))
        block = counts.cluster_block(0)
        expected = sum(
            math.log(quad_row_integral(block[t], hypers.beta[t], hypers.eta[t]))
            for t in range(2)
        )
        got = log_collapsed_likelihood_cbcc(counts, hypers)
        assert got == pytest.approx(expected, rel=1e-8)

    def test_against_quadrature_two_clusters(self):
        entries = [(0, 0, 1), (0, 1, 2), (1, 0, 2), (1, 1, 1), (2, 1, 2)]
        labels = LabelMatrix.from_entries(3, 2, 2, entries)
        z = np.array([2, 1, 1])
        hypers = hypers_c2(beta=1.5, eta1=0.6)
        counts = build_counts(labels, z, Partition.singletons(2))
        expected = 0.0
        for handle in (0, 1):
            block = counts.cluster_block(handle)
            for t in range(2):
                expected += math.log(
                    quad_row_integral(block[t], hypers.beta[t], hypers.eta[t])
                )
        got = log_collapsed_likelihood_cbcc(counts, hypers)
        assert got == pytest.approx(expected, rel=1e-8)

    def test_singleton_partition_equals_independent_model(self):
        # independent route: per-user Dirichlet-multinomial, coded directly here
        rng = np.random.default_rng(42)
        entries = [
            (i, l, int(rng.integers(1, 3)))
            for i in range(5)
            for l in range(4)
            if rng.random() < 0.8
        ]
        labels = LabelMatrix.from_entries(5, 4, 2, entries)
        z = rng.integers(1, 3, size=5)
        hypers = hypers_c2(beta=3.0, eta1=0.7)
        counts = build_counts(labels, z, Partition.singletons(4))
        direct = 0.0
        for l in range(4):
            block = counts.user_block(l)
            for t in range(2):
                n_row = block[t].sum()
                direct += gammaln(hypers.beta[t]) - gammaln(n_row + hypers.beta[t])
                for c in range(2):
                    be = hypers.beta[t] * hypers.eta[t, c]
                    direct += gammaln(block[t, c] + be) - gammaln(be)
        got = log_collapsed_likelihood_cbcc(counts, hypers)
        assert abs(got - direct) < 1e-10

    def test_user_exchangeability(self):
        rng = np.random.default_rng(3)
        entries = [
            (i, l, int(rng.integers(1, 3)))
            for i in range(4)
            for l in range(4)
            if rng.random() < 0.7
        ]
        labels = LabelMatrix.from_entries(4, 4, 2, entries)
        z = rng.integers(1, 3, size=4)
        assignment = np.array([0, 0, 1, 2])
        hypers = hypers_c2(beta=2.5, eta1=0.65)
        counts = build_counts(labels, z, Partition(assignment))
        base = log_collapsed_likelihood_cbcc(counts, hypers)
        perm = np.array([2, 0, 3, 1])
        entries_p = [(i, int(perm[l]), y)
                     for i, l, y in zip(labels.instances, labels.users, labels.labels)]
        labels_p = LabelMatrix.from_entries(4, 4, 2, entries_p)
        assignment_p = np.empty(4, dtype=np.int64)
        assignment_p[perm] = assignment
        counts_p = build_counts(labels_p, z, Partition(assignment_p))
        permuted = log_collapsed_likelihood_cbcc(counts_p, hypers)
        assert permuted == pytest.approx(base, abs=1e-12)

    def test_pure_function(self):
        labels = LabelMatrix.from_entries(2, 2, 2, [(0, 0, 1), (1, 1, 2)])
        counts = build_counts(labels, np.array([1, 2]), Partition.single_cluster(2))
        hypers = hypers_c2()
        assert log_collapsed_likelihood_cbcc(counts, hypers) == log_collapsed_likelihood_cbcc(
            counts, hypers
        )


class TestCollapsedZPrior:
    def test_single_instance(self):
        labels = LabelMatrix.from_entries(1, 1, 2, [(0, 0, 1)])
        counts = build_counts(labels, np.array([1]), Partition.single_cluster(1))
        hypers = hypers_c2(epsilon=1.0, mu1=0.5)
        assert log_collapsed_z_prior(counts, hypers) == pytest.approx(
            math.log(0.5), abs=1e-12
        )

    def test_telescoping_all_one_category(self):
        N = 7
        labels = LabelMatrix.from_entries(N, 1, 2, [(i, 0, 1) for i in range(N)])
        counts = build_counts(labels, np.ones(N, dtype=int), Partition.single_cluster(1))
        hypers = hypers_c2(epsilon=2.0, mu1=0.5)  # epsilon mu_1 = 1
        assert log_collapsed_z_prior(counts, hypers) == pytest.approx(
            math.log(1.0 / (N + 1)), abs=1e-12
        )

    def test_against_simplex_quadrature_c3(self):
        z = np.array([1, 1, 1, 2, 2, 3])
        labels = LabelMatrix.from_entries(6, 1, 3, [(0, 0, 1)])
        partition = Partition.single_cluster(1)
        epsilon, mu = 2.4, np.array([0.5, 0.3, 0.2])
        hypers = Hyperparameters(
            eta=np.full((3, 3), 1 / 3), beta=np.ones(3), epsilon=epsilon, mu=mu
        )
        counts = build_counts(labels, z, partition)
        n = counts.truth_counts
        em = epsilon * mu
        const = math.exp(gammaln(epsilon) - gammaln(em).sum())

        def integrand(t2, t1):
            t3 = 1.0 - t1 - t2
            if t3 <= 0.0:
                return 0.0
            return const * (
                t1 ** (n[0] + em[0] - 1)
                * t2 ** (n[1] + em[1] - 1)
                * t3 ** (n[2] + em[2] - 1)
            )

        val, err = integrate.dblquad(
            integrand, 0.0, 1.0, 0.0, lambda t1: 1.0 - t1, epsabs=1e-11, epsrel=1e-9
        )
        assert err < 1e-8
        assert log_collapsed_z_prior(counts, hypers) == pytest.approx(
            math.log(val), rel=1e-7
        )


class TestHcbccCollapsedLikelihood:
    def test_no_annotations(self):
        labels = LabelMatrix.from_entries(2, 1, 2, [])
        partition = Partition.single_cluster(1)
        counts = build_counts(labels, np.array([1, 2]), partition)
        params = {0: ClusterParams(np.array([2.0, 2.0]), np.full((2, 2), 0.5))}
        assert log_collapsed_likelihood_hcbcc(counts, partition, params, hypers_c2()) == 0.0

    def test_hand_value(self):
        # one user, three labels on truth-1 instances: counts (2, 1) in row 1
        entries = [(0, 0, 1), (1, 0, 1), (2, 0, 2)]
        labels = LabelMatrix.from_entries(3, 1, 2, entries)
        partition = Partition.single_cluster(1)
        counts = build_counts(labels, np.array([1, 1, 1]), partition)
        params = {0: ClusterParams(np.array([2.0, 2.0]), np.full((2, 2), 0.5))}
        got = log_collapsed_likelihood_hcbcc(counts, partition, params, hypers_c2())
        assert got == pytest.approx(math.log(1.0 / 12.0), abs=1e-12)

    def test_missing_cluster_params(self):
        labels = LabelMatrix.from_entries(1, 1, 2, [(0, 0, 1)])
        partition = Partition.single_cluster(1)
        counts = build_counts(labels, np.array([1]), partition)
        with pytest.raises(ValidationError, match="missing parameters"):
            log_collapsed_likelihood_hcbcc(counts, partition, {}, hypers_c2())

    def test_high_precision_limit_matches_cbcc(self):
        rng = np.random.default_rng(9)
        entries = [
            (i, l, int(rng.integers(1, 3)))
            for i in range(6)
            for l in range(4)
            if rng.random() < 0.8
        ]
        labels = LabelMatrix.from_entries(6, 4, 2, entries)
        z = rng.integers(1, 3, size=6)
        partition = Partition(np.array([0, 0, 1, 1]))
        counts = build_counts(labels, z, partition)
        eta = np.array([[0.7, 0.3], [0.3, 0.7]])
        big = 1e9
        params = {
            h: ClusterParams(np.full(2, big), eta.copy()) for h in partition.sizes
        }
        hier = log_collapsed_likelihood_hcbcc(counts, partition, params, hypers_c2())
        flat_hypers = Hyperparameters(
            eta=eta, beta=np.full(2, big), epsilon=1.0, mu=np.array([0.5, 0.5])
        )
        flat = log_collapsed_likelihood_cbcc(counts, flat_hypers)
        assert abs(hier - flat) < 1e-4


class TestCrpPartitionPmf:
    def test_sums_to_one(self):
        for L, alpha in ((3, 1.0), (4, 0.5), (5, 2.5)):
            total = sum(
                math.exp(log_crp_partition([len(b) for b in blocks], alpha, L))
                for blocks in set_partitions(range(L))
            )
            assert total == pytest.approx(1.0, rel=1e-12)

    def test_single_user(self):
        assert log_crp_partition([1], 7.3, 1) == pytest.approx(0.0, abs=1e-12)


class TestPriorCorrelation:
    def test_same_category_value(self):
        assert prior_correlation_cbcc(1.0, 3.0, [0.5, 0.5], 1, 1) == pytest.approx(0.125)

    def test_cross_category_value(self):
        got = prior_correlation_cbcc(1.0, 3.0, [0.7, 0.3], 1, 2)
        assert got == pytest.approx(-0.125 * math.sqrt((0.7 * 0.3) / (0.3 * 0.7)))
        assert got == pytest.approx(-0.125)

    def test_alpha_limit_vanishes(self):
        for a, b in ((1, 1), (1, 2)):
            assert abs(prior_correlation_cbcc(1e4, 3.0, [0.6, 0.4], a, b)) < 1e-3
        assert prior_correlation_cbcc(1e12, 3.0, [0.6, 0.4], 1, 1) == pytest.approx(
            0.0, abs=1e-11
        )

    def test_degenerate_eta(self):
        with pytest.raises(ValidationError, match="zero"):
            prior_correlation_cbcc(1.0, 2.0, [1.0, 0.0], 1, 2)

    def test_monte_carlo_cross_check(self):
        # forward-simulate the pair model: shared confusion row w.p. 1/(1+alpha)
        alpha, beta_t = 1.0, 3.0
        eta_t = np.array([0.7, 0.3])
        rng = np.random.default_rng(77)
        n = 200_000
        same = rng.random(n) < 1.0 / (1.0 + alpha)
        p_a = rng.beta(beta_t * eta_t[0], beta_t * eta_t[1], size=n)
        p_b = np.where(same, p_a, rng.beta(beta_t * eta_t[0], beta_t * eta_t[1], size=n))
        y_a = rng.random(n) < p_a
        y_b = rng.random(n) < p_b
        for a, b in ((1, 1), (1, 2)):
            x = y_a if a == 1 else ~y_a
            y = y_b if b == 1 else ~y_b
            blocks = 50
            rs = []
            for k in range(blocks):
                sl = slice(k * (n // blocks), (k + 1) * (n // blocks))
                rs.append(np.corrcoef(x[sl], y[sl])[0, 1])
            rs = np.asarray(rs)
            se = rs.std(ddof=1) / math.sqrt(blocks)
            expected = prior_correlation_cbcc(alpha, beta_t, eta_t, a, b)
            assert abs(rs.mean() - expected) < 3 * se
