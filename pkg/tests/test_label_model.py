"""Triplet accuracy recovery and posterior inference against Bayes oracles."""

import numpy as np
import pytest

from weakext.core import DegeneracyError, LabelModelParams, VoteMatrix
from weakext.label_model import (
    estimate_accuracies,
    majority_vote,
    pairwise_moments,
    posterior,
    predict,
    select_triplets,
)


def brute_force_posterior(row, params):
    """Literal Bayes enumeration over the per-source likelihood factors."""
    num = {}
    for y in (+1, -1):
        prob = params.prior if y == 1 else 1.0 - params.prior
        for i, vote in enumerate(row):
            a = params.accuracies[i]
            voted = 1.0 - params.abstain_rates[i]
            if vote == 0:
                prob *= params.abstain_rates[i]
            elif vote == y:
                prob *= a * voted
            else:
                prob *= (1.0 - a) * voted
        num[y] = prob
    return num[1] / (num[1] + num[-1])


def exact_moment_matrix():
    """Vote matrix whose empirical pairwise moments are exactly
    (0.48, 0.48, 0.36), the population moments of conditionally
    independent sources with accuracies (0.9, 0.8, 0.8) and balanced
    classes.  Pattern counts follow from multiplying the per-source
    likelihoods and mirroring for the negative class."""
    counts = {
        (1, 1, 1): 29, (1, 1, -1): 8, (1, -1, 1): 8, (1, -1, -1): 5,
        (-1, 1, 1): 5, (-1, 1, -1): 8, (-1, -1, 1): 8, (-1, -1, -1): 29,
    }
    rows = []
    for pattern, c in counts.items():
        rows.extend([list(pattern)] * c)
    return VoteMatrix(np.array(rows))


def sample_conditionally_independent(rng, n, accuracies, prior=0.5):
    y = np.where(rng.random(n) < prior, 1, -1).astype(np.int8)
    votes = np.empty((n, len(accuracies)), dtype=np.int8)
    for i, a in enumerate(accuracies):
        correct = rng.random(n) < a
        votes[:, i] = np.where(correct, y, -y)
    return VoteMatrix(votes), y


class TestSelectTriplets:
    def test_m3_forced(self):
        votes = exact_moment_matrix()
        assignment = select_triplets(votes)
        assert assignment.partners == ((1, 2), (0, 2), (0, 1))

    def test_requires_three_sources(self):
        with pytest.raises(DegeneracyError, match="3 sources"):
            select_triplets(VoteMatrix(np.array([[1, -1], [1, 1]])))

    def test_avoids_low_overlap_partner(self):
        # source 3 overlaps others on a single row; enumeration oracle
        # says every other source should partner within {0,1,2}
        rng = np.random.default_rng(0)
        n = 40
        votes = rng.choice([-1, 1], size=(n, 4)).astype(np.int8)
        votes[: n - 1, 3] = 0  # source 3 votes only on the last row
        vm = VoteMatrix(votes)
        assignment = select_triplets(vm)
        _, overlaps = pairwise_moments(vm)
        for i in range(3):
            j, k = assignment.partners[i]
            assert 3 not in (j, k)
            # enumeration oracle: best min-overlap over all candidate pairs
            best = -1.0
            for jj in range(4):
                for kk in range(jj + 1, 4):
                    if i in (jj, kk):
                        continue
                    best = max(best, min(overlaps[i, jj], overlaps[i, kk], overlaps[jj, kk]))
            assert min(overlaps[i, j], overlaps[i, k], overlaps[j, k]) == best

    def test_all_equal_overlaps_lexicographic(self):
        votes = VoteMatrix(np.ones((10, 4), dtype=np.int8))
        assignment = select_triplets(votes)
        assert assignment.partners[0] == (1, 2)
        assert assignment.partners[1] == (0, 2)
        assert assignment.partners[2] == (0, 1)
        assert assignment.partners[3] == (0, 1)

    def test_zero_overlap_raises_with_source(self):
        votes = np.zeros((6, 3), dtype=np.int8)
        votes[:2, 0] = 1
        votes[2:4, 1] = 1
        votes[4:, 2] = 1  # pairwise disjoint supports
        with pytest.raises(DegeneracyError, match="source 0"):
            select_triplets(VoteMatrix(votes))


class TestEstimateAccuracies:
    def test_perfect_agreement_clamps(self):
        votes = VoteMatrix(np.repeat(np.array([[1, 1, 1], [-1, -1, -1]]), 5, axis=0))
        params = estimate_accuracies(votes, 0.5)
        np.testing.assert_allclose(params.accuracies, [0.9995] * 3, atol=0)

    def test_exact_moment_recovery(self):
        params = estimate_accuracies(exact_moment_matrix(), 0.5)
        # sqrt(0.48 * 0.48 / 0.36) = 0.8 -> 0.9; sqrt(0.48*0.36/0.48) = 0.6 -> 0.8
        np.testing.assert_allclose(params.accuracies, [0.9, 0.8, 0.8], atol=1e-12)

    def test_abstain_rates_are_empirical(self):
        votes = VoteMatrix(np.array([[1, 1, 1], [0, 1, 1], [0, -1, -1], [0, 1, 1]]))
        params = estimate_accuracies(votes, 0.5)
        np.testing.assert_allclose(params.abstain_rates, [0.75, 0.0, 0.0], atol=0)

    def test_degenerate_triplet(self):
        rows = [[1, 1, 1], [1, 1, -1], [1, -1, 1], [1, -1, -1]]
        with pytest.raises(DegeneracyError, match="degenerate triplet"):
            estimate_accuracies(VoteMatrix(np.array(rows)), 0.5)

    def test_monte_carlo_recovery(self):
        rng = np.random.default_rng(42)
        votes, _ = sample_conditionally_independent(rng, 10_000, (0.9, 0.8, 0.7))
        params = estimate_accuracies(votes, 0.5)
        assert np.max(np.abs(params.accuracies - np.array([0.9, 0.8, 0.7]))) <= 0.03

    def test_flip_source_recovers_adversarial(self):
        rng = np.random.default_rng(43)
        votes, y = sample_conditionally_independent(rng, 20_000, (0.9, 0.8, 0.2))
        params = estimate_accuracies(votes, 0.5, flip_sources=(2,))
        assert abs(params.accuracies[2] - 0.2) <= 0.03
        assert abs(params.accuracies[0] - 0.9) <= 0.03


class TestPosterior:
    def test_all_abstain_returns_prior_exactly(self):
        params = LabelModelParams([0.9, 0.8], [0.3, 0.4], 0.37)
        assert posterior([0, 0], params) == 0.37

    def test_single_source_bayes(self):
        params = LabelModelParams([0.8], [0.0], 0.5)
        # 0.8 * 0.5 / (0.8 * 0.5 + 0.2 * 0.5)
        assert abs(posterior([1], params) - 0.8) < 1e-12

    def test_three_source_hand_value(self):
        params = LabelModelParams([0.9, 0.8, 0.7], [0.0, 0.0, 0.0], 0.5)
        expected = 0.216 / (0.216 + 0.014)  # 0.9*0.8*0.3 vs 0.1*0.2*0.7
        assert abs(posterior([1, 1, -1], params) - expected) < 1e-12

    def test_oracle_equivalence_small_m(self):
        rng = np.random.default_rng(44)
        for _ in range(300):
            m = int(rng.integers(1, 5))
            params = LabelModelParams(
                rng.uniform(0.05, 0.95, m),
                rng.uniform(0.05, 0.95, m),
                float(rng.uniform(0.05, 0.95)),
            )
            row = rng.choice([-1, 0, 1], size=m)
            assert abs(posterior(row, params) - brute_force_posterior(row, params)) < 1e-12

    def test_flip_symmetry(self):
        rng = np.random.default_rng(45)
        for _ in range(100):
            m = int(rng.integers(1, 6))
            acc = rng.uniform(0.1, 0.9, m)
            ab = rng.uniform(0.1, 0.9, m)
            p = float(rng.uniform(0.1, 0.9))
            row = rng.choice([-1, 0, 1], size=m)
            q = posterior(row, LabelModelParams(acc, ab, p))
            q_flip = posterior(-row, LabelModelParams(acc, ab, 1.0 - p))
            assert abs(q_flip - (1.0 - q)) < 1e-12

    def test_monotone_in_accuracy_of_positive_voter(self):
        rng = np.random.default_rng(46)
        for _ in range(100):
            m = int(rng.integers(2, 5))
            acc = rng.uniform(0.2, 0.95, m)
            row = rng.choice([-1, 0, 1], size=m)
            row[0] = 1
            p = float(rng.uniform(0.2, 0.8))
            q_lo = posterior(row, LabelModelParams(acc, np.zeros(m), p))
            acc_hi = acc.copy()
            acc_hi[0] = min(acc[0] + 0.03, 0.99)
            q_hi = posterior(row, LabelModelParams(acc_hi, np.zeros(m), p))
            assert q_hi >= q_lo - 1e-15

    def test_validates_row(self):
        params = LabelModelParams([0.8], [0.0], 0.5)
        with pytest.raises(ValueError):
            posterior([2], params)
        with pytest.raises(ValueError):
            posterior([1, 1], params)


class TestPredict:
    def test_matches_rowwise_posterior(self):
        rng = np.random.default_rng(47)
        votes = VoteMatrix(rng.choice([-1, 0, 1], size=(40, 4)))
        params = LabelModelParams(
            rng.uniform(0.55, 0.95, 4), rng.uniform(0.0, 0.9, 4), 0.4
        )
        q, hard = predict(votes, params)
        for i in range(votes.n):
            assert abs(q[i] - posterior(votes.votes[i], params)) < 1e-12

    def test_hard_label_rules(self):
        params = LabelModelParams([0.9], [0.5], 0.5)
        q, hard = predict(VoteMatrix(np.array([[1], [-1], [0]])), params)
        assert hard.labels.tolist() == [1, -1, 1]  # all-abstain 0.5 -> +1 at p >= 0.5
        params_low = LabelModelParams([0.9], [0.5], 0.3)
        _, hard_low = predict(VoteMatrix(np.array([[0]])), params_low)
        assert hard_low.labels.tolist() == [-1]

    def test_column_permutation_equivariance(self):
        # equivariance needs generically distinct overlaps: with exact
        # overlap ties the lexicographic partner rule is order-dependent
        rng = np.random.default_rng(48)
        votes, _ = sample_conditionally_independent(rng, 3000, (0.9, 0.75, 0.6, 0.8))
        raw = np.array(votes.votes, copy=True)
        for j, cov in enumerate((0.9, 0.7, 0.8, 0.6)):
            drop = rng.random(3000) >= cov
            raw[drop, j] = 0
        votes = VoteMatrix(raw)
        _, overlaps = pairwise_moments(votes)
        off = overlaps[np.triu_indices(4, k=1)]
        assert np.unique(off).size == off.size  # no ties: partner choice is generic
        perm = np.array([2, 0, 3, 1])
        params = estimate_accuracies(votes, 0.5)
        params_perm = estimate_accuracies(VoteMatrix(votes.votes[:, perm]), 0.5)
        np.testing.assert_allclose(params_perm.accuracies, params.accuracies[perm], atol=1e-12)


class TestMajorityVote:
    def test_examples(self):
        votes = VoteMatrix(np.array([[1, -1, 1], [0, 0, 0], [1, -1, 0]]))
        assert majority_vote(votes, 0.5).labels.tolist() == [1, 1, 1]
        assert majority_vote(votes, 0.3).labels.tolist() == [1, -1, -1]
