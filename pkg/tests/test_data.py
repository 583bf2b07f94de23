"""Core bookkeeping: the incremental count updates must always equal a
from-scratch tally, and partitions must stay self-consistent through
arbitrary move sequences."""

import numpy as np
import pytest

from crowdclust.data import (
    NEW_CLUSTER,
    GibbsState,
    LabelMatrix,
    Partition,
    build_counts,
)
from crowdclust.errors import ValidationError


def small_fixture():
    """3 users, 4 instances, C = 2; tallied by hand in the test below."""
    entries = [
        (0, 0, 1), (0, 1, 2),
        (1, 0, 2), (1, 2, 2),
        (2, 1, 1), (2, 2, 1),
        (3, 0, 1), (3, 1, 1), (3, 2, 2),
    ]
    labels = LabelMatrix.from_entries(4, 3, 2, entries)
    z = np.array([1, 2, 1, 1])
    partition = Partition(np.array([0, 0, 1]))
    return labels, z, partition


class TestLabelMatrix:
    def test_rejects_label_zero_and_out_of_range(self):
        with pytest.raises(ValidationError, match="labels must be in 1..2"):
            LabelMatrix.from_entries(2, 2, 2, [(0, 0, 0)])
        with pytest.raises(ValidationError, match="labels must be in 1..2"):
            LabelMatrix.from_entries(2, 2, 2, [(0, 0, 3)])

    def test_rejects_duplicates(self):
        with pytest.raises(ValidationError, match="duplicate annotation"):
            LabelMatrix.from_entries(2, 2, 2, [(0, 1, 1), (0, 1, 2)])

    def test_rejects_bad_dimensions(self):
        with pytest.raises(ValidationError):
            LabelMatrix.from_entries(0, 1, 1, [])
        with pytest.raises(ValidationError, match="instance index"):
            LabelMatrix.from_entries(2, 2, 2, [(2, 0, 1)])

    def test_dense_round_trip(self):
        dense = np.array([[1, 0, 2], [0, 2, 1]])
        labels = LabelMatrix.from_dense(dense)
        assert labels.n_categories == 2
        assert labels.n_annotations == 4
        np.testing.assert_array_equal(labels.to_dense(), dense)

    def test_csr_views(self):
        labels, _, _ = small_fixture()
        ptr, users, labs = labels.by_instance()
        assert ptr.tolist() == [0, 2, 4, 6, 9]
        assert users[ptr[3] : ptr[4]].tolist() == [0, 1, 2]
        ptr_u, insts, labs_u = labels.by_user()
        assert ptr_u.tolist() == [0, 3, 6, 9]
        assert insts[ptr_u[1] : ptr_u[2]].tolist() == [0, 2, 3]


class TestBuildCounts:
    def test_single_entry(self):
        labels = LabelMatrix.from_entries(1, 1, 2, [(0, 0, 2)])
        counts = build_counts(labels, np.array([1]), Partition(np.array([5])))
        block = counts.cluster_block(5)
        assert block[0, 1] == 1
        assert block.sum() == 1
        assert counts.truth_counts.tolist() == [1, 0]

    def test_empty_matrix(self):
        labels = LabelMatrix.from_entries(2, 2, 2, [])
        counts = build_counts(labels, np.array([1, 2]), Partition.singletons(2))
        assert all(block.sum() == 0 for block in counts.cluster_blocks.values())
        assert counts.user_blocks.sum() == 0
        assert counts.truth_counts.tolist() == [1, 1]

    def test_hand_tally(self):
        labels, z, partition = small_fixture()
        counts = build_counts(labels, z, partition)
        # brute-force oracle: tally each entry against z and the partition
        expect_cluster = {0: np.zeros((2, 2), dtype=int), 1: np.zeros((2, 2), dtype=int)}
        expect_user = np.zeros((3, 2, 2), dtype=int)
        assignment = [0, 0, 1]
        for i, u, y in zip(labels.instances, labels.users, labels.labels):
            expect_cluster[assignment[u]][z[i] - 1, y - 1] += 1
            expect_user[u, z[i] - 1, y - 1] += 1
        for h in (0, 1):
            np.testing.assert_array_equal(counts.cluster_block(h), expect_cluster[h])
        np.testing.assert_array_equal(counts.user_blocks, expect_user)
        assert counts.truth_counts.tolist() == [3, 1]
        # marginals equal sums over the label axis
        np.testing.assert_array_equal(
            counts.cluster_marginal(0), expect_cluster[0].sum(axis=1)
        )

    def test_dimension_mismatch(self):
        labels, z, _ = small_fixture()
        with pytest.raises(ValidationError, match="partition covers"):
            build_counts(labels, z, Partition.singletons(5))
        with pytest.raises(ValidationError, match="length"):
            build_counts(labels, z[:2], Partition.singletons(3))


class TestPartition:
    def test_move_semantics(self):
        p = Partition(np.array([0, 0, 1]))
        landed = p.move(2, 0)
        assert landed == 0
        assert p.sizes == {0: 3}
        fresh = p.move(0, NEW_CLUSTER)
        assert fresh not in (0, 1)
        assert p.sizes == {0: 2, fresh: 1}

    def test_unknown_target_rejected(self):
        p = Partition(np.array([0, 1]))
        with pytest.raises(ValidationError, match="unknown target"):
            p.move(0, 42)

    def test_remove_then_restore_is_identity(self):
        p = Partition(np.array([3, 3, 8]))
        before_blocks = p.canonical_blocks()
        before_sizes = dict(p.sizes)
        p.move(1, 8)
        p.move(1, 3)
        assert p.canonical_blocks() == before_blocks
        assert p.sizes == before_sizes
        assert p.assignment.tolist() == [3, 3, 8]

    def test_handles_stable_under_other_moves(self):
        p = Partition(np.array([0, 1, 2]))
        p.move(0, 1)  # cluster 0 disappears
        assert set(p.sizes) == {1, 2}
        fresh = p.move(0, NEW_CLUSTER)
        assert fresh == 3  # never reissues a removed handle

    def test_check_detects_sync(self):
        p = Partition(np.array([0, 0, 1]))
        p.check()
        p.sizes[0] = 5
        with pytest.raises(AssertionError):
            p.check()


class TestGibbsStateIncrementals:
    def test_move_sole_member_shrinks_cluster_set(self):
        labels, z, _ = small_fixture()
        state = GibbsState.from_parts(labels, z, Partition(np.array([0, 0, 1])), 1.0)
        assert state.partition.n_clusters == 2
        state.move_user(2, 0)
        assert state.partition.n_clusters == 1
        state.check_consistent()

    def test_move_to_new_cluster(self):
        labels, z, _ = small_fixture()
        state = GibbsState.from_parts(labels, z, Partition.single_cluster(3), 1.0)
        landed = state.move_user(1, NEW_CLUSTER)
        assert state.partition.sizes[landed] == 1
        state.check_consistent()

    def test_set_truth_idempotent_and_counted(self):
        labels, z, partition = small_fixture()
        state = GibbsState.from_parts(labels, z, partition, 1.0)
        before = state.counts.truth_counts.copy()
        state.set_truth(0, int(z[0]))
        np.testing.assert_array_equal(state.counts.truth_counts, before)
        state.set_truth(0, 2)
        assert state.counts.truth_counts.tolist() == [2, 2]
        state.check_consistent()

    def test_truth_flip_touches_two_cells(self):
        labels = LabelMatrix.from_entries(2, 1, 2, [(0, 0, 1)])
        state = GibbsState.from_parts(
            labels, np.array([1, 1]), Partition.single_cluster(1), 1.0
        )
        before = state.counts.truth_counts.copy()
        state.set_truth(0, 2)
        diff = state.counts.truth_counts - before
        assert sorted(diff.tolist()) == [-1, 1]
        state.check_consistent()

    def test_recount_fuzz_moves_and_flips(self):
        rng = np.random.default_rng(1234)
        labels, z, partition = small_fixture()
        state = GibbsState.from_parts(labels, z, partition, 1.0)
        for step in range(1000):
            if rng.random() < 0.5:
                user = int(rng.integers(3))
                handles = list(state.partition.sizes)
                target = (
                    NEW_CLUSTER
                    if rng.random() < 0.25
                    else handles[rng.integers(len(handles))]
                )
                state.move_user(user, target)
            else:
                state.set_truth(int(rng.integers(4)), int(rng.integers(2)) + 1)
            state.counts.check_nonnegative()
            if step % 100 == 0:
                state.check_consistent()
        state.check_consistent()

    def test_index_validation(self):
        labels, z, partition = small_fixture()
        state = GibbsState.from_parts(labels, z, partition, 1.0)
        with pytest.raises(ValidationError):
            state.move_user(7, 0)
        with pytest.raises(ValidationError):
            state.set_truth(0, 9)
