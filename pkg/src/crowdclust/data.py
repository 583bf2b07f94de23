"""Domain types and sufficient-statistic bookkeeping shared by every model.

Conventions: instances and users are dense 0-based indices; label/truth
categories are 1..C in public entries and files (0 never appears: a missing
annotation is simply absent), while count arrays are indexed by category-1.
Cluster ids are opaque stable integer handles issued monotonically; moving
users never renumbers surviving clusters.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# target for move_user: open a fresh cluster
NEW_CLUSTER = -1


class LabelMatrix:
    """Sparse store of crowd annotations: at most one label per (instance, user).

    Rows are kept in three parallel arrays plus CSR-style views by instance
    and by user, which is what the samplers iterate over.
    """

    def __init__(self, n_instances, n_users, n_categories, instances, users, labels):
        if n_instances < 1 or n_users < 1 or n_categories < 1:
            raise ValidationError(
                f"need N, L, C >= 1, got N={n_instances} L={n_users} C={n_categories}"
            )
        self.n_instances = int(n_instances)
        self.n_users = int(n_users)
        self.n_categories = int(n_categories)
        self.instances = np.asarray(instances, dtype=np.int64)
        self.users = np.asarray(users, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int64)
        if not (self.instances.shape == self.users.shape == self.labels.shape):
            raise ValidationError("instances/users/labels must have equal length")
        if self.instances.size:
            if self.instances.min() < 0 or self.instances.max() >= self.n_instances:
                raise ValidationError("instance index out of range")
            if self.users.min() < 0 or self.users.max() >= self.n_users:
                raise ValidationError("user index out of range")
            bad = np.nonzero((self.labels < 1) | (self.labels > self.n_categories))[0]
            if bad.size:
                raise ValidationError(
                    f"labels must be in 1..{self.n_categories}; "
                    f"bad entries at rows {bad[:5].tolist()}"
                )
            pairs = self.instances * self.n_users + self.users
            uniq, counts = np.unique(pairs, return_counts=True)
            if np.any(counts > 1):
                dup = uniq[counts > 1][0]
                raise ValidationError(
                    f"duplicate annotation for instance {dup // self.n_users}, "
                    f"user {dup % self.n_users}"
                )
        self._by_instance = None
        self._by_user = None

    @classmethod
    def from_entries(cls, n_instances, n_users, n_categories, entries):
        """Build from an iterable of (instance, user, label) with labels in 1..C."""
        entries = list(entries)
        if entries:
            i, u, y = (np.array(col, dtype=np.int64) for col in zip(*entries))
        else:
            i = u = y = np.empty(0, dtype=np.int64)
        return cls(n_instances, n_users, n_categories, i, u, y)

    @classmethod
    def from_dense(cls, dense, n_categories=None):
        """Build from an N x L matrix where 0 encodes a missing annotation."""
        dense = np.asarray(dense, dtype=np.int64)
        if dense.ndim != 2:
            raise ValidationError("dense matrix must be 2-D")
        i, u = np.nonzero(dense)
        y = dense[i, u]
        C = int(n_categories) if n_categories is not None else (int(y.max()) if y.size else 1)
        return cls(dense.shape[0], dense.shape[1], C, i, u, y)

    @property
    def n_annotations(self):
        return int(self.labels.size)

    def _csr(self, keys, n_keys, values_a, values_b):
        order = np.argsort(keys, kind="stable")
        ptr = np.zeros(n_keys + 1, dtype=np.int64)
        np.add.at(ptr, keys + 1, 1)
        np.cumsum(ptr, out=ptr)
        return ptr, values_a[order], values_b[order]

    def by_instance(self):
        """(ptr, users, labels): annotations of instance i are slice ptr[i]:ptr[i+1]."""
        if self._by_instance is None:
            self._by_instance = self._csr(
                self.instances, self.n_instances, self.users, self.labels
            )
        return self._by_instance

    def by_user(self):
        """(ptr, instances, labels): annotations of user l are slice ptr[l]:ptr[l+1]."""
        if self._by_user is None:
            self._by_user = self._csr(self.users, self.n_users, self.instances, self.labels)
        return self._by_user

    def to_dense(self):
        dense = np.zeros((self.n_instances, self.n_users), dtype=np.int64)
        dense[self.instances, self.users] = self.labels
        return dense

    def sparsity(self):
        return 1.0 - self.n_annotations / (self.n_instances * self.n_users)


def validate_ground_truth(z, n_instances, n_categories):
    """Check a truth vector: length N, every component in 1..C."""
    z = np.asarray(z, dtype=np.int64)
    if z.shape != (n_instances,):
        raise ValidationError(f"ground truth must have length {n_instances}, got {z.shape}")
    if z.size and (z.min() < 1 or z.max() > n_categories):
        raise ValidationError(f"ground truth values must be in 1..{n_categories}")
    return z


class Partition:
    """Clustering of user indices 0..L-1 into non-empty clusters.

    Handles are stable: a cluster keeps its id across other users' moves, and
    ids of removed clusters are never reissued.
    """

    def __init__(self, assignment, next_handle=None):
        self.assignment = np.asarray(assignment, dtype=np.int64).copy()
        if self.assignment.ndim != 1 or self.assignment.size < 1:
            raise ValidationError("assignment must be a non-empty vector")
        if self.assignment.min() < 0:
            raise ValidationError("cluster handles must be non-negative")
        handles, counts = np.unique(self.assignment, return_counts=True)
        self.sizes = {int(h): int(c) for h, c in zip(handles, counts)}
        self._next = int(next_handle) if next_handle is not None else int(handles.max()) + 1

    @classmethod
    def singletons(cls, n_users):
        return cls(np.arange(n_users, dtype=np.int64))

    @classmethod
    def single_cluster(cls, n_users):
        return cls(np.zeros(n_users, dtype=np.int64))

    @property
    def n_users(self):
        return int(self.assignment.size)

    @property
    def n_clusters(self):
        return len(self.sizes)

    @property
    def handles(self):
        return sorted(self.sizes)

    def members(self, handle):
        return np.nonzero(self.assignment == handle)[0]

    def fresh_handle(self):
        h = self._next
        self._next += 1
        return h

    def move(self, user, target, allow_new_handle=False):
        """Reassign `user` to cluster `target` (or NEW_CLUSTER); returns the handle landed on.

        The emptied source cluster, if any, is dropped from the partition.
        allow_new_handle admits a caller-supplied handle not yet in the
        partition (promotion of an auxiliary empty cluster).
        """
        old = int(self.assignment[user])
        if target == NEW_CLUSTER:
            target = self.fresh_handle()
        target = int(target)
        if target != old and target not in self.sizes and target != self._next - 1:
            if not allow_new_handle:
                raise ValidationError(f"unknown target cluster handle {target}")
            self._next = max(self._next, target + 1)
        if target == old:
            return old
        self.sizes[old] -= 1
        if self.sizes[old] == 0:
            del self.sizes[old]
        self.assignment[user] = target
        self.sizes[target] = self.sizes.get(target, 0) + 1
        return target

    def canonical_blocks(self):
        """Handle-free canonical form: tuple of member tuples, sorted by least member."""
        blocks = {}
        for user, h in enumerate(self.assignment):
            blocks.setdefault(int(h), []).append(user)
        return tuple(sorted((tuple(b) for b in blocks.values()), key=lambda b: b[0]))

    def copy(self):
        return Partition(self.assignment, next_handle=self._next)

    def check(self):
        """Assignment vector and size table must describe the same partition."""
        handles, counts = np.unique(self.assignment, return_counts=True)
        rebuilt = {int(h): int(c) for h, c in zip(handles, counts)}
        if rebuilt != self.sizes:
            raise AssertionError(f"partition size table out of sync: {self.sizes} != {rebuilt}")
        if sum(self.sizes.values()) != self.n_users:
            raise AssertionError("cluster sizes do not sum to the number of users")


class CountTensor:
    """Sufficient statistics of (labels, z, partition).

    cluster_blocks[m][t-1, c-1] counts labels c on truth-t instances from
    cluster m's users; user_blocks[l, t-1, c-1] is the per-user analogue;
    truth_counts[t-1] counts instances with z_i = t. Marginals over labels
    are computed on demand so they can never drift from the blocks.
    """

    def __init__(self, n_categories, cluster_blocks, user_blocks, truth_counts):
        self.n_categories = int(n_categories)
        self.cluster_blocks = cluster_blocks
        self.user_blocks = user_blocks
        self.truth_counts = truth_counts

    def cluster_block(self, handle):
        return self.cluster_blocks[handle]

    def cluster_marginal(self, handle):
        """Counts by truth category for one cluster (labels summed out)."""
        return self.cluster_blocks[handle].sum(axis=1)

    def user_block(self, user):
        return self.user_blocks[user]

    def user_marginal(self, user):
        return self.user_blocks[user].sum(axis=1)

    @property
    def n_instances(self):
        return int(self.truth_counts.sum())

    def equals(self, other):
        if set(self.cluster_blocks) != set(other.cluster_blocks):
            return False
        if not np.array_equal(self.truth_counts, other.truth_counts):
            return False
        if not np.array_equal(self.user_blocks, other.user_blocks):
            return False
        return all(
            np.array_equal(block, other.cluster_blocks[h])
            for h, block in self.cluster_blocks.items()
        )

    def check_nonnegative(self):
        if np.any(self.user_blocks < 0) or np.any(self.truth_counts < 0):
            raise AssertionError("negative count cell")
        for block in self.cluster_blocks.values():
            if np.any(block < 0):
                raise AssertionError("negative count cell")


def build_counts(labels, z, partition):
    """Tally the full count tensor from scratch; the incremental updates must match this."""
    z = validate_ground_truth(z, labels.n_instances, labels.n_categories)
    if partition.n_users != labels.n_users:
        raise ValidationError(
            f"partition covers {partition.n_users} users, labels have {labels.n_users}"
        )
    C = labels.n_categories
    user_blocks = np.zeros((labels.n_users, C, C), dtype=np.int64)
    t_idx = z[labels.instances] - 1
    np.add.at(user_blocks, (labels.users, t_idx, labels.labels - 1), 1)
    truth_counts = np.zeros(C, dtype=np.int64)
    np.add.at(truth_counts, z - 1, 1)
    cluster_blocks = {}
    for h in partition.sizes:
        cluster_blocks[h] = user_blocks[partition.members(h)].sum(axis=0)
    return CountTensor(C, cluster_blocks, user_blocks, truth_counts)


@dataclass
class Hyperparameters:
    """Prior settings for all models; hcBCC's top level reuses the same shapes.

    eta: (C, C) per-truth-row mean confusion (rows on the simplex)
    beta: (C,) per-truth precision
    epsilon, mu: truth-prior precision and mean
    a_alpha, b_alpha: gamma prior on the clustering concentration
    gamma, phi: hcBCC top-level mean confusion rows and their precisions
    a_t, b_t: (C,) gamma prior shape/rate on the per-cluster precisions
    """

    eta: np.ndarray
    beta: np.ndarray
    epsilon: float
    mu: np.ndarray
    a_alpha: float = 1.0
    b_alpha: float = 10.0
    gamma: np.ndarray = None
    phi: np.ndarray = None
    a_t: np.ndarray = None
    b_t: np.ndarray = None

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.mu = np.asarray(self.mu, dtype=float)
        self.epsilon = float(self.epsilon)
        C = self.eta.shape[0]
        if self.eta.shape != (C, C):
            raise ValidationError(f"eta must be square, got {self.eta.shape}")
        if self.gamma is None:
            self.gamma = self.eta.copy()
        if self.phi is None:
            self.phi = self.beta.copy()
        if self.a_t is None:
            self.a_t = np.full(C, 20.0)
        if self.b_t is None:
            self.b_t = np.full(C, 2.0)
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        self.a_t = np.atleast_1d(np.asarray(self.a_t, dtype=float))
        self.b_t = np.atleast_1d(np.asarray(self.b_t, dtype=float))
        for name in ("beta", "mu", "phi", "a_t", "b_t"):
            arr = getattr(self, name)
            if arr.shape != (C,):
                raise ValidationError(f"{name} must have shape ({C},), got {arr.shape}")
        for name, rows in (("eta", self.eta), ("gamma", self.gamma)):
            if np.any(rows <= 0):
                raise ValidationError(f"{name} entries must be strictly positive")
            if np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-12):
                raise ValidationError(f"{name} rows must sum to 1 within 1e-12")
        if np.any(self.mu <= 0) or abs(self.mu.sum() - 1.0) > 1e-12:
            raise ValidationError("mu must be a simplex vector")
        for name in ("beta", "phi", "a_t", "b_t"):
            if np.any(getattr(self, name) <= 0):
                raise ValidationError(f"{name} must be strictly positive")
        if self.epsilon <= 0 or self.a_alpha <= 0 or self.b_alpha <= 0:
            raise ValidationError("epsilon, a_alpha, b_alpha must be strictly positive")

    @property
    def n_categories(self):
        return self.eta.shape[0]

    @classmethod
    def defaults(cls, n_categories, **overrides):
        """Better-than-chance defaults: diag 0.7 / off-diag 0.3 rows (normalized), beta 3,
        flat truth prior, Gamma(1, 10) on the concentration, a_t 20 / b_t 2."""
        C = int(n_categories)
        eta = np.full((C, C), 0.3) + 0.4 * np.eye(C)
        eta /= eta.sum(axis=1, keepdims=True)
        base = dict(
            eta=eta,
            beta=np.full(C, 3.0),
            epsilon=float(C),
            mu=np.full(C, 1.0 / C),
        )
        base.update(overrides)
        return cls(**base)


@dataclass
class ClusterParams:
    """Per-cluster sampled parameters for the hierarchical model: a (C,) precision
    vector and a (C, C) row-stochastic mean confusion matrix."""

    beta: np.ndarray
    eta: np.ndarray

    def copy(self):
        return ClusterParams(self.beta.copy(), self.eta.copy())


@dataclass
class GibbsState:
    """One chain's mutable state; counts stay consistent with (labels, z, partition).

    For the hierarchical model, cluster_params maps every live *and* auxiliary
    cluster handle to its sampled parameters, aux_handles lists the (normally h)
    empty spares, and nu/s are the auxiliary variables of the precision/mean
    updates.
    """

    labels: LabelMatrix
    z: np.ndarray
    partition: Partition
    alpha: float
    counts: CountTensor
    cluster_params: dict = None
    aux_handles: list = None
    nu: np.ndarray = None
    s: np.ndarray = None

    @classmethod
    def from_parts(cls, labels, z, partition, alpha, cluster_params=None, aux_handles=None):
        counts = build_counts(labels, z, partition)
        return cls(
            labels=labels,
            z=validate_ground_truth(z, labels.n_instances, labels.n_categories).copy(),
            partition=partition.copy(),
            alpha=float(alpha),
            counts=counts,
            cluster_params=cluster_params,
            aux_handles=aux_handles,
        )

    def move_user(self, user, target):
        """Move one user; counts update incrementally and match a full rebuild.

        Target may be a live cluster handle, NEW_CLUSTER, or a handle from
        aux_handles (which gets promoted into the partition). An emptied
        source cluster is dropped, or recycled into the auxiliary pool when
        the state carries one; callers keep the pool at its nominal size.
        Returns the handle the user landed on.
        """
        if not (0 <= user < self.labels.n_users):
            raise ValidationError(f"user index {user} out of range")
        old = int(self.partition.assignment[user])
        promoting = (
            self.aux_handles is not None
            and target != NEW_CLUSTER
            and target in self.aux_handles
        )
        landed = self.partition.move(user, target, allow_new_handle=promoting)
        if landed == old:
            return landed
        if promoting:
            self.aux_handles.remove(landed)
        block = self.counts.user_blocks[user]
        src = self.counts.cluster_blocks[old]
        src -= block
        if old not in self.partition.sizes:
            del self.counts.cluster_blocks[old]
            if self.aux_handles is not None:
                self.aux_handles.append(old)
            elif self.cluster_params is not None:
                self.cluster_params.pop(old, None)
        if landed in self.counts.cluster_blocks:
            self.counts.cluster_blocks[landed] += block
        else:
            self.counts.cluster_blocks[landed] = block.copy()
        return landed

    def set_truth(self, instance, t):
        """Reassign one instance's truth; incremental update of every affected count."""
        if not (0 <= instance < self.labels.n_instances):
            raise ValidationError(f"instance index {instance} out of range")
        if not (1 <= t <= self.labels.n_categories):
            raise ValidationError(f"category {t} out of range 1..{self.labels.n_categories}")
        old = int(self.z[instance])
        if t == old:
            return
        ptr, users, labs = self.labels.by_instance()
        lo, hi = ptr[instance], ptr[instance + 1]
        for k in range(lo, hi):
            u, c = int(users[k]), int(labs[k]) - 1
            self.counts.user_blocks[u, old - 1, c] -= 1
            self.counts.user_blocks[u, t - 1, c] += 1
            m = int(self.partition.assignment[u])
            self.counts.cluster_blocks[m][old - 1, c] -= 1
            self.counts.cluster_blocks[m][t - 1, c] += 1
        self.counts.truth_counts[old - 1] -= 1
        self.counts.truth_counts[t - 1] += 1
        self.z[instance] = t

    def check_consistent(self):
        """Recount oracle: incremental counts must equal a from-scratch tally."""
        self.partition.check()
        rebuilt = build_counts(self.labels, self.z, self.partition)
        if not self.counts.equals(rebuilt):
            raise AssertionError("incremental counts diverged from full recount")
