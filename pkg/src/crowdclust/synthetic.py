"""Forward simulators for the synthetic experiment regimes and the
coverage-constrained sparsity masking.

Three named preset populations ship at desk scale (200 x 60) and paper scale
(500 x 200): dataset1 has three annotator clusters with within-cluster
variation (hierarchical regime), dataset2 the same clusters with zero
within-cluster variation (shared-confusion regime), dataset3 a single
population of individually varying annotators (independent regime). Cluster
shapes are paper-inspired declarations, not digitized values: one accurate
cluster, one cluster biased toward label 1, one spammer-like cluster.
"""

import math
from dataclasses import dataclass

import numpy as np

from .data import LabelMatrix
from .errors import FeasibilityError, ValidationError

__all__ = ["PopulationSpec", "SimulationResult", "simulate", "mask", "preset", "PRESET_NAMES"]

PRESET_NAMES = ("dataset1", "dataset2", "dataset3")


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(seed))


@dataclass
class PopulationSpec:
    """Generative description of an annotator population.

    cluster_beta rows may be np.inf, which pins every user in that cluster to
    the cluster mean (zero within-cluster variance).
    """

    n_instances: int
    n_users: int
    n_categories: int
    cluster_weights: np.ndarray
    cluster_eta: np.ndarray
    cluster_beta: np.ndarray
    tau: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.cluster_weights = np.asarray(self.cluster_weights, dtype=float)
        self.cluster_eta = np.asarray(self.cluster_eta, dtype=float)
        self.cluster_beta = np.asarray(self.cluster_beta, dtype=float)
        self.tau = np.asarray(self.tau, dtype=float)
        M = self.cluster_weights.size
        C = int(self.n_categories)
        if self.n_instances < 1 or self.n_users < 1 or C < 1:
            raise ValidationError("n_instances, n_users, n_categories must be >= 1")
        if self.cluster_eta.shape != (M, C, C):
            raise ValidationError(
                f"cluster_eta must have shape ({M}, {C}, {C}), got {self.cluster_eta.shape}"
            )
        if self.cluster_beta.shape != (M, C):
            raise ValidationError(
                f"cluster_beta must have shape ({M}, {C}), got {self.cluster_beta.shape}"
            )
        if np.any(self.cluster_weights <= 0) or abs(self.cluster_weights.sum() - 1.0) > 1e-9:
            raise ValidationError("cluster_weights must be positive and sum to 1")
        if np.any(np.abs(self.cluster_eta.sum(axis=2) - 1.0) > 1e-9):
            raise ValidationError("cluster_eta rows must sum to 1")
        if np.any(self.cluster_beta <= 0):
            raise ValidationError("cluster_beta must be positive (np.inf allowed)")
        if self.tau.shape != (C,) or np.any(self.tau <= 0) or abs(self.tau.sum() - 1.0) > 1e-9:
            raise ValidationError("tau must be a positive simplex vector of length C")

    @property
    def n_clusters(self):
        return self.cluster_weights.size


@dataclass
class SimulationResult:
    """Complete dense annotations plus every latent quantity, for scoring."""

    labels: LabelMatrix
    truth: np.ndarray
    user_clusters: np.ndarray
    user_confusions: np.ndarray


def simulate(spec, seed):
    """Draw a fully dense label matrix (every user labels every instance)."""
    rng = _as_rng(seed)
    N, L, C = spec.n_instances, spec.n_users, spec.n_categories
    clusters = rng.choice(spec.n_clusters, size=L, p=spec.cluster_weights)
    confusions = np.empty((L, C, C))
    for l in range(L):
        m = clusters[l]
        for t in range(C):
            b = spec.cluster_beta[m, t]
            if math.isinf(b):
                confusions[l, t] = spec.cluster_eta[m, t]
            else:
                g = rng.standard_gamma(b * spec.cluster_eta[m, t])
                confusions[l, t] = g / g.sum()
    z = rng.choice(C, size=N, p=spec.tau) + 1
    dense = np.empty((N, L), dtype=np.int64)
    u = rng.random((N, L))
    for l in range(L):
        rows = confusions[l][z - 1]          # (N, C) label law per instance
        cdf = np.cumsum(rows, axis=1)
        dense[:, l] = 1 + np.minimum((u[:, l : l + 1] >= cdf).sum(axis=1), C - 1)
    labels = LabelMatrix.from_dense(dense, n_categories=C)
    return SimulationResult(labels=labels, truth=z, user_clusters=clusters,
                            user_confusions=confusions)


def mask(labels, sparsity, seed):
    """Keep a uniform random subset of annotations at the requested sparsity,
    conditioned on every instance and every user staying covered.

    A random cover is drawn first (one entry per instance, preferring
    still-uncovered users, then one per uncovered user), the remaining budget
    fills uniformly. Deterministic given seed.
    """
    if not (0.0 <= sparsity < 1.0):
        raise ValidationError(f"sparsity must be in [0, 1), got {sparsity}")
    rng = _as_rng(seed)
    total = labels.n_annotations
    keep_target = math.ceil((1.0 - sparsity) * total)
    inst = labels.instances
    users = labels.users
    covered_inst = np.zeros(labels.n_instances, dtype=bool)
    covered_user = np.zeros(labels.n_users, dtype=bool)
    covered_inst[inst] = True
    covered_user[users] = True
    if not covered_inst.all():
        missing = np.nonzero(~covered_inst)[0]
        raise FeasibilityError(
            f"instance coverage impossible: instances {missing[:5].tolist()} have no annotations"
        )
    if not covered_user.all():
        missing = np.nonzero(~covered_user)[0]
        raise FeasibilityError(
            f"user coverage impossible: users {missing[:5].tolist()} have no annotations"
        )

    by_inst = [[] for _ in range(labels.n_instances)]
    for k in range(total):
        by_inst[inst[k]].append(k)
    by_user = [[] for _ in range(labels.n_users)]
    for k in range(total):
        by_user[users[k]].append(k)

    kept = np.zeros(total, dtype=bool)
    user_done = np.zeros(labels.n_users, dtype=bool)
    for i in rng.permutation(labels.n_instances):
        pool = by_inst[i]
        fresh = [k for k in pool if not user_done[users[k]]]
        pick = fresh[rng.integers(len(fresh))] if fresh else pool[rng.integers(len(pool))]
        kept[pick] = True
        user_done[users[pick]] = True
    for l in rng.permutation(labels.n_users):
        if user_done[l]:
            continue
        pool = by_user[l]
        pick = pool[rng.integers(len(pool))]
        kept[pick] = True
        user_done[l] = True

    cover_size = int(kept.sum())
    if keep_target < cover_size:
        raise FeasibilityError(
            f"sparsity {sparsity} keeps {keep_target} annotations but instance/user "
            f"coverage needs at least {cover_size}"
        )
    rest = np.nonzero(~kept)[0]
    extra = keep_target - cover_size
    if extra:
        kept[rng.choice(rest, size=extra, replace=False)] = True

    idx = np.nonzero(kept)[0]
    order = np.lexsort((users[idx], inst[idx]))
    idx = idx[order]
    return LabelMatrix(
        labels.n_instances, labels.n_users, labels.n_categories,
        inst[idx].copy(), users[idx].copy(), labels.labels[idx].copy(),
    )


_SCALES = {"desk": (200, 60), "paper": (500, 200)}

# three annotator archetypes: sharp experts, a competent but asymmetrically
# biased tier, and a spammer-like tier whose rows are nearly flat
_EXPERT = np.array([
    [0.96, 0.02, 0.02],
    [0.02, 0.96, 0.02],
    [0.02, 0.02, 0.96],
])
_BIASED = np.array([
    [0.72, 0.18, 0.10],
    [0.08, 0.72, 0.20],
    [0.12, 0.16, 0.72],
])
_SPAMMER = np.array([
    [0.34, 0.33, 0.33],
    [0.33, 0.34, 0.33],
    [0.33, 0.33, 0.34],
])
_COMPETENT = np.array([
    [0.90, 0.05, 0.05],
    [0.05, 0.90, 0.05],
    [0.05, 0.05, 0.90],
])


def preset(name, scale="desk"):
    """Named analogue populations; scale is 'desk' (200 x 60) or 'paper' (500 x 200)."""
    if name not in PRESET_NAMES:
        raise ValidationError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")
    if scale not in _SCALES:
        raise ValidationError(f"unknown scale {scale!r}; expected one of {tuple(_SCALES)}")
    N, L = _SCALES[scale]
    C = 3
    eta3 = np.stack([_EXPERT, _BIASED, _SPAMMER])
    weights3 = np.array([0.45, 0.27, 0.28])
    tau = np.full(C, 1.0 / C)
    if name == "dataset1":
        beta = np.array([[50.0] * C, [25.0] * C, [10.0] * C])
        return PopulationSpec(N, L, C, weights3, eta3, beta, tau, name=f"{name}-{scale}")
    if name == "dataset2":
        beta = np.full((3, C), np.inf)
        return PopulationSpec(N, L, C, weights3, eta3, beta, tau, name=f"{name}-{scale}")
    # dataset3: one population (the mid-tier archetype), individually varying users
    return PopulationSpec(
        N, L, C,
        np.array([1.0]),
        _BIASED[None, :, :],
        np.array([[25.0] * C]),
        tau,
        name=f"{name}-{scale}",
    )
