"""Posterior aggregation and diagnostics: point estimates, co-occurrence,
cluster profiles, accuracy, improvement curves, and the exhaustive
enumeration oracle used to validate the samplers on tiny instances.
"""

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import Partition, build_counts
from .errors import ValidationError
from .likelihoods import (
    log_collapsed_likelihood_cbcc,
    log_collapsed_z_prior,
    log_crp_partition,
)

__all__ = [
    "ClusterProfile",
    "PosteriorSummary",
    "summarize",
    "accuracy",
    "ExactPosterior",
    "enumerate_posterior_cbcc",
    "empirical_posterior",
    "total_variation",
    "set_partitions",
    "bell_number",
    "improvement_curve",
    "CurvePoint",
]


@dataclass
class ClusterProfile:
    handle: int
    n_members: int
    member_share: float
    confusion: np.ndarray


@dataclass
class PosteriorSummary:
    """Retained samples reduced to reporting quantities.

    Cluster profiles come from the reference sample (the retained sample with
    the highest joint log score), since cluster identities do not align
    across samples.
    """

    z_hat: np.ndarray
    z_marginals: np.ndarray
    cooccurrence: np.ndarray
    mean_n_clusters: float
    std_n_clusters: float
    cluster_profiles: list
    n_samples: int
    reference_iteration: int
    accuracy: float = None


def accuracy(z_hat, gold):
    """Fraction of instances whose estimate matches the gold label."""
    z_hat = np.asarray(z_hat)
    gold = np.asarray(gold)
    if z_hat.shape != gold.shape:
        raise ValidationError(f"length mismatch: {z_hat.shape} vs {gold.shape}")
    return float(np.mean(z_hat == gold))


def _reference_profiles(record, labels, hypers):
    """Per-cluster confusion profiles for one retained sample.

    Hierarchical samples carry their sampled cluster means; otherwise the
    posterior-mean confusion given the sample's counts is reported
    ((n + beta eta) / (n_row + beta), or add-one smoothing without hypers).
    """
    L = record.assignment.size
    partition = Partition(record.assignment)
    profiles = []
    if record.cluster_eta is not None:
        for handle in partition.handles:
            size = partition.sizes[handle]
            profiles.append(ClusterProfile(
                handle=handle,
                n_members=size,
                member_share=size / L,
                confusion=np.asarray(record.cluster_eta[handle]),
            ))
        return profiles
    counts = build_counts(labels, record.z, partition)
    C = labels.n_categories
    for handle in partition.handles:
        block = counts.cluster_block(handle).astype(float)
        if hypers is not None:
            num = block + hypers.beta[:, None] * hypers.eta
            den = block.sum(axis=1, keepdims=True) + hypers.beta[:, None]
        else:
            num = block + 1.0
            den = block.sum(axis=1, keepdims=True) + C
        size = partition.sizes[handle]
        profiles.append(ClusterProfile(
            handle=handle,
            n_members=size,
            member_share=size / L,
            confusion=num / den,
        ))
    return profiles


def summarize(samples, labels, gold=None, hypers=None):
    """Reduce a chain's retained samples to a PosteriorSummary.

    z_hat is the per-instance posterior mode (ties to the lowest category);
    co-occurrence averages same-cluster indicators over samples.
    """
    samples = list(samples)
    if not samples:
        raise ValidationError("summarize needs at least one retained sample")
    N = labels.n_instances
    L = labels.n_users
    C = labels.n_categories
    z_stack = np.stack([rec.z for rec in samples])
    marginals = np.zeros((N, C))
    for t in range(1, C + 1):
        marginals[:, t - 1] = np.mean(z_stack == t, axis=0)
    z_hat = np.argmax(marginals, axis=1) + 1
    co = np.zeros((L, L))
    for rec in samples:
        a = rec.assignment
        co += a[:, None] == a[None, :]
    co /= len(samples)
    n_clusters = np.array([rec.n_clusters for rec in samples], dtype=float)
    ref = max(samples, key=lambda rec: rec.log_joint)
    summary = PosteriorSummary(
        z_hat=z_hat,
        z_marginals=marginals,
        cooccurrence=co,
        mean_n_clusters=float(n_clusters.mean()),
        std_n_clusters=float(n_clusters.std()),
        cluster_profiles=_reference_profiles(ref, labels, hypers),
        n_samples=len(samples),
        reference_iteration=ref.iteration,
    )
    if gold is not None:
        summary.accuracy = accuracy(z_hat, gold)
    return summary


def set_partitions(items):
    """All partitions of a sequence, each a list of blocks (standard recursion)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for smaller in set_partitions(rest):
        for k in range(len(smaller)):
            yield smaller[:k] + [[first] + smaller[k]] + smaller[k + 1 :]
        yield [[first]] + smaller


def bell_number(n):
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[0]


@dataclass
class ExactPosterior:
    """Normalized joint pmf over (truth vector, canonical partition blocks)."""

    atoms: dict
    n_instances: int
    n_users: int
    n_categories: int

    def z_marginals(self):
        out = np.zeros((self.n_instances, self.n_categories))
        for (z, _), p in self.atoms.items():
            for i, t in enumerate(z):
                out[i, t - 1] += p
        return out

    def partition_marginal(self):
        out = {}
        for (_, blocks), p in self.atoms.items():
            out[blocks] = out.get(blocks, 0.0) + p
        return out

    def mode(self):
        return max(self.atoms, key=self.atoms.get)

    def total(self):
        return sum(self.atoms.values())


def enumerate_posterior_cbcc(labels, hypers, alpha):
    """Exact posterior over (z, partition) by exhaustive enumeration.

    Combines the CRP partition pmf, the collapsed truth prior, and the
    collapsed likelihood; refuses instances beyond C^N * Bell(L) = 1e6 atoms.
    """
    N, L, C = labels.n_instances, labels.n_users, labels.n_categories
    n_atoms = C**N * bell_number(L)
    if n_atoms > 1_000_000:
        raise ValidationError(
            f"enumeration would need {n_atoms} atoms (> 1e6); instance too large"
        )
    if alpha <= 0:
        raise ValidationError("alpha must be positive")
    keys = []
    logs = np.empty(n_atoms)
    pos = 0
    for blocks in set_partitions(range(L)):
        assignment = np.zeros(L, dtype=np.int64)
        for handle, block in enumerate(blocks):
            for user in block:
                assignment[user] = handle
        partition = Partition(assignment)
        canon = partition.canonical_blocks()
        log_crp = log_crp_partition(list(partition.sizes.values()), alpha, L)
        for z in itertools.product(range(1, C + 1), repeat=N):
            zv = np.asarray(z, dtype=np.int64)
            counts = build_counts(labels, zv, partition)
            logs[pos] = (
                log_crp
                + log_collapsed_z_prior(counts, hypers)
                + log_collapsed_likelihood_cbcc(counts, hypers)
            )
            keys.append((z, canon))
            pos += 1
    logs -= logsumexp(logs)
    probs = np.exp(logs)
    return ExactPosterior(
        atoms={k: float(p) for k, p in zip(keys, probs)},
        n_instances=N,
        n_users=L,
        n_categories=C,
    )


def _canonical_blocks_of(assignment):
    blocks = {}
    for user, h in enumerate(assignment):
        blocks.setdefault(int(h), []).append(user)
    return tuple(sorted((tuple(b) for b in blocks.values()), key=lambda b: b[0]))


def empirical_posterior(records):
    """Frequency table over (z tuple, canonical partition blocks) from SampleRecords."""
    freq = {}
    for rec in records:
        key = (tuple(int(v) for v in rec.z), _canonical_blocks_of(rec.assignment))
        freq[key] = freq.get(key, 0) + 1
    n = len(records)
    return {k: v / n for k, v in freq.items()}


def total_variation(p, q):
    """Total-variation distance between two pmf dicts."""
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


@dataclass
class CurvePoint:
    method: str
    sparsity: float
    mean_improvement: float
    std_improvement: float
    n_replicates: int


def improvement_curve(results):
    """Paired per-replicate improvements over the majority-voting baseline.

    results: iterable of (method, sparsity, replicate, accuracy). Every
    (sparsity, replicate) cell present for any method must carry an 'mv' entry.
    """
    table = {}
    for method, sparsity, replicate, acc in results:
        key = (str(method), float(sparsity), replicate)
        if key in table:
            raise ValidationError(f"duplicate result for {key}")
        table[key] = float(acc)
    cells = {(s, r) for (_, s, r) in table}
    missing = sorted((s, r) for (s, r) in cells if ("mv", s, r) not in table)
    if missing:
        raise ValidationError(
            f"majority-voting baseline missing for (sparsity, replicate) cells {missing[:5]}"
        )
    methods = sorted({m for (m, _, _) in table})
    points = []
    for method in methods:
        sparsities = sorted({s for (m, s, _) in table if m == method})
        for s in sparsities:
            reps = sorted(r for (m, ss, r) in table if m == method and ss == s)
            diffs = np.array([table[(method, s, r)] - table[("mv", s, r)] for r in reps])
            points.append(CurvePoint(
                method=method,
                sparsity=s,
                mean_improvement=float(diffs.mean()),
                std_improvement=float(diffs.std()),
                n_replicates=len(reps),
            ))
    return points
