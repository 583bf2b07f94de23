"""Gibbs kernels and chain drivers for the three MCMC models, plus majority voting.

Chains keep a dense slot-indexed mirror of the public GibbsState (see
kernels.py) and materialize snapshots back into domain types. One chain is
one sequential execution; replicates own independent generators spawned from
a SeedSequence, so runs are reproducible bit for bit.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import kernels
from .data import (
    NEW_CLUSTER,
    ClusterParams,
    GibbsState,
    Partition,
    validate_ground_truth,
)
from .errors import ValidationError
from .likelihoods import ModelKind
from .special import sample_antoniak_batch

__all__ = [
    "ChainConfig",
    "SampleRecord",
    "majority_vote",
    "sample_alpha",
    "gibbs_sweep_cbcc",
    "gibbs_sweep_hcbcc",
    "run_chain",
    "CbccChain",
    "IbccChain",
    "HcbccChain",
]


@dataclass
class ChainConfig:
    """Chain settings. alpha_subiterations = 0 freezes the concentration at its
    initial value (initial_alpha, defaulting to a_alpha / b_alpha)."""

    n_iterations: int = 10_000
    burn_in: int = 3_000
    seed: int = 0
    alpha_subiterations: int = 5
    h_aux_clusters: int = 10
    refresh_interval: int = 1
    initial_alpha: float = None

    def validate(self, model=None):
        if self.n_iterations < 1:
            raise ValidationError("n_iterations must be >= 1")
        if not (0 <= self.burn_in < self.n_iterations):
            raise ValidationError(
                f"burn_in must be in [0, n_iterations), got {self.burn_in}/{self.n_iterations}"
            )
        if self.alpha_subiterations < 0:
            raise ValidationError("alpha_subiterations must be >= 0")
        if model == ModelKind.HCBCC and self.h_aux_clusters < 1:
            raise ValidationError("h_aux_clusters must be >= 1 for the hierarchical model")
        if self.refresh_interval < 1:
            raise ValidationError("refresh_interval must be >= 1")
        if self.initial_alpha is not None and self.initial_alpha <= 0:
            raise ValidationError("initial_alpha must be positive")


@dataclass
class SampleRecord:
    """Post-burn-in snapshot of one sweep."""

    iteration: int
    z: np.ndarray
    assignment: np.ndarray
    alpha: float
    log_joint: float
    cluster_beta: dict = None
    cluster_eta: dict = None

    @property
    def n_clusters(self):
        return np.unique(self.assignment).size


def majority_vote(labels, rng):
    """Per-instance most frequent label; ties broken uniformly with the supplied rng."""
    ptr, _, labs = labels.by_instance()
    C = labels.n_categories
    z = np.zeros(labels.n_instances, dtype=np.int64)
    for i in range(labels.n_instances):
        lo, hi = ptr[i], ptr[i + 1]
        if lo == hi:
            raise ValidationError(f"instance {i} has no labels; majority vote needs coverage")
        votes = np.bincount(labs[lo:hi] - 1, minlength=C)
        best = np.nonzero(votes == votes.max())[0]
        z[i] = 1 + (best[0] if best.size == 1 else best[rng.integers(best.size)])
    return z


def _init_truth(labels, rng):
    """Chain initialization: majority vote with seeded uniform tie-breaks;
    uncovered instances draw a uniform category."""
    ptr, _, labs = labels.by_instance()
    C = labels.n_categories
    z = np.zeros(labels.n_instances, dtype=np.int64)
    for i in range(labels.n_instances):
        lo, hi = ptr[i], ptr[i + 1]
        if lo == hi:
            z[i] = 1 + rng.integers(C)
            continue
        votes = np.bincount(labs[lo:hi] - 1, minlength=C)
        best = np.nonzero(votes == votes.max())[0]
        z[i] = 1 + (best[0] if best.size == 1 else best[rng.integers(best.size)])
    return z


def sample_alpha(alpha, n_clusters, n_users, a_alpha, b_alpha, rng, rounds=5):
    """Concentration update under a Gamma(a, b) prior given M live clusters among L users.

    Each round draws x ~ Beta(alpha + 1, L), then alpha from the two-component
    gamma mixture with mixing odds (a + M - 1) / (L (b - log x)) between
    Gamma(a + M, b - log x) and Gamma(a + M - 1, b - log x).
    """
    if n_clusters < 1 or n_users < 1:
        raise ValidationError("need at least one cluster and one user")
    if alpha <= 0:
        raise ValidationError("alpha must be positive")
    M, L = n_clusters, n_users
    for _ in range(rounds):
        x = rng.beta(alpha + 1.0, L)
        x = max(x, 1e-300)
        rate = b_alpha - math.log(x)
        odds = (a_alpha + M - 1.0) / (L * rate)
        shape = a_alpha + M if rng.random() < odds / (1.0 + odds) else a_alpha + M - 1.0
        alpha = rng.standard_gamma(shape) / rate
        alpha = max(alpha, 1e-300)
    return alpha


def _hyper_arrays(hypers):
    beta = np.ascontiguousarray(hypers.beta, dtype=np.float64)
    beta_eta = np.ascontiguousarray(hypers.beta[:, None] * hypers.eta, dtype=np.float64)
    eps_mu = np.ascontiguousarray(hypers.epsilon * hypers.mu, dtype=np.float64)
    return beta, beta_eta, eps_mu


def _csr_arrays(labels):
    ptr, users, labs = labels.by_instance()
    return (
        np.ascontiguousarray(ptr, dtype=np.int64),
        np.ascontiguousarray(users, dtype=np.int64),
        np.ascontiguousarray(labs - 1, dtype=np.int64),
    )


def _user_counts(labels, z0):
    """Dense per-user and per-category tallies from scratch (0-based z)."""
    L, C = labels.n_users, labels.n_categories
    n_ltc = np.zeros((L, C, C), dtype=np.int64)
    np.add.at(n_ltc, (labels.users, z0[labels.instances], labels.labels - 1), 1)
    n_t = np.bincount(z0, minlength=C).astype(np.int64)
    return n_ltc, n_ltc.sum(axis=2), n_t


def _log_z_prior(n_t, hypers):
    N = int(n_t.sum())
    return float(
        gammaln(hypers.epsilon)
        - gammaln(N + hypers.epsilon)
        + np.sum(gammaln(n_t + hypers.epsilon * hypers.mu))
        - np.sum(gammaln(hypers.epsilon * hypers.mu))
    )


def _log_crp(sizes, alpha, L):
    return float(
        sizes.size * math.log(alpha)
        + np.sum(gammaln(sizes))
        + gammaln(alpha)
        - gammaln(alpha + L)
    )


def _dirmult_blocks(blocks, margs, beta, beta_eta):
    """Vectorized sum of collapsed Dirichlet-multinomial row terms over count blocks."""
    lik = np.sum(gammaln(beta) - gammaln(margs + beta))
    lik += np.sum(gammaln(blocks + beta_eta) - gammaln(beta_eta))
    return float(lik)


class CbccChain:
    """Collapsed sampler for the shared-confusion clustered model.

    update_assignments=False freezes the partition (the independent-model
    special case used in tests); alpha_rounds = 0 freezes alpha.
    """

    model = ModelKind.CBCC

    def __init__(self, labels, hypers, z_init, assignment_init, alpha,
                 update_assignments=True, alpha_rounds=5):
        if labels.n_categories != hypers.n_categories:
            raise ValidationError("hyperparameters sized for a different category count")
        self.labels = labels
        self.hypers = hypers
        L, C = labels.n_users, labels.n_categories
        self.beta, self.beta_eta, self.eps_mu = _hyper_arrays(hypers)
        self.inst_ptr, self.inst_user, self.inst_lab0 = _csr_arrays(labels)
        self.z0 = np.ascontiguousarray(
            validate_ground_truth(z_init, labels.n_instances, C) - 1, dtype=np.int64
        )
        self.n_ltc, self.n_lt, self.n_t = _user_counts(labels, self.z0)
        S = L + 1
        handles = np.asarray(assignment_init, dtype=np.int64)
        uniq = np.unique(handles)
        slot_of = {int(hh): s for s, hh in enumerate(uniq)}
        self.q = np.ascontiguousarray([slot_of[int(hh)] for hh in handles], dtype=np.int64)
        self.slot_state = np.zeros(S, dtype=np.int8)
        self.slot_size = np.zeros(S, dtype=np.int64)
        self.slot_handle = np.zeros(S, dtype=np.int64)
        self.n_slot_tc = np.zeros((S, C, C), dtype=np.int64)
        self.n_slot_t = np.zeros((S, C), dtype=np.int64)
        for hh, s in slot_of.items():
            self.slot_state[s] = kernels.LIVE
            self.slot_handle[s] = hh
        for l in range(L):
            s = self.q[l]
            self.slot_size[s] += 1
            self.n_slot_tc[s] += self.n_ltc[l]
        self.n_slot_t[:] = self.n_slot_tc.sum(axis=2)
        free = [s for s in range(S) if self.slot_state[s] == kernels.FREE]
        self.free_stack = np.zeros(S, dtype=np.int64)
        self.free_stack[: len(free)] = free
        # meta: [n_live, free_top, next_handle]
        self.meta = np.array([uniq.size, len(free), int(uniq.max()) + 1], dtype=np.int64)
        self.alpha = float(alpha)
        self.update_assignments = bool(update_assignments)
        self.alpha_rounds = int(alpha_rounds)

    @classmethod
    def from_state(cls, state, hypers, **kwargs):
        return cls(state.labels, hypers, state.z, state.partition.assignment,
                   state.alpha, **kwargs)

    @property
    def n_live(self):
        return int(self.meta[0])

    def sweep(self, rng, iteration=0):
        L = self.labels.n_users
        N = self.labels.n_instances
        if self.update_assignments:
            kernels.cbcc_user_sweep(
                self.q, self.slot_state, self.slot_size, self.slot_handle,
                self.free_stack, self.meta,
                self.n_slot_tc, self.n_slot_t, self.n_ltc, self.n_lt,
                self.beta, self.beta_eta, self.alpha, rng.random(L),
            )
        kernels.cbcc_z_sweep(
            self.z0, self.q, self.n_slot_tc, self.n_slot_t,
            self.n_ltc, self.n_lt, self.n_t,
            self.inst_ptr, self.inst_user, self.inst_lab0,
            self.beta, self.beta_eta, self.eps_mu, rng.random(N),
        )
        if self.update_assignments and self.alpha_rounds > 0:
            self.alpha = sample_alpha(
                self.alpha, self.n_live, L,
                self.hypers.a_alpha, self.hypers.b_alpha, rng, self.alpha_rounds,
            )

    def log_joint(self):
        live = self.slot_state == kernels.LIVE
        lik = _dirmult_blocks(self.n_slot_tc[live], self.n_slot_t[live],
                              self.beta, self.beta_eta)
        return (
            lik
            + _log_z_prior(self.n_t, self.hypers)
            + _log_crp(self.slot_size[live], self.alpha, self.labels.n_users)
        )

    def snapshot(self, iteration):
        return SampleRecord(
            iteration=iteration,
            z=(self.z0 + 1).copy(),
            assignment=self.slot_handle[self.q].copy(),
            alpha=self.alpha,
            log_joint=self.log_joint(),
        )

    def to_state(self):
        partition = Partition(self.slot_handle[self.q], next_handle=int(self.meta[2]))
        state = GibbsState.from_parts(self.labels, self.z0 + 1, partition, self.alpha)
        return state

    # --- weight probes used by tests -------------------------------------

    def user_log_weights(self, user):
        """(options, log weights) for user's conditional; options are live cluster
        handles (user excluded) plus NEW_CLUSTER last."""
        S = self.slot_state.shape[0]
        s0 = int(self.q[user])
        self.slot_size[s0] -= 1
        self.n_slot_tc[s0] -= self.n_ltc[user]
        self.n_slot_t[s0] -= self.n_lt[user]
        emptied = self.slot_size[s0] == 0
        if emptied:
            self.slot_state[s0] = kernels.FREE
        w = np.empty(S + 1)
        kernels.cbcc_user_logweights(
            user, self.slot_state, self.slot_size, self.n_slot_tc, self.n_slot_t,
            self.n_ltc, self.n_lt, self.beta, self.beta_eta, math.log(self.alpha), w,
        )
        live = np.nonzero(self.slot_state == kernels.LIVE)[0]
        options = [int(self.slot_handle[s]) for s in live] + [NEW_CLUSTER]
        weights = np.concatenate([w[live], [w[S]]])
        if emptied:
            self.slot_state[s0] = kernels.LIVE
        self.slot_size[s0] += 1
        self.n_slot_tc[s0] += self.n_ltc[user]
        self.n_slot_t[s0] += self.n_lt[user]
        return options, weights

    def truth_log_weights(self, instance):
        """Unnormalized log conditional over categories for one instance."""
        i = int(instance)
        lo, hi = self.inst_ptr[i], self.inst_ptr[i + 1]
        t0 = self.z0[i]
        self.n_t[t0] -= 1
        for k in range(lo, hi):
            l, c = self.inst_user[k], self.inst_lab0[k]
            s = self.q[l]
            self.n_ltc[l, t0, c] -= 1
            self.n_lt[l, t0] -= 1
            self.n_slot_tc[s, t0, c] -= 1
            self.n_slot_t[s, t0] -= 1
        w = np.empty(self.labels.n_categories)
        kernels.cbcc_z_logweights(
            i, self.q, self.n_slot_tc, self.n_slot_t, self.n_t,
            self.inst_ptr, self.inst_user, self.inst_lab0,
            self.beta, self.beta_eta, self.eps_mu, w,
        )
        self.n_t[t0] += 1
        for k in range(lo, hi):
            l, c = self.inst_user[k], self.inst_lab0[k]
            s = self.q[l]
            self.n_ltc[l, t0, c] += 1
            self.n_lt[l, t0] += 1
            self.n_slot_tc[s, t0, c] += 1
            self.n_slot_t[s, t0] += 1
        return w


class IbccChain:
    """Independent per-user model: truth updates only, singleton partition frozen."""

    model = ModelKind.IBCC

    def __init__(self, labels, hypers, z_init, alpha):
        if labels.n_categories != hypers.n_categories:
            raise ValidationError("hyperparameters sized for a different category count")
        self.labels = labels
        self.hypers = hypers
        L, C = labels.n_users, labels.n_categories
        self.beta, self.beta_eta, self.eps_mu = _hyper_arrays(hypers)
        self.inst_ptr, self.inst_user, self.inst_lab0 = _csr_arrays(labels)
        self.z0 = np.ascontiguousarray(
            validate_ground_truth(z_init, labels.n_instances, C) - 1, dtype=np.int64
        )
        self.n_ltc, self.n_lt, self.n_t = _user_counts(labels, self.z0)
        self.user_beta = np.ascontiguousarray(np.broadcast_to(self.beta, (L, C)))
        self.user_beta_eta = np.ascontiguousarray(np.broadcast_to(self.beta_eta, (L, C, C)))
        self.assignment = np.arange(L, dtype=np.int64)
        self.alpha = float(alpha)

    @property
    def n_live(self):
        return self.labels.n_users

    def sweep(self, rng, iteration=0):
        kernels.factorized_z_sweep(
            self.z0, self.n_ltc, self.n_lt, self.n_t,
            self.inst_ptr, self.inst_user, self.inst_lab0,
            self.user_beta, self.user_beta_eta, self.eps_mu,
            rng.random(self.labels.n_instances),
        )

    def log_joint(self):
        lik = _dirmult_blocks(self.n_ltc, self.n_lt, self.beta, self.beta_eta)
        return lik + _log_z_prior(self.n_t, self.hypers)

    def snapshot(self, iteration):
        return SampleRecord(
            iteration=iteration,
            z=(self.z0 + 1).copy(),
            assignment=self.assignment.copy(),
            alpha=self.alpha,
            log_joint=self.log_joint(),
        )

    def to_state(self):
        return GibbsState.from_parts(
            self.labels, self.z0 + 1, Partition.singletons(self.labels.n_users), self.alpha
        )

    def truth_log_weights(self, instance):
        i = int(instance)
        lo, hi = self.inst_ptr[i], self.inst_ptr[i + 1]
        t0 = self.z0[i]
        self.n_t[t0] -= 1
        for k in range(lo, hi):
            l, c = self.inst_user[k], self.inst_lab0[k]
            self.n_ltc[l, t0, c] -= 1
            self.n_lt[l, t0] -= 1
        w = np.empty(self.labels.n_categories)
        kernels.factorized_z_logweights(
            i, self.n_ltc, self.n_lt, self.n_t,
            self.inst_ptr, self.inst_user, self.inst_lab0,
            self.user_beta, self.user_beta_eta, self.eps_mu, w,
        )
        self.n_t[t0] += 1
        for k in range(lo, hi):
            l, c = self.inst_user[k], self.inst_lab0[k]
            self.n_ltc[l, t0, c] += 1
            self.n_lt[l, t0] += 1
        return w


class HcbccChain:
    """Hierarchical sampler: Reuse-style assignment updates over h auxiliary empty
    clusters, auxiliary-variable updates for the per-cluster precisions/means,
    factorized truth updates, and the concentration update."""

    model = ModelKind.HCBCC

    def __init__(self, labels, hypers, z_init, assignment_init, alpha, rng,
                 cluster_params_init=None, h=10, refresh_interval=1, alpha_rounds=5):
        if labels.n_categories != hypers.n_categories:
            raise ValidationError("hyperparameters sized for a different category count")
        if h < 1:
            raise ValidationError("h must be >= 1")
        self.labels = labels
        self.hypers = hypers
        self.h = int(h)
        self.refresh_interval = int(refresh_interval)
        self.alpha_rounds = int(alpha_rounds)
        L, C = labels.n_users, labels.n_categories
        self.beta_top, _, self.eps_mu = _hyper_arrays(hypers)
        self.phi_gamma = np.ascontiguousarray(hypers.phi[:, None] * hypers.gamma)
        self.inst_ptr, self.inst_user, self.inst_lab0 = _csr_arrays(labels)
        self.z0 = np.ascontiguousarray(
            validate_ground_truth(z_init, labels.n_instances, C) - 1, dtype=np.int64
        )
        self.n_ltc, self.n_lt, self.n_t = _user_counts(labels, self.z0)
        S = L + self.h + 1
        handles = np.asarray(assignment_init, dtype=np.int64)
        uniq = np.unique(handles)
        slot_of = {int(hh): s for s, hh in enumerate(uniq)}
        self.q = np.ascontiguousarray([slot_of[int(hh)] for hh in handles], dtype=np.int64)
        self.slot_state = np.zeros(S, dtype=np.int8)
        self.slot_size = np.zeros(S, dtype=np.int64)
        self.slot_handle = np.zeros(S, dtype=np.int64)
        self.slot_beta = np.ones((S, C), dtype=np.float64)
        self.slot_eta = np.full((S, C, C), 1.0 / C, dtype=np.float64)
        next_handle = int(uniq.max()) + 1
        for hh, s in slot_of.items():
            self.slot_state[s] = kernels.LIVE
            self.slot_handle[s] = hh
        for l in range(L):
            self.slot_size[self.q[l]] += 1
        for s in range(uniq.size):
            hh = int(self.slot_handle[s])
            if cluster_params_init is not None and hh in cluster_params_init:
                params = cluster_params_init[hh]
                self.slot_beta[s] = np.asarray(params.beta, dtype=float)
                self.slot_eta[s] = np.asarray(params.eta, dtype=float)
            else:
                self.slot_beta[s], self.slot_eta[s] = self._prior_draw(rng)
        self.aux_slots = np.arange(uniq.size, uniq.size + self.h, dtype=np.int64)
        for j, s in enumerate(self.aux_slots):
            self.slot_state[s] = kernels.AUX
            self.slot_handle[s] = next_handle
            next_handle += 1
            self.slot_beta[s], self.slot_eta[s] = self._prior_draw(rng)
        free = [s for s in range(S) if self.slot_state[s] == kernels.FREE]
        self.free_stack = np.zeros(S, dtype=np.int64)
        self.free_stack[: len(free)] = free
        # meta: [n_live, free_top, next_handle, fresh_used]
        self.meta = np.array([uniq.size, len(free), next_handle, 0], dtype=np.int64)
        self.alpha = float(alpha)
        self.nu = np.ones((L, C), dtype=np.float64)
        self.s_counts = np.zeros((L, C, C), dtype=np.int64)

    @classmethod
    def from_state(cls, state, hypers, rng, **kwargs):
        params = state.cluster_params or None
        return cls(state.labels, hypers, state.z, state.partition.assignment,
                   state.alpha, rng, cluster_params_init=params, **kwargs)

    def _prior_draw(self, rng):
        """One cluster's (beta, eta) from the top-level priors."""
        beta = rng.standard_gamma(self.hypers.a_t) / self.hypers.b_t
        eta = rng.standard_gamma(self.phi_gamma)
        eta /= eta.sum(axis=1, keepdims=True)
        return beta, eta

    def _prior_draws(self, rng, count):
        """count iid cluster parameter sets, vectorized."""
        C = self.labels.n_categories
        beta = rng.standard_gamma(np.broadcast_to(self.hypers.a_t, (count, C)))
        beta = beta / self.hypers.b_t
        eta = rng.standard_gamma(np.broadcast_to(self.phi_gamma, (count, C, C)))
        eta = eta / eta.sum(axis=2, keepdims=True)
        return np.ascontiguousarray(beta), np.ascontiguousarray(eta)

    @property
    def n_live(self):
        return int(self.meta[0])

    def update_assignments(self, rng):
        L = self.labels.n_users
        fresh_beta, fresh_eta = self._prior_draws(rng, L)
        self.meta[3] = 0
        kernels.hcbcc_user_sweep(
            self.q, self.slot_state, self.slot_size, self.slot_handle,
            self.free_stack, self.meta,
            self.n_ltc, self.n_lt, self.slot_beta, self.slot_eta, self.aux_slots,
            self.alpha, rng.random(L), rng.random(L), fresh_beta, fresh_eta,
        )

    def update_auxiliaries(self, rng):
        """nu ~ Beta(beta^q, n_lt) where n_lt > 0; s ~ Antoniak(n_ltc, beta^q eta^q)."""
        qb = self.slot_beta[self.q]
        self.nu.fill(1.0)
        mask = self.n_lt > 0
        if np.any(mask):
            self.nu[mask] = rng.beta(qb[mask], self.n_lt[mask])
        theta = qb[:, :, None] * self.slot_eta[self.q]
        self.s_counts = sample_antoniak_batch(self.n_ltc, theta, rng)

    def update_cluster_params(self, rng):
        """Conjugate updates given (nu, s): eta rows Dirichlet, beta entries Gamma."""
        S = self.slot_state.shape[0]
        C = self.labels.n_categories
        s_sum = np.zeros((S, C, C))
        np.add.at(s_sum, self.q, self.s_counts)
        lognu_sum = np.zeros((S, C))
        np.add.at(lognu_sum, self.q, np.log(self.nu))
        live = np.nonzero(self.slot_state == kernels.LIVE)[0]
        conc = s_sum[live] + self.phi_gamma
        eta = rng.standard_gamma(conc)
        eta /= eta.sum(axis=2, keepdims=True)
        self.slot_eta[live] = eta
        shape = s_sum[live].sum(axis=2) + self.hypers.a_t
        rate = self.hypers.b_t - lognu_sum[live]
        self.slot_beta[live] = rng.standard_gamma(shape) / rate

    def refresh_aux_params(self, rng):
        beta, eta = self._prior_draws(rng, self.h)
        self.slot_beta[self.aux_slots] = beta
        self.slot_eta[self.aux_slots] = eta

    def update_truths(self, rng):
        user_beta = np.ascontiguousarray(self.slot_beta[self.q])
        user_beta_eta = np.ascontiguousarray(user_beta[:, :, None] * self.slot_eta[self.q])
        kernels.factorized_z_sweep(
            self.z0, self.n_ltc, self.n_lt, self.n_t,
            self.inst_ptr, self.inst_user, self.inst_lab0,
            user_beta, user_beta_eta, self.eps_mu,
            rng.random(self.labels.n_instances),
        )

    def sweep(self, rng, iteration=0):
        self.update_assignments(rng)
        self.update_auxiliaries(rng)
        self.update_cluster_params(rng)
        if (iteration + 1) % self.refresh_interval == 0:
            self.refresh_aux_params(rng)
        self.update_truths(rng)
        if self.alpha_rounds > 0:
            self.alpha = sample_alpha(
                self.alpha, self.n_live, self.labels.n_users,
                self.hypers.a_alpha, self.hypers.b_alpha, rng, self.alpha_rounds,
            )

    def log_joint(self):
        """Joint score of the current state: CRP + truth prior + factorized
        likelihood + the live clusters' parameter priors."""
        live = np.nonzero(self.slot_state == kernels.LIVE)[0]
        user_beta = self.slot_beta[self.q]
        user_beta_eta = user_beta[:, :, None] * self.slot_eta[self.q]
        lik = float(
            np.sum(gammaln(user_beta) - gammaln(self.n_lt + user_beta))
            + np.sum(gammaln(self.n_ltc + user_beta_eta) - gammaln(user_beta_eta))
        )
        eta_l = self.slot_eta[live]
        beta_l = self.slot_beta[live]
        prior = float(
            live.size * np.sum(gammaln(self.hypers.phi) - gammaln(self.phi_gamma).sum(axis=1))
            + np.sum((self.phi_gamma - 1.0) * np.log(eta_l))
            + live.size * np.sum(self.hypers.a_t * np.log(self.hypers.b_t)
                                 - gammaln(self.hypers.a_t))
            + np.sum((self.hypers.a_t - 1.0) * np.log(beta_l) - self.hypers.b_t * beta_l)
        )
        return (
            lik + prior
            + _log_z_prior(self.n_t, self.hypers)
            + _log_crp(self.slot_size[live], self.alpha, self.labels.n_users)
        )

    def snapshot(self, iteration):
        live = np.nonzero(self.slot_state == kernels.LIVE)[0]
        return SampleRecord(
            iteration=iteration,
            z=(self.z0 + 1).copy(),
            assignment=self.slot_handle[self.q].copy(),
            alpha=self.alpha,
            log_joint=self.log_joint(),
            cluster_beta={int(self.slot_handle[s]): self.slot_beta[s].copy() for s in live},
            cluster_eta={int(self.slot_handle[s]): self.slot_eta[s].copy() for s in live},
        )

    def to_state(self):
        partition = Partition(self.slot_handle[self.q], next_handle=int(self.meta[2]))
        params = {}
        aux_handles = []
        for s in range(self.slot_state.shape[0]):
            if self.slot_state[s] == kernels.FREE:
                continue
            hh = int(self.slot_handle[s])
            params[hh] = ClusterParams(self.slot_beta[s].copy(), self.slot_eta[s].copy())
            if self.slot_state[s] == kernels.AUX:
                aux_handles.append(hh)
        state = GibbsState.from_parts(self.labels, self.z0 + 1, partition, self.alpha,
                                      cluster_params=params, aux_handles=aux_handles)
        state.nu = self.nu.copy()
        state.s = self.s_counts.copy()
        return state

    def replace_labels(self, labels):
        """Swap in a new annotation matrix on the same (N, L, C) footprint,
        keeping z, the partition, and all parameters (joint-distribution tests)."""
        if (labels.n_instances, labels.n_users, labels.n_categories) != (
            self.labels.n_instances, self.labels.n_users, self.labels.n_categories,
        ):
            raise ValidationError("replacement labels must match the chain's dimensions")
        self.labels = labels
        self.inst_ptr, self.inst_user, self.inst_lab0 = _csr_arrays(labels)
        self.n_ltc, self.n_lt, n_t = _user_counts(labels, self.z0)
        assert np.array_equal(n_t, self.n_t)

    # --- weight probes used by tests -------------------------------------

    def user_log_weights(self, user):
        """(options, log weights) with the user detached; options are live handles
        (user excluded) then the h auxiliary handles."""
        s0 = int(self.q[user])
        self.slot_size[s0] -= 1
        emptied = self.slot_size[s0] == 0
        if emptied:
            self.slot_state[s0] = kernels.AUX  # weights treat it as a spare
        S = self.slot_state.shape[0]
        w = np.empty(S)
        kernels.hcbcc_user_logweights(
            user, self.slot_state, self.slot_size, self.n_ltc, self.n_lt,
            self.slot_beta, self.slot_eta, math.log(self.alpha / self.h), w,
        )
        live = np.nonzero(self.slot_state == kernels.LIVE)[0]
        aux = [s for s in self.aux_slots] + ([s0] if emptied else [])
        options = [int(self.slot_handle[s]) for s in live]
        options += [int(self.slot_handle[s]) for s in aux]
        weights = np.concatenate([w[live], w[np.asarray(aux, dtype=np.int64)]])
        if emptied:
            self.slot_state[s0] = kernels.LIVE
        self.slot_size[s0] += 1
        return options, weights

    def truth_log_weights(self, instance):
        i = int(instance)
        lo, hi = self.inst_ptr[i], self.inst_ptr[i + 1]
        t0 = self.z0[i]
        self.n_t[t0] -= 1
        for k in range(lo, hi):
            l, c = self.inst_user[k], self.inst_lab0[k]
            self.n_ltc[l, t0, c] -= 1
            self.n_lt[l, t0] -= 1
        user_beta = np.ascontiguousarray(self.slot_beta[self.q])
        user_beta_eta = np.ascontiguousarray(user_beta[:, :, None] * self.slot_eta[self.q])
        w = np.empty(self.labels.n_categories)
        kernels.factorized_z_logweights(
            i, self.n_ltc, self.n_lt, self.n_t,
            self.inst_ptr, self.inst_user, self.inst_lab0,
            user_beta, user_beta_eta, self.eps_mu, w,
        )
        self.n_t[t0] += 1
        for k in range(lo, hi):
            l, c = self.inst_user[k], self.inst_lab0[k]
            self.n_ltc[l, t0, c] += 1
            self.n_lt[l, t0] += 1
        return w


def gibbs_sweep_cbcc(state, hypers, rng, update_assignments=True, alpha_rounds=5):
    """One full collapsed sweep on a GibbsState; returns the updated state."""
    chain = CbccChain.from_state(state, hypers, update_assignments=update_assignments,
                                 alpha_rounds=alpha_rounds)
    chain.sweep(rng)
    return chain.to_state()


def gibbs_sweep_hcbcc(state, hypers, rng, h=None, refresh_interval=1, alpha_rounds=5):
    """One full hierarchical sweep on a GibbsState; returns the updated state.

    h defaults to the state's auxiliary pool size (or 10 when absent); the
    incoming aux parameters are kept when the pool matches h.
    """
    if h is None:
        h = len(state.aux_handles) if state.aux_handles else 10
    chain = HcbccChain.from_state(state, hypers, rng, h=h,
                                  refresh_interval=refresh_interval,
                                  alpha_rounds=alpha_rounds)
    if state.aux_handles and len(state.aux_handles) == chain.h and state.cluster_params:
        for j, hh in enumerate(state.aux_handles):
            if hh in state.cluster_params:
                s = chain.aux_slots[j]
                chain.slot_handle[s] = hh
                chain.slot_beta[s] = np.asarray(state.cluster_params[hh].beta, dtype=float)
                chain.slot_eta[s] = np.asarray(state.cluster_params[hh].eta, dtype=float)
        chain.meta[2] = max(int(chain.meta[2]), max(state.aux_handles) + 1)
    chain.sweep(rng)
    return chain.to_state()


def _build_chain(model, labels, hypers, config, rng):
    z_init = _init_truth(labels, rng)
    alpha0 = (
        config.initial_alpha
        if config.initial_alpha is not None
        else hypers.a_alpha / hypers.b_alpha
    )
    if model == ModelKind.IBCC:
        return IbccChain(labels, hypers, z_init, alpha0)
    if model == ModelKind.CBCC:
        return CbccChain(labels, hypers, z_init, np.zeros(labels.n_users, dtype=np.int64),
                         alpha0, update_assignments=True,
                         alpha_rounds=config.alpha_subiterations)
    if model == ModelKind.HCBCC:
        return HcbccChain(labels, hypers, z_init, np.zeros(labels.n_users, dtype=np.int64),
                          alpha0, rng, h=config.h_aux_clusters,
                          refresh_interval=config.refresh_interval,
                          alpha_rounds=config.alpha_subiterations)
    raise ValidationError(f"run_chain does not support model {model!r}")


def run_chain(model, labels, hypers, config):
    """Run one MCMC chain; returns the post-burn-in SampleRecords.

    Deterministic given (inputs, config.seed). Majority voting has no chain
    and is rejected here.
    """
    model = ModelKind.parse(model)
    if model == ModelKind.MAJORITY_VOTE:
        raise ValidationError("majority voting has no MCMC chain; use majority_vote()")
    config.validate(model)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    chain = _build_chain(model, labels, hypers, config, rng)
    records = []
    for it in range(config.n_iterations):
        chain.sweep(rng, it)
        if it >= config.burn_in:
            records.append(chain.snapshot(it))
    return records
