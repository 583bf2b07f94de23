"""Closed-form collapsed likelihoods, prior densities, and the analytic
prior correlation between two annotators' labels.

Gamma-function ratios with integer offsets are evaluated as rising-factorial
log sums, so these evaluators stay exact even at extreme precisions (the
hierarchical model degenerates to the shared-confusion model as the
per-cluster precisions grow, and tests compare the two routes directly).
"""

import enum
import math

import numpy as np
from scipy.special import gammaln

from .errors import ValidationError
from .special import log_rising_factorial

__all__ = [
    "ModelKind",
    "log_collapsed_likelihood_cbcc",
    "log_collapsed_z_prior",
    "log_collapsed_likelihood_hcbcc",
    "log_crp_partition",
    "prior_correlation_cbcc",
]


class ModelKind(str, enum.Enum):
    MAJORITY_VOTE = "mv"
    IBCC = "ibcc"
    CBCC = "cbcc"
    HCBCC = "hcbcc"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValidationError(
                f"unknown model {name!r}; expected one of {[m.value for m in cls]}"
            ) from None


def _dirichlet_multinomial_block(block, beta, eta):
    """log integral of a product-multinomial row likelihood under Dir(beta_t eta_t) rows.

    block[t, c] are label counts; returns sum over t of
    -log_rising(beta_t, n_t.) + sum_c log_rising(beta_t eta_tc, n_tc).
    """
    C = block.shape[0]
    total = 0.0
    for t in range(C):
        row_n = int(block[t].sum())
        if row_n == 0:
            continue
        total -= log_rising_factorial(beta[t], row_n)
        for c in range(C):
            n = int(block[t, c])
            if n:
                total += log_rising_factorial(beta[t] * eta[t, c], n)
    return total


def log_collapsed_likelihood_cbcc(counts, hypers):
    """log p(Y | partition, z, eta, beta) with per-cluster confusion rows integrated out.

    With every user in a singleton cluster this is exactly the independent
    (per-user) model's collapsed likelihood.
    """
    return sum(
        _dirichlet_multinomial_block(block, hypers.beta, hypers.eta)
        for block in counts.cluster_blocks.values()
    )


def log_collapsed_z_prior(counts, hypers):
    """log p(z | epsilon, mu): Dirichlet-multinomial over the per-category instance counts."""
    N = counts.n_instances
    total = -log_rising_factorial(hypers.epsilon, N)
    for t, n in enumerate(counts.truth_counts):
        if n:
            total += log_rising_factorial(hypers.epsilon * hypers.mu[t], int(n))
    return total


def log_collapsed_likelihood_hcbcc(counts, partition, cluster_params, hypers):
    """log p(Y | z, partition, cluster params) with per-user confusion rows integrated out.

    cluster_params must supply (beta, eta) for every live cluster; per-user
    rows are Dir(beta^m eta^m) within cluster m.
    """
    total = 0.0
    for handle, size in partition.sizes.items():
        if handle not in cluster_params:
            raise ValidationError(f"missing parameters for live cluster {handle}")
        params = cluster_params[handle]
        for user in partition.members(handle):
            total += _dirichlet_multinomial_block(
                counts.user_blocks[user], params.beta, params.eta
            )
    return total


def log_crp_partition(sizes, alpha, n_users=None):
    """Exact log pmf of a partition under the Chinese restaurant process.

    sizes: iterable of cluster sizes. alpha^M prod_m (|m|-1)! Gamma(alpha)/Gamma(alpha+L).
    """
    sizes = [int(s) for s in sizes]
    if alpha <= 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    L = sum(sizes)
    if n_users is not None and n_users != L:
        raise ValidationError(f"cluster sizes sum to {L}, expected {n_users} users")
    total = len(sizes) * math.log(alpha) - log_rising_factorial(alpha, L)
    for s in sizes:
        total += gammaln(s)
    return float(total)


def prior_correlation_cbcc(alpha, beta_t, eta_t, a, b):
    """A-priori correlation of indicator(y_l = a) and indicator(y_l' = b) for two users
    labeling the same truth-t instance under the clustered model.

    Equals (1/(1+alpha)) (1/(1+beta_t)) for a = b and
    -(same factor) sqrt(eta_a eta_b / ((1-eta_a)(1-eta_b))) for a != b.
    """
    eta_t = np.asarray(eta_t, dtype=float)
    C = eta_t.size
    if alpha <= 0 or beta_t <= 0:
        raise ValidationError("alpha and beta_t must be positive")
    if not (1 <= a <= C and 1 <= b <= C):
        raise ValidationError(f"categories must be in 1..{C}, got a={a}, b={b}")
    shared = (1.0 / (1.0 + alpha)) * (1.0 / (1.0 + beta_t))
    if a == b:
        return shared
    ea, eb = eta_t[a - 1], eta_t[b - 1]
    if ea >= 1.0 or eb >= 1.0:
        raise ValidationError("indicator variance is zero when an eta component equals 1")
    return -shared * math.sqrt((ea * eb) / ((1.0 - ea) * (1.0 - eb)))
