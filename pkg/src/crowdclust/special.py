"""Numerically stable special functions and the distribution draws the samplers need.

Everything works in natural-log space; every sampler takes an explicit
numpy Generator so callers own their streams.
"""

import math

import numpy as np
from scipy.special import gammaln

from .errors import ValidationError

__all__ = [
    "log_gamma",
    "log_rising_factorial",
    "LogStirlingTable",
    "sample_antoniak",
    "sample_antoniak_batch",
    "sample_dirichlet",
    "sample_gamma",
    "sample_beta",
    "sample_categorical_log",
]


def log_gamma(x):
    """log Gamma(x) for x > 0 (scalar or array)."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0.0):
        raise ValidationError(f"log_gamma requires x > 0, got {x!r}")
    out = gammaln(arr)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def log_rising_factorial(x, n):
    """log[ x (x+1) ... (x+n-1) ] = log Gamma(x+n) - log Gamma(x) for integer n >= 0.

    Computed as a sum of logs, which is exact to machine precision even
    when x is huge and the lgamma difference would cancel catastrophically.
    """
    if n < 0:
        raise ValidationError(f"log_rising_factorial requires n >= 0, got {n}")
    if x <= 0.0:
        raise ValidationError(f"log_rising_factorial requires x > 0, got {x}")
    if n == 0:
        return 0.0
    if n > 64:
        return float(np.log(x + np.arange(int(n))).sum())
    total = 0.0
    for j in range(int(n)):
        total += math.log(x + j)
    return total


class LogStirlingTable:
    """Triangular table of log unsigned Stirling numbers of the first kind.

    c(n, k) counts permutations of n elements with k cycles; equivalently it is
    the coefficient of x^k in the rising factorial x(x+1)...(x+n-1), which makes
    c(n, .) the unnormalized pmf of the cluster count of a CRP seating of n items.
    Built once by the recurrence c(n+1, k) = n c(n, k) + c(n, k-1) in log space.
    """

    def __init__(self, max_n):
        if max_n < 1:
            raise ValidationError(f"max_n must be >= 1, got {max_n}")
        self.max_n = int(max_n)
        table = np.full((self.max_n + 1, self.max_n + 1), -np.inf)
        table[0, 0] = 0.0
        for n in range(1, self.max_n + 1):
            prev = table[n - 1]
            table[n, 1 : n + 1] = np.logaddexp(
                math.log(n - 1) + prev[1 : n + 1] if n > 1 else -np.inf,
                prev[0:n],
            )
        self._table = table

    def log_value(self, n, k):
        """log c(n, k); -inf where c(n, k) = 0."""
        if not (0 <= n <= self.max_n):
            raise ValidationError(f"n must be in 0..{self.max_n}, got {n}")
        if not (0 <= k <= n):
            return -math.inf
        return float(self._table[n, k])

    def antoniak_log_pmf(self, n, theta):
        """Log pmf over k = 0..n of the cluster count of a CRP(theta) seating n items.

        P(K = k) = c(n, k) theta^k Gamma(theta) / Gamma(theta + n).
        """
        if theta <= 0.0:
            raise ValidationError(f"theta must be positive, got {theta}")
        if not (0 <= n <= self.max_n):
            raise ValidationError(f"n must be in 0..{self.max_n}, got {n}")
        ks = np.arange(n + 1)
        return self._table[n, : n + 1] + ks * math.log(theta) - log_rising_factorial(theta, n)


def sample_antoniak(n, theta, rng, size=None):
    """Draw the number of occupied tables after a CRP(theta) seats n customers.

    Exact via the sum of independent Bernoulli(theta / (theta + i)) for
    i = 0..n-1; n = 0 yields 0. With `size`, returns an int array of iid draws.
    """
    if theta <= 0.0:
        raise ValidationError(f"theta must be positive, got {theta}")
    if n < 0:
        raise ValidationError(f"n must be >= 0, got {n}")
    n = int(n)
    if size is None:
        if n == 0:
            return 0
        return int(np.count_nonzero(rng.random(n) * (theta + np.arange(n)) < theta))
    if n == 0:
        return np.zeros(int(size), dtype=np.int64)
    probs = theta / (theta + np.arange(n))
    draws = rng.random((int(size), n)) < probs
    return draws.sum(axis=1).astype(np.int64)


def sample_antoniak_batch(ns, thetas, rng):
    """Independent Antoniak draws for paired (n, theta) arrays, one pass of uniforms.

    Same Bernoulli-sum representation as sample_antoniak; entries with n = 0
    yield 0. Returns an int64 array shaped like ns.
    """
    ns = np.asarray(ns, dtype=np.int64)
    thetas = np.asarray(thetas, dtype=float)
    if ns.shape != thetas.shape:
        raise ValidationError("ns and thetas must have matching shapes")
    if np.any(ns < 0):
        raise ValidationError("counts must be >= 0")
    if np.any(thetas[ns > 0] <= 0.0):
        raise ValidationError("theta must be positive wherever n > 0")
    out = np.zeros(ns.shape, dtype=np.int64)
    flat_n = ns.ravel()
    pos = np.nonzero(flat_n)[0]
    if pos.size == 0:
        return out
    counts = flat_n[pos]
    total = int(counts.sum())
    offsets = np.zeros(pos.size, dtype=np.int64)
    np.cumsum(counts[:-1], out=offsets[1:])
    j = np.arange(total, dtype=np.int64) - np.repeat(offsets, counts)
    th = np.repeat(thetas.ravel()[pos], counts)
    hits = rng.random(total) * (th + j) < th
    out.ravel()[pos] = np.add.reduceat(hits, offsets)
    return out


def sample_dirichlet(concentration, rng):
    """Dirichlet draw; concentration strictly positive, output sums to 1."""
    conc = np.asarray(concentration, dtype=float)
    if conc.ndim != 1 or conc.size < 1:
        raise ValidationError("concentration must be a 1-D vector")
    if np.any(conc <= 0.0):
        raise ValidationError(f"concentration must be positive, got {conc}")
    g = rng.standard_gamma(conc)
    total = g.sum()
    if total == 0.0:
        # all-tiny concentrations can underflow every gamma draw; normalize a one-hot
        g[rng.integers(conc.size)] = 1.0
        total = 1.0
    return g / total


def sample_gamma(shape, rate, rng):
    """Gamma draw parameterized by shape and *rate* (mean = shape / rate)."""
    if shape <= 0.0 or rate <= 0.0:
        raise ValidationError(f"shape and rate must be positive, got {shape}, {rate}")
    return float(rng.standard_gamma(shape) / rate)


def sample_beta(a, b, rng):
    """Beta(a, b) draw."""
    if a <= 0.0 or b <= 0.0:
        raise ValidationError(f"a and b must be positive, got {a}, {b}")
    return float(rng.beta(a, b))


def sample_categorical_log(log_weights, rng):
    """Draw an index with probability proportional to exp(log_weights).

    Stable under any additive shift of the weights; -inf entries are
    impossible outcomes. All--inf weight vectors are rejected.
    """
    w = np.asarray(log_weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValidationError("log_weights must be a non-empty 1-D vector")
    top = np.max(w)
    if not np.isfinite(top):
        raise ValidationError("sample_categorical_log: no finite weight (degenerate distribution)")
    p = np.exp(w - top)
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    return int(np.searchsorted(cdf, u, side="right").clip(0, w.size - 1))
