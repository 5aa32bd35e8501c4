"""Mixture-of-finite-mixtures machinery.

Covers the V_n(t) coefficients, the Polya-urn conditional weights, the
shifted-Poisson prior on the number of components and the exponential
stick-breaking construction of (K, pi).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

VN_MAX_TERMS = 5000
VN_RTOL = 1e-12


class TruncationError(RuntimeError):
    """Stick-breaking needed more components than the truncation allows."""


class SeriesConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class MfmConfig:
    """Hyperparameters of one direction's MFM prior.

    ``dirichlet_gamma`` enters V_n(t) and the urn weights; ``nu`` is the
    Dirichlet parameter of the weights used by the sampler; ``psi`` is the
    rate of the exponential sticks, so that K - 1 ~ Poisson(psi).
    """

    dirichlet_gamma: float = 1.0
    nu: float = 1.0
    psi: float = 1.0
    k_prior: str = "shifted_poisson"
    truncation_T: int = 15

    def __post_init__(self):
        if not self.dirichlet_gamma > 0:
            raise ValueError("dirichlet_gamma must be positive")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.psi > 0:
            raise ValueError("psi must be positive")
        if self.k_prior != "shifted_poisson":
            raise ValueError(f"unsupported k_prior {self.k_prior!r}; only 'shifted_poisson'")
        if int(self.truncation_T) != self.truncation_T or self.truncation_T < 2:
            raise ValueError("truncation_T must be an integer >= 2")


def k_prior_log_pmf(k, cfg: MfmConfig):
    """log P(K = k) under K - 1 ~ Poisson(psi). Vectorised over ``k``."""
    k_arr = np.asarray(k)
    if np.any(k_arr < 1):
        raise ValueError("K must be at least 1")
    km1 = k_arr - 1.0
    out = km1 * math.log(cfg.psi) - cfg.psi - gammaln(km1 + 1.0)
    return float(out) if np.ndim(out) == 0 else out


@functools.lru_cache(maxsize=65536)
def _log_vn_cached(t: int, n: int, gamma: float, psi: float) -> float:
    log_psi = math.log(psi)
    acc = -math.inf
    prev = -math.inf
    for k in range(t, t + VN_MAX_TERMS):
        term = (
            math.lgamma(k + 1) - math.lgamma(k - t + 1)            # falling factorial k_(t)
            - (math.lgamma(gamma * k + n) - math.lgamma(gamma * k))  # rising factorial
            + (k - 1) * log_psi - psi - math.lgamma(k)              # shifted Poisson p(k)
        )
        acc = np.logaddexp(acc, term)
        # past the mode the terms decay faster than geometrically, so the
        # remaining tail is bounded by a few times the current term
        if term < prev and term - acc < math.log(VN_RTOL) - 5.0:
            return float(acc)
        prev = term
    raise SeriesConvergenceError(
        f"V_n(t) series for n={n}, t={t}, gamma={gamma} did not converge "
        f"within {VN_MAX_TERMS} terms (last log-term {prev:.3g}, log-sum {acc:.3g})"
    )


def log_vn(t: int, n: int, cfg: MfmConfig) -> float:
    """log V_n(t) = log sum_k k_(t) / (gamma k)^(n) p(k)."""
    t, n = int(t), int(n)
    if n < 1 or t < 1:
        raise ValueError("t and n must be positive")
    if t > n:
        raise ValueError(f"t={t} exceeds n={n}")
    return _log_vn_cached(t, n, float(cfg.dirichlet_gamma), float(cfg.psi))


def urn_weights(sizes, n: int, cfg: MfmConfig) -> np.ndarray:
    """Unnormalised Polya-urn weights for placing one observation.

    ``sizes`` are the occupancies of the existing clusters once the
    observation is removed, and ``n`` is the total number of observations.
    The returned array holds one weight per existing cluster followed by
    the weight of opening a new cluster.
    """
    sizes = np.asarray(sizes, dtype=float).ravel()
    if np.any(sizes < 1):
        raise ValueError("existing clusters must be nonempty")
    t = sizes.size
    g = cfg.dirichlet_gamma
    if t == 0:
        return np.array([1.0])
    if t + 1 > n:
        new = 0.0
    else:
        new = math.exp(log_vn(t + 1, n, cfg) - log_vn(t, n, cfg)) * g
    return np.append(sizes + g, new)


def stick_breaking_from_eta(eta, truncation_T: int | None = None):
    """Apply the stick-breaking steps to an explicit sequence of sticks.

    Returns ``(K, pi)`` where ``pi`` has length K. Raises if the sticks
    never reach 1 or if K would exceed ``truncation_T``.
    """
    eta = np.asarray(eta, dtype=float)
    csum = np.cumsum(eta)
    hits = np.nonzero(csum >= 1.0)[0]
    if hits.size == 0:
        raise TruncationError(
            f"{eta.size} sticks sum to {csum[-1] if eta.size else 0.0:.4g} < 1; "
            "increase truncation_T"
        )
    K = int(hits[0]) + 1
    if truncation_T is not None and K > truncation_T:
        raise TruncationError(f"K={K} exceeds truncation_T={truncation_T}; increase truncation_T")
    pi = eta[:K].copy()
    pi[K - 1] = 1.0 - eta[: K - 1].sum()
    return K, pi


def stick_breaking_sample(cfg: MfmConfig, rng):
    """Draw (K, pi) by exponential stick-breaking with rate ``psi``.

    Returns K and a length-T weight vector whose trailing T - K entries are
    exactly zero.
    """
    T = cfg.truncation_T
    eta = rng.exponential(scale=1.0 / cfg.psi, size=T)
    K, pi = stick_breaking_from_eta(eta, T)
    out = np.zeros(T)
    out[:K] = pi
    return K, out


def log_weight_prior(pi, K: int, cfg: MfmConfig) -> float:
    """log p(K) + log Dir(pi[:K]; nu)."""
    w = np.asarray(pi, dtype=float)[:K]
    nu = cfg.nu
    out = k_prior_log_pmf(K, cfg) + gammaln(K * nu) - K * gammaln(nu)
    if nu != 1.0:
        out += (nu - 1.0) * np.sum(np.log(w))
    return float(out)


def log_k_posterior(occupancy, cfg: MfmConfig) -> np.ndarray:
    """log p(K | partition) up to a constant, for K = 1..T.

    ``occupancy`` lists the sizes of the occupied clusters. The clusters
    are unlabelled, so each K carries the K!/(K-t)! ways of placing the t
    clusters on its components. Values of K below t get -inf.
    """
    occ = np.asarray(occupancy, dtype=float).ravel()
    if np.any(occ <= 0):
        raise ValueError("occupancy must list nonempty clusters only")
    T = cfg.truncation_T
    t = occ.size
    if t > T:
        raise TruncationError(f"{t} occupied clusters but truncation_T={T}")
    n = occ.sum()
    nu = cfg.nu
    ks = np.arange(1, T + 1, dtype=float)
    out = np.full(T, -np.inf)
    ok = ks >= max(t, 1)
    k = ks[ok]
    out[ok] = (
        k_prior_log_pmf(k, cfg)
        + gammaln(k + 1.0) - gammaln(k - t + 1.0)
        + gammaln(k * nu) - gammaln(k * nu + n)
    )
    return out


def sample_weights_posterior(occupancy, cfg: MfmConfig, rng):
    """Exact draw of (K, pi) given the sizes of the occupied clusters.

    K comes from its posterior given the partition; then the occupied
    clusters take components 0..t-1 and pi[:K] ~ Dir(nu + occupancy, nu,
    ..., nu). Returns K and a length-T vector.
    """
    occ = np.asarray(occupancy, dtype=float).ravel()
    logp = log_k_posterior(occ, cfg)
    p = np.exp(logp - logp.max())
    K = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right")) + 1
    K = min(max(K, occ.size, 1), cfg.truncation_T)
    shape = np.full(K, cfg.nu)
    shape[: occ.size] += occ
    g = rng.standard_gamma(shape)
    # guard against all-zero gamma draws for tiny shape parameters
    if g.sum() <= 0:
        g = np.ones(K)
    pi = np.zeros(cfg.truncation_T)
    pi[:K] = g / g.sum()
    return K, pi


def canonical_labels(labels) -> tuple[np.ndarray, np.ndarray]:
    """Relabel by order of first appearance.

    Returns ``(new_labels, order)`` with 0-based new labels and ``order[c]``
    the old label that became ``c``.
    """
    labels = np.asarray(labels)
    uniq, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(uniq.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(uniq.size)
    order = labels[np.sort(first)]
    return rank[inverse.ravel()], order
