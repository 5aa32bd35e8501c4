"""Point estimates and evaluation metrics for fitted chains."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog


@dataclass
class MixingMeasure:
    """Discrete measure sum_i w_i delta(effect_i) for one direction."""

    weights: np.ndarray
    atoms: np.ndarray
    direction: int = 1

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        atoms = np.asarray(self.atoms, dtype=float)
        self.atoms = atoms.reshape(len(self.weights), -1) if atoms.ndim < 2 else atoms
        if self.atoms.shape[0] != self.weights.size:
            raise ValueError("one atom per weight required")
        if np.any(self.weights <= 0) or np.any(self.weights > 1 + 1e-12):
            raise ValueError("weights must lie in (0, 1]")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {self.weights.sum()}, not 1")

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "weights": self.weights.tolist(),
            "atoms": self.atoms.tolist(),
        }

    @classmethod
    def from_dict(cls, obj) -> "MixingMeasure":
        return cls(obj["weights"], obj["atoms"], obj.get("direction", 1))


def rand_index(a, b) -> float:
    """Fraction of unit pairs on which two partitions agree."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"label vectors differ in shape: {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("rand index needs at least two units")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def pairs(x):
        x = np.asarray(x, dtype=np.int64)
        return int((x * (x - 1) // 2).sum())

    total = n * (n - 1) // 2
    both = pairs(table)
    agree = total + 2 * both - pairs(table.sum(axis=1)) - pairs(table.sum(axis=0))
    return agree / total


def _membership(z):
    return (z[:, None] == z[None, :]).astype(float)


def dahl_configuration(label_samples):
    """Sample closest (squared Frobenius) to the mean membership matrix.

    Returns ``(labels, index)`` with ``index`` 0-based into
    ``label_samples``; ties go to the earliest sample.
    """
    samples = [np.asarray(z) for z in label_samples]
    if not samples:
        raise ValueError("no label samples supplied")
    n = samples[0].size
    mbar = np.zeros((n, n))
    for z in samples:
        mbar += _membership(z)
    mbar /= len(samples)
    best, best_d = 0, np.inf
    for t, z in enumerate(samples):
        d = float(((_membership(z) - mbar) ** 2).sum())
        if d < best_d:
            best, best_d = t, d
    return samples[best].copy(), best


def mean_membership(label_samples) -> np.ndarray:
    samples = [np.asarray(z) for z in label_samples]
    if not samples:
        raise ValueError("no label samples supplied")
    mbar = np.zeros((samples[0].size,) * 2)
    for z in samples:
        mbar += _membership(z)
    return mbar / len(samples)


def wasserstein(g1: MixingMeasure, g2: MixingMeasure, norm_ord=2) -> float:
    """First-order optimal transport cost between two mixing measures.

    Ground cost is the ``norm_ord`` norm of the difference of atoms.
    """
    if g1.atoms.shape[1] != g2.atoms.shape[1]:
        raise ValueError(
            f"atom dimensions differ: {g1.atoms.shape[1]} vs {g2.atoms.shape[1]}"
        )
    k, kk = g1.weights.size, g2.weights.size
    cost = np.linalg.norm(g1.atoms[:, None, :] - g2.atoms[None, :, :], ord=norm_ord, axis=2)
    if k == 1 or kk == 1:
        # the coupling is forced
        return float((np.outer(g1.weights, g2.weights) * cost).sum())
    A = np.zeros((k + kk, k * kk))
    for i in range(k):
        A[i, i * kk:(i + 1) * kk] = 1.0
    for j in range(kk):
        A[k + j, j::kk] = 1.0
    rhs = np.concatenate([g1.weights, g2.weights])
    # drop one redundant equality; the marginals share a total
    res = linprog(cost.ravel(), A_eq=A[:-1], b_eq=rhs[:-1], bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport problem failed: {res.message}")
    return max(float(res.fun), 0.0)


def cluster_number_posterior(chain, direction: int, burn_in: int | None = None):
    """Histogram of occupied-cluster counts and its mode (ties to smaller K).

    ``direction`` is 0-based.
    """
    samples = chain.post_burn_in(burn_in) if hasattr(chain, "post_burn_in") else chain
    ks = [int(s.effects[direction].shape[0]) for s in samples]
    return k_histogram(ks)


def k_histogram(ks):
    if len(ks) == 0:
        raise ValueError("no samples")
    counts = Counter(int(k) for k in ks)
    total = sum(counts.values())
    hist = {k: counts[k] / total for k in sorted(counts)}
    top = max(counts.values())
    mode = min(k for k, c in counts.items() if c == top)
    return hist, mode


def mixing_measure_from_state(state, direction: int) -> MixingMeasure:
    """Occupancy-weighted measure over the occupied effect vectors."""
    z = state.labels[direction]
    E = state.effects[direction]
    occ = np.bincount(z, minlength=E.shape[0]).astype(float)
    keep = occ > 0
    return MixingMeasure(occ[keep] / occ.sum(), E[keep], direction + 1)


def mixing_measure_from_labels(labels, effects, direction: int = 1) -> MixingMeasure:
    labels = np.asarray(labels)
    E = np.asarray(effects, dtype=float)
    occ = np.bincount(labels, minlength=E.shape[0]).astype(float)
    keep = occ > 0
    return MixingMeasure(occ[keep] / occ.sum(), E[keep], direction)


def centered(measure: MixingMeasure) -> MixingMeasure:
    """Shift all atoms by the weighted mean level.

    The common level of one direction is not identified (it trades off
    against the other directions), so comparisons across fits are often
    more meaningful after removing it.
    """
    level = float((measure.weights * measure.atoms.mean(axis=1)).sum())
    return MixingMeasure(measure.weights, measure.atoms - level, measure.direction)
