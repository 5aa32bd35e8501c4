"""Synthetic designs and the replicate harness comparing against baselines."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import dbscan, kmeans
from .postprocess import (
    MixingMeasure,
    cluster_number_posterior,
    dahl_configuration,
    mixing_measure_from_state,
    rand_index,
    wasserstein,
    centered,
)
from .sampler import SamplerConfig, run_chain
from .tensor import DIRECTION_NAMES, CountTensor, rank_one_log_mean

log = logging.getLogger(__name__)

DBSCAN_EPS = (25.0, 50.0, 75.0, 100.0)
QUARTER_EFFECTS = np.array([[-1.0, -1.0, -1.0, -1.0], [-0.5, -2.0, -0.5, -2.0]])


def _design2_profiles():
    # smooth log-profiles over 11 angle arcs and 12 distance rings; the
    # clusters differ in shape and in overall volume
    theta = (np.arange(11) + 0.5) * math.pi / 11
    angle = np.array([
        -0.5 + 1.2 * np.sin(theta) ** 4,          # facing the basket
        -0.9 + 0.9 * np.cos(2 * theta),           # corners and baseline, low volume
        0.8 - 0.5 * np.abs(np.cos(theta)),        # spread out, high volume
    ])
    r = (np.arange(12) + 0.5) / 12
    distance = np.array([
        0.6 - 2.2 * r,                            # rim-heavy
        -1.2 + 1.6 * np.exp(-((r - 0.75) / 0.15) ** 2),  # three-point range, low volume
        0.6 - 2.4 * (r - 0.5) ** 2,               # mid-range, high volume
    ])
    return angle, distance


@dataclass
class DesignSpec:
    """Ground truth for a simulation design.

    ``true_labels`` are 0-based per direction; ``true_effects[l]`` has one
    log-effect row per cluster.
    """

    design_id: int
    n_units: int
    dims: tuple
    cluster_sizes: tuple
    true_effects: tuple
    true_labels: tuple | None = None

    def __post_init__(self):
        for l in range(3):
            E = np.asarray(self.true_effects[l], dtype=float)
            if E.shape != (len(self.cluster_sizes[l]), self.dims[l]):
                raise ValueError(f"direction {l + 1}: effects shape {E.shape} inconsistent")
            if sum(self.cluster_sizes[l]) != self.n_units:
                raise ValueError(f"direction {l + 1}: cluster sizes do not sum to n_units")

    def mixing_measures(self):
        return [
            MixingMeasure(
                np.asarray(self.cluster_sizes[l], dtype=float) / self.n_units,
                np.asarray(self.true_effects[l], dtype=float),
                l + 1,
            )
            for l in range(3)
        ]


def design(design_id: int, n_units: int = 150) -> DesignSpec:
    """Built-in designs 1 and 2; design 0 is a one-cluster control."""
    if design_id == 1:
        half = n_units // 2
        sizes = ((half, n_units - half),) * 3
        effects = (
            np.array([[0.5, 1.5, 0.5], [1.5, 0.5, 1.5]]),
            np.array([[1.5, 1.0, 0.5], [0.5, 1.0, 1.5]]),
            QUARTER_EFFECTS,
        )
        return DesignSpec(1, n_units, (3, 3, 4), sizes, effects)
    if design_id == 2:
        third = n_units // 3
        s3 = (third, third, n_units - 2 * third)
        half = n_units // 2
        angle, distance = _design2_profiles()
        return DesignSpec(2, n_units, (11, 12, 4), (s3, s3, (half, n_units - half)),
                          (angle, distance, QUARTER_EFFECTS))
    if design_id == 0:
        effects = (np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((1, 4)))
        return DesignSpec(0, n_units, (3, 3, 4), ((n_units,),) * 3, effects)
    raise ValueError(f"unknown design {design_id}")


def generate_design(spec: DesignSpec, seed):
    """Draw one synthetic dataset.

    Each direction's labels are an independent random permutation of the
    prescribed cluster sizes unless ``spec.true_labels`` fixes them. Returns
    ``(tensors, labels, measures)``.
    """
    rng = np.random.default_rng(seed)
    if spec.true_labels is not None:
        labels = [np.asarray(z, dtype=np.int64) for z in spec.true_labels]
    else:
        labels = [
            rng.permutation(np.repeat(np.arange(len(sz)), sz)).astype(np.int64)
            for sz in spec.cluster_sizes
        ]
    E = [np.asarray(e, dtype=float) for e in spec.true_effects]
    tensors = []
    for i in range(spec.n_units):
        mu = np.exp(rank_one_log_mean(E[0][labels[0][i]], E[1][labels[1][i]], E[2][labels[2][i]]))
        tensors.append(CountTensor(f"unit{i:04d}", rng.poisson(mu)))
    return tensors, labels, spec.mixing_measures()


def marginalize(t, keep_direction: int) -> np.ndarray:
    """Sum a tensor over the two directions other than ``keep_direction`` (1-based)."""
    counts = t.counts if isinstance(t, CountTensor) else np.asarray(t)
    if keep_direction not in (1, 2, 3):
        raise ValueError("keep_direction must be 1, 2 or 3")
    axes = tuple(a for a in range(3) if a != keep_direction - 1)
    return counts.sum(axis=axes)


def marginal_vectors(data, keep_direction: int) -> np.ndarray:
    return np.array([marginalize(t, keep_direction) for t in data])


@dataclass
class ReplicateResult:
    replicate: int
    seed: int
    ri: dict = field(default_factory=dict)      # method -> [angle, distance, quarter]
    k_mode: list = field(default_factory=list)
    k_dahl: list = field(default_factory=list)
    k_hist: list = field(default_factory=list)
    wasserstein: list = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "replicate": self.replicate,
            "seed": self.seed,
            "ri": self.ri,
            "k_mode": self.k_mode,
            "k_dahl": self.k_dahl,
            "k_hist": [{str(k): v for k, v in h.items()} for h in self.k_hist],
            "wasserstein_centered": self.wasserstein,
            "error": self.error,
        }


def fit_and_score(data, truth_labels, truth_measures, cfg: SamplerConfig,
                  baseline_seed: int, min_pts: int = 5) -> ReplicateResult:
    chain = run_chain(data, cfg)
    res = ReplicateResult(replicate=-1, seed=int(cfg.seed))
    ri = {"proposed": [], "kmeans": []}
    for eps in DBSCAN_EPS:
        ri[f"dbscan-{eps:g}"] = []
    for l in range(3):
        samples = chain.post_burn_in()
        z_hat, idx = dahl_configuration([s.labels[l] for s in samples])
        hist, mode = cluster_number_posterior(chain, l)
        k_hat = int(z_hat.max()) + 1
        ri["proposed"].append(rand_index(z_hat, truth_labels[l]))
        vecs = marginal_vectors(data, l + 1)
        ri["kmeans"].append(rand_index(kmeans(vecs, k_hat, seed=baseline_seed + l), truth_labels[l]))
        for eps in DBSCAN_EPS:
            ri[f"dbscan-{eps:g}"].append(rand_index(dbscan(vecs, eps, min_pts), truth_labels[l]))
        res.k_mode.append(mode)
        res.k_dahl.append(k_hat)
        res.k_hist.append(hist)
        est = mixing_measure_from_state(samples[idx], l)
        res.wasserstein.append(wasserstein(centered(est), centered(truth_measures[l])))
    res.ri = ri
    return res


def _one_replicate(args):
    spec, rep, data_seed, cfg, min_pts = args
    try:
        data, labels, measures = generate_design(spec, data_seed)
        res = fit_and_score(data, labels, measures, cfg, baseline_seed=data_seed, min_pts=min_pts)
        res.replicate = rep
        res.seed = int(data_seed)
        return res
    except Exception as exc:  # one failed replicate must not abort the table
        log.exception("replicate %d failed", rep)
        return ReplicateResult(replicate=rep, seed=int(data_seed), error=f"{type(exc).__name__}: {exc}")


def replicate_seeds(seed: int, n_rep: int):
    """(data_seed, chain_seed) per replicate from one root seed."""
    children = np.random.SeedSequence(seed).spawn(n_rep)
    out = []
    for ch in children:
        a, b = ch.generate_state(2, dtype=np.uint32)
        out.append((int(a), int(b)))
    return out


def run_replicates(spec: DesignSpec, n_rep: int, sampler_cfg: SamplerConfig, seed: int,
                   workers: int = 1, min_pts: int = 5) -> list:
    """Fit ``n_rep`` independent synthetic datasets.

    ``sampler_cfg.seed`` is replaced per replicate. Results come back in
    replicate order regardless of ``workers``.
    """
    if n_rep < 1:
        raise ValueError("n_rep must be at least 1")
    jobs = [
        (spec, r, ds, replace(sampler_cfg, seed=cs), min_pts)
        for r, (ds, cs) in enumerate(replicate_seeds(seed, n_rep))
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_one_replicate, jobs))
    return [_one_replicate(j) for j in jobs]


def summarize(results, true_k=None) -> list:
    """Rows of (method, direction, mean_ri, sd_ri, pct_correct_k, n_ok)."""
    ok = [r for r in results if r.error is None]
    rows = []
    if not ok:
        return rows
    for method in ok[0].ri:
        for l in range(3):
            vals = np.array([r.ri[method][l] for r in ok])
            pct = float("nan")
            if method == "proposed" and true_k is not None:
                pct = 100.0 * np.mean([r.k_mode[l] == true_k[l] for r in ok])
            rows.append({
                "method": method,
                "direction": DIRECTION_NAMES[l + 1],
                "mean_ri": float(vals.mean()),
                "sd_ri": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                "pct_correct_k": pct,
                "n_ok": len(ok),
                "n_failed": len(results) - len(ok),
            })
    return rows
