"""Metropolis-within-Gibbs sampler for the multidirectional MFM tensor model.

Each direction carries its own truncated stick-breaking mixture. Effects of
unoccupied components are integrated out of the stored state and drawn
from their prior only when a label update needs them.

The per-unit likelihood only depends on the data through the three
directional marginals, because with a rank-one mean

    sum_ijk y_ijk (g1_i + g2_j + g3_k) - prod_l sum(exp(g_l))

so all updates work on those marginals rather than on full tensors.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import kmeans
from .mfm import MfmConfig, canonical_labels, log_weight_prior, sample_weights_posterior
from .spatial import Adjacency, CarParams, CarPrior
from .tensor import CountTensor, DimensionError, check_common_dims

log = logging.getLogger(__name__)

ADAPT_TARGET = 0.3


class SamplerError(RuntimeError):
    pass


@dataclass
class SamplerConfig:
    """Schedule, proposal scales and priors for one chain.

    ``burn_in`` counts recorded (thinned) samples. Proposal scales are
    adapted during burn-in and frozen afterwards.
    """

    seed: int
    n_iter: int = 10_000
    thin: int = 2
    burn_in: int = 2_000
    mh_step_effects: float = 0.1
    mh_step_sigma2: float = 0.5
    mh_step_rho: float = 0.2
    mfm: tuple = (MfmConfig(), MfmConfig(), MfmConfig())
    gamma_prior_ab: tuple = (1.0, 1.0)
    covariance_form: str = "literal"
    init_clusters: int = 4
    adapt: bool = True
    use_likelihood: bool = True
    adjacency: tuple = (None, None, None)

    def __post_init__(self):
        if isinstance(self.mfm, MfmConfig):
            self.mfm = (self.mfm,) * 3
        self.mfm = tuple(m if isinstance(m, MfmConfig) else MfmConfig(**m) for m in self.mfm)
        self.adjacency = tuple(
            a if (a is None or isinstance(a, Adjacency)) else Adjacency.from_dict(a)
            for a in self.adjacency
        )
        self.gamma_prior_ab = tuple(float(v) for v in self.gamma_prior_ab)
        if len(self.mfm) != 3 or len(self.adjacency) != 3:
            raise ValueError("mfm and adjacency need one entry per direction")
        for name in ("n_iter", "thin"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        if self.burn_in >= self.n_iter // self.thin:
            raise ValueError(
                f"burn_in={self.burn_in} must be below n_iter/thin={self.n_iter // self.thin}"
            )
        for name in ("mh_step_effects", "mh_step_sigma2", "mh_step_rho"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        a, b = self.gamma_prior_ab
        if not (a > 0 and b > 0):
            raise ValueError("gamma_prior_ab must be positive")
        if self.covariance_form not in ("literal", "inverse"):
            raise ValueError("covariance_form must be 'literal' or 'inverse'")
        if self.init_clusters < 1:
            raise ValueError("init_clusters must be at least 1")
        if not isinstance(self.seed, (int, np.integer)):
            raise ValueError("seed must be an integer")

    @property
    def n_samples(self) -> int:
        return self.n_iter // self.thin

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mfm"] = [asdict(m) for m in self.mfm]
        out["gamma_prior_ab"] = list(self.gamma_prior_ab)
        out["adjacency"] = [None if a is None else a.to_dict() for a in self.adjacency]
        return out


class Stats:
    """Directional marginals of a dataset; all the sampler needs."""

    def __init__(self, data):
        self.dims = check_common_dims(data)
        self.unit_ids = [t.unit_id for t in data]
        arr = np.stack([t.counts for t in data]).astype(float)
        self.n = arr.shape[0]
        self.marg = [arr.sum(axis=(2, 3)), arr.sum(axis=(1, 3)), arr.sum(axis=(1, 2))]
        self.log_fact = np.array([t.log_factorial_sum for t in data])


def as_stats(data) -> Stats:
    return data if isinstance(data, Stats) else Stats(list(data))


@dataclass
class ModelState:
    """Current values of every sampled quantity.

    ``labels[l]`` are 0-based and canonical: occupied components are
    0..t-1. ``effects[l]`` has one row per occupied component. ``weights[l]``
    has length T with zeros past ``K[l]``.
    """

    labels: list
    effects: list
    weights: list
    K: list
    car: list
    log_posterior: float = float("nan")

    def n_active(self, direction: int) -> int:
        return self.effects[direction].shape[0]

    def copy(self) -> "ModelState":
        return ModelState(
            labels=[z.copy() for z in self.labels],
            effects=[e.copy() for e in self.effects],
            weights=[w.copy() for w in self.weights],
            K=list(self.K),
            car=[copy.copy(c) for c in self.car],
            log_posterior=self.log_posterior,
        )

    def validate(self) -> None:
        for l in range(3):
            z, E, w, K = self.labels[l], self.effects[l], self.weights[l], self.K[l]
            t = E.shape[0]
            if z.size and (z.min() < 0 or z.max() >= t):
                raise SamplerError(f"direction {l + 1}: label outside 0..{t - 1}")
            if t > K:
                raise SamplerError(f"direction {l + 1}: {t} occupied components but K={K}")
            if np.any(w[:K] <= 0) or np.any(w[K:] != 0):
                raise SamplerError(f"direction {l + 1}: weights inconsistent with K={K}")
            if z.size and np.any(np.bincount(z, minlength=t) == 0):
                raise SamplerError(f"direction {l + 1}: empty occupied component")

    def to_dict(self) -> dict:
        return {
            "labels": [(z + 1).tolist() for z in self.labels],
            "effects": [e.tolist() for e in self.effects],
            "weights": [w.tolist() for w in self.weights],
            "K": list(self.K),
            "sigma2": [c.sigma2 for c in self.car],
            "rho": [c.rho for c in self.car],
            "log_posterior": self.log_posterior,
        }

    @classmethod
    def from_dict(cls, obj: dict, bounds=(None, None, None)) -> "ModelState":
        return cls(
            labels=[np.asarray(z, dtype=np.int64) - 1 for z in obj["labels"]],
            effects=[np.asarray(e, dtype=float).reshape(len(e), -1) for e in obj["effects"]],
            weights=[np.asarray(w, dtype=float) for w in obj["weights"]],
            K=[int(k) for k in obj["K"]],
            car=[
                CarParams(float(s), float(r), b)
                for s, r, b in zip(obj["sigma2"], obj["rho"], bounds)
            ],
            log_posterior=float(obj["log_posterior"]),
        )


@dataclass
class ChainRecord:
    samples: list
    log_posterior_trace: np.ndarray
    acceptance_rates: dict
    seed: int
    config: SamplerConfig | None = None
    unit_ids: list = field(default_factory=list)
    dims: tuple = ()
    proposal_scales: dict = field(default_factory=dict)

    def post_burn_in(self, burn_in: int | None = None) -> list:
        b = self.config.burn_in if burn_in is None and self.config else (burn_in or 0)
        return self.samples[b:]

    def label_samples(self, direction: int, burn_in: int | None = None) -> np.ndarray:
        """(n_samples, n_units) array of 0-based labels for a 0-based direction."""
        return np.array([s.labels[direction] for s in self.post_burn_in(burn_in)])

    def to_jsonl(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        header = {
            "type": "header",
            "seed": int(self.seed),
            "config": self.config.to_dict() if self.config else None,
            "unit_ids": list(self.unit_ids),
            "dims": list(self.dims),
            "acceptance_rates": self.acceptance_rates,
            "proposal_scales": self.proposal_scales,
            "n_samples": len(self.samples),
        }
        with open(path, "w") as fh:
            fh.write(json.dumps(header) + "\n")
            for i, s in enumerate(self.samples):
                row = {"type": "sample", "index": i}
                row.update(s.to_dict())
                fh.write(json.dumps(row) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "ChainRecord":
        with open(path) as fh:
            header = json.loads(fh.readline())
            if header.get("type") != "header":
                raise ValueError(f"{path}: first line is not a chain header")
            cfg = config_from_dict(header["config"]) if header.get("config") else None
            samples = [ModelState.from_dict(json.loads(line)) for line in fh if line.strip()]
        return cls(
            samples=samples,
            log_posterior_trace=np.array([s.log_posterior for s in samples]),
            acceptance_rates=header.get("acceptance_rates", {}),
            proposal_scales=header.get("proposal_scales", {}),
            seed=header["seed"],
            config=cfg,
            unit_ids=header.get("unit_ids", []),
            dims=tuple(header.get("dims", ())),
        )


def config_from_dict(obj: dict) -> SamplerConfig:
    obj = dict(obj)
    obj["mfm"] = tuple(MfmConfig(**m) for m in obj.get("mfm", [{}, {}, {}]))
    if "adjacency" in obj:
        obj["adjacency"] = tuple(obj["adjacency"])
    return SamplerConfig(**obj)


class _Model:
    """Priors bound to a dataset's extents."""

    def __init__(self, dims, cfg: SamplerConfig):
        self.dims = dims
        self.cfg = cfg
        self.priors = [
            CarPrior(p, cfg.adjacency[l], cfg.covariance_form) for l, p in enumerate(dims)
        ]


def _sums(state):
    return [np.exp(E).sum(axis=1) for E in state.effects]


def _other_sums(state, sums, direction):
    """prod over the other two directions of sum(exp(effect)) per unit."""
    out = np.ones(state.labels[0].size)
    for l in range(3):
        if l != direction:
            out = out * sums[l][state.labels[l]]
    return out


def unit_loglik(state, stats: Stats) -> np.ndarray:
    """Poisson log-likelihood of every unit under its current clusters."""
    lin = sum((stats.marg[l] * state.effects[l][state.labels[l]]).sum(axis=1) for l in range(3))
    sums = _sums(state)
    mu_tot = sums[0][state.labels[0]] * sums[1][state.labels[1]] * sums[2][state.labels[2]]
    return lin - mu_tot - stats.log_fact


def log_likelihood(state, data) -> float:
    return float(unit_loglik(state, as_stats(data)).sum())


def _gamma_logpdf(x, a, b):
    return a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(x) - b * x


def log_prior_blocks(state, model: _Model) -> dict:
    a, b = model.cfg.gamma_prior_ab
    out = {"effects": 0.0, "sigma2": 0.0, "rho": 0.0, "weights": 0.0, "labels": 0.0}
    for l in range(3):
        prior, car = model.priors[l], state.car[l]
        out["effects"] += prior.logpdf(state.effects[l], car.sigma2, car.rho)
        out["sigma2"] += _gamma_logpdf(car.sigma2, a, b)
        if prior.bounds is not None:
            c1, c2 = prior.bounds
            out["rho"] += -math.log(c2 - c1)
        out["weights"] += log_weight_prior(state.weights[l], state.K[l], model.cfg.mfm[l])
        out["labels"] += float(np.log(state.weights[l][state.labels[l]]).sum())
    return out


def log_joint(state, data, cfg: SamplerConfig) -> float:
    """Unnormalised log posterior of ``state``.

    The likelihood term is dropped when ``cfg.use_likelihood`` is false.
    """
    stats = as_stats(data)
    state.validate()
    if any(state.effects[l].shape[1] != stats.dims[l] for l in range(3)):
        raise DimensionError("effect vector lengths do not match the data")
    model = _Model(stats.dims, cfg)
    total = sum(log_prior_blocks(state, model).values())
    if cfg.use_likelihood:
        total += log_likelihood(state, stats)
    return float(total)


# ---------------------------------------------------------------------------
# Gibbs / Metropolis blocks


def _fresh_effects(state, model, direction, rng):
    """Effects for every component with positive weight, drawing the
    unoccupied ones from the prior."""
    E = state.effects[direction]
    t, K = E.shape[0], state.K[direction]
    if K <= t:
        return E
    car = state.car[direction]
    extra = model.priors[direction].sample(car.sigma2, car.rho, rng, size=K - t)
    return np.vstack([E, extra])


def label_conditionals(state, data, cfg, direction, rng, model=None):
    """Full-conditional label probabilities of every unit.

    Returns ``(probs, effects)`` where ``probs`` is (n, K) and ``effects``
    holds the effect rows used, including fresh prior draws for the
    unoccupied components. ``direction`` is 0-based.
    """
    stats = as_stats(data)
    model = model or _Model(stats.dims, cfg)
    E = _fresh_effects(state, model, direction, rng)
    K = state.K[direction]
    logw = np.log(state.weights[direction][:K])
    if cfg.use_likelihood:
        sums = _sums(state)
        other = _other_sums(state, sums, direction)
        S = np.exp(E).sum(axis=1)
        L = stats.marg[direction] @ E.T - other[:, None] * S[None, :] + logw[None, :]
    else:
        L = np.broadcast_to(logw, (state.labels[0].size, K)).copy()
    top = L.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise SamplerError(f"direction {direction + 1}: label conditionals underflowed")
    P = np.exp(L - top)
    return P / P.sum(axis=1, keepdims=True), E


def _relabel(state, direction, new_labels, E):
    """Canonicalise labels, keep occupied effects, reorder weights."""
    K = state.K[direction]
    z, order = canonical_labels(new_labels)
    w = state.weights[direction]
    used = np.zeros(K, dtype=bool)
    used[order] = True
    rest = np.nonzero(~used)[0]
    perm = np.concatenate([order, rest]).astype(int)
    new_w = np.zeros_like(w)
    new_w[:K] = w[perm]
    state.labels[direction] = z
    state.effects[direction] = E[order]
    state.weights[direction] = new_w


def update_labels(state, data, cfg, direction, rng, model=None):
    """Redraw every unit's label in one direction from its full conditional.

    Units are conditionally independent given weights and effects, so the
    systematic sweep over units is done as one vectorised draw, consuming
    uniforms in unit order.
    """
    probs, E = label_conditionals(state, data, cfg, direction, rng, model)
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    new = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
    new = np.minimum(new, probs.shape[1] - 1)
    _relabel(state, direction, new, E)
    return state


def _effects_sufficient(state, stats, direction):
    t = state.effects[direction].shape[0]
    z = state.labels[direction]
    sums = _sums(state)
    other = _other_sums(state, sums, direction)
    M = np.zeros((t, stats.dims[direction]))
    np.add.at(M, z, stats.marg[direction])
    expo = np.bincount(z, weights=other, minlength=t)
    return M, expo


def update_effects(state, data, cfg, direction, rng, model=None, step=None):
    """One random-walk Metropolis move per occupied effect vector.

    The increment for coordinate a is scaled by 1/sqrt(1 + m_a), where m_a
    is the cluster's count total in that bin; the scaling depends only on
    labels and data, so the proposal stays symmetric. Returns the fraction
    of accepted proposals.
    """
    stats = as_stats(data)
    model = model or _Model(stats.dims, cfg)
    step = cfg.mh_step_effects if step is None else step
    E = state.effects[direction]
    t, p = E.shape
    if t == 0:
        return 1.0
    car, prior = state.car[direction], model.priors[direction]
    if cfg.use_likelihood:
        M, expo = _effects_sufficient(state, stats, direction)
        scale = 1.0 / np.sqrt(1.0 + M)
    else:
        M, expo = np.zeros((t, p)), np.zeros(t)
        scale = np.ones((t, p))
    prop = E + step * scale * rng.standard_normal((t, p))
    if step == 0:
        return 1.0

    def target(X):
        lik = (M * X).sum(axis=1) - expo * np.exp(X).sum(axis=1)
        return lik + prior.row_logpdf(X, car.sigma2, car.rho)

    delta = target(prop) - target(E)
    u = rng.random(t)
    ok = np.isfinite(delta) & (np.log(u) < delta)
    E = E.copy()
    E[ok] = prop[ok]
    state.effects[direction] = E
    return float(ok.mean())


def update_weights(state, cfg, direction, rng):
    """Exact draw of (K, pi) given occupancy under the truncated prior."""
    t = state.effects[direction].shape[0]
    occ = np.bincount(state.labels[direction], minlength=t)
    K, pi = sample_weights_posterior(occ, cfg.mfm[direction], rng)
    state.K[direction] = K
    state.weights[direction] = pi
    return state


def _reflect(x, lo, hi):
    width = hi - lo
    y = (x - lo) % (2.0 * width)
    if y > width:
        y = 2.0 * width - y
    return lo + y


def update_car(state, cfg, direction, rng, model=None, steps=None):
    """Random-walk moves for sigma2 (log scale) and rho (reflected).

    Returns the two acceptance indicators.
    """
    model = model or _Model(tuple(e.shape[1] for e in state.effects), cfg)
    s_step, r_step = steps or (cfg.mh_step_sigma2, cfg.mh_step_rho)
    prior = model.priors[direction]
    car = state.car[direction]
    E = state.effects[direction]
    a, b = cfg.gamma_prior_ab

    # sigma2 on the log scale: the Jacobian adds log(sigma2) to the target
    cur = prior.logpdf(E, car.sigma2, car.rho) + _gamma_logpdf(car.sigma2, a, b) + math.log(car.sigma2)
    s_new = car.sigma2 * math.exp(s_step * rng.standard_normal())
    acc_s = False
    if np.isfinite(s_new) and s_new > 0:
        new = prior.logpdf(E, s_new, car.rho) + _gamma_logpdf(s_new, a, b) + math.log(s_new)
        if math.log(rng.random()) < new - cur:
            car = CarParams(s_new, car.rho, car.bounds)
            acc_s = True
    else:
        rng.random()

    acc_r = False
    if prior.bounds is not None:
        c1, c2 = prior.bounds
        r_new = _reflect(car.rho + r_step * (c2 - c1) * rng.standard_normal(), c1, c2)
        u = rng.random()
        if c1 < r_new < c2:
            try:
                delta = prior.logpdf(E, car.sigma2, r_new) - prior.logpdf(E, car.sigma2, car.rho)
            except np.linalg.LinAlgError:
                delta = -np.inf
            if math.log(u) < delta:
                car = CarParams(car.sigma2, r_new, car.bounds)
                acc_r = True
    state.car[direction] = car
    return acc_s, acc_r


# ---------------------------------------------------------------------------
# Initialisation and the chain driver


def _init_effects(stats, labels, direction, t):
    """Log-profile of each cluster's mean marginal, scaled so that the three
    directions share the grand total equally."""
    p = stats.dims[direction]
    E = np.zeros((t, p))
    tot = stats.marg[0].sum(axis=1)
    for c in range(t):
        members = labels == c
        mean_m = stats.marg[direction][members].mean(axis=0) + 0.5
        mean_tot = tot[members].mean() + 0.5 * p
        E[c] = np.log(mean_m) - (2.0 / 3.0) * math.log(mean_tot)
    return E


def initial_state(data, cfg: SamplerConfig, rng) -> ModelState:
    stats = as_stats(data)
    model = _Model(stats.dims, cfg)
    a, b = cfg.gamma_prior_ab
    labels, effects, weights, Ks, cars = [], [], [], [], []
    for l in range(3):
        k0 = min(cfg.init_clusters, stats.n, cfg.mfm[l].truncation_T)
        if cfg.use_likelihood and k0 > 1:
            m = stats.marg[l]
            profile = (m + 0.5) / (m + 0.5).sum(axis=1, keepdims=True)
            z = kmeans(np.log(profile), k0, seed=int(rng.integers(2**32)), n_init=5)
        else:
            z = np.zeros(stats.n, dtype=np.int64)
        z, _ = canonical_labels(z)
        t = int(z.max()) + 1
        car = CarParams(a / b, 0.0, model.priors[l].bounds)
        if cfg.use_likelihood:
            E = _init_effects(stats, z, l, t)
        else:
            E = model.priors[l].sample(car.sigma2, car.rho, rng, size=t)
        K, pi = sample_weights_posterior(np.bincount(z, minlength=t), cfg.mfm[l], rng)
        labels.append(z)
        effects.append(E)
        weights.append(pi)
        Ks.append(K)
        cars.append(car)
    state = ModelState(labels, effects, weights, Ks, cars)
    state.log_posterior = _log_post(state, stats, model)
    return state


def _log_post(state, stats, model):
    total = sum(log_prior_blocks(state, model).values())
    if model.cfg.use_likelihood:
        total += float(unit_loglik(state, stats).sum())
    return float(total)


def _adapt(log_step, acc, it):
    return log_step + (acc - ADAPT_TARGET) * (it + 1) ** -0.6


def run_chain(data, cfg: SamplerConfig, state: ModelState | None = None) -> ChainRecord:
    """Run one chain and return every ``thin``-th state.

    A full sweep updates labels, effects, weights and CAR parameters for
    the three directions in that order. Everything is determined by
    ``(data, cfg)``.
    """
    stats = as_stats(data)
    if stats.n < 1:
        raise ValueError("need at least one unit")
    model = _Model(stats.dims, cfg)
    rng = np.random.default_rng(cfg.seed)
    state = initial_state(stats, cfg, rng) if state is None else state.copy()

    log_steps = np.log(np.maximum(
        np.array([[cfg.mh_step_effects, cfg.mh_step_sigma2, cfg.mh_step_rho]] * 3), 1e-300))
    zero_step = np.array([cfg.mh_step_effects, cfg.mh_step_sigma2, cfg.mh_step_rho]) == 0
    adapt_until = cfg.burn_in * cfg.thin if cfg.adapt else 0
    acc_sum = np.zeros((3, 3))
    acc_n = np.zeros((3, 3))

    samples, trace = [], []
    for it in range(cfg.n_iter):
        try:
            steps = np.where(zero_step, 0.0, np.exp(log_steps))
            for l in range(3):
                update_labels(state, stats, cfg, l, rng, model)
            for l in range(3):
                acc = update_effects(state, stats, cfg, l, rng, model, step=steps[l, 0])
                acc_sum[l, 0] += acc
                acc_n[l, 0] += 1
                if it < adapt_until:
                    log_steps[l, 0] = _adapt(log_steps[l, 0], acc, it)
            for l in range(3):
                update_weights(state, cfg, l, rng)
            for l in range(3):
                acc_s, acc_r = update_car(state, cfg, l, rng, model, steps=(steps[l, 1], steps[l, 2]))
                acc_sum[l, 1] += acc_s
                acc_n[l, 1] += 1
                if model.priors[l].bounds is not None:
                    acc_sum[l, 2] += acc_r
                    acc_n[l, 2] += 1
                if it < adapt_until:
                    log_steps[l, 1] = _adapt(log_steps[l, 1], float(acc_s), it)
                    if model.priors[l].bounds is not None:
                        log_steps[l, 2] = min(_adapt(log_steps[l, 2], float(acc_r), it), 0.0)
        except (SamplerError, np.linalg.LinAlgError, ValueError) as exc:
            raise SamplerError(f"iteration {it}: {exc}") from exc
        if (it + 1) % cfg.thin == 0:
            state.log_posterior = _log_post(state, stats, model)
            if not np.isfinite(state.log_posterior):
                raise SamplerError(f"iteration {it}: non-finite log posterior")
            samples.append(state.copy())
            trace.append(state.log_posterior)

    rates = {}
    for l in range(3):
        for j, block in enumerate(("effects", "sigma2", "rho")):
            if acc_n[l, j]:
                rates[f"{block}_{l + 1}"] = float(acc_sum[l, j] / acc_n[l, j])
    final_steps = np.exp(log_steps)
    scales = {
        f"{block}_{l + 1}": float(final_steps[l, j])
        for l in range(3) for j, block in enumerate(("effects", "sigma2", "rho"))
    }
    return ChainRecord(
        samples=samples,
        log_posterior_trace=np.array(trace),
        acceptance_rates=rates,
        seed=int(cfg.seed),
        config=cfg,
        unit_ids=list(stats.unit_ids),
        dims=tuple(stats.dims),
        proposal_scales=scales,
    )
