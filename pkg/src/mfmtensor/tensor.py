"""Count tensors and the rank-one Poisson likelihood."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln

DIRECTIONS = (1, 2, 3)
DIRECTION_NAMES = {1: "angle", 2: "distance", 3: "quarter"}


class DimensionError(ValueError):
    """Raised when array extents disagree."""


@dataclass
class CountTensor:
    """A p1 x p2 x p3 array of nonnegative integer counts for one unit."""

    unit_id: str
    counts: np.ndarray
    _log_fact: float | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 3:
            raise DimensionError(f"counts must be 3-way, got shape {counts.shape}")
        if not np.all(np.isfinite(counts)):
            raise ValueError("counts must be finite")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        if not np.all(counts == np.round(counts)):
            raise ValueError("counts must be integers")
        self.counts = counts.astype(np.int64)
        self.unit_id = str(self.unit_id)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.counts.shape)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def log_factorial_sum(self) -> float:
        """Sum of log(y!) over all cells, cached since counts never change."""
        if self._log_fact is None:
            self._log_fact = float(gammaln(self.counts + 1.0).sum())
        return self._log_fact

    def to_dict(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "dims": list(self.dims),
            "counts": self.counts.ravel(order="C").tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CountTensor":
        try:
            dims = [int(d) for d in obj["dims"]]
            flat = np.asarray(obj["counts"])
            unit_id = obj["unit_id"]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed tensor record: {exc}") from exc
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise DimensionError(f"dims must be three positive integers, got {dims}")
        if flat.size != dims[0] * dims[1] * dims[2]:
            raise DimensionError(
                f"unit {unit_id}: {flat.size} counts do not fill dims {dims}"
            )
        return cls(unit_id, flat.reshape(dims, order="C"))


@dataclass
class MainEffectVector:
    """Log-scale main effects for one direction."""

    direction: int
    log_gamma: np.ndarray

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be 1, 2 or 3, got {self.direction}")
        self.log_gamma = np.asarray(self.log_gamma, dtype=float)
        if self.log_gamma.ndim != 1:
            raise DimensionError("log_gamma must be a vector")
        if not np.all(np.isfinite(self.log_gamma)):
            raise ValueError("log_gamma entries must be finite")

    def __len__(self):
        return self.log_gamma.shape[0]

    @property
    def gamma(self) -> np.ndarray:
        return np.exp(self.log_gamma)


def rank_one_log_mean(g1, g2, g3, dims=None) -> np.ndarray:
    """Log-mean tensor with entries ``g1[i] + g2[j] + g3[k]``.

    Accepts :class:`MainEffectVector` or plain arrays. When ``dims`` is
    given the vector lengths are checked against it.
    """
    vecs = [np.asarray(getattr(g, "log_gamma", g), dtype=float) for g in (g1, g2, g3)]
    for v in vecs:
        if v.ndim != 1:
            raise DimensionError("main effects must be vectors")
    if dims is not None:
        got = tuple(v.shape[0] for v in vecs)
        if got != tuple(dims):
            raise DimensionError(f"effect lengths {got} do not match dims {tuple(dims)}")
    return vecs[0][:, None, None] + vecs[1][None, :, None] + vecs[2][None, None, :]


def poisson_loglik(y, log_mean) -> float:
    """Poisson log-likelihood summed over all cells.

    ``y`` may be a :class:`CountTensor` or an integer array.
    """
    counts = y.counts if isinstance(y, CountTensor) else np.asarray(y)
    log_mean = np.asarray(log_mean, dtype=float)
    if counts.shape != log_mean.shape:
        raise DimensionError(f"shape mismatch: {counts.shape} vs {log_mean.shape}")
    if not np.all(np.isfinite(log_mean)):
        raise ValueError("log_mean must be finite")
    if isinstance(y, CountTensor):
        log_fact = y.log_factorial_sum
    else:
        log_fact = float(gammaln(counts + 1.0).sum())
    # y * log(mu) is exactly 0 when y == 0, whatever mu is
    return float(np.sum(counts * log_mean) - np.sum(np.exp(log_mean)) - log_fact)


def check_common_dims(data) -> tuple[int, int, int]:
    if len(data) == 0:
        raise ValueError("dataset is empty")
    dims = data[0].dims
    for t in data[1:]:
        if t.dims != dims:
            raise DimensionError(f"unit {t.unit_id} has dims {t.dims}, expected {dims}")
    return dims


def load_dataset(path) -> list[CountTensor]:
    with open(path) as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise ValueError(f"{path}: dataset must be a JSON array of tensors")
    return [CountTensor.from_dict(r) for r in records]


def save_dataset(data, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump([t.to_dict() for t in data], fh, separators=(",", ":"))
