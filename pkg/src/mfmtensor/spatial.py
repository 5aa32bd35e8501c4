"""Adjacency matrices and the CAR-style covariance of the main effects."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

LOG_2PI = math.log(2.0 * math.pi)


class CovarianceError(np.linalg.LinAlgError):
    """Covariance matrix failed to factorise."""


@dataclass
class Adjacency:
    """Symmetric 0/1 adjacency matrix with zero diagonal."""

    entries: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.entries, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.array_equal(W, W.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(W) != 0):
            raise ValueError("adjacency diagonal must be zero")
        if not np.all((W == 0) | (W == 1)):
            raise ValueError("adjacency entries must be 0 or 1")
        self.entries = W

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.entries))
        return [(int(a), int(b)) for a, b in zip(i, j)]

    def to_dict(self) -> dict:
        return {"size": self.size, "edges": [list(e) for e in self.edges()]}

    @classmethod
    def from_dict(cls, obj: dict) -> "Adjacency":
        p = int(obj["size"])
        W = np.zeros((p, p))
        for a, b in obj.get("edges", []):
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self-loop at vertex {a}")
            W[a, b] = W[b, a] = 1.0
        return cls(W)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Adjacency":
        return cls.from_dict(json.loads(text))


def path_adjacency(p: int) -> Adjacency:
    """Chain graph over ``p`` ordered bins."""
    if p < 2:
        raise ValueError(f"path adjacency needs p >= 2, got {p}")
    W = np.zeros((p, p))
    idx = np.arange(p - 1)
    W[idx, idx + 1] = W[idx + 1, idx] = 1.0
    return Adjacency(W)


def rho_bounds(W) -> tuple[float, float]:
    """(1/lambda_min, 1/lambda_max) of the adjacency spectrum."""
    M = W.entries if isinstance(W, Adjacency) else np.asarray(W, dtype=float)
    ev = np.linalg.eigvalsh(M)
    lo, hi = ev[0], ev[-1]
    tol = 1e-12 * max(1.0, np.abs(ev).max())
    if lo >= -tol or hi <= tol:
        raise ValueError(f"degenerate adjacency spectrum [{lo:.3g}, {hi:.3g}]")
    return 1.0 / lo, 1.0 / hi


@dataclass
class CarParams:
    sigma2: float
    rho: float
    bounds: tuple[float, float] | None

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.bounds is not None:
            c1, c2 = self.bounds
            if not c1 < self.rho < c2:
                raise ValueError(f"rho={self.rho} outside ({c1}, {c2})")


def car_structure(W, rho: float, form: str = "literal") -> np.ndarray:
    """Correlation structure R so that the covariance is sigma2 * R.

    ``form="literal"`` gives I - rho W; ``form="inverse"`` gives the
    conventional (I - rho W)^{-1}.
    """
    M = W.entries if isinstance(W, Adjacency) else np.asarray(W, dtype=float)
    R = np.eye(M.shape[0]) - rho * M
    if form == "literal":
        return R
    if form == "inverse":
        return np.linalg.inv(R)
    raise ValueError(f"unknown covariance form {form!r}")


def car_covariance(W, params: CarParams, form: str = "literal") -> np.ndarray:
    return params.sigma2 * car_structure(W, params.rho, form)


def cholesky(cov, context: str = "") -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        where = f" ({context})" if context else ""
        raise CovarianceError(f"covariance is not positive definite{where}") from exc


def mvn_logpdf(x, cov=None, *, chol=None, context: str = "") -> float:
    """Zero-mean multivariate normal log density.

    ``x`` may be a single vector or a stack of vectors (rows); for a stack
    the summed log density is returned. Pass ``chol`` to reuse a lower
    Cholesky factor.
    """
    L = cholesky(np.asarray(cov, dtype=float), context) if chol is None else chol
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != L.shape[0]:
        raise ValueError(f"vector length {X.shape[1]} does not match covariance {L.shape}")
    m, p = X.shape
    half_logdet = np.log(np.diag(L)).sum()
    z = solve_triangular(L, X.T, lower=True, check_finite=False)
    return float(-0.5 * m * p * LOG_2PI - m * half_logdet - 0.5 * np.sum(z * z))


class CarPrior:
    """Cached factorisation of sigma2 * R(rho) for one direction.

    A direction of extent 1 has no neighbours: the structure is [[1]] and
    rho stays at 0 with no bounds.
    """

    def __init__(self, p: int, W: Adjacency | None = None, form: str = "literal"):
        self.p = p
        self.form = form
        if p == 1:
            self.W = None
            self.bounds = None
        else:
            self.W = W if W is not None else path_adjacency(p)
            if self.W.size != p:
                raise ValueError(f"adjacency size {self.W.size} does not match extent {p}")
            self.bounds = rho_bounds(self.W)
        self._cache: dict[float, tuple[np.ndarray, float]] = {}

    def factor(self, rho: float, context: str = ""):
        """Lower Cholesky factor of R(rho) and log det R(rho)."""
        hit = self._cache.get(rho)
        if hit is not None:
            return hit
        if self.W is None:
            out = (np.ones((1, 1)), 0.0)
        else:
            L = cholesky(car_structure(self.W, rho, self.form), context or f"rho={rho}")
            out = (L, 2.0 * float(np.log(np.diag(L)).sum()))
        if len(self._cache) > 8:
            self._cache.clear()
        self._cache[rho] = out
        return out

    def logpdf(self, X, sigma2: float, rho: float, context: str = "") -> float:
        """Summed log density of the rows of ``X`` under MVN(0, sigma2 R(rho))."""
        X = np.atleast_2d(X)
        m = X.shape[0]
        if m == 0 or X.shape[1] == 0:
            return 0.0
        L, logdet = self.factor(rho, context)
        z = solve_triangular(L, X.T, lower=True, check_finite=False) if self.W is not None else X.T
        quad = float(np.sum(z * z))
        return (
            -0.5 * m * self.p * (LOG_2PI + math.log(sigma2))
            - 0.5 * m * logdet
            - 0.5 * quad / sigma2
        )

    def row_logpdf(self, X, sigma2: float, rho: float) -> np.ndarray:
        """Log density of each row of ``X`` separately."""
        X = np.atleast_2d(X)
        L, logdet = self.factor(rho)
        z = solve_triangular(L, X.T, lower=True, check_finite=False) if self.W is not None else X.T
        quad = np.sum(z * z, axis=0)
        return -0.5 * self.p * (LOG_2PI + math.log(sigma2)) - 0.5 * logdet - 0.5 * quad / sigma2

    def sample(self, sigma2: float, rho: float, rng, size: int = 1) -> np.ndarray:
        L, _ = self.factor(rho)
        z = rng.standard_normal((size, self.p))
        return math.sqrt(sigma2) * z @ L.T
