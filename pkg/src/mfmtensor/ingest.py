"""Shot events to per-player angle x distance x quarter count tensors."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .tensor import CountTensor

log = logging.getLogger(__name__)

N_QUARTERS = 4


@dataclass(frozen=True)
class PartitionScheme:
    """Polar partition of the offensive half court.

    Coordinates are in feet with the origin at a baseline corner; the
    angle is measured from the baseline, so shots from behind the basket
    have negative angle.
    """

    n_angle: int = 11
    n_dist: int = 12
    basket_origin: tuple = (25.0, 5.25)
    radius: float = 30.0
    court_bounds: tuple = (0.0, 50.0, 0.0, 47.0)  # xmin, xmax, ymin, ymax

    def __post_init__(self):
        if self.n_angle < 1 or self.n_dist < 2:
            raise ValueError("need n_angle >= 1 and n_dist >= 2")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        xmin, xmax, ymin, ymax = self.court_bounds
        if not (xmin < xmax and ymin < ymax):
            raise ValueError("court_bounds must be (xmin, xmax, ymin, ymax) with min < max")

    @property
    def ring_radii(self) -> np.ndarray:
        """Outer radius of each equal-area ring, r_k = R sqrt(k / n_rings)."""
        k = self.n_dist - 1
        return self.radius * np.sqrt(np.arange(1, k + 1) / k)


@dataclass(frozen=True)
class ShotEvent:
    player_id: str
    x: float
    y: float
    period: int


def angle_bin(theta: float, n_angle: int = 11) -> int:
    """1-based arc index for theta in [0, pi]; theta = 0 goes to arc 1."""
    k = math.ceil(theta / (math.pi / n_angle))
    return min(max(k, 1), n_angle)


def radial_bin(r: float, radius: float, n_rings: int = 11) -> int:
    """1-based equal-area ring for r <= radius, n_rings + 1 beyond it.

    Ring k holds r in (R sqrt((k-1)/n), R sqrt(k/n)]; r = 0 is ring 1.
    """
    if r > radius:
        return n_rings + 1
    k = math.ceil(n_rings * (r / radius) ** 2)
    k = min(max(k, 1), n_rings)
    # guard the squared comparison against rounding at ring edges
    edges = radius * np.sqrt(np.array([k - 1, k]) / n_rings)
    if r > edges[1]:
        k += 1
    elif k > 1 and r <= edges[0]:
        k -= 1
    return k


def polar_bin(x: float, y: float, scheme: PartitionScheme):
    """Map a court location to ``(angle_idx, dist_idx)`` (1-based).

    Returns ``(None, reason)`` when the shot is rejected.
    """
    if not (math.isfinite(x) and math.isfinite(y)):
        return None, "parse_error"
    xmin, xmax, ymin, ymax = scheme.court_bounds
    if not (xmin <= x <= xmax and ymin <= y <= ymax):
        return None, "out_of_bounds"
    dx = x - scheme.basket_origin[0]
    dy = y - scheme.basket_origin[1]
    if dy < 0:
        return None, "negative_angle"
    theta = math.atan2(dy, dx) if (dx or dy) else 0.0
    r = math.hypot(dx, dy)
    return (angle_bin(theta, scheme.n_angle), radial_bin(r, scheme.radius, scheme.n_dist - 1)), None


DEFAULT_COLUMNS = {"player_id": "player_id", "x": "x", "y": "y", "period": "period"}


def read_events(path, columns=None):
    """Parse a shot CSV. Returns ``(events, errors)``.

    ``columns`` maps the canonical names to the file's header names.
    Unparseable rows are collected as ``(line_number, message)``.
    """
    cols = dict(DEFAULT_COLUMNS)
    cols.update(columns or {})
    events, errors = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in cols.values() if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing column(s) {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                pid = row[cols["player_id"]].strip()
                if not pid:
                    raise ValueError("empty player id")
                period = float(row[cols["period"]])
                if period != int(period) or period < 1:
                    raise ValueError(f"bad period {period}")
                ev = ShotEvent(pid, float(row[cols["x"]]), float(row[cols["y"]]), int(period))
                if not (math.isfinite(ev.x) and math.isfinite(ev.y)):
                    raise ValueError("non-finite coordinate")
            except (ValueError, TypeError, KeyError, AttributeError) as exc:
                errors.append((lineno, str(exc)))
                continue
            events.append(ev)
    return events, errors


@dataclass
class IngestReport:
    rejected: Counter = field(default_factory=Counter)
    dropped_players: dict = field(default_factory=dict)
    accepted_events: int = 0
    n_players: int = 0
    errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accepted_events": self.accepted_events,
            "n_players": self.n_players,
            "rejected": dict(sorted(self.rejected.items())),
            "dropped_players": self.dropped_players,
            "errors": [{"line": ln, "message": msg} for ln, msg in self.errors],
        }


def build_tensors(events, scheme: PartitionScheme | None = None, min_attempts: int = 300,
                  max_period: int = N_QUARTERS, report: IngestReport | None = None):
    """Bin events into one tensor per player.

    Overtime events and rejected locations are counted in the report.
    Players whose accepted total is below ``min_attempts`` are dropped and
    their events counted under ``below_min_attempts``. Players come out in
    order of first appearance.
    """
    scheme = scheme or PartitionScheme()
    report = report if report is not None else IngestReport()
    dims = (scheme.n_angle, scheme.n_dist, max_period)
    acc = defaultdict(lambda: np.zeros(dims, dtype=np.int64))
    for ev in events:
        if ev.period > max_period:
            report.rejected["overtime"] += 1
            continue
        cell, reason = polar_bin(ev.x, ev.y, scheme)
        if cell is None:
            report.rejected[reason] += 1
            continue
        acc[ev.player_id][cell[0] - 1, cell[1] - 1, ev.period - 1] += 1
    tensors = []
    for pid, counts in acc.items():
        total = int(counts.sum())
        if total < min_attempts:
            report.dropped_players[pid] = total
            report.rejected["below_min_attempts"] += total
            continue
        tensors.append(CountTensor(pid, counts))
    report.accepted_events = sum(t.total for t in tensors)
    report.n_players = len(tensors)
    if report.rejected:
        log.info("rejected events: %s", dict(report.rejected))
    return tensors, report


def ingest_csv(path, scheme=None, min_attempts=300, columns=None):
    events, errors = read_events(path, columns)
    report = IngestReport(errors=errors)
    report.rejected["parse_error"] += len(errors)
    if not errors:
        del report.rejected["parse_error"]
    tensors, report = build_tensors(events, scheme, min_attempts, report=report)
    return tensors, report
