import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mfmtensor.ingest import (
    IngestReport,
    PartitionScheme,
    ShotEvent,
    angle_bin,
    build_tensors,
    ingest_csv,
    polar_bin,
    radial_bin,
    read_events,
)

S = PartitionScheme()
X0, Y0 = S.basket_origin


def at(r, theta):
    return X0 + r * math.cos(theta), Y0 + r * math.sin(theta)


def test_origin_goes_to_first_cells():
    assert polar_bin(X0, Y0, S) == ((1, 1), None)


def test_first_ring_edge():
    edge = S.radius * math.sqrt(1 / 11)
    assert polar_bin(*at(edge - 1e-9, 0.1), S)[0] == (1, 1)
    assert radial_bin(edge, S.radius) == 1
    assert radial_bin(edge + 1e-9, S.radius) == 2


def test_ring_edges_upper_closed():
    for k in range(1, 12):
        rk = S.radius * math.sqrt(k / 11)
        assert radial_bin(rk, S.radius) == k
        assert radial_bin(np.nextafter(rk, np.inf), S.radius) == min(k + 1, 12)
    assert radial_bin(S.radius + 0.01, S.radius) == 12


def test_angle_edges():
    assert angle_bin(0.0) == 1
    assert angle_bin(math.pi) == 11
    for k in range(1, 11):
        assert angle_bin(k * math.pi / 11 + 1e-12) == k + 1


def test_rejections():
    assert polar_bin(X0 + 3, Y0 - 1, S) == (None, "negative_angle")
    assert polar_bin(-1.0, 10.0, S) == (None, "out_of_bounds")
    assert polar_bin(float("nan"), 10.0, S) == (None, "parse_error")


def test_residual_bin_inside_court():
    cell, _ = polar_bin(2.0, 45.0, S)
    assert cell[1] == 12


def test_equal_area_analytic():
    r = np.concatenate([[0.0], S.ring_radii])
    areas = np.pi * np.diff(r ** 2) / 2 / 11  # half disc, one arc
    np.testing.assert_allclose(areas, np.pi * S.radius ** 2 / (2 * 11 * 11), rtol=1e-12)


def test_equal_area_monte_carlo():
    rng = np.random.default_rng(21)
    n = 100_000
    r = S.radius * np.sqrt(rng.random(n))
    th = np.pi * rng.random(n)
    bins = np.array([radial_bin(x, S.radius) for x in r])
    counts = np.bincount(bins, minlength=13)[1:12]
    assert stats.chisquare(counts).pvalue > 0.01
    arcs = np.bincount([angle_bin(t) for t in th], minlength=12)[1:]
    assert stats.chisquare(arcs).pvalue > 0.01


@settings(max_examples=300, deadline=None)
@given(x=st.floats(0, 50), y=st.floats(0, 47))
def test_polar_bin_total_on_court(x, y):
    cell, reason = polar_bin(x, y, S)
    if y < Y0:
        assert reason == "negative_angle"
    else:
        assert reason is None
        assert 1 <= cell[0] <= 11 and 1 <= cell[1] <= 12
        assert polar_bin(x, y, S) == (cell, reason)


def test_single_event_tensor():
    x, y = at(2.0, math.pi / 2)
    tensors, rep = build_tensors([ShotEvent("p", x, y, 2)], min_attempts=1)
    (t,) = tensors
    assert t.dims == (11, 12, 4) and t.total == 1
    (cell, _) = polar_bin(x, y, S)
    assert t.counts[cell[0] - 1, cell[1] - 1, 1] == 1
    assert rep.accepted_events == 1


def test_overtime_excluded():
    x, y = at(5.0, 1.0)
    base = [ShotEvent("p", x, y, q) for q in (1, 2, 3, 4)]
    t0, _ = build_tensors(base, min_attempts=1)
    t1, rep = build_tensors(base + [ShotEvent("p", x, y, 5)], min_attempts=1)
    assert t0[0].total == t1[0].total == 4
    assert rep.rejected["overtime"] == 1


def test_min_attempts_and_conservation():
    rng = np.random.default_rng(3)
    events = []
    for pid, n in (("a", 50), ("b", 12), ("c", 40)):
        for _ in range(n):
            events.append(ShotEvent(pid, float(rng.uniform(0, 50)), float(rng.uniform(0, 47)),
                                    int(rng.integers(1, 6))))
    tensors, rep = build_tensors(events, min_attempts=20)
    assert [t.unit_id for t in tensors] == ["a", "c"]
    assert "b" in rep.dropped_players
    assert rep.accepted_events == sum(t.total for t in tensors)
    assert rep.accepted_events + sum(rep.rejected.values()) == len(events)


def test_csv_reader(tmp_path):
    p = tmp_path / "shots.csv"
    p.write_text(
        "player_id,x,y,period\n"
        "p1,25,10,1\n"
        "p1,20,12,3\n"
        "p1,abc,12,3\n"
        "p2,30,20,5\n"
        ",30,20,1\n"
    )
    events, errors = read_events(p)
    assert len(events) == 3
    assert [ln for ln, _ in errors] == [4, 6]
    tensors, rep = ingest_csv(p, min_attempts=1)
    assert rep.rejected["parse_error"] == 2 and rep.rejected["overtime"] == 1
    assert [t.total for t in tensors] == [2]
    assert rep.to_dict()["n_players"] == 1


def test_csv_column_mapping(tmp_path):
    p = tmp_path / "other.csv"
    p.write_text("PLAYER,LOC_X,LOC_Y,PERIOD\nz,25,30,4\n")
    events, errors = read_events(p, {"player_id": "PLAYER", "x": "LOC_X", "y": "LOC_Y", "period": "PERIOD"})
    assert events == [ShotEvent("z", 25.0, 30.0, 4)] and not errors
    with pytest.raises(ValueError, match="missing column"):
        read_events(p)


def test_scheme_validation():
    with pytest.raises(ValueError):
        PartitionScheme(radius=0)
    with pytest.raises(ValueError):
        PartitionScheme(court_bounds=(0, 0, 0, 47))
    assert len(PartitionScheme().ring_radii) == 11
    assert isinstance(IngestReport().to_dict(), dict)
