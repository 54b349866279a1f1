"""CSV parsing, view clamping, fractional features, and duration brackets."""

import io

import pytest

from viewsift.ingest import (
    BroadcastRecord,
    EmptyInputError,
    ViewRecord,
    broadcast_features,
    build_bracket_index,
    compute_view_features,
    parse_workload,
)

BCAST_HEADER = "broadcast_id,channel_id,start_ts,end_ts\n"
VIEW_HEADER = "view_id,client_ip,broadcast_id,start_ts,end_ts\n"


def _parse(view_rows, bcast_rows):
    return parse_workload(
        io.StringIO(VIEW_HEADER + "".join(view_rows)),
        io.StringIO(BCAST_HEADER + "".join(bcast_rows)),
    )


def test_join_two_views_to_one_broadcast():
    w = _parse(
        ["v1,1.1.1.1,b1,100,200\n", "v2,1.1.1.2,b1,150,300\n"],
        ["b1,c1,0,1000\n"],
    )
    assert set(w.broadcasts) == {"b1"}
    assert len(w.views_by_broadcast["b1"]) == 2
    assert w.rejected == 0


def test_orphan_view_is_rejected():
    w = _parse(["v1,1.1.1.1,nope,100,200\n"], ["b1,c1,0,1000\n"])
    assert set(w.broadcasts) == {"b1"}
    assert w.views_by_broadcast["b1"] == []
    assert w.rejected == 1


def test_view_with_nonpositive_clamped_duration_is_rejected():
    # after clamping to [0, 1000] this view has end <= start
    w = _parse(["v1,1.1.1.1,b1,1500,1600\n"], ["b1,c1,0,1000\n"])
    assert w.rejected == 1
    assert w.n_views == 0


def test_view_is_clamped_into_broadcast_window():
    w = _parse(["v1,1.1.1.1,b1,-50,1200\n"], ["b1,c1,0,1000\n"])
    (v,) = w.views_by_broadcast["b1"]
    assert v.start_ts == 0 and v.end_ts == 1000


def test_malformed_rows_increment_rejected():
    w = _parse(
        ["v1,1.1.1.1,b1,notanumber,200\n", "v2,1.1.1.1,b1,100,200\n"],
        ["b1,c1,0,1000\n", "b2,c1,500,500\n"],  # zero-duration broadcast
    )
    assert w.rejected == 2
    assert len(w.views_by_broadcast["b1"]) == 1


def test_no_broadcasts_raises():
    with pytest.raises(EmptyInputError):
        _parse(["v1,1.1.1.1,b1,100,200\n"], [])


# ---------------------------------------------------------------------------
# fractional features


def test_full_duration_view_features():
    b = BroadcastRecord("b1", "c1", 0, 1000)
    v = ViewRecord("v1", "1.1.1.1", "b1", 0, 1000)
    f = compute_view_features(v, b, H=10)
    assert (f.start_frac, f.stay_frac) == (0.0, 1.0)
    assert f.bin == (1, 10)


def test_clamped_tail_view_features():
    # broadcast 09:00-10:00, view 09:45-10:10 clamps to 09:45-10:00
    b = BroadcastRecord("b1", "c1", 9 * 3600, 10 * 3600)
    raw = ViewRecord("v1", "1.1.1.1", "b1", 9 * 3600 + 45 * 60, 10 * 3600 + 10 * 60)
    clamped = ViewRecord(
        raw.view_id,
        raw.client_ip,
        raw.broadcast_id,
        max(raw.start_ts, b.start_ts),
        min(raw.end_ts, b.end_ts),
    )
    f = compute_view_features(clamped, b, H=10)
    assert f.start_frac == pytest.approx(0.75)
    assert f.stay_frac == pytest.approx(0.25)


def test_broadcast_features_matches_per_view():
    b = BroadcastRecord("b1", "c1", 0, 100)
    views = [ViewRecord(f"v{i}", "ip", "b1", i, i + 10) for i in range(0, 50, 10)]
    feats = broadcast_features(b, views, H=10)
    assert [f.view_id for f in feats] == [v.view_id for v in views]
    for f, v in zip(feats, views):
        assert f == compute_view_features(v, b, 10)


# ---------------------------------------------------------------------------
# duration brackets


def _bcast(bid, minutes):
    return BroadcastRecord(bid, "c", 0, int(minutes * 60))


def test_durations_within_one_bracket():
    idx = build_bracket_index([_bcast("a", 5), _bcast("b", 9)], T=10.0)
    assert idx.bracket_of == {"a": 0, "b": 0}


def test_bracket_boundary_goes_to_next_interval():
    idx = build_bracket_index([_bcast("a", 10)], T=10.0)
    assert idx.bracket_of["a"] == 1


def test_bracket_members_inverse_consistent():
    idx = build_bracket_index(
        [_bcast("a", 5), _bcast("b", 25), _bcast("c", 45)], T=10.0
    )
    assert idx.bracket_of == {"a": 0, "b": 2, "c": 4}
    assert idx.members == {0: {"a"}, 2: {"b"}, 4: {"c"}}
    for bid, br in idx.bracket_of.items():
        assert bid in idx.members[br]


def test_bracket_index_rejects_bad_width():
    with pytest.raises(ValueError):
        build_bracket_index([_bcast("a", 5)], T=0)
