import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcitraffic.classes import AppClass, ServiceClass
from dcitraffic.dci import (
    MCS_MAX,
    N_RB_MAX,
    RNTI_MAX,
    RNTI_MIN,
    DciRecord,
    Direction,
    Session,
    Trace,
    bin_records,
    compute_tbs,
    parse_trace,
    sessions_from_csv,
    sessions_to_csv,
    tbs_table,
    write_trace,
)
from dcitraffic.errors import InconsistentTbs, InvalidRnti, MalformedLine, OutOfRange


def rec(tti, rnti=0x100, d=Direction.Downlink, mcs=10, n_rb=50):
    return DciRecord(tti, rnti, d, mcs, n_rb, compute_tbs(mcs, n_rb))


def line(**over):
    obj = {"tti_ms": 0, "rnti": 0x100, "dir": "DL", "mcs": 10, "n_rb": 50, "tbs": 8496}
    obj.update(over)
    return json.dumps(obj)


class TestComputeTbs:
    def test_zero_rbs_out_of_range(self):
        with pytest.raises(OutOfRange):
            compute_tbs(5, 0)

    @pytest.mark.parametrize("mcs,n_rb", [(-1, 1), (29, 1), (0, 101), (28, 0)])
    def test_bounds(self, mcs, n_rb):
        with pytest.raises(OutOfRange):
            compute_tbs(mcs, n_rb)

    def test_smallest_entry(self):
        table = tbs_table()
        assert compute_tbs(0, 1) == table.min()
        assert compute_tbs(0, 1) < compute_tbs(0, 2)

    def test_reference_value(self):
        # evaluated separately with exact decimal arithmetic:
        # 50 RBs * 144 REs * 1.18 bits/RE = 8496.0, already a multiple of 8
        assert compute_tbs(10, 50) == 8496

    def test_table_extremes(self):
        table = tbs_table()
        assert table.shape == (MCS_MAX + 1, N_RB_MAX)
        assert table.min() == 24
        assert table.max() == 79920

    def test_monotone_over_whole_grid(self):
        table = tbs_table()
        assert np.all(np.diff(table, axis=1) > 0)
        assert np.all(np.diff(table, axis=0) >= 0)
        assert np.all(table % 8 == 0)

    def test_deterministic(self):
        assert compute_tbs(17, 33) == compute_tbs(17, 33)


class TestRecord:
    def test_rnti_range(self):
        rec(0, RNTI_MIN)
        rec(0, RNTI_MAX)
        for bad in (RNTI_MIN - 1, RNTI_MAX + 1, 0x0001):
            with pytest.raises(InvalidRnti):
                rec(0, bad)

    def test_inconsistent_tbs(self):
        with pytest.raises(InconsistentTbs):
            DciRecord(0, 0x100, Direction.Downlink, 10, 50, 8488)

    def test_mcs_range(self):
        with pytest.raises(OutOfRange):
            DciRecord(0, 0x100, Direction.Downlink, 29, 1, 8)


class TestTrace:
    def test_sorted_with_ties(self):
        a = rec(5, 0x200, Direction.Uplink)
        b = rec(5, 0x200, Direction.Downlink)
        c = rec(5, 0x100, Direction.Uplink)
        d = rec(1, 0x300)
        t = Trace((a, b, c, d))
        assert t.records == (d, c, b, a)

    def test_duration(self):
        assert Trace(()).duration_ms == 0
        assert Trace((rec(0), rec(1999))).duration_ms == 2000

    def test_slice_seconds(self):
        t = Trace(tuple(rec(ms) for ms in (999, 1000, 1999, 2000)))
        assert [r.tti_ms for r in t.slice_seconds(1, 2).records] == [1000, 1999]


class TestParse:
    def test_empty(self):
        t = parse_trace(b"")
        assert len(t) == 0 and t.duration_ms == 0

    def test_one_line(self):
        t = parse_trace(line() + "\n")
        assert len(t) == 1
        assert t.records[0] == rec(0)

    def test_reserved_rnti(self):
        with pytest.raises(InvalidRnti):
            parse_trace(line(rnti=0x0001))

    def test_inconsistent(self):
        with pytest.raises(InconsistentTbs):
            parse_trace(line(tbs=8))

    @pytest.mark.parametrize("text,lineno", [
        ("{not json", 1),
        (line() + "\n" + line(dir="XL"), 2),
        (line() + "\n\n" + json.dumps({"tti_ms": 0}), 3),
        (line(mcs=1.5), 1),
        (line(n_rb=0), 1),
        (line(tti_ms=-1), 1),
        (line(rnti=True), 1),
    ])
    def test_malformed(self, text, lineno):
        with pytest.raises(MalformedLine) as err:
            parse_trace(text)
        assert err.value.line_no == lineno

    def test_not_utf8(self):
        with pytest.raises(MalformedLine):
            parse_trace(b"\xff\xfe")


class TestWrite:
    def test_empty(self):
        assert write_trace(Trace(())) == b""

    def test_one_record(self):
        data = write_trace(Trace((rec(3),)))
        assert data.count(b"\n") == 1
        assert parse_trace(data) == Trace((rec(3),))

    def test_field_order(self):
        data = write_trace(Trace((rec(3),))).decode()
        assert list(json.loads(data)) == ["tti_ms", "rnti", "dir", "mcs", "n_rb", "tbs"]

    def test_random_round_trip(self):
        rng = np.random.default_rng(42)
        records = [
            rec(int(rng.integers(0, 10**7)), int(rng.integers(RNTI_MIN, RNTI_MAX + 1)),
                Direction.Uplink if rng.random() < 0.5 else Direction.Downlink,
                int(rng.integers(0, MCS_MAX + 1)), int(rng.integers(1, N_RB_MAX + 1)))
            for _ in range(1000)
        ]
        t = Trace(tuple(records))
        data = write_trace(t)
        again = parse_trace(data)
        assert again == t
        assert write_trace(again) == data


records_st = st.builds(
    lambda tti, rnti, up, mcs, n_rb: rec(tti, rnti, Direction.Uplink if up else Direction.Downlink,
                                         mcs, n_rb),
    st.integers(0, 10**9), st.integers(RNTI_MIN, RNTI_MAX), st.booleans(),
    st.integers(0, MCS_MAX), st.integers(1, N_RB_MAX),
)


@given(st.lists(records_st, max_size=40))
def test_round_trip_property(records):
    t = Trace(tuple(records))
    assert parse_trace(write_trace(t)) == t


@settings(max_examples=200)
@given(st.dictionaries(st.sampled_from(["tti_ms", "rnti", "dir", "mcs", "n_rb", "tbs", "x"]),
                       st.one_of(st.integers(-5, 70000), st.sampled_from(["DL", "UL", "up"]),
                                 st.none(), st.floats(allow_nan=False))))
def test_fuzz_never_accepts_invalid(obj):
    try:
        t = parse_trace(json.dumps(obj))
    except (MalformedLine, InvalidRnti, InconsistentTbs):
        return
    (r,) = t.records
    assert RNTI_MIN <= r.rnti <= RNTI_MAX
    assert 0 <= r.mcs <= MCS_MAX and 1 <= r.n_rb <= N_RB_MAX
    assert r.tbs_bits == compute_tbs(r.mcs, r.n_rb)
    assert r.tti_ms >= 0


class TestSession:
    def test_invariants(self):
        with pytest.raises(ValueError):
            Session(0x100, 0, np.zeros((0, 2)))
        with pytest.raises(ValueError):
            Session(0x100, 0, np.array([[1.0, -1.0]]))

    def test_labels(self):
        s = Session(0x100, 0, np.ones((3, 2)), AppClass.Skype)
        assert s.app is AppClass.Skype
        assert s.service is ServiceClass.VideoCall
        assert s.total_bits == 6.0

    def test_csv_round_trip(self):
        rng = np.random.default_rng(1)
        sessions = [
            Session(0x100, 5, rng.random((4, 2)) * 1e6, AppClass.Vimeo),
            Session(0x200, 0, np.array([[1.0, 2.0]]), ServiceClass.AudioStreaming),
            Session(0x300, 9, np.array([[0.1, 0.0], [3.0, 1e-300]]), None),
        ]
        back = sessions_from_csv(sessions_to_csv(sessions))
        assert len(back) == 3
        for a, b in zip(sessions, back):
            assert a.same_as(b)

    def test_csv_empty(self):
        assert sessions_from_csv(sessions_to_csv([])) == []


def test_binning_half_open():
    records = [rec(999), rec(1000), rec(1000, d=Direction.Uplink), rec(2999), rec(3000)]
    b = bin_records(records, 0, 3)
    tbs = compute_tbs(10, 50)
    assert b.tolist() == [[tbs, 0], [tbs, tbs], [tbs, 0]]
