from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcitraffic.classes import AppClass
from dcitraffic.dci import Direction, bin_records, compute_tbs, tbs_table
from dcitraffic.errors import InvalidModel, TooManyUsers
from dcitraffic.synth import (
    PRESETS,
    UNKNOWN_MODEL,
    TrafficModel,
    WatermarkSpec,
    diurnal_weights,
    fill_second,
    generate_cell_trace,
    generate_labeled_trace,
    generate_profile_trace,
    generate_session,
    _draw_rntis,
)

MAX_TBS = int(tbs_table().max())


class TestTrafficModel:
    def test_presets_valid(self):
        for m in PRESETS.values():
            m.validate()
        UNKNOWN_MODEL.validate()

    def test_call_needs_symmetry(self):
        with pytest.raises(InvalidModel):
            replace(PRESETS[AppClass.Skype], ul_dl_ratio=0.2).validate()

    def test_streaming_needs_low_uplink(self):
        with pytest.raises(InvalidModel):
            replace(PRESETS[AppClass.YouTube], ul_dl_ratio=0.5).validate()

    def test_streaming_needs_burst(self):
        m = PRESETS[AppClass.Spotify]
        with pytest.raises(InvalidModel):
            replace(m, burst_rate_bps=m.steady_rate_bps).validate()

    def test_kind_must_match_app(self):
        with pytest.raises(InvalidModel):
            replace(PRESETS[AppClass.Skype], kind="streaming").validate()

    @pytest.mark.parametrize("field,value", [("noise_cv", 1.0), ("jitter", -0.1),
                                             ("steady_rate_bps", 0.0)])
    def test_bad_numbers(self, field, value):
        with pytest.raises(InvalidModel):
            replace(PRESETS[AppClass.Vimeo], **{field: value}).validate()

    def test_dict_round_trip(self):
        for m in list(PRESETS.values()) + [UNKNOWN_MODEL]:
            assert TrafficModel.from_dict(m.to_dict()) == m


class TestGenerateSession:
    def test_noise_free_call(self):
        m = TrafficModel(AppClass.Skype, 1e6, 1e6, 1.0, 1, 1, noise_cv=0.0)
        s = generate_session(m, 10, seed=3)
        assert s.samples.shape == (10, 2)
        assert np.all(s.samples == 1e6)
        assert s.label is AppClass.Skype

    def test_deterministic(self):
        m = PRESETS[AppClass.YouTube]
        a, b = generate_session(m, 50, seed=9), generate_session(m, 50, seed=9)
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, generate_session(m, 50, seed=10).samples)

    @pytest.mark.parametrize("app", [a for a in AppClass if a.service().name != "VideoCall"])
    def test_streaming_burst(self, app):
        m = PRESETS[app]
        s = generate_session(m, 120, seed=1)
        bd = int(m.burst_duration_s)
        dl = s.samples[:, 0]
        assert dl[:bd].mean() > 2 * dl[bd:].mean()

    def test_duration_positive(self):
        with pytest.raises(ValueError):
            generate_session(PRESETS[AppClass.Skype], 0)

    def test_jitter_varies_sessions_but_stays_positive(self):
        m = replace(PRESETS[AppClass.Spotify], jitter=0.3)
        means = [generate_session(m, 60, seed=i).samples[:, 0].mean() for i in range(20)]
        assert np.std(means) > 0
        assert all(x > 0 for x in means)

    def test_held_out_model_is_constant_and_asymmetric(self):
        m = replace(UNKNOWN_MODEL, noise_cv=0.0)
        s = generate_session(m, 30, seed=0)
        assert np.all(s.samples[:, 0] == m.steady_rate_bps)
        assert np.allclose(s.samples[:, 1], m.steady_rate_bps * m.ul_dl_ratio)
        assert s.label is None


class TestFill:
    def test_exact_entry(self):
        assert fill_second(compute_tbs(10, 50)) == [(10, 50, 8496)]

    def test_zero(self):
        assert fill_second(0) == []

    def test_below_smallest(self):
        # the smallest TBS (24 bits) is shared by mcs 0 and 1; the higher mcs wins
        assert fill_second(5) == [(1, 1, 24)]

    @given(st.integers(0, 20_000_000))
    @settings(max_examples=200)
    def test_conservation(self, bits):
        grants = fill_second(bits)
        total = sum(g[2] for g in grants)
        assert len(grants) <= 1000
        assert 0 <= total - bits < MAX_TBS
        for mcs, n_rb, tbs in grants:
            assert compute_tbs(mcs, n_rb) == tbs

    def test_mcs_range(self):
        grants = fill_second(3_000_000, (5, 9))
        assert all(5 <= g[0] <= 9 for g in grants)


class TestCellTrace:
    def test_zero_users(self):
        assert len(generate_cell_trace([], None, 10, seed=0)) == 0

    def test_one_user_one_grant(self):
        m = TrafficModel(AppClass.Skype, 8496, 8496, 1.0, 1, 1, noise_cv=0.0)
        m = replace(m, ul_dl_ratio=1.0)
        # uplink is also 8496 bits: one grant each way in the single second
        trace = generate_cell_trace([(m, 1)], None, 1, seed=0)
        dl = [r for r in trace.records if r.direction is Direction.Downlink]
        assert len(dl) == 1
        assert (dl[0].mcs, dl[0].n_rb, dl[0].tbs_bits) == (10, 50, 8496)

    def test_distinct_rntis(self):
        trace, roster = generate_cell_trace([(PRESETS[AppClass.Spotify], 30)], None, 40, seed=5,
                                            return_roster=True)
        assert len(set(roster["background"])) == 30
        assert set(trace.rntis()) <= set(roster["background"])

    def test_too_many_users(self):
        with pytest.raises(TooManyUsers):
            _draw_rntis(np.random.default_rng(0), 0xFFF3 - 0x003D + 1)

    def test_watermark_square_wave(self):
        spec = WatermarkSpec(60, 10, 3)
        wm = replace(PRESETS[AppClass.YouTube], noise_cv=0.0)
        trace, roster = generate_cell_trace([(PRESETS[AppClass.Skype], 3)], (wm, spec), 250,
                                            seed=2, return_roster=True)
        rnti, start = roster["watermark"], roster["watermark_start_s"]
        mine = [r for r in trace.records if r.rnti == rnti]
        active = np.zeros(250, dtype=bool)
        active[[r.tti_ms // 1000 for r in mine]] = True
        window = active[start:start + spec.span_s]
        assert np.array_equal(window, spec.square_wave().astype(bool))
        assert not active[:start].any() and not active[start + spec.span_s:].any()

    def test_conservation_per_second(self):
        m = PRESETS[AppClass.WhatsApp]
        trace, roster = generate_cell_trace([(m, 1)], None, 30, seed=4, return_roster=True)
        (rnti,) = roster["background"]
        recs = [r for r in trace.records if r.rnti == rnti]
        first = recs[0].tti_ms // 1000
        n = recs[-1].tti_ms // 1000 - first + 1
        binned = bin_records(recs, first, n)
        target = generate_session(m, n, seed=_session_seed_for(4, rnti)).samples
        assert np.all(binned - target >= 0)
        assert np.all(binned - target < MAX_TBS)

    def test_deterministic(self):
        args = ([(PRESETS[AppClass.Vimeo], 3)], (PRESETS[AppClass.Skype], WatermarkSpec(20, 5, 2)), 80)
        assert generate_cell_trace(*args, seed=1) == generate_cell_trace(*args, seed=1)


def _session_seed_for(seed, rnti):
    from dcitraffic.synth import _session_seed

    return _session_seed(seed, rnti)


def test_labeled_trace_schedule():
    spec = WatermarkSpec(30, 10, 2)
    trace, schedule = generate_labeled_trace([AppClass.Spotify, AppClass.Skype], spec, 2, seed=0)
    assert [b["app"] for b in schedule["blocks"]] == ["Spotify", "Skype"]
    assert schedule["watermark"] == {"on_duration_s": 30, "pause_duration_s": 10, "repetitions": 2}
    b0, b1 = schedule["blocks"]
    assert b0["end_s"] == b1["start_s"]
    assert trace.duration_ms <= b1["end_s"] * 1000
    assert len(trace.rntis()) == 6


def test_diurnal_weights():
    w = diurnal_weights((14, 21))
    assert w.shape == (24,)
    assert abs(w.sum() - 1) < 1e-12
    # a peak at hour p sits on the border of buckets p-1 and p
    for p in (14, 21):
        assert w[p - 1] == pytest.approx(w[p], rel=1e-2)
        assert w[p] > 10 * w[4]


def test_profile_trace_peaks():
    trace = generate_profile_trace(120, 86400, seed=0, session_len_s=(30, 60))
    secs = np.array([r.tti_ms // 1000 for r in trace.records])
    bits = np.array([r.tbs_bits for r in trace.records], dtype=float)
    per_hour = np.bincount(secs // 3600, weights=bits, minlength=24)
    top = set(np.argsort(per_hour)[-4:].tolist())
    assert top & {13, 14} and top & {20, 21}


def test_watermark_spec():
    spec = WatermarkSpec(60, 10, 3)
    assert spec.span_s == 210
    assert spec.square_wave().sum() == 180
    with pytest.raises(ValueError):
        WatermarkSpec(0, 10, 3)
