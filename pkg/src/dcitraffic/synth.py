"""Synthetic DCI traffic: per-app session models, cell traces, watermarking.

All rates are synthetic repo constants; they reproduce the qualitative
shapes of real sessions (initial buffering burst plus periodic chunks for
streaming, steady bidirectional traffic for calls), not measured values.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .classes import AppClass, ServiceClass
from .dci import (
    MCS_MAX,
    N_RB_MAX,
    RNTI_MAX,
    RNTI_MIN,
    TTI_PER_S,
    DciRecord,
    Direction,
    Session,
    Trace,
    compute_tbs,
)
from .errors import InvalidModel, TooManyUsers

__all__ = [
    "AppClass",
    "ServiceClass",
    "TrafficModel",
    "WatermarkSpec",
    "PRESETS",
    "UNKNOWN_MODEL",
    "BROWSING_MODEL",
    "generate_session",
    "generate_cell_trace",
    "generate_labeled_trace",
    "generate_profile_trace",
    "fill_second",
]

KINDS = ("streaming", "call", "browsing", "gaming")


@dataclass(frozen=True)
class TrafficModel:
    app: AppClass | None
    burst_rate_bps: float
    steady_rate_bps: float
    ul_dl_ratio: float
    burst_duration_s: float
    chunk_period_s: float
    noise_cv: float = 0.3
    seed: int = 0
    kind: str = ""
    jitter: float = 0.0

    def __post_init__(self):
        if not self.kind:
            if self.app is None:
                raise InvalidModel("a model without an app needs an explicit kind")
            kind = "call" if self.app.service() is ServiceClass.VideoCall else "streaming"
            object.__setattr__(self, "kind", kind)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise InvalidModel(f"unknown kind {self.kind!r}")
        for name in ("burst_rate_bps", "steady_rate_bps", "ul_dl_ratio",
                     "burst_duration_s", "chunk_period_s"):
            if not getattr(self, name) > 0:
                raise InvalidModel(f"{name} must be positive")
        if not 0 <= self.noise_cv < 1:
            raise InvalidModel("noise_cv must lie in [0, 1)")
        if not 0 <= self.jitter < 1:
            raise InvalidModel("jitter must lie in [0, 1)")
        if self.app is not None:
            expected = "call" if self.app.service() is ServiceClass.VideoCall else "streaming"
            if self.kind != expected:
                raise InvalidModel(f"{self.app.name} must use kind {expected!r}")
        if self.kind == "call" and not 0.5 <= self.ul_dl_ratio <= 2.0:
            raise InvalidModel("video calls need a near-symmetric ul/dl ratio")
        if self.kind == "streaming":
            if self.ul_dl_ratio > 0.1:
                raise InvalidModel("streaming ul/dl ratio must be <= 0.1")
            if self.burst_rate_bps <= self.steady_rate_bps:
                raise InvalidModel("streaming burst rate must exceed steady rate")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["app"] = None if self.app is None else self.app.name
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrafficModel":
        d = dict(d)
        app = d.get("app")
        d["app"] = None if app in (None, "") else AppClass[app]
        return cls(**d)


PRESETS: dict[AppClass, TrafficModel] = {
    AppClass.Spotify: TrafficModel(AppClass.Spotify, 2.0e6, 160e3, 0.05, 8, 20),
    AppClass.GoogleMusic: TrafficModel(AppClass.GoogleMusic, 1.5e6, 128e3, 0.04, 5, 14),
    AppClass.YouTube: TrafficModel(AppClass.YouTube, 8.0e6, 600e3, 0.03, 15, 5),
    AppClass.Vimeo: TrafficModel(AppClass.Vimeo, 6.0e6, 400e3, 0.02, 20, 8),
    AppClass.Skype: TrafficModel(AppClass.Skype, 1.5e6, 1.5e6, 1.0, 1, 1),
    AppClass.WhatsApp: TrafficModel(AppClass.WhatsApp, 1.0e6, 1.0e6, 0.8, 1, 1),
}

# Held-out traffic absent from every training class. Cloud gaming streams at a
# constant rate like a call but is asymmetric like on-demand streaming.
UNKNOWN_MODEL = TrafficModel(None, 2.0e6, 2.0e6, 0.2, 1, 1, kind="gaming")
# A second unseen family, sporadic page loads, kept for experiments.
BROWSING_MODEL = TrafficModel(None, 3.0e6, 60e3, 0.3, 2, 6, kind="browsing")


def load_models(path) -> list[TrafficModel]:
    """Read model presets from a JSON file (a list of TrafficModel dicts)."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    models = [TrafficModel.from_dict(d) for d in raw]
    for m in models:
        m.validate()
    return models


@dataclass(frozen=True)
class WatermarkSpec:
    on_duration_s: int = 60
    pause_duration_s: int = 10
    repetitions: int = 3

    def __post_init__(self):
        if self.on_duration_s <= 0 or self.pause_duration_s <= 0 or self.repetitions <= 0:
            raise ValueError("watermark durations and repetitions must be positive")

    @property
    def period_s(self) -> int:
        return self.on_duration_s + self.pause_duration_s

    @property
    def span_s(self) -> int:
        return self.repetitions * self.period_s

    def square_wave(self) -> np.ndarray:
        """Ideal 0/1 activity pattern over the watermarked span."""
        one = np.r_[np.ones(self.on_duration_s), np.zeros(self.pause_duration_s)]
        return np.tile(one, self.repetitions)


def _rate_profile(model: TrafficModel, duration_s: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(duration_s)
    burst, steady = model.burst_rate_bps, model.steady_rate_bps
    if model.kind in ("call", "gaming"):
        return np.full(duration_s, steady)
    if model.kind == "streaming":
        bd = int(round(model.burst_duration_s))
        cp = max(1, int(round(model.chunk_period_s)))
        rate = np.where((t - bd + 1) % cp == 0, burst, steady).astype(float)
        rate[:bd] = burst
        return rate
    # browsing: page loads at exponential inter-arrival times
    rate = np.full(duration_s, steady)
    bd = max(1, int(round(model.burst_duration_s)))
    s = rng.exponential(model.chunk_period_s)
    while s < duration_s:
        i = int(s)
        rate[i:i + bd] = burst
        s += bd + rng.exponential(model.chunk_period_s)
    return rate


def _lognormal(rng: np.random.Generator, cv: float, n: int) -> np.ndarray:
    if cv == 0:
        return np.ones(n)
    sigma2 = np.log1p(cv * cv)
    return rng.lognormal(-sigma2 / 2.0, np.sqrt(sigma2), n)


def _jittered(model: TrafficModel, rng: np.random.Generator) -> TrafficModel:
    """Per-session draw of the model parameters (user and content variety)."""
    f = _lognormal(rng, model.jitter, 5)
    m = replace(
        model,
        burst_rate_bps=model.burst_rate_bps * f[0],
        steady_rate_bps=model.steady_rate_bps * f[1],
        ul_dl_ratio=model.ul_dl_ratio * f[2],
        burst_duration_s=max(1.0, model.burst_duration_s * f[3]),
        chunk_period_s=max(1.0, model.chunk_period_s * f[4]),
    )
    if m.kind in ("call", "gaming"):
        m = replace(m, burst_rate_bps=m.steady_rate_bps)
    return m


def generate_session(model: TrafficModel, duration_s: int, seed: int | None = None,
                     *, rnti: int = RNTI_MIN, start_s: int = 0) -> Session:
    """Per-second DL/UL bit totals for one session of ``model``.

    With ``model.jitter`` > 0 the rate and timing parameters are first
    perturbed per session by mean-one log-normal factors. Per-second noise
    is multiplicative log-normal with mean 1 and coefficient of variation
    ``model.noise_cv``; bit counts are rounded to integers.
    """
    model.validate()
    if duration_s < 1:
        raise ValueError("duration_s must be >= 1")
    rng = np.random.default_rng(model.seed if seed is None else seed)
    if model.jitter > 0:
        model = _jittered(model, rng)
    rate = _rate_profile(model, duration_s, rng)
    dl = np.rint(rate * _lognormal(rng, model.noise_cv, duration_s))
    ul = np.rint(rate * model.ul_dl_ratio * _lognormal(rng, model.noise_cv, duration_s))
    return Session(rnti=rnti, start_s=start_s, samples=np.column_stack([dl, ul]),
                   label=model.app, meta={"kind": model.kind})


@lru_cache(maxsize=None)
def _fill_table(mcs_lo: int, mcs_hi: int) -> tuple[tuple[int, ...], tuple[tuple[int, int], ...]]:
    """Distinct TBS values (ascending) with one (mcs, n_rb) pair each.

    Among pairs sharing a TBS value the highest MCS (fewest RBs) wins.
    """
    best: dict[int, tuple[int, int]] = {}
    for mcs in range(mcs_lo, mcs_hi + 1):
        for n_rb in range(1, N_RB_MAX + 1):
            tbs = compute_tbs(mcs, n_rb)
            if tbs not in best or mcs > best[tbs][0]:
                best[tbs] = (mcs, n_rb)
    values = tuple(sorted(best))
    return values, tuple(best[v] for v in values)


def fill_second(bits: int, mcs_range: tuple[int, int] = (0, MCS_MAX)) -> list[tuple[int, int, int]]:
    """Quantize one second of ``bits`` into at most 1000 grants.

    Greedy: repeatedly take the largest table entry not exceeding the
    remainder, then cover any residue with the smallest entry. Returns
    (mcs, n_rb, tbs) triples.
    """
    values, pairs = _fill_table(*mcs_range)
    out = []
    remaining = int(bits)
    while remaining >= values[0] and len(out) < TTI_PER_S:
        i = bisect.bisect_right(values, remaining) - 1
        out.append((*pairs[i], values[i]))
        remaining -= values[i]
    if remaining > 0 and len(out) < TTI_PER_S:
        out.append((*pairs[0], values[0]))
    return out


@dataclass
class _UserPlan:
    rnti: int
    start_s: int
    samples: np.ndarray  # (N, 2) target bits per second


def _render(plans: Sequence[_UserPlan], mcs_range: tuple[int, int]) -> Trace:
    rows = []
    for plan in plans:
        for i, pair in enumerate(plan.samples):
            sec = plan.start_s + i
            for d, direction in enumerate((Direction.Downlink, Direction.Uplink)):
                grants = fill_second(int(pair[d]), mcs_range)
                n = len(grants)
                for j, (mcs, n_rb, tbs) in enumerate(grants):
                    tti = sec * TTI_PER_S + (j * TTI_PER_S) // n
                    rows.append((tti, plan.rnti, d, direction, mcs, n_rb, tbs))
    rows.sort(key=lambda r: r[:3])
    return Trace(tuple(DciRecord(r[0], r[1], r[3], r[4], r[5], r[6]) for r in rows))


def _draw_rntis(rng: np.random.Generator, n: int) -> list[int]:
    if n > RNTI_MAX - RNTI_MIN:
        raise TooManyUsers(f"{n} users exceed the C-RNTI space")
    if n == 0:
        return []
    picks = rng.choice(RNTI_MAX - RNTI_MIN + 1, size=n, replace=False)
    return [int(p) + RNTI_MIN for p in picks]


def _user_seed(seed: int, rnti: int, k: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, rnti, k])


def _session_seed(seed: int, rnti: int, k: int = 0) -> int:
    return int(_user_seed(seed, rnti, k).generate_state(1, dtype=np.uint64)[0])


def _background_plan(model: TrafficModel, rnti: int, lo_s: int, hi_s: int, seed: int) -> _UserPlan:
    """One background user active on a random sub-interval of [lo_s, hi_s)."""
    rng = np.random.default_rng(_user_seed(seed, rnti, 1))
    span = hi_s - lo_s
    length = int(rng.integers(min(30, span), span + 1))
    start = lo_s + int(rng.integers(0, span - length + 1))
    s = generate_session(model, length, _session_seed(seed, rnti))
    return _UserPlan(rnti, start, s.samples)


def _watermark_plans(model: TrafficModel, spec: WatermarkSpec, rnti: int,
                     start_s: int, seed: int) -> list[_UserPlan]:
    plans = []
    for r in range(spec.repetitions):
        s = generate_session(model, spec.on_duration_s, _session_seed(seed, rnti, 2 + r))
        plans.append(_UserPlan(rnti, start_s + r * spec.period_s, s.samples))
    return plans


def generate_cell_trace(
    models: Sequence[tuple[TrafficModel, int]],
    watermark: tuple[TrafficModel, WatermarkSpec] | None,
    duration_s: int,
    seed: int,
    *,
    mcs_range: tuple[int, int] = (0, MCS_MAX),
    return_roster: bool = False,
):
    """Multiplex background users and an optional watermark user into one trace.

    Each user gets a distinct random C-RNTI. Background users are active on
    a random sub-interval of the trace; the watermark user alternates
    on/pause exactly per its spec, starting at a random offset.

    With ``return_roster`` the result is ``(trace, roster)`` where roster
    maps ``"watermark"`` to its RNTI (or None) and ``"background"`` to the
    list of background RNTIs.
    """
    if duration_s < 1:
        raise ValueError("duration_s must be >= 1")
    for m, count in models:
        m.validate()
        if count < 0:
            raise ValueError("user counts must be non-negative")
    n_users = sum(c for _, c in models) + (1 if watermark else 0)
    rng = np.random.default_rng(seed)
    rntis = _draw_rntis(rng, n_users)
    plans = []
    k = 0
    for model, count in models:
        for _ in range(count):
            plans.append(_background_plan(model, rntis[k], 0, duration_s, seed))
            k += 1
    roster = {"watermark": None, "background": rntis[:k]}
    if watermark:
        model, spec = watermark
        model.validate()
        if spec.span_s > duration_s:
            raise ValueError("watermark span exceeds trace duration")
        offset = int(rng.integers(0, duration_s - spec.span_s + 1))
        plans.extend(_watermark_plans(model, spec, rntis[k], offset, seed))
        roster["watermark"] = rntis[k]
        roster["watermark_start_s"] = offset
    trace = _render(plans, mcs_range)
    return (trace, roster) if return_roster else trace


def generate_labeled_trace(
    apps: Sequence[AppClass],
    spec: WatermarkSpec,
    n_background: int,
    seed: int,
    *,
    lead_s: int = 5,
    models: dict[AppClass, TrafficModel] | None = None,
    mcs_range: tuple[int, int] = (0, MCS_MAX),
) -> tuple[Trace, dict]:
    """A measurement-campaign trace: one watermark block per app, run in turn.

    Returns the trace and the experimenter's schedule (which app ran in
    which time block). The schedule does not reveal the controlled RNTI.
    """
    models = dict(PRESETS if models is None else models)
    block_s = lead_s + spec.span_s
    rng = np.random.default_rng(seed)
    rntis = _draw_rntis(rng, len(apps) * (1 + n_background))
    background = [PRESETS[a] for a in AppClass]
    plans = []
    blocks = []
    k = 0
    for b, app in enumerate(apps):
        lo = b * block_s
        plans.extend(_watermark_plans(models[app], spec, rntis[k], lo + lead_s, seed))
        k += 1
        for _ in range(n_background):
            model = background[int(rng.integers(len(background)))]
            plans.append(_background_plan(model, rntis[k], lo, lo + block_s, seed))
            k += 1
        blocks.append({"app": app.name, "start_s": lo, "end_s": lo + block_s})
    schedule = {"watermark": asdict(spec), "blocks": blocks}
    return _render(plans, mcs_range), schedule


def diurnal_weights(peaks_h: Sequence[float], width_h: float = 1.5) -> np.ndarray:
    """24 hourly arrival weights: a low floor plus Gaussian bumps at ``peaks_h``."""
    h = np.arange(24) + 0.5
    w = np.full(24, 0.02)
    for p in peaks_h:
        d = np.minimum(np.abs(h - p), 24 - np.abs(h - p))
        w += np.exp(-0.5 * (d / width_h) ** 2)
    return w / w.sum()


def generate_profile_trace(
    n_sessions: int,
    duration_s: int,
    seed: int,
    *,
    peaks_h: Sequence[float] = (14.0, 21.0),
    unknown_fraction: float = 0.0,
    apps: Sequence[AppClass] = tuple(AppClass),
    session_len_s: tuple[int, int] = (60, 180),
    mcs_range: tuple[int, int] = (0, MCS_MAX),
) -> Trace:
    """Unlabeled cell traffic: one user per session, arrivals follow a
    two-peak daily schedule in trace-relative hours."""
    if duration_s < 1:
        raise ValueError("duration_s must be >= 1")
    rng = np.random.default_rng(seed)
    rntis = _draw_rntis(rng, n_sessions)
    weights = diurnal_weights(peaks_h)
    n_hours = max(1, min(24, -(-duration_s // 3600)))
    w = weights[:n_hours] / weights[:n_hours].sum()
    plans = []
    for rnti in rntis:
        if rng.random() < unknown_fraction:
            model = UNKNOWN_MODEL
        else:
            model = PRESETS[apps[int(rng.integers(len(apps)))]]
        length = int(rng.integers(session_len_s[0], session_len_s[1] + 1))
        length = min(length, duration_s)
        hour = int(rng.choice(n_hours, p=w))
        lo = hour * 3600
        hi = min(duration_s, lo + 3600) - length
        start = lo + int(rng.integers(0, max(hi - lo, 0) + 1)) if hi >= lo else max(0, duration_s - length)
        s = generate_session(model, length, _session_seed(seed, rnti))
        plans.append(_UserPlan(rnti, start, s.samples))
    return _render(plans, mcs_range)


def with_noise(model: TrafficModel, noise_cv: float) -> TrafficModel:
    return replace(model, noise_cv=noise_cv)
