"""From raw traces to labeled sessions and classifier windows."""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .classes import AppClass, ServiceClass
from .dci import TTI_PER_S, Session, Trace
from .errors import AmbiguousWatermark, DegenerateInput, NoWatermarkFound
from .synth import WatermarkSpec

WATERMARK_MIN_SCORE = 0.9
WATERMARK_TIE = 0.01


def extract_sessions(trace: Trace, idle_gap_s: int = 5, min_len_s: int = 5) -> list[Session]:
    """Group records per RNTI into sessions split on idle gaps.

    A run of ``idle_gap_s`` or more inactive seconds ends a session;
    sessions shorter than ``min_len_s`` seconds are dropped. Output is
    sorted by (rnti, start_s).
    """
    if idle_gap_s < 1 or min_len_s < 1:
        raise ValueError("idle_gap_s and min_len_s must be positive")
    if not trace.records:
        return []
    n = len(trace.records)
    rnti = np.empty(n, dtype=np.int64)
    sec = np.empty(n, dtype=np.int64)
    col = np.empty(n, dtype=np.int64)
    tbs = np.empty(n, dtype=np.float64)
    for i, r in enumerate(trace.records):
        rnti[i] = r.rnti
        sec[i] = r.tti_ms // TTI_PER_S
        col[i] = r.direction.order
        tbs[i] = r.tbs_bits
    order = np.lexsort((sec, rnti))
    rnti, sec, col, tbs = rnti[order], sec[order], col[order], tbs[order]
    sessions = []
    bounds = np.flatnonzero(np.diff(rnti)) + 1
    for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, n]):
        s, c, b = sec[lo:hi], col[lo:hi], tbs[lo:hi]
        active = np.unique(s)
        cuts = np.flatnonzero(np.diff(active) - 1 >= idle_gap_s) + 1
        for run in np.split(active, cuts):
            first, last = int(run[0]), int(run[-1])
            length = last - first + 1
            if length < min_len_s:
                continue
            mask = (s >= first) & (s <= last)
            samples = np.zeros((length, 2))
            np.add.at(samples, (s[mask] - first, c[mask]), b[mask])
            sessions.append(Session(rnti=int(rnti[lo]), start_s=first, samples=samples))
    return sessions


def group_by_rnti(sessions: Iterable[Session]) -> dict[int, list[Session]]:
    groups: dict[int, list[Session]] = defaultdict(list)
    for s in sessions:
        groups[s.rnti].append(s)
    for v in groups.values():
        v.sort(key=lambda s: s.start_s)
    return dict(groups)


def activity_signal(sessions: Sequence[Session], start_s: int, length: int) -> np.ndarray:
    """0/1 per second over [start_s, start_s + length): any bits that second."""
    out = np.zeros(length)
    for s in sessions:
        active = (s.samples.sum(axis=1) > 0).astype(float)
        lo = s.start_s - start_s
        a, b = max(lo, 0), min(lo + len(active), length)
        if a < b:
            out[a:b] = np.maximum(out[a:b], active[a - lo:b - lo])
    return out


def watermark_scores(sessions, spec: WatermarkSpec) -> dict[int, float]:
    """Correlation of each RNTI's activity with the ideal on/pause wave.

    The wave is anchored at the RNTI's first active second. RNTIs whose
    activity has no variance over the span score 0.
    """
    groups = sessions if isinstance(sessions, Mapping) else group_by_rnti(sessions)
    wave = spec.square_wave()
    scores = {}
    for rnti, group in groups.items():
        if not group:
            continue
        start = min(s.start_s for s in group)
        act = activity_signal(group, start, len(wave))
        if act.std() == 0:
            scores[rnti] = 0.0
        else:
            scores[rnti] = pearson(act, wave)
    return scores


def detect_watermark(sessions, spec: WatermarkSpec) -> int:
    """RNTI whose activity best matches the watermark duty cycle."""
    scores = watermark_scores(sessions, spec)
    if not scores:
        raise NoWatermarkFound("no RNTI present")
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    best_rnti, best = ranked[0]
    if best <= WATERMARK_MIN_SCORE:
        raise NoWatermarkFound(f"best score {best:.3f} <= {WATERMARK_MIN_SCORE}")
    if len(ranked) > 1 and ranked[1][1] >= best - WATERMARK_TIE:
        raise AmbiguousWatermark(
            f"RNTIs {best_rnti:#06x} and {ranked[1][0]:#06x} score {best:.3f}/{ranked[1][1]:.3f}"
        )
    return best_rnti


def _split_on_pauses(session: Session, pause_s: int) -> list[Session]:
    idx = np.flatnonzero(session.samples.sum(axis=1) > 0)
    if len(idx) == 0:
        return []
    cuts = np.flatnonzero(np.diff(idx) - 1 >= pause_s) + 1
    return [
        Session(session.rnti, session.start_s + int(run[0]),
                session.samples[run[0]:run[-1] + 1].copy())
        for run in np.split(idx, cuts)
    ]


def split_and_label(watermark_sessions: Sequence[Session], app: AppClass,
                    pause_s: int | None = None) -> list[Session]:
    """One labeled session per on-interval of the watermark user.

    Sessions are split further wherever ``pause_s`` or more inactive
    seconds appear inside them (when given).
    """
    out = []
    for s in sorted(watermark_sessions, key=lambda s: s.start_s):
        parts = _split_on_pauses(s, pause_s) if pause_s else [s]
        for p in parts:
            out.append(Session(p.rnti, p.start_s, p.samples, label=app))
    return out


def label_from_schedule(trace: Trace, schedule: dict, idle_gap_s: int = 5,
                        min_len_s: int = 5) -> list[Session]:
    """Recover labeled watermark sessions from a campaign trace and its schedule."""
    spec = WatermarkSpec(**schedule["watermark"])
    labeled = []
    for block in schedule["blocks"]:
        part = trace.slice_seconds(block["start_s"], block["end_s"])
        sessions = extract_sessions(part, idle_gap_s, min_len_s)
        groups = group_by_rnti(sessions)
        rnti = detect_watermark(groups, spec)
        labeled.extend(split_and_label(groups[rnti], AppClass[block["app"]],
                                       spec.pause_duration_s))
    return labeled


def pearson(a, b) -> float:
    """Pearson correlation via two-pass mean removal; clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise DegenerateInput("need two equal-length sequences of length >= 2")
    da, db = a - a.mean(), b - b.mean()
    va, vb = np.dot(da, da), np.dot(db, db)
    if va == 0 or vb == 0:
        raise DegenerateInput("zero variance")
    r = np.dot(da, db) / np.sqrt(va * vb)
    return float(min(1.0, max(-1.0, r)))


def session_correlation_profile(sessions: Sequence[Session]) -> list[float]:
    """Downlink correlation of session 0 with every session, in order."""
    if not sessions:
        raise ValueError("need at least one session")
    first = sessions[0].samples[:, 0]
    out = []
    for s in sessions:
        m = min(len(first), len(s))
        out.append(pearson(first[:m], s.samples[:m, 0]))
    return out


class WindowMode(enum.Enum):
    Synchronous = "sync"
    Asynchronous = "async"


@dataclass(frozen=True)
class WindowingParams:
    w_s: int = 40
    stride_s: int = 15
    mode: WindowMode = WindowMode.Asynchronous

    def __post_init__(self):
        if self.w_s < 1 or self.stride_s < 1:
            raise ValueError("window and stride must be positive")
        if self.mode is WindowMode.Asynchronous and self.stride_s > self.w_s:
            raise ValueError("asynchronous stride must not exceed the window")


@dataclass
class WindowSample:
    data: np.ndarray  # (W, 2)
    label: AppClass | ServiceClass | None
    source: tuple[int, int]  # (rnti, absolute start second)


def window_starts(n: int, params: WindowingParams) -> list[int]:
    if n < params.w_s:
        return []
    if params.mode is WindowMode.Synchronous:
        return [0]
    return list(range(0, n - params.w_s + 1, params.stride_s))


def make_windows(session: Session, params: WindowingParams) -> list[WindowSample]:
    return [
        WindowSample(session.samples[i:i + params.w_s].copy(), session.label,
                     (session.rnti, session.start_s + i))
        for i in window_starts(len(session), params)
    ]


def normalize_window(data: np.ndarray) -> np.ndarray:
    m = float(np.max(data)) if data.size else 0.0
    return data if m == 0 else data / m


def normalize_windows(samples: Sequence[WindowSample]) -> list[WindowSample]:
    """Scale each window by its own maximum over both channels."""
    return [WindowSample(normalize_window(s.data), s.label, s.source) for s in samples]
