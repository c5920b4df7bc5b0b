"""Hourly traffic volume and service-level decomposition of unlabeled traces.

Hours are trace-relative: second ``s`` of the trace falls in bucket
``(s // 3600) % 24``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classes import AppClass, ServiceClass
from .dci import Session, Trace
from .ood import OOD, OodDetector
from .sessionize import WindowingParams, extract_sessions, normalize_window, window_starts

HOURS = 24
SHARE_COLUMNS = ("audio", "video", "call", "ood")
CSV_HEADER = "hour,total_bits," + ",".join(SHARE_COLUMNS)
WEIGHTINGS = ("bits", "sessions")


def _hour_bits(session: Session) -> np.ndarray:
    """Exact integer DL+UL bits of ``session`` per trace-relative hour."""
    secs = session.start_s + np.arange(len(session))
    bits = np.rint(session.samples).astype(np.int64).sum(axis=1)
    out = np.zeros(HOURS, dtype=np.int64)
    np.add.at(out, (secs // 3600) % HOURS, bits)
    return out


def _hour_presence(session: Session) -> np.ndarray:
    secs = session.start_s + np.arange(len(session))
    present = np.zeros(HOURS, dtype=bool)
    present[np.unique((secs // 3600) % HOURS)] = True
    return present


def aggregate_volume(sessions: Sequence[Session]) -> tuple[np.ndarray, bool]:
    """Hourly volume divided by its peak; (all zeros, False) without traffic."""
    total = np.zeros(HOURS, dtype=np.int64)
    for s in sessions:
        total += _hour_bits(s)
    peak = total.max()
    if peak == 0:
        return np.zeros(HOURS), False
    return total / peak, True


@dataclass
class HourlyDecomposition:
    total_bits: np.ndarray = field(default_factory=lambda: np.zeros(HOURS, dtype=np.int64))
    shares: np.ndarray = field(default_factory=lambda: np.zeros((HOURS, len(SHARE_COLUMNS))))
    n_sessions: np.ndarray = field(default_factory=lambda: np.zeros(HOURS, dtype=np.int64))
    weighting: str = "bits"

    @property
    def nonempty(self) -> np.ndarray:
        return self.n_sessions > 0

    @property
    def normalized(self) -> bool:
        return bool(self.total_bits.max() > 0)

    def volume_curve(self) -> np.ndarray:
        peak = self.total_bits.max()
        return self.total_bits / peak if peak > 0 else np.zeros(HOURS)


def _service_of(k: int, n_classes: int) -> int:
    if n_classes == len(AppClass):
        return int(AppClass(k).service())
    return k


def session_decisions(sessions: Sequence[Session], classifier, detector: OodDetector | None,
                      params: WindowingParams, threshold: float | None = None) -> list[int]:
    """Service index per session, or ``OOD``.

    Sessions shorter than the window are zero-padded to one window. A session
    is OOD when at least half of its windows are rejected; otherwise it takes
    the majority service among its accepted windows (ties to the lowest index).
    """
    W = params.w_s
    windows, owner = [], []
    for i, s in enumerate(sessions):
        starts = window_starts(len(s), params)
        if not starts:
            pad = np.zeros((W, 2))
            pad[:len(s)] = s.samples
            windows.append(normalize_window(pad))
            owner.append(i)
        for a in starts:
            windows.append(normalize_window(s.samples[a:a + W]))
            owner.append(i)
    if not windows:
        return []
    X = np.stack(windows)
    probs = classifier.predict_proba(X) if hasattr(classifier, "predict_proba") else None
    if detector is not None:
        k = detector.decide(probs, threshold)
    elif probs is not None:
        k = probs.argmax(axis=1)
    else:
        k = classifier.predict(X)
    K = classifier.n_classes
    owner = np.asarray(owner)
    out = []
    n_services = len(ServiceClass)
    for i in range(len(sessions)):
        ki = k[owner == i]
        accepted = ki[ki != OOD]
        if 2 * (len(ki) - len(accepted)) >= len(ki):
            out.append(OOD)
            continue
        svc = [_service_of(int(c), K) for c in accepted]
        out.append(int(np.bincount(svc, minlength=n_services).argmax()))
    return out


def decompose_sessions(sessions: Sequence[Session], decisions: Sequence[int],
                       weighting: str = "bits") -> HourlyDecomposition:
    if weighting not in WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WEIGHTINGS}")
    dec = HourlyDecomposition(weighting=weighting)
    weight = np.zeros((HOURS, len(SHARE_COLUMNS)))
    for s, d in zip(sessions, decisions):
        bits = _hour_bits(s)
        present = _hour_presence(s)
        dec.total_bits += bits
        dec.n_sessions += present
        col = len(SHARE_COLUMNS) - 1 if d == OOD else int(d)
        weight[:, col] += bits if weighting == "bits" else present
    sums = weight.sum(axis=1, keepdims=True)
    dec.shares = np.divide(weight, sums, out=np.zeros_like(weight), where=sums > 0)
    return dec


def decompose(trace: Trace, classifier, detector: OodDetector | None,
              params: WindowingParams = WindowingParams(), *, weighting: str = "bits",
              threshold: float | None = None, idle_gap_s: int = 5,
              min_len_s: int = 5) -> HourlyDecomposition:
    """Sessionize, classify each session with the OOD gate, and aggregate by hour."""
    sessions = extract_sessions(trace, idle_gap_s, min_len_s)
    decisions = session_decisions(sessions, classifier, detector, params, threshold)
    return decompose_sessions(sessions, decisions, weighting)


def render_csv(dec: HourlyDecomposition) -> str:
    """One row per hour that has sessions; header only when there are none."""
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for h in np.flatnonzero(dec.nonempty):
        shares = ",".join(f"{v:.4f}" for v in dec.shares[h])
        buf.write(f"{h},{int(dec.total_bits[h])},{shares}\n")
    return buf.getvalue()


def render_summary(dec: HourlyDecomposition) -> str:
    active = np.flatnonzero(dec.nonempty)
    if len(active) == 0:
        return "no sessions\n"
    total = int(dec.total_bits.sum())
    if dec.weighting == "bits":
        w = dec.total_bits[active].astype(np.float64)
    else:
        w = dec.n_sessions[active].astype(np.float64)
    overall = (dec.shares[active] * w[:, None]).sum(axis=0) / w.sum() if w.sum() > 0 else np.zeros(4)
    peak = int(np.argmax(dec.total_bits))
    lines = [
        f"sessions: {int(dec.n_sessions.sum())} (session-hours), total bits: {total}",
        f"active hours: {len(active)}, peak hour: {peak}",
        "overall shares (" + dec.weighting + "): "
        + ", ".join(f"{c}={v:.4f}" for c, v in zip(SHARE_COLUMNS, overall)),
    ]
    return "\n".join(lines) + "\n"


def render_report(dec: HourlyDecomposition) -> tuple[str, str]:
    """(CSV text, text summary)."""
    return render_csv(dec), render_summary(dec)
