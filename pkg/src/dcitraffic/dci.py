"""DCI records, the MCS/RB to TBS mapping, traces and their serialization.

The transport block size table is a deterministic surrogate: a 29-entry
spectral-efficiency vector (bits per resource element) times 144 data
resource elements per resource block, rounded to a multiple of 8 bits.
Every (mcs, n_rb) pair in range yields a positive TBS that is strictly
increasing in ``n_rb`` and non-decreasing in ``mcs``.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .classes import AppClass, ServiceClass, parse_label
from .errors import InconsistentTbs, InvalidRnti, MalformedLine, OutOfRange

RNTI_MIN = 0x003D
RNTI_MAX = 0xFFF3
MCS_MAX = 28
N_RB_MAX = 100
RE_PER_RB = 144
TTI_PER_S = 1000

# Monotone efficiency per MCS index: QPSK 0-9, 16QAM 10-16, 64QAM 17-28.
MCS_EFFICIENCY = (
    0.15, 0.19, 0.23, 0.31, 0.38, 0.49, 0.60, 0.74, 0.88, 1.03,
    1.18, 1.33, 1.48, 1.70, 1.91, 2.16, 2.41,
    2.57, 2.73, 3.03, 3.32, 3.61, 3.90, 4.21, 4.52, 4.82, 5.12, 5.33, 5.55,
)


def _round_to_8(x: float) -> int:
    return 8 * int(math.floor(x / 8.0 + 0.5))


def compute_tbs(mcs: int, n_rb: int) -> int:
    """Transport block size in bits for one grant of ``n_rb`` blocks at ``mcs``."""
    if not 0 <= mcs <= MCS_MAX:
        raise OutOfRange(f"mcs {mcs} outside [0, {MCS_MAX}]")
    if not 1 <= n_rb <= N_RB_MAX:
        raise OutOfRange(f"n_rb {n_rb} outside [1, {N_RB_MAX}]")
    return _round_to_8(n_rb * RE_PER_RB * MCS_EFFICIENCY[mcs])


def tbs_table() -> np.ndarray:
    """Full (29, 100) table; entry [mcs, n_rb - 1]."""
    return np.array(
        [[compute_tbs(m, r) for r in range(1, N_RB_MAX + 1)] for m in range(MCS_MAX + 1)],
        dtype=np.int64,
    )


def validate_rnti(value: int) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise InvalidRnti(f"rnti must be an integer, got {value!r}")
    if not RNTI_MIN <= value <= RNTI_MAX:
        raise InvalidRnti(f"rnti {value:#06x} outside C-RNTI range")
    return int(value)


class Direction(enum.Enum):
    Downlink = "DL"
    Uplink = "UL"

    @property
    def order(self) -> int:
        return 0 if self is Direction.Downlink else 1


@dataclass(frozen=True, slots=True)
class DciRecord:
    tti_ms: int
    rnti: int
    direction: Direction
    mcs: int
    n_rb: int
    tbs_bits: int

    def __post_init__(self):
        if self.tti_ms < 0:
            raise OutOfRange(f"negative tti {self.tti_ms}")
        validate_rnti(self.rnti)
        expected = compute_tbs(self.mcs, self.n_rb)
        if self.tbs_bits != expected:
            raise InconsistentTbs(
                f"tbs {self.tbs_bits} != {expected} for mcs={self.mcs}, n_rb={self.n_rb}"
            )

    def sort_key(self):
        return (self.tti_ms, self.rnti, self.direction.order)


@dataclass(frozen=True)
class Trace:
    records: tuple[DciRecord, ...] = ()

    def __post_init__(self):
        keys = [r.sort_key() for r in self.records]
        if any(a > b for a, b in zip(keys, keys[1:])):
            object.__setattr__(
                self, "records", tuple(sorted(self.records, key=DciRecord.sort_key))
            )

    @property
    def duration_ms(self) -> int:
        return self.records[-1].tti_ms + 1 if self.records else 0

    def __len__(self):
        return len(self.records)

    def rntis(self) -> list[int]:
        return sorted({r.rnti for r in self.records})

    def slice_seconds(self, start_s: int, end_s: int) -> "Trace":
        """Records with tti in [start_s, end_s) seconds, times kept absolute."""
        lo, hi = start_s * TTI_PER_S, end_s * TTI_PER_S
        return Trace(tuple(r for r in self.records if lo <= r.tti_ms < hi))


_FIELDS = ("tti_ms", "rnti", "dir", "mcs", "n_rb", "tbs")


def _record_from_obj(obj, line_no: int) -> DciRecord:
    if not isinstance(obj, dict) or set(obj) != set(_FIELDS):
        raise MalformedLine(line_no, f"expected fields {_FIELDS}")
    for key in ("tti_ms", "rnti", "mcs", "n_rb", "tbs"):
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, int):
            raise MalformedLine(line_no, f"{key} must be an integer")
    if obj["dir"] not in ("DL", "UL"):
        raise MalformedLine(line_no, "dir must be DL or UL")
    try:
        return DciRecord(
            tti_ms=obj["tti_ms"],
            rnti=obj["rnti"],
            direction=Direction(obj["dir"]),
            mcs=obj["mcs"],
            n_rb=obj["n_rb"],
            tbs_bits=obj["tbs"],
        )
    except (InvalidRnti, InconsistentTbs):
        raise
    except OutOfRange as exc:
        raise MalformedLine(line_no, str(exc)) from exc


def parse_trace(data: bytes | str) -> Trace:
    """Parse a JSONL DCI stream into a sorted, validated :class:`Trace`."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedLine(0, "not UTF-8") from exc
    records = []
    for line_no, line in enumerate(data.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(line_no, exc.msg) from exc
        records.append(_record_from_obj(obj, line_no))
    return Trace(tuple(records))


def write_trace(trace: Trace) -> bytes:
    lines = [
        f'{{"tti_ms": {r.tti_ms}, "rnti": {r.rnti}, "dir": "{r.direction.value}", '
        f'"mcs": {r.mcs}, "n_rb": {r.n_rb}, "tbs": {r.tbs_bits}}}\n'
        for r in trace.records
    ]
    return "".join(lines).encode("utf-8")


def read_trace_file(path) -> Trace:
    with open(path, "rb") as fh:
        return parse_trace(fh.read())


def write_trace_file(trace: Trace, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_trace(trace))


@dataclass(eq=False)
class Session:
    """Per-second downlink/uplink bit totals of one RNTI burst.

    ``samples`` has shape (N, 2): column 0 is downlink, column 1 uplink.
    ``label`` is an :class:`AppClass`, a :class:`ServiceClass` or None.
    """

    rnti: int
    start_s: int
    samples: np.ndarray
    label: AppClass | ServiceClass | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1, 2)
        if len(self.samples) < 1:
            raise ValueError("session needs at least one sample")
        if np.any(self.samples < 0) or not np.all(np.isfinite(self.samples)):
            raise ValueError("session samples must be finite and non-negative")

    def __len__(self):
        return len(self.samples)

    @property
    def app(self) -> AppClass | None:
        return self.label if isinstance(self.label, AppClass) else None

    @property
    def service(self) -> ServiceClass | None:
        if isinstance(self.label, AppClass):
            return self.label.service()
        return self.label

    @property
    def total_bits(self) -> float:
        return float(self.samples.sum())

    def same_as(self, other: "Session") -> bool:
        return (
            self.rnti == other.rnti
            and self.start_s == other.start_s
            and self.label == other.label
            and np.array_equal(self.samples, other.samples)
        )


SESSION_CSV_HEADER = ("rnti", "start_s", "second", "dl_bits", "ul_bits", "label")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def sessions_to_csv(sessions: Iterable[Session]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SESSION_CSV_HEADER)
    for s in sessions:
        label = "" if s.label is None else s.label.name
        for i, (dl, ul) in enumerate(s.samples):
            w.writerow((s.rnti, s.start_s, i, _fmt(dl), _fmt(ul), label))
    return buf.getvalue()


def sessions_from_csv(text: str) -> list[Session]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return []
    if tuple(header) != SESSION_CSV_HEADER:
        raise MalformedLine(1, "bad session CSV header")
    groups: dict[tuple[int, int], list] = {}
    labels: dict[tuple[int, int], str] = {}
    for line_no, row in enumerate(reader, start=2):
        if len(row) != 6:
            raise MalformedLine(line_no, "expected 6 columns")
        key = (int(row[0]), int(row[1]))
        rows = groups.setdefault(key, [])
        if int(row[2]) != len(rows):
            raise MalformedLine(line_no, "seconds must be contiguous from 0")
        rows.append((float(row[3]), float(row[4])))
        labels[key] = row[5]
    return [
        Session(rnti=k[0], start_s=k[1], samples=np.array(v), label=parse_label(labels[k]))
        for k, v in groups.items()
    ]


def bin_records(records: Sequence[DciRecord], start_s: int, n_seconds: int) -> np.ndarray:
    """Per-second (DL, UL) TBS totals over [start_s, start_s + n_seconds)."""
    out = np.zeros((n_seconds, 2), dtype=np.float64)
    for r in records:
        i = r.tti_ms // TTI_PER_S - start_s
        if 0 <= i < n_seconds:
            out[i, r.direction.order] += r.tbs_bits
    return out
