"""Window datasets (tensor X of shape M x W x 2) and their binary file format.

File layout, little-endian::

    magic    4 bytes  b"DCIW"
    version  uint16
    M, W, D  uint32 x 3
    n_meta   uint32   length of the UTF-8 JSON metadata that follows
    meta     JSON     {"task", "classes", "sources"}
    labels   int32 x M        (-1 = unlabeled)
    data     float64 x M*W*D
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classes import class_names, label_index
from .dci import Session
from .errors import ArtifactMismatch
from .sessionize import WindowingParams, make_windows, normalize_window

MAGIC = b"DCIW"
VERSION = 1
_HEAD = struct.Struct("<4sHIIII")


@dataclass
class WindowDataset:
    X: np.ndarray  # (M, W, 2), per-window max normalized
    y: np.ndarray  # (M,) int, -1 when unlabeled
    task: str
    sources: list[tuple[int, int]] = field(default_factory=list)  # (rnti, start_s)
    groups: np.ndarray | None = None  # session index per window

    @property
    def classes(self) -> list[str]:
        return class_names(self.task)

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "WindowDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowDataset(self.X[idx], self.y[idx], self.task,
                             [self.sources[i] for i in idx],
                             None if self.groups is None else self.groups[idx])

    def to_bytes(self) -> bytes:
        m = len(self.y)
        w = self.X.shape[1] if m else 0
        meta = json.dumps({"task": self.task, "classes": self.classes,
                           "sources": [list(s) for s in self.sources],
                           "groups": None if self.groups is None else self.groups.tolist()},
                          sort_keys=True).encode("utf-8")
        return b"".join([
            _HEAD.pack(MAGIC, VERSION, m, w, 2, len(meta)),
            meta,
            np.asarray(self.y, dtype="<i4").tobytes(),
            np.ascontiguousarray(self.X, dtype="<f8").tobytes(),
        ])

    @classmethod
    def from_bytes(cls, data: bytes) -> "WindowDataset":
        if len(data) < _HEAD.size:
            raise ArtifactMismatch("truncated window file")
        magic, version, m, w, d, n_meta = _HEAD.unpack_from(data)
        if magic != MAGIC or version != VERSION or d != 2:
            raise ArtifactMismatch("not a version-1 window dataset")
        off = _HEAD.size
        meta = json.loads(data[off:off + n_meta].decode("utf-8"))
        off += n_meta
        y = np.frombuffer(data, dtype="<i4", count=m, offset=off).astype(np.int64)
        off += 4 * m
        X = np.frombuffer(data, dtype="<f8", count=m * w * d, offset=off).reshape(m, w, d).copy()
        if meta["classes"] != class_names(meta["task"]):
            raise ArtifactMismatch("label map does not match the task")
        groups = None if meta.get("groups") is None else np.array(meta["groups"], dtype=np.int64)
        return cls(X, y, meta["task"], [tuple(s) for s in meta["sources"]], groups)


def save_dataset(ds: WindowDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(ds.to_bytes())


def load_dataset(path) -> WindowDataset:
    with open(path, "rb") as fh:
        return WindowDataset.from_bytes(fh.read())


def build_dataset(sessions: Sequence[Session], params: WindowingParams, task: str) -> WindowDataset:
    """Window and normalize sessions; unlabeled sessions get label -1."""
    X, y, sources, groups = [], [], [], []
    for g, s in enumerate(sessions):
        for win in make_windows(s, params):
            X.append(normalize_window(win.data))
            y.append(-1 if s.label is None else label_index(s.label, task))
            sources.append(win.source)
            groups.append(g)
    X = np.array(X, dtype=np.float64).reshape(-1, params.w_s, 2)
    return WindowDataset(X, np.array(y, dtype=np.int64), task, sources,
                         np.array(groups, dtype=np.int64))
