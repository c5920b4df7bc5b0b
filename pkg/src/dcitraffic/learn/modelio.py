"""Model files: one JSON header line followed by a float64 parameter blob.

The header records the architecture, its hash, and the name and shape of
every parameter array in blob order. Parameters are stored flat,
little-endian, 64-bit. Loading rebuilds the model from the architecture
and refuses files whose hash or parameter shapes do not match it.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from ..errors import ArtifactMismatch
from .benchmarks import KnnModel, LogRegModel
from .nn import CnnModel, MlpModel

FORMAT = "dcitraffic-model"
VERSION = 1
MODEL_TYPES = ("mlp", "cnn", "knn", "logreg")


def arch_hash(arch: dict) -> str:
    return hashlib.sha256(json.dumps(arch, sort_keys=True).encode("utf-8")).hexdigest()


def build_model(arch: dict):
    """Fresh model for an architecture dict as produced by ``model.arch()``."""
    kind = arch.get("type")
    w, k = arch["w"], arch["k"]
    if kind == "mlp":
        return MlpModel(w, k, tuple(arch["hidden"]), arch["alpha"], arch["seed"])
    if kind == "cnn":
        c1, c2 = arch["conv"]
        return CnnModel(w, k, c1, c2, arch["fc"], arch["alpha"], arch["seed"])
    if kind == "knn":
        return KnnModel(w, k, arch["neighbours"])
    if kind == "logreg":
        return LogRegModel(w, k, arch["c"], arch["iterations"])
    raise ArtifactMismatch(f"unknown model type {kind!r}")


def model_to_bytes(model, meta: dict | None = None) -> bytes:
    arch = model.arch()
    names = list(model.params)
    header = {
        "format": FORMAT,
        "version": VERSION,
        "arch": arch,
        "arch_hash": arch_hash(arch),
        "params": [[n, list(model.params[n].shape)] for n in names],
        "meta": meta or {},
    }
    blob = b"".join(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes() for n in names)
    return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + blob


def model_from_bytes(data: bytes):
    """Returns (model, meta)."""
    head, sep, blob = data.partition(b"\n")
    if not sep:
        raise ArtifactMismatch("model file has no header line")
    try:
        header = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactMismatch("model header is not JSON") from exc
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise ArtifactMismatch("not a version-1 model file")
    arch = header["arch"]
    if arch_hash(arch) != header["arch_hash"]:
        raise ArtifactMismatch("architecture hash does not match the header")
    model = build_model(arch)
    if [n for n, _ in header["params"]] != list(model.params):
        raise ArtifactMismatch("parameter names do not match the architecture")
    fixed = model.kind in ("mlp", "cnn", "logreg")
    off = 0
    for name, shape in header["params"]:
        shape = tuple(shape)
        if fixed and shape != model.params[name].shape:
            raise ArtifactMismatch(f"parameter {name} has shape {shape}, "
                                   f"expected {model.params[name].shape}")
        n = int(np.prod(shape))
        if off + 8 * n > len(blob):
            raise ArtifactMismatch("parameter blob is truncated")
        model.params[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += 8 * n
    if off != len(blob):
        raise ArtifactMismatch("trailing bytes after the parameter blob")
    return model, header["meta"]


def save_model(model, path, meta: dict | None = None) -> str:
    """Write the model file and return its sha256 digest."""
    data = model_to_bytes(model, meta)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_model(path):
    """Returns (model, meta, sha256 of the file)."""
    with open(path, "rb") as fh:
        data = fh.read()
    model, meta = model_from_bytes(data)
    return model, meta, hashlib.sha256(data).hexdigest()
