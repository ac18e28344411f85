"""Bit-exact model artifact format.

Layout: magic "FDL1"; u32-LE length-prefixed UTF-8 header (canonical JSON:
graph specs, normalization stats, parametric layer order); then one block
per parametric layer (u32-LE length-prefixed name, u8 tensor count, and per
tensor a u32-LE rank, u32-LE dims, raw little-endian float32 data); finally
the CRC-32 of all preceding bytes. Weights are stored as float32.

Loading is atomic: the graph, stats, and every tensor are reconstructed and
validated before anything is returned. Version, checksum, and truncation
problems raise distinct errors.
"""

import json
import struct
import zlib

import numpy as np

from . import model as _model
from . import nn
from .augment import NormStats
from .errors import (
    ArtifactChecksumError,
    ArtifactError,
    ArtifactTruncatedError,
    ArtifactVersionError,
    ConfigError,
)
from .tensor import Tensor

MAGIC = b"FDL1"
FORMAT_VERSION = 1


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _layer_tensors(params):
    arrs = [params.weights.data, params.bias.data]
    if isinstance(params, nn.BatchNormState):
        arrs += [params.moving_mean, params.moving_var]
    return arrs


def save_model(graph, stats, path):
    """Write graph specs, weights, and normalization stats to `path`."""
    param_names = [s.name for s in graph.parametric_layers()]
    for name in param_names:
        if name not in graph.store:
            raise ConfigError(f"cannot save: layer {name!r} has no weights")

    header = {
        "format_version": FORMAT_VERSION,
        "layers": [
            {"name": s.name, "kind": s.kind, "hyperparams": s.hyperparams,
             "trainable": s.trainable}
            for s in graph.layers
        ],
        "lint_warnings": list(graph.lint_warnings),
        "stats": stats.to_json() if stats is not None else None,
        "param_layers": param_names,
    }
    blob = bytearray()
    blob += MAGIC
    hdr = _canonical_json(header)
    blob += struct.pack("<I", len(hdr))
    blob += hdr
    for name in param_names:
        nm = name.encode("utf-8")
        blob += struct.pack("<I", len(nm))
        blob += nm
        arrs = _layer_tensors(graph.store[name])
        blob += struct.pack("<B", len(arrs))
        for arr in arrs:
            a = np.ascontiguousarray(arr, dtype="<f4")
            blob += struct.pack("<I", a.ndim)
            blob += struct.pack(f"<{a.ndim}I", *a.shape)
            blob += a.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Cursor:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ArtifactTruncatedError(
                f"file ends at byte {len(self.data)}, needed {self.pos + n}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u8(self):
        return self.take(1)[0]


def load_model(path):
    """Read an artifact back into (ModelGraph, NormStats-or-None)."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError as exc:
        raise ArtifactError(f"model artifact not found: {path}") from exc

    crc_ok = len(data) >= 8 and struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4])

    cur = _Cursor(data)
    if cur.take(4) != MAGIC:
        raise ArtifactVersionError(f"{path}: bad magic bytes, not a model artifact")
    try:
        header = json.loads(cur.take(cur.u32()).decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        if not crc_ok:
            raise ArtifactChecksumError(f"{path}: CRC-32 mismatch, file is corrupted") from exc
        raise ArtifactError(f"{path}: malformed header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise ArtifactVersionError(
            f"{path}: format version {header.get('format_version')!r}, expected {FORMAT_VERSION}"
        )

    tensors = {}
    for _ in header["param_layers"]:
        name = cur.take(cur.u32()).decode("utf-8")
        arrs = []
        for _ in range(cur.u8()):
            rank = cur.u32()
            shape = struct.unpack(f"<{rank}I", cur.take(4 * rank))
            n = int(np.prod(shape)) if shape else 1
            raw = cur.take(4 * n)
            arrs.append(np.frombuffer(raw, dtype="<f4").reshape(shape).copy())
        tensors[name] = arrs

    trailer = cur.take(4)
    if cur.pos != len(data):
        raise ArtifactError(f"{path}: {len(data) - cur.pos} trailing bytes after checksum")
    if struct.unpack("<I", trailer)[0] != zlib.crc32(data[:-4]):
        raise ArtifactChecksumError(f"{path}: CRC-32 mismatch, file is corrupted")

    layers = [
        _model.LayerSpec(name=sp["name"], kind=sp["kind"],
                         hyperparams=sp["hyperparams"], trainable=sp["trainable"])
        for sp in header["layers"]
    ]
    graph = _model.ModelGraph(layers=layers, lint_warnings=header.get("lint_warnings", []))

    expected = _model.parameter_shapes(graph)
    for spec in graph.parametric_layers():
        if spec.name not in tensors:
            raise ArtifactError(f"{path}: no weights stored for layer {spec.name!r}")
        arrs = tensors[spec.name]
        want = expected[spec.name]
        got = [tuple(a.shape) for a in arrs[:2]]
        if got != [tuple(s) for s in want]:
            raise ArtifactError(
                f"{path}: layer {spec.name!r} tensor shapes {got} do not match spec {want}"
            )
        if spec.kind == "batchnorm":
            if len(arrs) != 4:
                raise ArtifactError(
                    f"{path}: batchnorm layer {spec.name!r} needs 4 tensors, found {len(arrs)}"
                )
            graph.store[spec.name] = nn.BatchNormState(
                gamma=Tensor(arrs[0]), beta=Tensor(arrs[1]),
                moving_mean=arrs[2], moving_var=arrs[3],
                trainable=spec.trainable,
            )
        else:
            if len(arrs) != 2:
                raise ArtifactError(
                    f"{path}: layer {spec.name!r} needs 2 tensors, found {len(arrs)}"
                )
            graph.store[spec.name] = nn.LayerParams(
                Tensor(arrs[0]), Tensor(arrs[1]), trainable=spec.trainable
            )

    stats = NormStats.from_json(header["stats"]) if header.get("stats") else None
    return graph, stats
