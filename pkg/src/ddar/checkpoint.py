"""Binary checkpoint container.

Layout (all integers little-endian u32)::

    b"DDAR"  version
    count  { key_len key  value_len value }*count     # UTF-8 text pairs
    float64 arrays, little-endian, row-major, in the order listed by the
    ``layout`` header entry ("name:rows,cols;name:rows,cols;...")

Every model type records a ``method`` tag (``ddar``, ``softmax`` or
``ensemble``) and all shape metadata, so a reader can validate array
shapes against the declared dimensions before trusting them.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from typing import Union

import numpy as np

from .baselines import Ensemble, SoftmaxModel
from .exceptions import CheckpointError
from .model import DdarModel, ExtractorConfig

MAGIC = b"DDAR"
FORMAT_VERSION = 1

_EXT_INT_KEYS = ("input_dim", "width", "depth", "embed_dim")
_EXT_FLOAT_KEYS = ("dropout_rate", "residual_scale")


def _fmt_float(x: float) -> str:
    return repr(float(x))


def _write_container(header: dict[str, str], arrays: list[tuple[str, np.ndarray]]) -> bytes:
    header = dict(header)
    header["layout"] = ";".join(f"{n}:{a.shape[0]},{a.shape[1]}" for n, a in arrays)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<I", len(header)))
    for k, v in header.items():
        kb, vb = k.encode("utf-8"), str(v).encode("utf-8")
        buf.write(struct.pack("<I", len(kb)))
        buf.write(kb)
        buf.write(struct.pack("<I", len(vb)))
        buf.write(vb)
    for _, a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def _read_container(data: bytes) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic bytes: not a DDAR checkpoint")
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    header: dict[str, str] = {}
    for i in range(r.u32("header count")):
        key = r.take(r.u32(f"header key {i} length"), f"header key {i}").decode("utf-8")
        header[key] = r.take(r.u32(f"header value {key!r} length"), f"header value {key!r}").decode("utf-8")
    if "layout" not in header:
        raise CheckpointError("header field 'layout' missing")
    arrays: dict[str, np.ndarray] = {}
    for entry in filter(None, header["layout"].split(";")):
        try:
            name, dims = entry.split(":")
            rows, cols = (int(d) for d in dims.split(","))
        except ValueError:
            raise CheckpointError(f"header field 'layout' malformed at {entry!r}") from None
        raw = r.take(8 * rows * cols, f"array {name!r}")
        arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(rows, cols)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last array")
    return header, arrays


def _field(header: dict[str, str], key: str, kind=int):
    if key not in header:
        raise CheckpointError(f"header field {key!r} missing")
    try:
        return kind(header[key])
    except ValueError:
        raise CheckpointError(f"header field {key!r} has invalid value {header[key]!r}") from None


def _ext_header(cfg: ExtractorConfig, prefix: str = "") -> dict[str, str]:
    out = {prefix + k: str(getattr(cfg, k)) for k in _EXT_INT_KEYS}
    out.update({prefix + k: _fmt_float(getattr(cfg, k)) for k in _EXT_FLOAT_KEYS})
    return out


def _ext_from_header(header: dict[str, str], prefix: str = "") -> ExtractorConfig:
    kwargs = {k: _field(header, prefix + k, int) for k in _EXT_INT_KEYS}
    kwargs.update({k: _field(header, prefix + k, float) for k in _EXT_FLOAT_KEYS})
    try:
        return ExtractorConfig(**kwargs)
    except ValueError as exc:
        raise CheckpointError(f"invalid extractor header: {exc}") from None


def _expect(arrays: dict[str, np.ndarray], name: str, shape: tuple[int, int]) -> np.ndarray:
    if name not in arrays:
        raise CheckpointError(f"array {name!r} missing")
    if arrays[name].shape != shape:
        raise CheckpointError(f"array {name!r} has shape {arrays[name].shape}, header implies {shape}")
    return arrays[name]


def _extractor_shapes(cfg: ExtractorConfig) -> dict[str, tuple[int, int]]:
    shapes = {"in_w": (cfg.input_dim, cfg.width), "in_b": (1, cfg.width)}
    for i in range(cfg.depth):
        shapes[f"res{i}_w"] = (cfg.width, cfg.width)
        shapes[f"res{i}_b"] = (1, cfg.width)
    if cfg.has_output_projection:
        shapes["out_w"] = (cfg.width, cfg.embed_dim)
        shapes["out_b"] = (1, cfg.embed_dim)
    return shapes


# ---------------------------------------------------------------------------
# per-model packing
# ---------------------------------------------------------------------------


def _pack_softmax(model: SoftmaxModel, prefix: str = "") -> list[tuple[str, np.ndarray]]:
    return [(prefix + k, model.params[k]) for k in model.param_names()]


def _unpack_softmax(header, arrays, cfg: ExtractorConfig, num_classes: int, prefix: str = "") -> SoftmaxModel:
    shapes = _extractor_shapes(cfg)
    shapes["head_w"] = (cfg.embed_dim, num_classes)
    shapes["head_b"] = (1, num_classes)
    params = {k: _expect(arrays, prefix + k, s) for k, s in shapes.items()}
    return SoftmaxModel(cfg, params)


def to_bytes(model: Union[DdarModel, SoftmaxModel, Ensemble]) -> bytes:
    if isinstance(model, DdarModel):
        header = {"method": "ddar", **_ext_header(model.config)}
        header.update(
            num_classes=str(model.num_classes),
            num_prototypes=str(model.num_prototypes),
            centroid_dim=str(model.centroid_dim),
            sigma=_fmt_float(model.sigma),
            loss_weight=_fmt_float(model.loss_weight),
        )
        arrays = [(k, model.params[k]) for k in model.param_names()]
        arrays.append(("centroids", model.centroids))
        return _write_container(header, arrays)
    if isinstance(model, SoftmaxModel):
        header = {"method": "softmax", **_ext_header(model.config), "num_classes": str(model.num_classes)}
        return _write_container(header, _pack_softmax(model))
    if isinstance(model, Ensemble):
        first = model.members[0]
        header = {
            "method": "ensemble",
            **_ext_header(first.config),
            "num_classes": str(first.num_classes),
            "members": str(len(model.members)),
            "seeds": ",".join(str(s) for s in model.seeds),
        }
        arrays = []
        for i, m in enumerate(model.members):
            arrays += _pack_softmax(m, prefix=f"m{i}.")
        return _write_container(header, arrays)
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def from_bytes(data: bytes) -> Union[DdarModel, SoftmaxModel, Ensemble]:
    header, arrays = _read_container(data)
    method = header.get("method")
    cfg = _ext_from_header(header)
    C = _field(header, "num_classes")
    if method == "ddar":
        m = _field(header, "num_prototypes")
        n = _field(header, "centroid_dim")
        shapes = _extractor_shapes(cfg)
        shapes["prototypes"] = (m, cfg.embed_dim)
        shapes["rbf_weights"] = (C * n, m)
        params = {k: _expect(arrays, k, s) for k, s in shapes.items()}
        centroids = _expect(arrays, "centroids", (C, n))
        try:
            return DdarModel(
                config=cfg,
                params=params,
                centroids=centroids,
                sigma=_field(header, "sigma", float),
                loss_weight=_field(header, "loss_weight", float),
            )
        except ValueError as exc:
            raise CheckpointError(f"inconsistent model: {exc}") from None
    if method == "softmax":
        return _unpack_softmax(header, arrays, cfg, C)
    if method == "ensemble":
        k = _field(header, "members")
        seeds = [int(s) for s in header.get("seeds", "").split(",") if s]
        if len(seeds) != k:
            raise CheckpointError(f"header field 'seeds' lists {len(seeds)} seeds for {k} members")
        members = [_unpack_softmax(header, arrays, cfg, C, prefix=f"m{i}.") for i in range(k)]
        return Ensemble(members, seeds)
    raise CheckpointError(f"header field 'method' has unknown value {method!r}")


def save_checkpoint(model, path) -> None:
    """Write atomically (temp file + rename)."""
    data = to_bytes(model)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
