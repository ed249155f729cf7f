"""Binary weight container ("NAW1").

Layout, little-endian throughout, no padding::

    magic      4 bytes  b"NAW1"
    version    u16
    cfg_len    u32, then cfg_len bytes of UTF-8 JSON
               {"engine": EngineConfig dict, "plan": {layer: precision},
                "act_specs": {site: QuantSpec dict}}
    n_tensors  u32, then per tensor:
               name_len u16, name, dtype u8 (0 f32, 1 bf16, 2 i8), ndim u8, shape u32*ndim,
               spec_offset u64 (absolute; NO_SPEC if none), data_offset u64 (absolute),
               byte_length u64
    spec_len   u64, then the quant-spec section; each spec is
               scheme u8 (0 asym, 1 sym), bits u8, zero_point i32, alpha f64, beta f64
               (NaN when unknown), ndim u8, shape u32*ndim, scales f64*prod(shape)
    payload    raw tensor bytes at the table's offsets
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .config import EngineConfig
from .quant.core import PER_CHANNEL_SYM, PER_TENSOR_ASYM, QuantSpec, bf16_round, quantize, weight_spec
from .quant.plan import PrecisionPlan
from .weights import channel_dims, layer_of, weight_tensor_names

MAGIC = b"NAW1"
VERSION = 1
NO_SPEC = 2 ** 64 - 1
DTYPES = {"f32": 0, "bf16": 1, "i8": 2}
DTYPE_NAMES = {v: k for k, v in DTYPES.items()}
ITEMSIZE = {"f32": 4, "bf16": 2, "i8": 1}
SCHEMES = {PER_TENSOR_ASYM: 0, PER_CHANNEL_SYM: 1}
SCHEME_NAMES = {v: k for k, v in SCHEMES.items()}


class ContainerError(ValueError):
    pass


@dataclass
class Container:
    """Decoded container. ``raw`` holds payloads in their stored dtype (bf16 as uint16 bits)."""

    raw: dict[str, np.ndarray]
    dtypes: dict[str, str]
    weight_specs: dict[str, QuantSpec]
    act_specs: dict[str, QuantSpec]
    cfg: EngineConfig
    plan: dict[str, str] | None = None
    nbytes: int = 0
    payload_bytes: int = 0

    @property
    def weights(self) -> dict[str, np.ndarray]:
        """Float32 view of every tensor (int8 tensors dequantized with their spec)."""
        out = {}
        for n, a in self.raw.items():
            dt = self.dtypes[n]
            if dt == "f32":
                out[n] = a
            elif dt == "bf16":
                out[n] = (a.astype(np.uint32) << 16).view(np.float32)
            else:
                s = self.weight_specs[n]
                out[n] = (s.scale_for(a.ndim) * (a.astype(np.float64) - s.zero_point)).astype(np.float32)
        return out


def _encode_spec(spec: QuantSpec) -> bytes:
    scale = np.atleast_1d(np.asarray(spec.scale, dtype="<f8")) if spec.per_channel else np.asarray([spec.scale], "<f8")
    shape = scale.shape if spec.per_channel else ()
    nan = float("nan")
    b = struct.pack("<BBidd", SCHEMES[spec.scheme], spec.bits, spec.zero_point,
                    nan if spec.alpha is None else spec.alpha, nan if spec.beta is None else spec.beta)
    b += struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
    return b + scale.astype("<f8").tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise ContainerError(f"truncated container: need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _decode_spec(data: bytes, off: int) -> QuantSpec:
    r = _Reader(data)
    r.pos = off
    scheme, bits, zp, alpha, beta = r.unpack("<BBidd")
    if scheme not in SCHEME_NAMES:
        raise ContainerError(f"unknown quant scheme code {scheme}")
    (ndim,) = r.unpack("<B")
    shape = r.unpack(f"<{ndim}I")
    count = int(np.prod(shape)) if ndim else 1
    scale = np.frombuffer(r.take(8 * count), "<f8").astype(np.float64)
    name = SCHEME_NAMES[scheme]
    scale = scale.reshape(shape) if name == PER_CHANNEL_SYM else float(scale[0])
    opt = lambda v: None if np.isnan(v) else v
    try:
        return QuantSpec(scale, zp, bits, name, opt(alpha), opt(beta))
    except ValueError as e:
        raise ContainerError(f"invalid quant spec at offset {off}: {e}") from e


def _storage(weights, cfg: EngineConfig, plan: PrecisionPlan | None, weight_specs):
    """Decide (dtype, payload array, spec) per tensor."""
    mats = set(weight_tensor_names(cfg.model))
    weight_specs = dict(weight_specs or {})
    out = {}
    for name, w in weights.items():
        w = np.asarray(w, dtype=np.float32)
        prec = plan.layers.get(layer_of(name), "f32") if plan else "f32"
        if prec == "int8" and name in mats:
            spec = weight_specs.get(name) or weight_spec(w, channel_dims(name))
            out[name] = ("i8", quantize(w, spec).q.astype("<i1"), spec)
        elif prec == "bf16" and name in mats:
            bits = (bf16_round(w).view(np.uint32) >> 16).astype("<u2")
            out[name] = ("bf16", bits, None)
        else:
            out[name] = ("f32", w.astype("<f4"), None)
    return out


def save(path, weights, cfg: EngineConfig | None = None, plan: PrecisionPlan | None = None,
         act_specs: dict | None = None, weight_specs: dict | None = None) -> int:
    """Write a container and return its total size in bytes.

    Without a plan every tensor is stored as f32. With a plan, matrices of int8 layers are
    stored as per-channel int8 and matrices of bf16 layers as bfloat16; biases stay f32.
    """
    cfg = cfg or EngineConfig()
    names = list(weights)
    if len(set(names)) != len(names):
        raise ContainerError("duplicate tensor names")
    store = _storage(weights, cfg, plan, weight_specs)
    meta = {
        "engine": cfg.to_dict(),
        "plan": dict(plan.layers) if plan else None,
        "act_specs": {k: v.to_dict() for k, v in (act_specs or {}).items()},
    }
    cfg_bytes = json.dumps(meta, sort_keys=True).encode()

    entries = []
    for n in names:
        dt, arr, _ = store[n]
        entries.append((n.encode(), dt, arr.shape))
    table_size = 4 + sum(2 + len(nb) + 2 + 4 * len(shape) + 24 for nb, _, shape in entries)
    spec_start = 4 + 2 + 4 + len(cfg_bytes) + table_size + 8

    spec_blob = io.BytesIO()
    spec_off = {}
    for n in names:
        spec = store[n][2]
        if spec is not None:
            spec_off[n] = spec_start + spec_blob.tell()
            spec_blob.write(_encode_spec(spec))
    spec_bytes = spec_blob.getvalue()

    pos = spec_start + len(spec_bytes)
    table = io.BytesIO()
    table.write(struct.pack("<I", len(entries)))
    payload = io.BytesIO()
    for (nb, dt, shape), n in zip(entries, names):
        data = store[n][1].tobytes()
        table.write(struct.pack("<H", len(nb)) + nb)
        table.write(struct.pack("<BB", DTYPES[dt], len(shape)) + struct.pack(f"<{len(shape)}I", *shape))
        table.write(struct.pack("<QQQ", spec_off.get(n, NO_SPEC), pos + payload.tell(), len(data)))
        payload.write(data)

    blob = (MAGIC + struct.pack("<HI", VERSION, len(cfg_bytes)) + cfg_bytes + table.getvalue()
            + struct.pack("<Q", len(spec_bytes)) + spec_bytes + payload.getvalue())
    with open(path, "wb") as f:
        f.write(blob)
    return len(blob)


def loads(data: bytes) -> Container:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ContainerError("bad magic: not a NAW1 weight container")
    version, cfg_len = r.unpack("<HI")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    try:
        meta = json.loads(r.take(cfg_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"corrupt config block: {e}") from e
    cfg = EngineConfig.from_dict(meta["engine"])
    (count,) = r.unpack("<I")
    table = []
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        code, ndim = r.unpack("<BB")
        if code not in DTYPE_NAMES:
            raise ContainerError(f"{name}: unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I")
        spec_off, off, length = r.unpack("<QQQ")
        table.append((name, DTYPE_NAMES[code], shape, spec_off, off, length))
    (spec_len,) = r.unpack("<Q")
    spec_start = r.pos
    r.take(spec_len)
    payload_start = r.pos

    names = [t[0] for t in table]
    if len(set(names)) != len(names):
        raise ContainerError("duplicate tensor names in table")
    spans = sorted((off, off + length, name) for name, _, _, _, off, length in table)
    for (a0, a1, an), (b0, b1, bn) in zip(spans, spans[1:]):
        if b0 < a1:
            raise ContainerError(f"overlapping payloads: {an} and {bn}")

    raw, dtypes, wspecs = {}, {}, {}
    for name, dt, shape, spec_off, off, length in table:
        if length != int(np.prod(shape, dtype=np.int64)) * ITEMSIZE[dt]:
            raise ContainerError(f"{name}: byte length {length} does not match shape {shape}")
        if off < payload_start or off + length > len(data):
            raise ContainerError(f"{name}: payload [{off}, {off + length}) outside the file payload area")
        np_dt = {"f32": "<f4", "bf16": "<u2", "i8": "<i1"}[dt]
        raw[name] = np.frombuffer(data, np_dt, count=length // ITEMSIZE[dt], offset=off).reshape(shape).copy()
        dtypes[name] = dt
        if spec_off != NO_SPEC:
            if not spec_start <= spec_off < payload_start:
                raise ContainerError(f"{name}: quant spec offset {spec_off} outside the quant-spec section")
            wspecs[name] = _decode_spec(data[:payload_start], spec_off)
        elif dt == "i8":
            raise ContainerError(f"{name}: int8 tensor without a quant spec")
    try:
        act = {k: QuantSpec.from_dict(v) for k, v in meta.get("act_specs", {}).items()}
    except (KeyError, ValueError) as e:
        raise ContainerError(f"corrupt activation spec: {e}") from e
    payload = sum(t[5] for t in table)
    return Container(raw, dtypes, wspecs, act, cfg, meta.get("plan"), len(data), payload)


def load(path) -> Container:
    with open(path, "rb") as f:
        return loads(f.read())
