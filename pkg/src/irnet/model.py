"""IRNet assembly, the target-only LSTM baseline, and checkpoints.

Data flow for one batch (``B`` samples)::

    s_tar (B, h) ── target LSTM ── concat steps ── FC ──────────────▶ trf (B, d_hid)
    UM_d (B, k^d, h) ── shared conv ── T-LSTM_d ── FC_d ─▶ tf_d
    [tf_w .. tf_1] ── S-LSTM ──▶ sf_w .. sf_1                          (B, d_hid) each
    rows [sf_U^w..sf_U^1, trf, sf_D^1..sf_D^w] ── self-attention ── flatten ── head ─▶ (B, P)

Parameter shapes depend on :class:`ModelConfig` only, never on the road
network, so a model trained on one road feeds any other road built with the
same ``(h, w, k, P)``.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gradcore as G
from .datagen import Normalizer, Sample
from .errors import BadConfig, CorruptChecksum, ShapeMismatch, VersionMismatch
from .gradcore import Tensor
from .layers import (
    dense,
    init_attention,
    init_conv,
    init_dense,
    init_lstm,
    intersection_conv,
    lstm_forward,
    self_attention,
    to_feature_sequence,
)

HEAD_PREFIX = "head."
DIRECTIONS = ("up", "down")


@dataclass(frozen=True)
class ModelConfig:
    h: int = 6
    w: int = 3
    k: int = 3
    P: int = 5
    d_hid: int = 256
    conv_channels: int = 6
    target_layers: int = 2
    target_hidden: int = 256
    t_layers: int = 2
    t_hidden: int = 512
    t_out: int = 32
    s_layers: int = 2
    s_hidden: int = 256
    baseline_layers: int = 3
    baseline_hidden: int = 512
    kind: str = "irnet"
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("kind", "seed"):
                continue
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise BadConfig(f"{f.name} must be a positive integer, got {v!r}")
        if self.kind not in ("irnet", "baseline"):
            raise BadConfig(f"unknown model kind {self.kind!r}")
        if self.s_hidden != self.d_hid:
            raise BadConfig("S-LSTM hidden size must equal d_hid")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise BadConfig(f"unknown model config keys: {sorted(extra)}")
        return cls(**d)

    def data_shape(self) -> tuple[int, int, int, int]:
        return self.h, self.w, self.k, self.P


ParamSet = dict  # name -> Tensor, insertion-ordered


def _put(params: ParamSet, prefix: str, group):
    if isinstance(group, list):
        for i, layer in enumerate(group):
            _put(params, f"{prefix}.{i}", layer)
    else:
        for name, t in group.items():
            params[f"{prefix}.{name}"] = t


def init(config: ModelConfig, seed: int | None = None) -> ParamSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    c = config
    params: ParamSet = {}
    if c.kind == "baseline":
        _put(params, "baseline.lstm", init_lstm(rng, 1, c.baseline_hidden, c.baseline_layers))
        _put(params, "head", init_dense(rng, c.h * c.baseline_hidden, c.P))
        return params

    _put(params, "target.lstm", init_lstm(rng, 1, c.target_hidden, c.target_layers))
    _put(params, "target.fc", init_dense(rng, c.h * c.target_hidden, c.d_hid))
    for direction in DIRECTIONS:
        _put(params, f"{direction}.conv", init_conv(rng, c.k, c.conv_channels))
        for d in range(1, c.w + 1):
            width = c.conv_channels * c.k ** (d - 1)
            _put(params, f"{direction}.tlstm{d}", init_lstm(rng, width, c.t_hidden, c.t_layers))
            _put(params, f"{direction}.tfc{d}", init_dense(rng, c.h * c.t_hidden, c.t_out))
        _put(params, f"{direction}.slstm", init_lstm(rng, c.t_out, c.s_hidden, c.s_layers))
    _put(params, "attn", init_attention(rng, c.d_hid))
    _put(params, "head", init_dense(rng, (2 * c.w + 1) * c.d_hid, c.P))
    return params


def group(params: ParamSet, prefix: str) -> dict[str, Tensor]:
    n = len(prefix) + 1
    return {name[n:]: t for name, t in params.items() if name.startswith(prefix + ".")}


def lstm_group(params: ParamSet, prefix: str, layers: int) -> list[dict[str, Tensor]]:
    return [group(params, f"{prefix}.{i}") for i in range(layers)]


def shape_signature(params: ParamSet) -> dict[str, tuple[int, ...]]:
    return {name: t.shape for name, t in params.items()}


@dataclass
class Batch:
    s_tar: np.ndarray  # (B, h)
    um: list[np.ndarray]  # w arrays of (B, k^d, h)
    dm: list[np.ndarray]

    def __len__(self):
        return self.s_tar.shape[0]


def make_batch(samples: Sequence[Sample]) -> Batch:
    w = len(samples[0].um)
    return Batch(
        np.stack([s.s_tar for s in samples]),
        [np.stack([s.um[d] for s in samples]) for d in range(w)],
        [np.stack([s.dm[d] for s in samples]) for d in range(w)],
    )


def check_batch(batch: Batch, c: ModelConfig):
    if batch.s_tar.ndim != 2 or batch.s_tar.shape[1] != c.h:
        raise ShapeMismatch(f"target sequences have shape {batch.s_tar.shape}, expected (B, {c.h})")
    if c.kind == "baseline":
        return
    for mats in (batch.um, batch.dm):
        if len(mats) != c.w:
            raise ShapeMismatch(f"expected {c.w} adjacency orders, got {len(mats)}")
        for d, M in enumerate(mats, start=1):
            if M.shape[1:] != (c.k**d, c.h):
                raise ShapeMismatch(f"order-{d} matrix has shape {M.shape[1:]}, expected {(c.k**d, c.h)}")


def _sequence(s_tar: Tensor, h: int) -> list[Tensor]:
    return [G.take(s_tar, (slice(None), slice(t, t + 1))) for t in range(h)]


def forward_target(s_tar, params: ParamSet, c: ModelConfig) -> Tensor:
    """``(B, h)`` target history -> ``(B, d_hid)`` target feature ``trf``."""
    s_tar = G.as_tensor(s_tar)
    if s_tar.data.ndim != 2 or s_tar.shape[1] != c.h:
        raise ShapeMismatch(f"target sequence shape {s_tar.shape}, expected (B, {c.h})")
    hs = lstm_forward(_sequence(s_tar, c.h), lstm_group(params, "target.lstm", c.target_layers))
    return dense(G.concat(hs, axis=-1), group(params, "target.fc"))


def forward_direction(mats, params: ParamSet, c: ModelConfig, direction: str) -> list[Tensor]:
    """Adjacency matrices for orders ``1..w`` -> spatial features ``[sf_1..sf_w]``."""
    if len(mats) != c.w:
        raise ShapeMismatch(f"expected {c.w} matrices, got {len(mats)}")
    conv = group(params, f"{direction}.conv")
    temporal = []
    for d, M in enumerate(mats, start=1):
        M = G.as_tensor(M)
        if M.shape[-2:] != (c.k**d, c.h):
            raise ShapeMismatch(f"order-{d} matrix shape {M.shape}")
        seq = to_feature_sequence(intersection_conv(M, conv))
        hs = lstm_forward(seq, lstm_group(params, f"{direction}.tlstm{d}", c.t_layers))
        temporal.append(dense(G.concat(hs, axis=-1), group(params, f"{direction}.tfc{d}")))
    # Spatial pass runs from the outermost order inwards: step 1 is order w.
    spatial = lstm_forward(temporal[::-1], lstm_group(params, f"{direction}.slstm", c.s_layers))
    return spatial[::-1]


def features(batch: Batch, params: ParamSet, c: ModelConfig) -> Tensor:
    """Everything up to the regression head: ``(B, head input width)``."""
    check_batch(batch, c)
    if c.kind == "baseline":
        seq = _sequence(G.as_tensor(batch.s_tar), c.h)
        hs = lstm_forward(seq, lstm_group(params, "baseline.lstm", c.baseline_layers))
        return G.concat(hs, axis=-1)
    trf = forward_target(batch.s_tar, params, c)
    sf_up = forward_direction(batch.um, params, c, "up")
    sf_down = forward_direction(batch.dm, params, c, "down")
    rows = sf_up[::-1] + [trf] + sf_down
    B = len(batch)
    stack = G.concat([G.reshape(r, (B, 1, c.d_hid)) for r in rows], axis=1)
    fused = self_attention(stack, group(params, "attn"))
    return G.flatten(fused, start=1)


def head(feats: Tensor, params: ParamSet) -> Tensor:
    return dense(feats, group(params, "head"))


def forward(batch: Batch, params: ParamSet, c: ModelConfig) -> Tensor:
    """Normalized predictions for horizons ``1..P``, shape ``(B, P)``."""
    return head(features(batch, params, c), params)


def baseline_lstm_forward(s_tar, params: ParamSet, c: ModelConfig) -> Tensor:
    s_tar = G.as_tensor(s_tar)
    seq = _sequence(s_tar, c.h)
    hs = lstm_forward(seq, lstm_group(params, "baseline.lstm", c.baseline_layers))
    return head(G.concat(hs, axis=-1), params)


def predict(samples: Sequence[Sample], params: ParamSet, c: ModelConfig, batch_size: int = 256) -> np.ndarray:
    """Untracked forward over many samples; returns ``(N, P)`` normalized outputs."""
    frozen = {name: Tensor(t.data) for name, t in params.items()}
    out = []
    for i in range(0, len(samples), batch_size):
        out.append(forward(make_batch(samples[i : i + batch_size]), frozen, c).data)
    return np.concatenate(out, axis=0)


def copy_params(params: ParamSet) -> ParamSet:
    return {name: Tensor(t.data.copy(), requires_grad=t.requires_grad) for name, t in params.items()}


# Checkpoint layout (little-endian):
#   b"IRN1", u16 version,
#   u32 n + n bytes JSON {"config": ..., "meta": ...},
#   u32 count, count x (i64 road, f64 min, f64 max), f64 fallback min, f64 fallback max,
#   u32 tensors, per tensor: u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims, f64 payload,
#   u32 CRC32 of everything before it.
MAGIC = b"IRN1"
VERSION = 1


def _checkpoint_bytes(params: ParamSet, config: ModelConfig, normalizer: Normalizer, meta: dict | None) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION)]
    header = json.dumps({"config": config.to_dict(), "meta": meta or {}}, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(header)), header]
    stats = sorted(normalizer.stats.items())
    parts.append(struct.pack("<I", len(stats)))
    for road, (lo, hi) in stats:
        parts.append(struct.pack("<qdd", road, lo, hi))
    parts.append(struct.pack("<dd", *normalizer.fallback))
    parts.append(struct.pack("<I", len(params)))
    for name, t in params.items():
        raw = name.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<B", t.data.ndim)]
        parts.append(struct.pack(f"<{t.data.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path, params: ParamSet, config: ModelConfig, normalizer: Normalizer, meta: dict | None = None):
    Path(path).write_bytes(_checkpoint_bytes(params, config, normalizer, meta))


@dataclass
class Checkpoint:
    params: ParamSet
    config: ModelConfig
    normalizer: Normalizer
    meta: dict
    crc32: int


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise CorruptChecksum(f"{path}: bad magic bytes")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != crc:
        raise CorruptChecksum(f"{path}: CRC32 mismatch")
    try:
        pos = 6
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        header = json.loads(blob[pos : pos + n].decode("utf-8"))
        pos += n
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        stats = {}
        for _ in range(count):
            road, lo, hi = struct.unpack_from("<qdd", blob, pos)
            stats[road] = (lo, hi)
            pos += struct.calcsize("<qdd")
        fallback = struct.unpack_from("<dd", blob, pos)
        pos += 16
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        params: ParamSet = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + ln].decode("utf-8")
            pos += ln
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            params[name] = Tensor(data.astype(np.float64), requires_grad=True)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CorruptChecksum(f"{path}: malformed checkpoint ({exc})") from None
    if pos != len(blob) - 4:
        raise CorruptChecksum(f"{path}: trailing bytes in checkpoint")
    config = ModelConfig.from_dict(header["config"])
    return Checkpoint(params, config, Normalizer(stats, tuple(fallback)), header.get("meta", {}), crc)
