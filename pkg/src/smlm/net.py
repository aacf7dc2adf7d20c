"""The note-set prediction network.

Per-attribute encoders embed the multi-hot priors, slot embeddings are the
sum over attributes, the stack is a pre-norm transformer encoder with full
bidirectional self-attention over the T slots (a set: no positional
encoding, no attention mask), GELU feed-forward, followed by per-attribute
affine decoders. Disallowed logits get a large constant subtracted so
sampled values can never leave the prior.
"""

from __future__ import annotations

import hashlib
import io
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import Tensor
from .score_rep import ATTRIBUTES, Attribute, PriorGrid, normalise_grid

MASK_PENALTY = 1e9

CHECKPOINT_MAGIC = b"SMLM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 2
    ffn_multiplier: int = 4
    slot_count: int = 64

    def __post_init__(self):
        if self.hidden_size % self.num_heads != 0:
            raise ValueError("hidden size must be divisible by the head count")
        if self.num_layers < 1:
            raise ValueError("at least one layer required")

    @classmethod
    def desk(cls) -> "ModelConfig":
        return cls(hidden_size=64, num_layers=2, num_heads=2)

    @classmethod
    def paper(cls) -> "ModelConfig":
        return cls(hidden_size=768, num_layers=8, num_heads=8)


def parameter_names(cfg: ModelConfig) -> list[str]:
    names = []
    for attr in ATTRIBUTES:
        names += [f"enc.{attr.value}.weight", f"enc.{attr.value}.bias"]
    for i in range(cfg.num_layers):
        p = f"layers.{i}"
        names += [f"{p}.ln1.gain", f"{p}.ln1.shift"]
        names += [f"{p}.attn.{w}" for w in ("wq", "wk", "wv", "wo")]
        names += [f"{p}.attn.{b}" for b in ("bq", "bk", "bv", "bo")]
        names += [f"{p}.ln2.gain", f"{p}.ln2.shift"]
        names += [f"{p}.ffn.w1", f"{p}.ffn.b1", f"{p}.ffn.w2", f"{p}.ffn.b2"]
    names += ["final_ln.gain", "final_ln.shift"]
    for attr in ATTRIBUTES:
        names += [f"dec.{attr.value}.weight", f"dec.{attr.value}.bias"]
    return names


class ModelParams:
    """Named tensor table holding every trainable weight."""

    def __init__(self, cfg: ModelConfig, tensors: dict[str, Tensor]):
        self.cfg = cfg
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def values(self) -> list[Tensor]:
        return list(self.tensors.values())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.cfg,
            {k: Tensor(v.data.astype(dtype)) for k, v in self.tensors.items()},
        )

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg, {k: Tensor(v.data.copy()) for k, v in self.tensors.items()})


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count; kept in sync with init_params by test."""
    d = cfg.hidden_size
    vocab = sum(a.size for a in ATTRIBUTES)
    encoders = vocab * d + 3 * d
    per_layer = 12 * d * d + 13 * d
    final_ln = 2 * d
    decoders = d * vocab + vocab
    return encoders + cfg.num_layers * per_layer + final_ln + decoders


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x.astype(np.float32)


def init_params(cfg: ModelConfig, rng: np.random.Generator | int) -> ModelParams:
    """Truncated-normal weights, zero biases, zero decoders, unit layer norm."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    d = cfg.hidden_size
    std = 0.02
    t: dict[str, Tensor] = {}

    def w(name, shape):
        t[name] = Tensor(_trunc_normal(rng, shape, std))

    def z(name, shape):
        t[name] = Tensor(np.zeros(shape, dtype=np.float32))

    def ones(name, shape):
        t[name] = Tensor(np.ones(shape, dtype=np.float32))

    for attr in ATTRIBUTES:
        w(f"enc.{attr.value}.weight", (attr.size, d))
        z(f"enc.{attr.value}.bias", (d,))
    for i in range(cfg.num_layers):
        p = f"layers.{i}"
        ones(f"{p}.ln1.gain", (d,))
        z(f"{p}.ln1.shift", (d,))
        for wn in ("wq", "wk", "wv", "wo"):
            w(f"{p}.attn.{wn}", (d, d))
        for bn in ("bq", "bk", "bv", "bo"):
            z(f"{p}.attn.{bn}", (d,))
        ones(f"{p}.ln2.gain", (d,))
        z(f"{p}.ln2.shift", (d,))
        w(f"{p}.ffn.w1", (d, cfg.ffn_multiplier * d))
        z(f"{p}.ffn.b1", (cfg.ffn_multiplier * d,))
        w(f"{p}.ffn.w2", (cfg.ffn_multiplier * d, d))
        z(f"{p}.ffn.b2", (d,))
    ones("final_ln.gain", (d,))
    z("final_ln.shift", (d,))
    for attr in ATTRIBUTES:
        z(f"dec.{attr.value}.weight", (d, attr.size))
        z(f"dec.{attr.value}.bias", (attr.size,))

    params = ModelParams(cfg, t)
    assert params.names() == parameter_names(cfg)
    return params


@dataclass
class LogitGrid:
    """Per-slot per-attribute logits plus the prior bits they were masked with."""

    bits: dict[Attribute, np.ndarray]
    raw: dict[Attribute, Tensor]
    masked: dict[Attribute, Tensor]

    def masked_np(self, attr: Attribute) -> np.ndarray:
        return self.masked[attr].numpy()


def grid_multihot(grid: PriorGrid, dtype=np.float32) -> dict[Attribute, np.ndarray]:
    return {attr: grid.mask(attr).astype(dtype) for attr in ATTRIBUTES}


def embed_slot(prior, params: ModelParams) -> Tensor:
    """Embedding of a single slot prior: sum over attributes of multihot @ W + b."""
    e = None
    for attr in ATTRIBUTES:
        row = prior.mask(attr).astype(np.float32).reshape(1, -1)
        part = nm.affine(
            row, params[f"enc.{attr.value}.weight"], params[f"enc.{attr.value}.bias"]
        )
        e = part if e is None else nm.add(e, part)
    return nm.reshape(e, (params.cfg.hidden_size,))


def _affine_nd(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    lead = x.shape[:-1]
    flat = nm.reshape(x, (-1, x.shape[-1]))
    y = nm.affine(flat, w, b)
    return nm.reshape(y, lead + (w.shape[1],))


def forward_multihot(
    mh: dict[Attribute, np.ndarray], params: ModelParams, cfg: ModelConfig
) -> dict[Attribute, Tensor]:
    """Raw logits for a batch of multi-hot grids: [B, T, vocab] per attribute."""
    B, T, _ = mh[Attribute.PITCH].shape
    d = cfg.hidden_size
    h = cfg.num_heads
    dh = d // h

    x = None
    for attr in ATTRIBUTES:
        part = _affine_nd(
            Tensor(mh[attr]),
            params[f"enc.{attr.value}.weight"],
            params[f"enc.{attr.value}.bias"],
        )
        x = part if x is None else nm.add(x, part)

    for i in range(cfg.num_layers):
        p = f"layers.{i}"
        hn = nm.layer_norm(x, params[f"{p}.ln1.gain"], params[f"{p}.ln1.shift"])
        q = _affine_nd(hn, params[f"{p}.attn.wq"], params[f"{p}.attn.bq"])
        k = _affine_nd(hn, params[f"{p}.attn.wk"], params[f"{p}.attn.bk"])
        v = _affine_nd(hn, params[f"{p}.attn.wv"], params[f"{p}.attn.bv"])
        # [B, T, d] -> [B, h, T, dh]
        q = nm.transpose(nm.reshape(q, (B, T, h, dh)), (0, 2, 1, 3))
        k = nm.transpose(nm.reshape(k, (B, T, h, dh)), (0, 2, 1, 3))
        v = nm.transpose(nm.reshape(v, (B, T, h, dh)), (0, 2, 1, 3))
        scores = nm.scale(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        probs = nm.softmax(scores)
        ctx = nm.matmul(probs, v)
        ctx = nm.reshape(nm.transpose(ctx, (0, 2, 1, 3)), (B, T, d))
        ctx = _affine_nd(ctx, params[f"{p}.attn.wo"], params[f"{p}.attn.bo"])
        x = nm.add(x, ctx)

        hn2 = nm.layer_norm(x, params[f"{p}.ln2.gain"], params[f"{p}.ln2.shift"])
        f1 = nm.gelu(_affine_nd(hn2, params[f"{p}.ffn.w1"], params[f"{p}.ffn.b1"]))
        f2 = _affine_nd(f1, params[f"{p}.ffn.w2"], params[f"{p}.ffn.b2"])
        x = nm.add(x, f2)

    x = nm.layer_norm(x, params["final_ln.gain"], params["final_ln.shift"])
    return {
        attr: _affine_nd(x, params[f"dec.{attr.value}.weight"], params[f"dec.{attr.value}.bias"])
        for attr in ATTRIBUTES
    }


def mask_logits(raw: Tensor, bits: np.ndarray) -> Tensor:
    penalty = (bits.astype(raw.dtype) - 1.0) * np.asarray(MASK_PENALTY, dtype=raw.dtype)
    return nm.add(raw, penalty)


def forward(grid: PriorGrid, params: ModelParams, cfg: ModelConfig) -> LogitGrid:
    """Normalise the grid, run the network, return raw and constraint-masked logits."""
    if grid.slot_count != cfg.slot_count:
        raise ValueError(
            f"grid has {grid.slot_count} slots, model expects {cfg.slot_count}"
        )
    grid = normalise_grid(grid)
    dtype = params["enc.pitch.weight"].dtype
    mh = {attr: grid.mask(attr).astype(dtype)[None, ...] for attr in ATTRIBUTES}
    raw = forward_multihot(mh, params, cfg)
    raw = {attr: nm.reshape(t, t.shape[1:]) for attr, t in raw.items()}
    bits = {attr: grid.mask(attr) for attr in ATTRIBUTES}
    masked = {attr: mask_logits(raw[attr], bits[attr]) for attr in ATTRIBUTES}
    return LogitGrid(bits=bits, raw=raw, masked=masked)


# ---------------------------------------------------------------------------
# Checkpoint format: "SMLM" magic, version, config, named float32 tensor
# table. Byte layout is documented in docs/formats.md; identical files reload
# to bit-identical parameters.


def save_checkpoint(path: str, params: ModelParams) -> None:
    cfg = params.cfg
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(
        struct.pack(
            "<5I",
            cfg.hidden_size,
            cfg.num_layers,
            cfg.num_heads,
            cfg.ffn_multiplier,
            cfg.slot_count,
        )
    )
    buf.write(struct.pack("<I", len(params.tensors)))
    for name, t in params.tensors.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        arr = t.data.astype("<f4")
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> ModelParams:
    with open(path, "rb") as f:
        data = f.read()
    view = memoryview(data)
    if bytes(view[:4]) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    d, L, h, ffn, T = struct.unpack_from("<5I", view, 8)
    cfg = ModelConfig(
        hidden_size=d, num_layers=L, num_heads=h, ffn_multiplier=ffn, slot_count=T
    )
    (count,) = struct.unpack_from("<I", view, 28)
    offset = 32
    tensors: dict[str, Tensor] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", view, offset)
        offset += 2
        name = bytes(view[offset : offset + nlen]).decode("utf-8")
        offset += nlen
        (ndim,) = struct.unpack_from("<B", view, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", view, offset)
        offset += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(view, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += 4 * n
        tensors[name] = Tensor(arr.astype(np.float32))
    expected = parameter_names(cfg)
    if list(tensors) != expected:
        raise ValueError(f"{path}: tensor table does not match the config")
    return ModelParams(cfg, tensors)


def checkpoint_id(path: str) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()[:16]
