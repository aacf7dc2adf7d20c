"""Training: masked NLL loss, Adam updates, the epoch loop, evaluation.

The loss is the mean over all T slots and all three attributes of the
cross entropy of the constraint-masked logits against the ground truth.
Positions whose prior is already one-hot saturate to ~0 loss, so summing
over every position is safe.

All randomness is derived from (seed, epoch, example index) seed splitting,
which is what makes interrupted runs resumable with identical trajectories.
"""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import dataclass
from hashlib import sha256
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nm
from .net import (
    LogitGrid,
    ModelConfig,
    ModelParams,
    forward_multihot,
    init_params,
    load_checkpoint,
    mask_logits,
    save_checkpoint,
)
from .numerics import GradientTape, Tensor
from .score_rep import ATTRIBUTES, Excerpt, PriorGrid
from .soft_masker import MaskSchemeConfig, soft_mask


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    lr_decay_per_epoch: float = 0.95
    batch_size: int = 16
    max_epochs: int = 10
    seed: int = 0
    validation_fraction: float = 0.05

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if not 0 < self.lr_decay_per_epoch <= 1:
            raise ValueError("lr decay must lie in (0, 1]")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch size and epochs must be positive")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation fraction must lie in (0, 1)")


PAPER_BATCH_SIZE = 384  # reference full-scale run; desk default stays small


def smlm_loss(logits: LogitGrid, truth: Excerpt):
    """Mean masked NLL over all slots and attributes. Tape-aware."""
    targets = truth.target_indices()
    for attr in ATTRIBUTES:
        bits = logits.bits[attr]
        rows = np.arange(truth.slot_count)
        ok = bits[rows, targets[attr]]
        if not ok.all():
            bad = int(np.flatnonzero(~ok)[0])
            raise nm.ContractViolation(
                f"truth {attr.value} of slot {bad} is outside its prior; "
                "training data and masks disagree"
            )
    total = None
    for attr in ATTRIBUTES:
        nll = nm.mean_all(nm.nll_rows(logits.masked[attr], targets[attr]))
        total = nll if total is None else nm.add(total, nll)
    return nm.scale(total, 1.0 / 3.0)


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update(self, params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> None:
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.step
        bc2 = 1.0 - b2**self.step
        for name, g in grads.items():
            p = params[name].data
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


def _batch_multihot(grids: Sequence[PriorGrid], dtype=np.float32):
    return {
        attr: np.stack([g.mask(attr) for g in grids]).astype(dtype) for attr in ATTRIBUTES
    }


def _batch_loss(
    grids: Sequence[PriorGrid],
    truths: Sequence[Excerpt],
    params: ModelParams,
    cfg: ModelConfig,
):
    mh = _batch_multihot(grids, dtype=params["enc.pitch.weight"].dtype)
    raw = forward_multihot(mh, params, cfg)
    targets = {
        attr: np.stack([t.target_indices()[attr] for t in truths]) for attr in ATTRIBUTES
    }
    total = None
    for attr in ATTRIBUTES:
        bits = np.stack([g.mask(attr) for g in grids])
        picked = np.take_along_axis(bits, targets[attr][..., None], axis=-1)
        if not picked.all():
            raise nm.ContractViolation(
                f"truth {attr.value} outside its prior in the batch"
            )
        masked = mask_logits(raw[attr], bits)
        nll = nm.mean_all(nm.nll_rows(masked, targets[attr]))
        total = nll if total is None else nm.add(total, nll)
    return nm.scale(total, 1.0 / 3.0)


def train_step(
    batch: Sequence[tuple[PriorGrid, Excerpt]],
    params: ModelParams,
    opt: AdamState,
    lr: float,
) -> float:
    """One Adam update on the mean batch loss; returns the pre-update loss."""
    if not batch:
        raise ValueError("batch must be non-empty")
    grids = [g for g, _ in batch]
    truths = [t for _, t in batch]
    sources = params.values()
    with GradientTape() as tape:
        tape.watch(*sources)
        loss = _batch_loss(grids, truths, params, params.cfg)
    value = loss.item()
    if not np.isfinite(value):
        dump = _dump_batch(batch)
        raise RuntimeError(f"non-finite training loss {value}; batch dumped to {dump}")
    grads = dict(zip(params.names(), tape.gradients(loss, sources)))
    opt.update(params, grads, lr)
    return value


def _dump_batch(batch) -> str:
    path = os.path.join(os.getcwd(), "smlm-bad-batch.npz")
    arrays = {}
    for i, (grid, truth) in enumerate(batch):
        for attr in ATTRIBUTES:
            arrays[f"{i}.{attr.value}.mask"] = grid.mask(attr)
            arrays[f"{i}.{attr.value}.target"] = truth.target_indices()[attr]
    np.savez(path, **arrays)
    return path


def evaluate(
    dataset: Sequence[tuple[str, Excerpt]],
    params: ModelParams,
    cfg: ModelConfig,
    eval_seed: int,
) -> float:
    """Deterministic masked NLL: masks drawn per example from the eval seed."""
    if not dataset:
        raise ConfigurationError("cannot evaluate an empty dataset")
    losses = []
    for i, (_, ex) in enumerate(dataset):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=eval_seed, spawn_key=(i,)))
        grid = soft_mask(ex, rng=rng)
        loss = _batch_loss([grid], [ex], params, cfg)
        losses.append(loss.item())
    return float(np.mean(losses))


def split_dataset(
    dataset: Sequence[tuple[str, Excerpt]], validation_fraction: float
) -> tuple[list, list]:
    """Stable hash split on sourceId; re-running never migrates examples."""
    train, val = [], []
    for sid, ex in dataset:
        h = int.from_bytes(sha256(sid.encode("utf-8")).digest()[:8], "big")
        if h / 2**64 < validation_fraction:
            val.append((sid, ex))
        else:
            train.append((sid, ex))
    return train, val


# --- optimizer sidecar serialization (little-endian named float32 table) ---

_OPTIM_MAGIC = b"SMLO"


def _save_optim(path: str, opt: AdamState) -> None:
    parts = [_OPTIM_MAGIC, struct.pack("<I", opt.step)]
    entries = [(f"m.{k}", v) for k, v in opt.m.items()] + [
        (f"v.{k}", v) for k, v in opt.v.items()
    ]
    parts.append(struct.pack("<I", len(entries)))
    for name, arr in entries:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        a = arr.astype("<f4")
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes(order="C"))
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(b"".join(parts))
    os.replace(tmp, path)


def _load_optim(path: str) -> AdamState:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _OPTIM_MAGIC:
        raise ValueError(f"{path}: not an optimizer state file")
    opt = AdamState()
    (opt.step,) = struct.unpack_from("<I", data, 4)
    (count,) = struct.unpack_from("<I", data, 8)
    offset = 12
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + nlen].decode("utf-8")
        offset += nlen
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += 4 * n
        kind, key = name.split(".", 1)
        target = opt.m if kind == "m" else opt.v
        target[key] = arr.astype(np.float32)
    return opt


def _mask_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(2, epoch, index))
    )


def run_training(
    dataset: Sequence[tuple[str, Excerpt]],
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    out_dir: str,
    resume: bool = False,
    mask_cfg: MaskSchemeConfig = MaskSchemeConfig(),
    log=None,
) -> list[dict]:
    """Epoch loop with fresh masks per example, per-epoch lr decay,
    last/best checkpoints and a JSONL metric log. Returns the metric rows."""
    if not dataset:
        raise ConfigurationError("dataset is empty")
    train, val = split_dataset(dataset, train_cfg.validation_fraction)
    if not train or not val:
        raise ConfigurationError(
            f"degenerate split: {len(train)} train / {len(val)} validation examples; "
            "adjust validationFraction or supply more data"
        )
    os.makedirs(out_dir, exist_ok=True)
    last_path = os.path.join(out_dir, "last.smlm")
    best_path = os.path.join(out_dir, "best.smlm")
    optim_path = os.path.join(out_dir, "optim-last.bin")
    state_path = os.path.join(out_dir, "train-state.json")
    metrics_path = os.path.join(out_dir, "metrics.jsonl")

    if resume:
        params = load_checkpoint(last_path)
        if params.cfg != model_cfg:
            raise ConfigurationError("checkpoint config does not match the requested model")
        opt = _load_optim(optim_path)
        with open(state_path) as f:
            state = json.load(f)
        start_epoch = state["epochsCompleted"]
        best_val = state["bestValidation"]
    else:
        params = init_params(model_cfg, np.random.default_rng(
            np.random.SeedSequence(entropy=train_cfg.seed, spawn_key=(0,))
        ))
        opt = AdamState()
        start_epoch = 0
        best_val = float("inf")
        for stale in (metrics_path, state_path):
            if os.path.exists(stale):
                os.remove(stale)

    eval_seed = train_cfg.seed * 1_000_003 + 17
    metrics: list[dict] = []
    for epoch in range(start_epoch, train_cfg.max_epochs):
        t0 = time.monotonic()
        lr = train_cfg.learning_rate * train_cfg.lr_decay_per_epoch**epoch
        order_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=train_cfg.seed, spawn_key=(1, epoch))
        )
        order = order_rng.permutation(len(train))
        epoch_losses = []
        for lo in range(0, len(order), train_cfg.batch_size):
            chunk = order[lo : lo + train_cfg.batch_size]
            batch = []
            for di in chunk:
                sid, ex = train[int(di)]
                grid = soft_mask(ex, mask_cfg, _mask_rng(train_cfg.seed, epoch, int(di)))
                batch.append((grid, ex))
            epoch_losses.append(train_step(batch, params, opt, lr))
        val_nll = evaluate(val, params, model_cfg, eval_seed)
        row = {
            "epoch": epoch,
            "lr": lr,
            "trainNLL": float(np.mean(epoch_losses)),
            "valNLL": val_nll,
            "wallTime": time.monotonic() - t0,
        }
        metrics.append(row)
        with open(metrics_path, "a") as f:
            f.write(json.dumps(row) + "\n")
        save_checkpoint(last_path, params)
        _save_optim(optim_path, opt)
        if val_nll < best_val:
            best_val = val_nll
            save_checkpoint(best_path, params)
        tmp = f"{state_path}.tmp.{os.getpid()}"
        with open(tmp, "w") as f:
            json.dump({"epochsCompleted": epoch + 1, "bestValidation": best_val}, f)
        os.replace(tmp, state_path)
        if log:
            log.info(
                "epoch %d lr %.2e train %.4f val %.4f", epoch, lr, row["trainNLL"], val_nll
            )
    return metrics
