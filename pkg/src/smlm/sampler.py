"""Constrained generation: iterative random-order attribute sampling.

Undetermined (slot, attribute) pairs are resolved one at a time in a random
order: run the network on the current grid, nucleus-sample the chosen
attribute from its constraint-masked logits, collapse that mask to the
sampled value, re-normalise the slot (which may determine its siblings) and
repeat. Masks only ever shrink toward sampled truths, so the loop cannot
dead-end, and disallowed values carry exactly zero probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .net import ModelConfig, ModelParams, forward
from .numerics import ContractViolation
from .score_rep import (
    ATTRIBUTES,
    Attribute,
    Excerpt,
    PriorGrid,
    clip_slot,
    collapse,
    normalise_grid,
    normalise_slot_inplace,
)


@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = 1.0
    top_p: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not 0 < self.top_p <= 1:
            raise ValueError("topP must lie in (0, 1]")


@dataclass(frozen=True)
class TraceDecision:
    slot: int
    attribute: Attribute
    value_index: int
    allowed_count: int

    @property
    def value(self) -> Optional[int]:
        return self.attribute.index_to_value(self.value_index)

    def to_dict(self) -> dict:
        return {
            "slot": self.slot,
            "attribute": self.attribute.value,
            "value": self.value,
            "allowed": self.allowed_count,
        }


@dataclass
class GenerationTrace:
    decisions: list[TraceDecision] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.decisions)

    def to_dicts(self) -> list[dict]:
        return [d.to_dict() for d in self.decisions]


def nucleus(probs: np.ndarray, top_p: float) -> tuple[np.ndarray, np.ndarray]:
    """Smallest probability prefix reaching top_p, renormalized.

    Sorting is descending with a stable index tie-break. Returns the kept
    indices and their renormalized probabilities; zero-mass entries never
    survive.
    """
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    cut = int(np.searchsorted(cum, min(top_p, cum[-1]), side="left")) + 1
    keep = order[: min(cut, len(order))]
    kp = probs[keep]
    pos = kp > 0
    keep, kp = keep[pos], kp[pos]
    return keep, kp / kp.sum()


def top_p_sample(
    masked_logits: np.ndarray,
    temperature: float,
    top_p: float,
    rng: np.random.Generator,
) -> int:
    """Nucleus-sample an index from constraint-masked logits."""
    z = np.asarray(masked_logits, dtype=np.float64)
    if z.max() <= -1e8:
        raise ContractViolation("no allowed value: every logit is masked out")
    z = z / temperature
    z = z - z.max()
    e = np.exp(z)
    probs = e / e.sum()
    keep, kp = nucleus(probs, top_p)
    r = rng.random()
    pick = int(np.searchsorted(np.cumsum(kp), r, side="right"))
    return int(keep[min(pick, len(keep) - 1)])


def _set_one_hot(grid: PriorGrid, slot: int, attr: Attribute, index: int) -> None:
    m = grid.mask(attr)
    m[slot, :] = False
    m[slot, index] = True
    clip_slot(grid, slot)
    normalise_slot_inplace(grid, slot)


def generated_slot_indices(grid: PriorGrid) -> list[int]:
    """Slots the sampler will decide (any attribute still multi-bit)."""
    return normalise_grid(grid).multi_bit_slots()


def generate(
    grid: PriorGrid,
    params: ModelParams,
    cfg: ModelConfig,
    scfg: SamplerConfig = SamplerConfig(),
) -> tuple[Excerpt, GenerationTrace]:
    """Sample an excerpt consistent with the prior grid. Deterministic per seed."""
    work = normalise_grid(grid).copy()
    rng = np.random.default_rng(scfg.seed)
    trace = GenerationTrace()
    pending = work.undetermined_pairs()
    budget = 3 * work.slot_count
    forwards = 0
    while pending:
        choice = int(rng.integers(len(pending)))
        slot, attr = pending[choice]
        out = forward(work, params, cfg)
        forwards += 1
        if forwards > budget:
            raise RuntimeError("sampling exceeded the forward-pass budget")
        row = out.masked_np(attr)[slot]
        allowed = int(work.mask(attr)[slot].sum())
        value_index = top_p_sample(row, scfg.temperature, scfg.top_p, rng)
        trace.decisions.append(TraceDecision(slot, attr, value_index, allowed))
        _set_one_hot(work, slot, attr, value_index)
        determined = {
            (slot, a) for a in ATTRIBUTES if work.mask(a)[slot].sum() == 1
        }
        pending = [p for p in pending if p not in determined]
    return collapse(work), trace


def replay(grid: PriorGrid, trace: GenerationTrace) -> Excerpt:
    """Apply trace decisions as forced choices; reproduces the excerpt."""
    work = normalise_grid(grid).copy()
    for d in trace.decisions:
        if not work.mask(d.attribute)[d.slot, d.value_index]:
            raise ValueError(
                f"trace decision {d.to_dict()} is not allowed by the grid"
            )
        _set_one_hot(work, d.slot, d.attribute, d.value_index)
    return collapse(work)
