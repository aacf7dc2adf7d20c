"""Training-time soft mask generation.

Ground-truth excerpts are widened into multi-hot priors in two stages, so a
batch covers the whole spectrum from fully known to fully unknown slots:

  stage 1  pick a random subset of slots, then one shared confound set per
           attribute (inclusion rate drawn once per call) that is unioned
           into every picked slot;
  stage 2  pick another random subset, then per slot a fresh inclusion rate
           and per attribute a fresh confound set.

The truth bit is always part of the mask, so the emitted grid can never be
infeasible. The draw order below is fixed; golden tests depend on it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .score_rep import ATTRIBUTES, Excerpt, PriorGrid, normalise_grid


@dataclass(frozen=True)
class MaskSchemeConfig:
    """Knobs for the two-stage scheme.

    All fields default to None, meaning "draw per the scheme": slot counts
    uniform over 0..T inclusive, inclusion rates uniform on (0, 1). Pinning a
    field fixes that draw, which tests use to hit the corners.
    """

    stage1_slots: Optional[int] = None
    stage2_slots: Optional[int] = None
    stage1_rho: Optional[float] = None
    stage2_rho: Optional[float] = None


def soft_mask(
    excerpt: Excerpt,
    cfg: MaskSchemeConfig = MaskSchemeConfig(),
    rng: np.random.Generator | None = None,
) -> PriorGrid:
    """Widen an excerpt's one-hot priors into a random soft-masked grid."""
    if rng is None:
        rng = np.random.default_rng()
    T = excerpt.slot_count
    grid = PriorGrid.from_excerpt(excerpt)

    # stage 1: shared confounds across the chosen slots
    n1 = cfg.stage1_slots if cfg.stage1_slots is not None else int(rng.integers(0, T + 1))
    s1 = rng.permutation(T)[:n1]
    rho1 = cfg.stage1_rho if cfg.stage1_rho is not None else float(rng.random())
    for attr in ATTRIBUTES:
        confound = rng.random(attr.size) < rho1
        if len(s1):
            grid.mask(attr)[s1] |= confound

    # stage 2: per-slot confounds
    n2 = cfg.stage2_slots if cfg.stage2_slots is not None else int(rng.integers(0, T + 1))
    s2 = rng.permutation(T)[:n2]
    for slot in sorted(int(i) for i in s2):
        rho2 = cfg.stage2_rho if cfg.stage2_rho is not None else float(rng.random())
        for attr in ATTRIBUTES:
            grid.mask(attr)[slot] |= rng.random(attr.size) < rho2

    out = normalise_grid(grid)  # cannot fail: every mask contains its truth bit
    assert out.contains_excerpt(excerpt)
    return out
