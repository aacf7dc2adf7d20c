"""Note-set representation: slots, multi-hot attribute masks, priors, constraints.

A composition is a fixed array of T note slots. Each slot has three
attributes (pitch, onset, duration); a slot is either a real note with all
three defined, or inactive with all three undefined. Priors attach an
allowed-set bitmask per attribute per slot; masks are stored as numpy bool
rows so whole grids vectorize.

Index conventions:
  pitch    37 entries, index 0..35 = pitch value, 36 = undefined
  onset    65 entries, index 0..63 = step, 64 = undefined
  duration 64 entries, index i = duration value i+1 for i in 0..62,
           63 = undefined
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import NamedTuple, Optional, Sequence

import numpy as np

DEFAULT_SLOT_COUNT = 64

PITCH_RANGE = 36
STEP_RANGE = 64
MAX_DURATION = 63


class Attribute(enum.Enum):
    PITCH = "pitch"
    ONSET = "onset"
    DURATION = "duration"

    @property
    def size(self) -> int:
        return _SIZES[self]

    @property
    def undefined_index(self) -> int:
        return _SIZES[self] - 1

    def value_to_index(self, value: Optional[int]) -> int:
        if value is None:
            return self.undefined_index
        if self is Attribute.DURATION:
            if not 1 <= value <= MAX_DURATION:
                raise ValueError(f"duration {value} outside 1..{MAX_DURATION}")
            return value - 1
        if not 0 <= value < self.undefined_index:
            raise ValueError(f"{self.value} {value} outside domain")
        return value

    def index_to_value(self, index: int) -> Optional[int]:
        if index == self.undefined_index:
            return None
        if self is Attribute.DURATION:
            return index + 1
        return index


_SIZES = {Attribute.PITCH: 37, Attribute.ONSET: 65, Attribute.DURATION: 64}

ATTRIBUTES = (Attribute.PITCH, Attribute.ONSET, Attribute.DURATION)


class NoteSlot(NamedTuple):
    """One slot: a (pitch, onset, duration) note or all-undefined padding."""

    pitch: Optional[int]
    onset: Optional[int]
    duration: Optional[int]

    @property
    def defined(self) -> bool:
        return self.pitch is not None

    def validate(self, slot_count: int = DEFAULT_SLOT_COUNT) -> None:
        values = (self.pitch, self.onset, self.duration)
        definedness = [v is not None for v in values]
        if any(definedness) != all(definedness):
            raise ValueError(f"slot attributes must be all defined or all undefined: {self}")
        if self.defined:
            if not 0 <= self.pitch < PITCH_RANGE:
                raise ValueError(f"pitch {self.pitch} outside 0..{PITCH_RANGE - 1}")
            if not 0 <= self.onset < STEP_RANGE:
                raise ValueError(f"onset {self.onset} outside 0..{STEP_RANGE - 1}")
            if not 1 <= self.duration <= MAX_DURATION:
                raise ValueError(f"duration {self.duration} outside 1..{MAX_DURATION}")
            if self.onset + self.duration > slot_count:
                raise ValueError(
                    f"note overruns the excerpt: onset {self.onset} + duration "
                    f"{self.duration} > {slot_count}"
                )


UNDEFINED_SLOT = NoteSlot(None, None, None)


@dataclass(frozen=True)
class Excerpt:
    """A ground-truth composition: exactly T slots, each valid."""

    slots: tuple[NoteSlot, ...]

    def __post_init__(self):
        for s in self.slots:
            s.validate(len(self.slots))

    @property
    def slot_count(self) -> int:
        return len(self.slots)

    @classmethod
    def from_notes(
        cls, notes: Sequence[Sequence[int]], slot_count: int = DEFAULT_SLOT_COUNT
    ) -> "Excerpt":
        if len(notes) > slot_count:
            raise ValueError(f"{len(notes)} notes exceed {slot_count} slots")
        slots = [NoteSlot(int(p), int(o), int(d)) for p, o, d in notes]
        slots += [UNDEFINED_SLOT] * (slot_count - len(slots))
        return cls(tuple(slots))

    def notes(self) -> list[tuple[int, int, int]]:
        return [(s.pitch, s.onset, s.duration) for s in self.slots if s.defined]

    def defined_slot_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.slots) if s.defined]

    def target_indices(self) -> dict[Attribute, np.ndarray]:
        out = {}
        for attr in ATTRIBUTES:
            out[attr] = np.array(
                [attr.value_to_index(getattr(s, attr.value)) for s in self.slots],
                dtype=np.int64,
            )
        return out


def _mask_to_hex(bits: np.ndarray) -> str:
    value = 0
    for i in np.flatnonzero(bits):
        value |= 1 << int(i)
    width = (len(bits) + 3) // 4
    return f"{value:0{width}x}"


def _hex_to_mask(hexstr: str, size: int) -> np.ndarray:
    value = int(hexstr, 16)
    return np.array([(value >> i) & 1 == 1 for i in range(size)], dtype=bool)


@dataclass
class SlotPrior:
    """Per-attribute allowed sets for one slot."""

    pitch: np.ndarray
    onset: np.ndarray
    duration: np.ndarray

    def mask(self, attr: Attribute) -> np.ndarray:
        return getattr(self, attr.value)

    def validate(self) -> None:
        for attr in ATTRIBUTES:
            m = self.mask(attr)
            if m.shape != (attr.size,) or m.dtype != bool:
                raise ValueError(f"bad {attr.value} mask shape {m.shape}")
            if not m.any():
                raise ValueError(f"{attr.value} mask is empty")

    def to_hex(self) -> dict[str, str]:
        return {attr.value: _mask_to_hex(self.mask(attr)) for attr in ATTRIBUTES}


def one_hot_prior(slot: NoteSlot) -> SlotPrior:
    masks = {}
    for attr in ATTRIBUTES:
        m = np.zeros(attr.size, dtype=bool)
        m[attr.value_to_index(getattr(slot, attr.value))] = True
        masks[attr.value] = m
    return SlotPrior(**masks)


@dataclass
class PriorGrid:
    """Allowed-set masks for every slot, stored as [T, vocab] bool arrays."""

    pitch: np.ndarray
    onset: np.ndarray
    duration: np.ndarray

    @property
    def slot_count(self) -> int:
        return self.pitch.shape[0]

    @classmethod
    def full(cls, slot_count: int = DEFAULT_SLOT_COUNT) -> "PriorGrid":
        return cls(
            pitch=np.ones((slot_count, Attribute.PITCH.size), dtype=bool),
            onset=np.ones((slot_count, Attribute.ONSET.size), dtype=bool),
            duration=np.ones((slot_count, Attribute.DURATION.size), dtype=bool),
        )

    @classmethod
    def from_excerpt(cls, excerpt: Excerpt) -> "PriorGrid":
        """One-hot priors of a fully known excerpt."""
        grid = cls(
            pitch=np.zeros((excerpt.slot_count, Attribute.PITCH.size), dtype=bool),
            onset=np.zeros((excerpt.slot_count, Attribute.ONSET.size), dtype=bool),
            duration=np.zeros((excerpt.slot_count, Attribute.DURATION.size), dtype=bool),
        )
        idx = excerpt.target_indices()
        rows = np.arange(excerpt.slot_count)
        grid.pitch[rows, idx[Attribute.PITCH]] = True
        grid.onset[rows, idx[Attribute.ONSET]] = True
        grid.duration[rows, idx[Attribute.DURATION]] = True
        return grid

    def mask(self, attr: Attribute) -> np.ndarray:
        return getattr(self, attr.value)

    def copy(self) -> "PriorGrid":
        return PriorGrid(self.pitch.copy(), self.onset.copy(), self.duration.copy())

    def slot(self, i: int) -> SlotPrior:
        return SlotPrior(self.pitch[i].copy(), self.onset[i].copy(), self.duration[i].copy())

    def set_slot(self, i: int, prior: SlotPrior) -> None:
        self.pitch[i] = prior.pitch
        self.onset[i] = prior.onset
        self.duration[i] = prior.duration

    def bit_counts(self) -> np.ndarray:
        """[T, 3] number of set bits per slot per attribute."""
        return np.stack(
            [self.mask(a).sum(axis=1) for a in ATTRIBUTES], axis=1
        )

    def is_one_hot(self) -> bool:
        return bool((self.bit_counts() == 1).all())

    def undetermined_pairs(self) -> list[tuple[int, Attribute]]:
        """(slot, attribute) pairs whose mask still has two or more bits."""
        pairs = []
        for ai, attr in enumerate(ATTRIBUTES):
            counts = self.mask(attr).sum(axis=1)
            for slot in np.flatnonzero(counts >= 2):
                pairs.append((int(slot), attr))
        pairs.sort(key=lambda p: (p[0], ATTRIBUTES.index(p[1])))
        return pairs

    def multi_bit_slots(self) -> list[int]:
        counts = self.bit_counts()
        return [int(i) for i in np.flatnonzero((counts >= 2).any(axis=1))]

    def equals(self, other: "PriorGrid") -> bool:
        return (
            np.array_equal(self.pitch, other.pitch)
            and np.array_equal(self.onset, other.onset)
            and np.array_equal(self.duration, other.duration)
        )

    def contains_excerpt(self, excerpt: Excerpt) -> bool:
        idx = excerpt.target_indices()
        rows = np.arange(excerpt.slot_count)
        return bool(
            self.pitch[rows, idx[Attribute.PITCH]].all()
            and self.onset[rows, idx[Attribute.ONSET]].all()
            and self.duration[rows, idx[Attribute.DURATION]].all()
        )


class InfeasiblePrior(ValueError):
    """A prior has no consistent resolution (no valid note and no empty slot)."""

    def __init__(self, slots: list[int], families: list[str] | None = None, message: str = ""):
        self.slots = slots
        self.families = families or []
        detail = message or (
            f"slots {slots} admit neither a defined note nor an undefined slot"
        )
        if self.families:
            detail += f" (constraint families involved: {', '.join(self.families)})"
        super().__init__(detail)


def _normalise_arrays(
    pitch: np.ndarray, onset: np.ndarray, duration: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized definedness-consistency pass.

    Returns new arrays plus a bool[T] flag of infeasible slots. A slot can
    stay ambiguous only if all three attributes allow undefined (canUndef)
    and all three allow some defined value (canDef); otherwise the losing
    side's bits are cleared everywhere in the slot.
    """
    for m in (pitch, onset, duration):
        if not m.any(axis=1).all():
            raise ValueError("attribute masks must be non-empty")
    u = [m[:, -1] for m in (pitch, onset, duration)]
    d = [m[:, :-1].any(axis=1) for m in (pitch, onset, duration)]
    can_undef = u[0] & u[1] & u[2]
    can_def = d[0] & d[1] & d[2]
    infeasible = ~can_undef & ~can_def
    out = []
    for m in (pitch, onset, duration):
        m = m.copy()
        m[~can_undef, -1] = False
        m[~can_def, :-1] = False
        out.append(m)
    return out[0], out[1], out[2], infeasible


def normalise_grid(grid: PriorGrid, families_by_slot: list[set[str]] | None = None) -> PriorGrid:
    p, o, d, bad = _normalise_arrays(grid.pitch, grid.onset, grid.duration)
    if bad.any():
        slots = [int(i) for i in np.flatnonzero(bad)]
        fams = sorted(set().union(*(families_by_slot[i] for i in slots))) if families_by_slot else []
        raise InfeasiblePrior(slots, fams)
    return PriorGrid(p, o, d)


def normalise(prior: SlotPrior) -> SlotPrior:
    prior.validate()
    p, o, d, bad = _normalise_arrays(
        prior.pitch[None, :], prior.onset[None, :], prior.duration[None, :]
    )
    if bad[0]:
        raise InfeasiblePrior([0])
    return SlotPrior(p[0], o[0], d[0])


def collapse(grid: PriorGrid) -> Excerpt:
    """Turn a fully determined grid back into an excerpt."""
    counts = grid.bit_counts()
    if (counts != 1).any():
        bad = int(np.flatnonzero((counts != 1).any(axis=1))[0])
        raise ValueError(f"slot {bad} is not fully determined")
    slots = []
    for i in range(grid.slot_count):
        values = {
            attr.value: attr.index_to_value(int(np.flatnonzero(grid.mask(attr)[i])[0]))
            for attr in ATTRIBUTES
        }
        slots.append(NoteSlot(**values))
    return Excerpt(tuple(slots))


_ONSET_VALUES = np.arange(Attribute.ONSET.size - 1)
_DURATION_VALUES = np.arange(1, Attribute.DURATION.size)


def clip_slot(grid: PriorGrid, i: int, slot_count: int | None = None) -> None:
    """Arc-consistency for one slot: drop onset/duration bits that cannot
    pair up within the excerpt length. Mutates the grid in place."""
    T = slot_count or grid.slot_count
    o_def = grid.onset[i, :-1]
    d_def = grid.duration[i, :-1]
    if not o_def.any() or not d_def.any():
        return
    min_dur = int(_DURATION_VALUES[d_def][0])
    min_onset = int(_ONSET_VALUES[o_def][0])
    grid.onset[i, :-1] &= _ONSET_VALUES + min_dur <= T
    grid.duration[i, :-1] &= min_onset + _DURATION_VALUES <= T


def clip_onset_duration(grid: PriorGrid, slot_count: int | None = None) -> None:
    """Arc-consistency over every slot, so sampling one attribute can never
    strand the other without options."""
    for i in range(grid.slot_count):
        clip_slot(grid, i, slot_count)


def normalise_slot_inplace(grid: PriorGrid, i: int) -> None:
    p, o, d, bad = _normalise_arrays(
        grid.pitch[i][None, :], grid.onset[i][None, :], grid.duration[i][None, :]
    )
    if bad[0]:
        raise InfeasiblePrior([i])
    grid.pitch[i] = p[0]
    grid.onset[i] = o[0]
    grid.duration[i] = d[0]


# ---------------------------------------------------------------------------
# Declarative constraints


@dataclass(frozen=True)
class PitchClassSet:
    classes: frozenset[int]
    root: int = 0

    def __post_init__(self):
        if not self.classes:
            raise ValueError("pitchClasses needs at least one residue")
        if not all(0 <= c <= 11 for c in self.classes):
            raise ValueError("pitch classes are residues 0..11")
        if not 0 <= self.root <= 11:
            raise ValueError("root is a residue 0..11")

    def allowed_pitches(self) -> frozenset[int]:
        return frozenset(
            p for p in range(PITCH_RANGE) if (p - self.root) % 12 in self.classes
        )


@dataclass(frozen=True)
class ImputationRegion:
    pitch_lo: int
    pitch_hi: int
    step_lo: int
    step_hi: int
    mode: str = "generate"

    def __post_init__(self):
        if self.mode not in ("generate", "keep"):
            raise ValueError(f"region mode must be generate or keep, got {self.mode}")
        if not (0 <= self.pitch_lo <= self.pitch_hi < PITCH_RANGE):
            raise ValueError("region pitch bounds outside 0..35 or inverted")
        if not (0 <= self.step_lo <= self.step_hi < STEP_RANGE):
            raise ValueError("region step bounds outside 0..63 or inverted")

    def contains(self, pitch: int, onset: int) -> bool:
        return self.pitch_lo <= pitch <= self.pitch_hi and self.step_lo <= onset <= self.step_hi


@dataclass(frozen=True)
class ConstraintSpec:
    """Declarative user constraints, compiled into a PriorGrid."""

    pitch_classes: Optional[PitchClassSet] = None
    allowed_pitches: Optional[frozenset[int]] = None
    allowed_durations: Optional[frozenset[int]] = None
    onset_grid: Optional[tuple[int, int]] = None
    duration_range: Optional[tuple[int, int]] = None
    imputation_regions: tuple[ImputationRegion, ...] = ()
    note_count: Optional[tuple[int, int]] = None
    locked_notes: tuple[tuple[int, int, int], ...] = ()
    temperature: float = 1.0
    top_p: float = 0.9

    def __post_init__(self):
        if self.allowed_pitches is not None and not all(
            0 <= p < PITCH_RANGE for p in self.allowed_pitches
        ):
            raise ValueError("allowedPitches outside 0..35")
        if self.allowed_durations is not None:
            if not self.allowed_durations:
                raise ValueError("allowedDurations must not be empty")
            if not all(1 <= d <= MAX_DURATION for d in self.allowed_durations):
                raise ValueError("allowedDurations outside 1..63")
        if self.onset_grid is not None:
            period, phase = self.onset_grid
            if not 1 <= period <= STEP_RANGE:
                raise ValueError("onset grid period outside 1..64")
            if not 0 <= phase < period:
                raise ValueError("onset grid phase must be below the period")
        if self.duration_range is not None:
            lo, hi = self.duration_range
            if not (1 <= lo <= hi <= MAX_DURATION):
                raise ValueError("durationRange must satisfy 1 <= min <= max <= 63")
        if self.note_count is not None:
            lo, hi = self.note_count
            if not (0 <= lo <= hi):
                raise ValueError("noteCount must satisfy 0 <= min <= max")
        for note in self.locked_notes:
            NoteSlot(*note).validate()
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not 0 < self.top_p <= 1:
            raise ValueError("topP must lie in (0, 1]")

    # --- serialization (exact wire field names) ---

    def to_dict(self) -> dict:
        doc: dict = {}
        if self.pitch_classes is not None:
            doc["pitchClasses"] = {
                "classes": sorted(self.pitch_classes.classes),
                "root": self.pitch_classes.root,
            }
        if self.allowed_pitches is not None:
            doc["allowedPitches"] = sorted(self.allowed_pitches)
        if self.allowed_durations is not None:
            doc["allowedDurations"] = sorted(self.allowed_durations)
        if self.onset_grid is not None:
            doc["onsetGrid"] = {"period": self.onset_grid[0], "phase": self.onset_grid[1]}
        if self.duration_range is not None:
            doc["durationRange"] = {"min": self.duration_range[0], "max": self.duration_range[1]}
        if self.imputation_regions:
            doc["imputationRegions"] = [
                {
                    "pitchLo": r.pitch_lo,
                    "pitchHi": r.pitch_hi,
                    "stepLo": r.step_lo,
                    "stepHi": r.step_hi,
                    "mode": r.mode,
                }
                for r in self.imputation_regions
            ]
        if self.note_count is not None:
            doc["noteCount"] = {"min": self.note_count[0], "max": self.note_count[1]}
        if self.locked_notes:
            doc["lockedNotes"] = [list(n) for n in self.locked_notes]
        doc["temperature"] = self.temperature
        doc["topP"] = self.top_p
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ConstraintSpec":
        known = {
            "pitchClasses",
            "allowedPitches",
            "allowedDurations",
            "onsetGrid",
            "durationRange",
            "imputationRegions",
            "noteCount",
            "lockedNotes",
            "temperature",
            "topP",
        }
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown constraint fields: {sorted(unknown)}")
        pc = None
        if "pitchClasses" in doc:
            pc = PitchClassSet(
                classes=frozenset(doc["pitchClasses"]["classes"]),
                root=int(doc["pitchClasses"].get("root", 0)),
            )
        og = None
        if "onsetGrid" in doc:
            og = (int(doc["onsetGrid"]["period"]), int(doc["onsetGrid"].get("phase", 0)))
        dr = None
        if "durationRange" in doc:
            dr = (int(doc["durationRange"]["min"]), int(doc["durationRange"]["max"]))
        nc = None
        if "noteCount" in doc:
            nc = (int(doc["noteCount"]["min"]), int(doc["noteCount"]["max"]))
        return cls(
            pitch_classes=pc,
            allowed_pitches=(
                frozenset(int(p) for p in doc["allowedPitches"])
                if "allowedPitches" in doc
                else None
            ),
            allowed_durations=(
                frozenset(int(d) for d in doc["allowedDurations"])
                if "allowedDurations" in doc
                else None
            ),
            onset_grid=og,
            duration_range=dr,
            imputation_regions=tuple(
                ImputationRegion(
                    pitch_lo=int(r["pitchLo"]),
                    pitch_hi=int(r["pitchHi"]),
                    step_lo=int(r["stepLo"]),
                    step_hi=int(r["stepHi"]),
                    mode=str(r["mode"]),
                )
                for r in doc.get("imputationRegions", [])
            ),
            note_count=nc,
            locked_notes=tuple(
                (int(n[0]), int(n[1]), int(n[2])) for n in doc.get("lockedNotes", [])
            ),
            temperature=float(doc.get("temperature", 1.0)),
            top_p=float(doc.get("topP", 0.9)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ConstraintSpec":
        return cls.from_dict(json.loads(text))


def constraint_schema() -> dict:
    with resources.files("smlm.schemas").joinpath("constraint_spec.schema.json").open() as f:
        return json.load(f)


class InfeasibleConstraints(ValueError):
    """Constraint families contradict each other on at least one slot."""

    def __init__(self, slot: int, families: list[str], message: str = ""):
        self.slot = slot
        self.families = sorted(set(families))
        detail = message or (
            f"slot {slot} has no allowed values under constraint families "
            f"{', '.join(self.families) or '(none)'}"
        )
        super().__init__(detail)

    def report(self) -> dict:
        return {"slot": self.slot, "families": self.families, "message": str(self)}


def _bitset(size: int, values, include_undefined: bool = True) -> np.ndarray:
    m = np.zeros(size, dtype=bool)
    for v in values:
        m[v] = True
    if include_undefined:
        m[size - 1] = True
    return m


def compile_constraints(
    spec: ConstraintSpec,
    base_excerpt: Optional[Excerpt] = None,
    slot_count: int = DEFAULT_SLOT_COUNT,
) -> PriorGrid:
    """Compile declarative constraints into per-slot allowed-set masks.

    Every constraint family is an intersection on the slot masks, so
    conflicts surface as an empty mask instead of being silently repaired.
    When a base excerpt is given, its notes outside generate regions are
    pinned one-hot (ordered first; slot identity is meaningless to the
    network) and everything else is freed for sampling.
    """
    if base_excerpt is not None and base_excerpt.slot_count != slot_count:
        raise ValueError("base excerpt slot count does not match")
    families: list[set[str]] = [set() for _ in range(slot_count)]
    grid = PriorGrid.full(slot_count)
    pinned = np.zeros(slot_count, dtype=bool)

    generate_regions = [r for r in spec.imputation_regions if r.mode == "generate"]
    keep_regions = [r for r in spec.imputation_regions if r.mode == "keep"]

    if base_excerpt is not None:
        kept_notes: list[tuple[int, int, int]] = []
        for s in base_excerpt.slots:
            if not s.defined:
                continue
            freed = any(r.contains(s.pitch, s.onset) for r in generate_regions) and not any(
                r.contains(s.pitch, s.onset) for r in keep_regions
            )
            if not freed:
                kept_notes.append((s.pitch, s.onset, s.duration))
        for i, note in enumerate(kept_notes):
            grid.set_slot(i, one_hot_prior(NoteSlot(*note)))
            pinned[i] = True
            families[i].add("baseExcerpt")

    free = ~pinned

    # pitch families
    if spec.pitch_classes is not None:
        mask = _bitset(Attribute.PITCH.size, spec.pitch_classes.allowed_pitches())
        grid.pitch[free] &= mask
        for i in np.flatnonzero(free):
            families[i].add("pitchClasses")
    if spec.allowed_pitches is not None:
        mask = _bitset(Attribute.PITCH.size, spec.allowed_pitches)
        grid.pitch[free] &= mask
        for i in np.flatnonzero(free):
            families[i].add("allowedPitches")

    # onset family
    if spec.onset_grid is not None:
        period, phase = spec.onset_grid
        steps = [s for s in range(STEP_RANGE) if s % period == phase % period]
        mask = _bitset(Attribute.ONSET.size, steps)
        grid.onset[free] &= mask
        for i in np.flatnonzero(free):
            families[i].add("onsetGrid")

    # duration families
    if spec.duration_range is not None:
        lo, hi = spec.duration_range
        mask = _bitset(Attribute.DURATION.size, [d - 1 for d in range(lo, hi + 1)])
        grid.duration[free] &= mask
        for i in np.flatnonzero(free):
            families[i].add("durationRange")
    if spec.allowed_durations is not None:
        mask = _bitset(Attribute.DURATION.size, [d - 1 for d in spec.allowed_durations])
        grid.duration[free] &= mask
        for i in np.flatnonzero(free):
            families[i].add("allowedDurations")

    # locked notes pin the lowest-index free slots (intersection, so a locked
    # note that violates a value family is reported, not smuggled through)
    free_indices = [int(i) for i in np.flatnonzero(free)]
    if len(spec.locked_notes) > len(free_indices):
        raise InfeasibleConstraints(
            slot_count - 1,
            ["lockedNotes", "baseExcerpt"],
            f"{len(spec.locked_notes)} locked notes exceed {len(free_indices)} free slots",
        )
    for note, i in zip(spec.locked_notes, free_indices):
        prior = one_hot_prior(NoteSlot(*note))
        grid.pitch[i] &= prior.pitch
        grid.onset[i] &= prior.onset
        grid.duration[i] &= prior.duration
        families[i].add("lockedNotes")
        free[i] = False  # locked notes are conditioning, not generated content

    # generate regions confine the remaining generation slots to the union of
    # region projections; conditioning (base keeps, locked notes) is exempt
    if generate_regions:
        pmask = np.zeros(Attribute.PITCH.size, dtype=bool)
        omask = np.zeros(Attribute.ONSET.size, dtype=bool)
        for r in generate_regions:
            pmask[r.pitch_lo : r.pitch_hi + 1] = True
            omask[r.step_lo : r.step_hi + 1] = True
        pmask[-1] = True
        omask[-1] = True
        grid.pitch[free] &= pmask
        grid.onset[free] &= omask
        for i in np.flatnonzero(free):
            families[i].add("imputationRegions")

    # note-count bounds bind to slot prefixes/suffixes
    if spec.note_count is not None:
        lo, hi = spec.note_count
        if hi > slot_count:
            raise ValueError(f"noteCount max {hi} exceeds slot count {slot_count}")
        for i in range(min(lo, slot_count)):
            grid.pitch[i, -1] = False
            grid.onset[i, -1] = False
            grid.duration[i, -1] = False
            families[i].add("noteCount")
        for i in range(hi, slot_count):
            grid.pitch[i, :-1] = False
            grid.onset[i, :-1] = False
            grid.duration[i, :-1] = False
            families[i].add("noteCount")

    # empty-mask check with family attribution, then arc clip and normalise
    for i in range(slot_count):
        for attr in ATTRIBUTES:
            if not grid.mask(attr)[i].any():
                raise InfeasibleConstraints(i, sorted(families[i]))
    clip_onset_duration(grid, slot_count)
    for i in range(slot_count):
        for attr in ATTRIBUTES:
            if not grid.mask(attr)[i].any():
                raise InfeasibleConstraints(i, sorted(families[i]))
    try:
        return normalise_grid(grid, families)
    except InfeasiblePrior as e:
        raise InfeasibleConstraints(e.slots[0], e.families) from e
