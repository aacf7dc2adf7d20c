"""MIDI ingestion: parse, filter, quantize, segment, crop.

Standard MIDI files (format 0 or 1) become fixed-slot excerpts:

  parse     note-on/off pairs matched FIFO per (channel, pitch); files with
            more than one time-signature event, or a single non-4/4 one,
            are rejected (none at all counts as 4/4)
  filter    drop the percussion channel (zero-based channel 9)
  quantize  onsets snapped to 16th-note steps, half-up; durations clamped
            into 1..63 steps
  segment   non-overlapping 64-step windows starting at the first note
  crop      a random 36-pitch window, rebased to pitch 0..35

Everything is deterministic given (input bytes, seed).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from hashlib import sha256
from typing import NamedTuple, Optional

import numpy as np

from .score_rep import Excerpt

WINDOW_STEPS = 64
PITCH_SPAN = 36  # a cropped excerpt spans pitches 0..35
MAX_DURATION_STEPS = 63


class MidiParseError(ValueError):
    """Structurally malformed MIDI data."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class MidiRejected(ValueError):
    """A well-formed file outside the corpus rules (reason tells which)."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


class RawNote(NamedTuple):
    pitch: int
    onset_tick: int
    duration_tick: int
    channel: int


class QuantizedNote(NamedTuple):
    pitch: int
    onset_step: int
    duration_steps: int


@dataclass
class AbsExcerpt:
    """One 64-step window, onsets rebased to 0..63, pitches still absolute."""

    notes: list[QuantizedNote]
    window_index: int
    source_id: str = ""


class ParsedMidi(NamedTuple):
    ticks_per_quarter: int
    notes: list[RawNote]


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MidiParseError("unexpected end of data", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.read(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.read(2), "big")

    def u32(self) -> int:
        return int.from_bytes(self.read(4), "big")

    def varint(self) -> int:
        value = 0
        for _ in range(4):
            b = self.u8()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MidiParseError("variable-length quantity too long", self.pos)


_MSG_DATA_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def parse_midi(data: bytes) -> ParsedMidi:
    """Parse an SMF into (ticksPerQuarter, raw notes) or raise.

    MidiParseError carries the byte offset of the defect; MidiRejected marks
    files outside the corpus rules (time signatures, format, SMPTE timing).
    """
    r = _Reader(data)
    if r.read(4) != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    if r.u32() != 6:
        raise MidiParseError("bad MThd length", r.pos - 4)
    fmt = r.u16()
    ntrks = r.u16()
    division = r.u16()
    if fmt not in (0, 1):
        raise MidiRejected(f"unsupported format {fmt}")
    if division & 0x8000:
        raise MidiRejected("SMPTE time division")
    if division == 0:
        raise MidiParseError("zero time division", r.pos - 2)

    notes: list[RawNote] = []
    time_signatures: list[tuple[int, int]] = []

    for _ in range(ntrks):
        if r.read(4) != b"MTrk":
            raise MidiParseError("missing MTrk header", r.pos - 4)
        length = r.u32()
        end = r.pos + length
        if end > len(data):
            raise MidiParseError("track overruns the file", r.pos - 4)
        tick = 0
        running: Optional[int] = None
        open_notes: dict[tuple[int, int], list[int]] = {}

        def close(channel: int, pitch: int, off_tick: int):
            queue = open_notes.get((channel, pitch))
            if queue:
                onset = queue.pop(0)
                notes.append(
                    RawNote(pitch, onset, max(1, off_tick - onset), channel)
                )

        while r.pos < end:
            tick += r.varint()
            status = r.u8()
            if status < 0x80:
                if running is None:
                    raise MidiParseError("data byte without running status", r.pos - 1)
                r.pos -= 1
                status = running
            if status == 0xFF:
                meta = r.u8()
                mlen = r.varint()
                payload = r.read(mlen)
                if meta == 0x58 and len(payload) >= 2:
                    time_signatures.append((payload[0], 2 ** payload[1]))
                continue
            if status in (0xF0, 0xF7):
                running = None
                r.read(r.varint())
                continue
            if status >= 0xF0:
                raise MidiParseError(f"unsupported status byte {status:#x}", r.pos - 1)
            running = status
            kind = status & 0xF0
            channel = status & 0x0F
            payload = r.read(_MSG_DATA_LEN[kind])
            if kind == 0x90 and payload[1] > 0:
                open_notes.setdefault((channel, payload[0]), []).append(tick)
            elif kind == 0x80 or (kind == 0x90 and payload[1] == 0):
                close(channel, payload[0], tick)
        if r.pos != end:
            raise MidiParseError("track events overran the declared length", r.pos)
        for (channel, pitch), queue in sorted(open_notes.items()):
            for onset in queue:
                notes.append(RawNote(pitch, onset, max(1, tick - onset), channel))

    if len(time_signatures) > 1:
        raise MidiRejected("multiple time signatures")
    if len(time_signatures) == 1 and time_signatures[0] != (4, 4):
        raise MidiRejected("not 4/4")

    notes.sort(key=lambda n: (n.onset_tick, n.channel, n.pitch))
    return ParsedMidi(division, notes)


def strip_percussion(notes: list[RawNote]) -> list[RawNote]:
    """Remove the percussion channel (zero-based 9), preserving order."""
    return [n for n in notes if n.channel != 9]


def quantize(notes: list[RawNote], ticks_per_quarter: int) -> list[QuantizedNote]:
    """Snap onsets to 16th-note steps (half-up) and clamp durations to 1..63."""
    if ticks_per_quarter <= 0:
        raise ValueError("ticksPerQuarter must be positive")
    step = ticks_per_quarter / 4.0
    out = []
    for n in notes:
        onset = int(np.floor(n.onset_tick / step + 0.5))
        dur = int(np.floor(n.duration_tick / step + 0.5))
        out.append(QuantizedNote(n.pitch, onset, min(max(dur, 1), MAX_DURATION_STEPS)))
    return out


def segment(notes: list[QuantizedNote]) -> list[AbsExcerpt]:
    """Split into non-overlapping 64-step windows from the first note.

    Onsets are rebased per window; durations are truncated at the window
    edge; exact (pitch, onset) duplicates keep the longest duration; windows
    holding more than 64 notes are dropped.
    """
    if not notes:
        return []
    origin = min(n.onset_step for n in notes)
    windows: dict[int, dict[tuple[int, int], int]] = {}
    for n in notes:
        w, rel = divmod(n.onset_step - origin, WINDOW_STEPS)
        dur = min(n.duration_steps, WINDOW_STEPS - rel)
        key = (n.pitch, rel)
        best = windows.setdefault(w, {})
        best[key] = max(best.get(key, 0), dur)
    out = []
    for w in sorted(windows):
        entries = windows[w]
        if not 1 <= len(entries) <= WINDOW_STEPS:
            continue
        window_notes = sorted(
            QuantizedNote(p, o, d) for (p, o), d in entries.items()
        )
        window_notes.sort(key=lambda n: (n.onset_step, n.pitch, n.duration_steps))
        out.append(AbsExcerpt(notes=window_notes, window_index=w))
    return out


def crop_pitch(excerpt: AbsExcerpt, rng: np.random.Generator) -> Optional[Excerpt]:
    """Rebase to a random 36-pitch window; None when nothing survives."""
    if not excerpt.notes:
        raise ValueError("cannot crop an empty excerpt")
    lo = min(n.pitch for n in excerpt.notes)
    hi = max(n.pitch for n in excerpt.notes)
    if hi - lo <= PITCH_SPAN - 1:
        lo_start = max(0, hi - (PITCH_SPAN - 1))
        hi_start = min(127 - (PITCH_SPAN - 1), lo)
        start = int(rng.integers(lo_start, hi_start + 1))
        kept = excerpt.notes
    else:
        start = int(rng.integers(lo, hi - (PITCH_SPAN - 1) + 1))
        kept = [n for n in excerpt.notes if start <= n.pitch <= start + PITCH_SPAN - 1]
        if not kept:
            return None
    triples = [(n.pitch - start, n.onset_step, n.duration_steps) for n in kept]
    triples.sort()
    return Excerpt.from_notes(triples, slot_count=WINDOW_STEPS)


def ingest_bytes(data: bytes, seed: int) -> list[tuple[str, Excerpt]]:
    """Full pipeline for one file's bytes. Deterministic given (bytes, seed)."""
    parsed = parse_midi(data)
    quantized = quantize(strip_percussion(parsed.notes), parsed.ticks_per_quarter)
    file_hash = sha256(data).hexdigest()[:16]
    hash_entropy = int(file_hash[:8], 16)
    out = []
    for abs_ex in segment(quantized):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(hash_entropy, abs_ex.window_index))
        )
        cropped = crop_pitch(abs_ex, rng)
        if cropped is None:
            continue
        out.append((f"{file_hash}:{abs_ex.window_index:04d}", cropped))
    return out


def prepare_directory(
    path: str, seed: int, log=None
) -> list[tuple[str, Excerpt]]:
    """Ingest every .mid under a directory, ordered by (relative path, window)."""
    files = []
    for root, _, names in os.walk(path):
        for name in names:
            if name.lower().endswith((".mid", ".midi")):
                full = os.path.join(root, name)
                files.append((os.path.relpath(full, path), full))
    files.sort()
    dataset = []
    for rel, full in files:
        with open(full, "rb") as f:
            data = f.read()
        try:
            dataset.extend(ingest_bytes(data, seed))
        except MidiRejected as e:
            if log:
                log.info("skipping %s: %s", rel, e.reason)
        except MidiParseError as e:
            if log:
                log.warning("skipping %s: %s", rel, e)
    return dataset
