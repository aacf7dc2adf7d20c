"""Persistence and rendering: dataset files, MIDI export, piano-roll images.

Dataset files are newline-delimited JSON records {"sourceId", "notes"}.
MIDI export writes format-0 files at 480 ticks per quarter so a 16th-note
step is exactly 120 ticks and the ingest round trip is lossless. Piano
rolls are deterministic SVG text: byte-identical output for identical
input, which keeps golden tests byte-comparable.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

from .score_rep import DEFAULT_SLOT_COUNT, Excerpt, MAX_DURATION, PITCH_RANGE, STEP_RANGE

EXPORT_TPQ = 480
TICKS_PER_STEP = EXPORT_TPQ // 4
EXPORT_PITCH_BASE = 48  # pitch value 0 lands on C3
EXPORT_VELOCITY = 96
TEMPO_MICROSECONDS = 500_000  # 120 BPM


@dataclass(frozen=True)
class DatasetRecord:
    source_id: str
    notes: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        if len(self.notes) > DEFAULT_SLOT_COUNT:
            raise ValueError(f"{len(self.notes)} notes exceed {DEFAULT_SLOT_COUNT}")
        for p, o, d in self.notes:
            if not (0 <= p < PITCH_RANGE and 0 <= o < STEP_RANGE and 1 <= d <= MAX_DURATION):
                raise ValueError(f"note ({p}, {o}, {d}) outside domain ranges")

    @classmethod
    def from_excerpt(cls, source_id: str, excerpt: Excerpt) -> "DatasetRecord":
        return cls(source_id, tuple(excerpt.notes()))

    def to_excerpt(self, slot_count: int = DEFAULT_SLOT_COUNT) -> Excerpt:
        return Excerpt.from_notes(self.notes, slot_count=slot_count)


def write_dataset(path: str, records: Iterable[DatasetRecord]) -> None:
    lines = []
    for rec in records:
        lines.append(
            json.dumps(
                {"sourceId": rec.source_id, "notes": [list(n) for n in rec.notes]},
                separators=(",", ":"),
            )
        )
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")
    os.replace(tmp, path)


def read_dataset(path: str) -> list[DatasetRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                records.append(
                    DatasetRecord(
                        source_id=doc["sourceId"],
                        notes=tuple((int(p), int(o), int(d)) for p, o, d in doc["notes"]),
                    )
                )
            except (ValueError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: malformed dataset record: {e}") from e
    return records


# ---------------------------------------------------------------------------
# MIDI export


def _varint(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def excerpt_to_midi(excerpt: Excerpt) -> bytes:
    """Format-0 SMF: 4/4, 120 BPM, one note per defined slot on channel 0."""
    events: list[tuple[int, int, bytes]] = []  # (tick, order, payload)
    events.append((0, 0, bytes([0xFF, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08])))
    events.append(
        (0, 0, bytes([0xFF, 0x51, 0x03]) + TEMPO_MICROSECONDS.to_bytes(3, "big"))
    )
    for pitch, onset, duration in sorted(excerpt.notes(), key=lambda n: (n[1], n[0], n[2])):
        midi_pitch = EXPORT_PITCH_BASE + pitch
        on_tick = onset * TICKS_PER_STEP
        off_tick = (onset + duration) * TICKS_PER_STEP
        events.append((on_tick, 1, bytes([0x90, midi_pitch, EXPORT_VELOCITY])))
        events.append((off_tick, 0, bytes([0x80, midi_pitch, 0x00])))
    # note-off sorts before note-on at equal ticks
    events.sort(key=lambda e: (e[0], e[1]))

    track = bytearray()
    tick = 0
    for etick, _, payload in events:
        track += _varint(etick - tick)
        track += payload
        tick = etick
    track += _varint(0) + bytes([0xFF, 0x2F, 0x00])

    header = b"MThd" + (6).to_bytes(4, "big")
    header += (0).to_bytes(2, "big") + (1).to_bytes(2, "big") + EXPORT_TPQ.to_bytes(2, "big")
    return header + b"MTrk" + len(track).to_bytes(4, "big") + bytes(track)


# ---------------------------------------------------------------------------
# Piano-roll rendering

CELL = 12
ROLL_COLS = STEP_RANGE
ROLL_ROWS = PITCH_RANGE
GENERATED_FILL = "#4caf50"
KEPT_FILL = "#9e9e9e"


def render_piano_roll(excerpt: Excerpt, generated: Sequence[int] = ()) -> str:
    """Deterministic SVG: a 64x36 grid, one rectangle per note.

    Slots listed in `generated` render green; the rest neutral.
    """
    gen = set(int(i) for i in generated)
    width = ROLL_COLS * CELL
    height = ROLL_ROWS * CELL
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    for c in range(ROLL_COLS + 1):
        x = c * CELL
        stroke = "#c0c0c0" if c % 4 == 0 else "#e8e8e8"
        lines.append(
            f'<line x1="{x}" y1="0" x2="{x}" y2="{height}" stroke="{stroke}" stroke-width="1"/>'
        )
    for r in range(ROLL_ROWS + 1):
        y = r * CELL
        stroke = "#c0c0c0" if r % 12 == 0 else "#e8e8e8"
        lines.append(
            f'<line x1="0" y1="{y}" x2="{width}" y2="{y}" stroke="{stroke}" stroke-width="1"/>'
        )
    for slot_index, slot in enumerate(excerpt.slots):
        if not slot.defined:
            continue
        x = slot.onset * CELL
        y = (ROLL_ROWS - 1 - slot.pitch) * CELL
        w = slot.duration * CELL
        fill = GENERATED_FILL if slot_index in gen else KEPT_FILL
        lines.append(
            f'<rect x="{x}" y="{y}" width="{w}" height="{CELL}" fill="{fill}" '
            f'stroke="#333333" stroke-width="1"/>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def write_bytes(path: str, data: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
