#!/usr/bin/env python3
"""Regenerate the bundled MIDI fixtures under tests/fixtures/midi/.

The fixtures are deterministic bytes committed to the repo; this script
exists so they can be audited and rebuilt. Running it must reproduce the
committed files exactly.
"""

import os

OUT = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures", "midi")


def varint(v):
    out = [v & 0x7F]
    v >>= 7
    while v:
        out.append((v & 0x7F) | 0x80)
        v >>= 7
    return bytes(reversed(out))


def track(events):
    payload = b"".join(varint(delta) + body for delta, body in events)
    payload += varint(0) + bytes([0xFF, 0x2F, 0x00])
    return b"MTrk" + len(payload).to_bytes(4, "big") + payload


def smf(tracks, division=480, fmt=None):
    if fmt is None:
        fmt = 0 if len(tracks) == 1 else 1
    header = (
        b"MThd"
        + (6).to_bytes(4, "big")
        + fmt.to_bytes(2, "big")
        + len(tracks).to_bytes(2, "big")
        + division.to_bytes(2, "big")
    )
    return header + b"".join(tracks)


TS_44 = bytes([0xFF, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08])
TEMPO = bytes([0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20])


def on(pitch, vel=96, ch=0):
    return bytes([0x90 | ch, pitch, vel])


def off(pitch, ch=0):
    return bytes([0x80 | ch, pitch, 0x00])


def from_notes(notes, extra_head=(), tick_scale=120):
    """notes: (pitch, onset_step, duration_steps, channel); steps * tick_scale ticks."""
    events = []
    for p, o, d, ch in notes:
        events.append((o * tick_scale, 1, on(p, ch=ch)))
        events.append(((o + d) * tick_scale, 0, off(p, ch=ch)))
    events.sort(key=lambda e: (e[0], e[1]))
    seq = list(extra_head)
    tick = 0
    out = []
    for etick, _, body in events:
        out.append((etick - tick, body))
        tick = etick
    return [(0, h) for h in seq] + out


def melody_a():
    # two 64-step windows of a narrow-range melody
    scale = [60, 62, 64, 65, 67, 69, 71, 72]
    notes = []
    step = 0
    for i in range(28):
        pitch = scale[(i * 3) % len(scale)]
        dur = [2, 2, 4, 2, 2, 4, 8][i % 7]
        notes.append((pitch, step, dur, 0))
        step += [4, 4, 4, 4, 4, 8, 4][i % 7]
    return smf([track(from_notes(notes, extra_head=[TS_44, TEMPO]))])


def chords_b():
    # no time-signature event (counts as 4/4); chords on channel 2 plus
    # percussion on channel 9 that ingestion must discard; TPQ 960
    chords = [
        ([48, 55, 60, 64], 0, 16),
        ([53, 57, 60, 65], 16, 16),
        ([55, 59, 62, 67], 32, 16),
        ([48, 52, 55, 60], 48, 16),
    ]
    notes = []
    for pitches, onset, dur in chords:
        for p in pitches:
            notes.append((p, onset, dur, 2))
    for s in range(0, 64, 4):
        notes.append((36, s, 1, 9))
    return smf([track(from_notes(notes, extra_head=[TEMPO], tick_scale=240))], division=960)


def wide_c():
    # wide pitch span (crop must drop notes), a duplicate (pitch, onset) pair
    # with two durations (dedup keeps the longest), a note crossing the
    # window edge (truncation), and a sparse second window
    notes = [
        (24, 0, 4, 0),
        (36, 4, 4, 0),
        (48, 8, 4, 0),
        (60, 12, 4, 0),
        (72, 16, 4, 0),
        (84, 20, 4, 0),
        (96, 24, 4, 0),
        (60, 28, 2, 0),
        (60, 28, 6, 0),   # duplicate onset, longer duration wins
        (66, 60, 10, 0),  # crosses the first window edge
        (63, 80, 4, 0),
        (67, 84, 4, 0),
        (70, 88, 8, 0),
    ]
    return smf([track(from_notes(notes, extra_head=[TS_44, TEMPO]))])


def main():
    os.makedirs(OUT, exist_ok=True)
    for name, data in (
        ("melody_a.mid", melody_a()),
        ("chords_b.mid", chords_b()),
        ("wide_c.mid", wide_c()),
    ):
        path = os.path.join(OUT, name)
        with open(path, "wb") as f:
            f.write(data)
        print(f"wrote {path} ({len(data)} bytes)")


if __name__ == "__main__":
    main()
