// Web Audio scheduling for auditioning generations. The audio context is
// injected so tests can record the schedule without a real device.

import { NoteTriple } from "./types.js";

export const EXPORT_PITCH_BASE = 48; // pitch value 0 sounds as MIDI note 48

export interface ScheduledNote {
  startSeconds: number;
  durationSeconds: number;
  frequencyHz: number;
}

export function midiToFrequency(midiNote: number): number {
  return 440 * Math.pow(2, (midiNote - 69) / 12);
}

/** One grid step is a 16th note: 60 / tempo / 4 seconds. */
export function schedulePlayback(notes: NoteTriple[], tempoBpm: number): ScheduledNote[] {
  const step = 60 / tempoBpm / 4;
  return notes.map(([pitch, onset, duration]) => ({
    startSeconds: onset * step,
    durationSeconds: duration * step,
    frequencyHz: midiToFrequency(EXPORT_PITCH_BASE + pitch),
  }));
}

interface OscillatorLike {
  frequency: { value: number };
  connect(node: unknown): void;
  start(when: number): void;
  stop(when: number): void;
}

interface GainLike {
  gain: {
    value: number;
    setValueAtTime(v: number, t: number): void;
    linearRampToValueAtTime(v: number, t: number): void;
  };
  connect(node: unknown): void;
}

export interface AudioContextLike {
  currentTime: number;
  destination: unknown;
  createOscillator(): OscillatorLike;
  createGain(): GainLike;
}

/** Schedule every note on the context; returns the schedule for inspection. */
export function playNotes(
  ctx: AudioContextLike,
  notes: NoteTriple[],
  tempoBpm: number
): ScheduledNote[] {
  const schedule = schedulePlayback(notes, tempoBpm);
  const t0 = ctx.currentTime;
  for (const s of schedule) {
    const osc = ctx.createOscillator();
    const gain = ctx.createGain();
    osc.frequency.value = s.frequencyHz;
    osc.connect(gain);
    gain.connect(ctx.destination);
    const start = t0 + s.startSeconds;
    const end = start + s.durationSeconds;
    gain.gain.setValueAtTime(0.18, start);
    gain.gain.linearRampToValueAtTime(0.0001, end);
    osc.start(start);
    osc.stop(end);
  }
  return schedule;
}
