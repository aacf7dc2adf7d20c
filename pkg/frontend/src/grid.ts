// Pure view-model for the roll grid: which cells a response paints, which
// are green, and the defensive client-side constraint check.

import { EditorState, rowsAsPitchClasses } from "./editorState.js";
import { GenerateResponse, GRID_STEPS } from "./types.js";

export interface NoteCell {
  slot: number;
  pitch: number;
  onset: number;
  duration: number;
  generated: boolean;
}

export function cellsFromResponse(response: GenerateResponse): NoteCell[] {
  const generated = new Set(response.generatedSlotIndices);
  return response.notes.map(([pitch, onset, duration], i) => {
    const slot = response.noteSlotIndices[i];
    return { slot, pitch, onset, duration, generated: generated.has(slot) };
  });
}

/** Green fill must mirror generatedSlotIndices exactly. */
export function greenParityHolds(response: GenerateResponse, cells: NoteCell[]): boolean {
  const generated = new Set(response.generatedSlotIndices);
  return cells.every((c) => c.generated === generated.has(c.slot));
}

/**
 * Defensive check that a response never shows a note outside the painted
 * constraints. The service guarantees this; the client re-checks anyway.
 * Locked notes are conditioning: they must be present verbatim and are
 * exempt from region confinement.
 */
export function violations(state: EditorState, response: GenerateResponse): string[] {
  const problems: string[] = [];
  const cells = cellsFromResponse(response);
  const remaining = [...cells];
  for (const [p, o, d] of state.lockedNotes) {
    const at = remaining.findIndex(
      (c) => c.pitch === p && c.onset === o && c.duration === d
    );
    if (at < 0) problems.push(`locked note (${p},${o},${d}) missing from response`);
    else remaining.splice(at, 1);
  }
  if (state.noteCount) {
    const n = cells.length;
    if (n < state.noteCount.min || n > state.noteCount.max)
      problems.push(`note count ${n} outside bounds`);
  }
  const generateRegions = state.regions.filter((r) => r.mode === "generate");
  for (const c of remaining) {
    if (state.pitchRows && !state.pitchRows[c.pitch])
      problems.push(`pitch ${c.pitch} outside painted rows`);
    if (state.onsetGrid && c.onset % state.onsetGrid.period !== state.onsetGrid.phase)
      problems.push(`onset ${c.onset} off the grid`);
    if (state.durationRange) {
      const { min, max } = state.durationRange;
      if (c.duration < min || c.duration > max)
        problems.push(`duration ${c.duration} outside range`);
    }
    if (state.allowedDurations && !state.allowedDurations.includes(c.duration))
      problems.push(`duration ${c.duration} not in the allowed set`);
    if (generateRegions.length) {
      const pitchOk = generateRegions.some((r) => r.pitchLo <= c.pitch && c.pitch <= r.pitchHi);
      const stepOk = generateRegions.some((r) => r.stepLo <= c.onset && c.onset <= r.stepHi);
      if (!pitchOk || !stepOk) problems.push(`generated note at (${c.pitch},${c.onset}) outside regions`);
    }
    if (c.onset + c.duration > GRID_STEPS)
      problems.push(`note at (${c.pitch},${c.onset}) overruns the grid`);
  }
  return problems;
}

/** Human-readable summary of the painted layers, for the status bar. */
export function describeState(state: EditorState): string {
  const parts: string[] = [];
  if (state.pitchRows) {
    const classes = rowsAsPitchClasses(state.pitchRows);
    parts.push(classes ? `pitch classes {${classes.join(",")}}` : "pitch rows");
  }
  if (state.onsetGrid) parts.push(`onsets every ${state.onsetGrid.period}`);
  if (state.durationRange)
    parts.push(`duration ${state.durationRange.min}..${state.durationRange.max}`);
  if (state.allowedDurations) parts.push(`durations {${state.allowedDurations.join(",")}}`);
  if (state.regions.length) parts.push(`${state.regions.length} region(s)`);
  if (state.lockedNotes.length) parts.push(`${state.lockedNotes.length} locked note(s)`);
  if (state.noteCount) parts.push(`${state.noteCount.min}..${state.noteCount.max} notes`);
  return parts.length ? parts.join(", ") : "unconstrained";
}
