// The serializable editor state: exactly the constraint layers a user can
// paint. Invalid combinations are unrepresentable (rows are a bitmap, the
// onset layer is a period/phase pair, ranges are clamped on input), so
// serialization can never produce a schema-invalid document.

import { GRID_PITCHES, GRID_STEPS, MAX_DURATION, NoteTriple, RegionDoc } from "./types.js";

export interface EditorState {
  /** null = unconstrained; else one flag per pitch row 0..35 */
  pitchRows: boolean[] | null;
  onsetGrid: { period: number; phase: number } | null;
  durationRange: { min: number; max: number } | null;
  allowedDurations: number[] | null;
  regions: RegionDoc[];
  lockedNotes: NoteTriple[];
  noteCount: { min: number; max: number } | null;
  temperature: number;
  topP: number;
}

export function emptyState(): EditorState {
  return {
    pitchRows: null,
    onsetGrid: null,
    durationRange: null,
    allowedDurations: null,
    regions: [],
    lockedNotes: [],
    noteCount: null,
    temperature: 1.0,
    topP: 0.9,
  };
}

export function validateState(state: EditorState): string[] {
  const problems: string[] = [];
  if (state.pitchRows) {
    if (state.pitchRows.length !== GRID_PITCHES) problems.push("pitchRows must have 36 flags");
    if (!state.pitchRows.some(Boolean)) problems.push("pitchRows excludes every pitch");
  }
  if (state.onsetGrid) {
    const { period, phase } = state.onsetGrid;
    if (period < 1 || period > GRID_STEPS) problems.push("onset period outside 1..64");
    if (phase < 0 || phase >= period) problems.push("onset phase must be below the period");
  }
  if (state.durationRange) {
    const { min, max } = state.durationRange;
    if (!(1 <= min && min <= max && max <= MAX_DURATION)) problems.push("bad duration range");
  }
  if (state.allowedDurations && state.allowedDurations.length === 0)
    problems.push("allowedDurations excludes every duration");
  for (const r of state.regions) {
    if (r.pitchLo > r.pitchHi || r.stepLo > r.stepHi) problems.push("inverted region");
    if (r.pitchHi >= GRID_PITCHES || r.stepHi >= GRID_STEPS) problems.push("region out of bounds");
  }
  for (const [p, o, d] of state.lockedNotes) {
    if (p < 0 || p >= GRID_PITCHES || o < 0 || o >= GRID_STEPS || d < 1 || d > MAX_DURATION)
      problems.push(`locked note (${p},${o},${d}) out of bounds`);
    if (o + d > GRID_STEPS) problems.push(`locked note (${p},${o},${d}) overruns the grid`);
  }
  if (state.noteCount) {
    const { min, max } = state.noteCount;
    if (!(0 <= min && min <= max && max <= GRID_STEPS)) problems.push("bad note count bounds");
  }
  if (!(state.temperature > 0)) problems.push("temperature must be positive");
  if (!(state.topP > 0 && state.topP <= 1)) problems.push("topP must lie in (0, 1]");
  return problems;
}

/** Pitch rows painted as residue classes extended over every octave? */
export function rowsAsPitchClasses(rows: boolean[]): number[] | null {
  const residues = new Set<number>();
  for (let p = 0; p < rows.length; p++) if (rows[p]) residues.add(p % 12);
  if (residues.size === 0) return null;
  for (let p = 0; p < rows.length; p++) {
    if (rows[p] !== residues.has(p % 12)) return null;
  }
  return [...residues].sort((a, b) => a - b);
}

export function toggleRow(state: EditorState, pitch: number): void {
  if (!state.pitchRows) state.pitchRows = new Array(GRID_PITCHES).fill(true);
  state.pitchRows[pitch] = !state.pitchRows[pitch];
}

export function statesEqual(a: EditorState, b: EditorState): boolean {
  return JSON.stringify(a) === JSON.stringify(b);
}
