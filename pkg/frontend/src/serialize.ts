// EditorState <-> ConstraintSpec document. Deserializing a serialized state
// restores it exactly; octave-periodic pitch rows compress to pitchClasses.

import {
  EditorState,
  emptyState,
  rowsAsPitchClasses,
  validateState,
} from "./editorState.js";
import { ConstraintSpecDoc, GRID_PITCHES } from "./types.js";

export function serializeSpec(state: EditorState): ConstraintSpecDoc {
  const problems = validateState(state);
  if (problems.length) throw new Error(`invalid editor state: ${problems.join("; ")}`);
  const doc: ConstraintSpecDoc = {
    temperature: state.temperature,
    topP: state.topP,
  };
  if (state.pitchRows) {
    const classes = rowsAsPitchClasses(state.pitchRows);
    if (classes) {
      doc.pitchClasses = { classes, root: 0 };
    } else {
      doc.allowedPitches = state.pitchRows
        .map((on, p) => (on ? p : -1))
        .filter((p) => p >= 0);
    }
  }
  if (state.onsetGrid) doc.onsetGrid = { ...state.onsetGrid };
  if (state.durationRange) doc.durationRange = { ...state.durationRange };
  if (state.allowedDurations) doc.allowedDurations = [...state.allowedDurations].sort((a, b) => a - b);
  if (state.regions.length) doc.imputationRegions = state.regions.map((r) => ({ ...r }));
  if (state.noteCount) doc.noteCount = { ...state.noteCount };
  if (state.lockedNotes.length) doc.lockedNotes = state.lockedNotes.map((n) => [...n] as typeof n);
  return doc;
}

export function deserializeSpec(doc: ConstraintSpecDoc): EditorState {
  const state = emptyState();
  state.temperature = doc.temperature ?? 1.0;
  state.topP = doc.topP ?? 0.9;
  if (doc.pitchClasses) {
    const rows = new Array(GRID_PITCHES).fill(false);
    const root = doc.pitchClasses.root ?? 0;
    for (let p = 0; p < GRID_PITCHES; p++) {
      rows[p] = doc.pitchClasses.classes.includes(((p - root) % 12 + 12) % 12);
    }
    state.pitchRows = rows;
  } else if (doc.allowedPitches) {
    const rows = new Array(GRID_PITCHES).fill(false);
    for (const p of doc.allowedPitches) rows[p] = true;
    state.pitchRows = rows;
  }
  if (doc.onsetGrid) state.onsetGrid = { period: doc.onsetGrid.period, phase: doc.onsetGrid.phase ?? 0 };
  if (doc.durationRange) state.durationRange = { ...doc.durationRange };
  if (doc.allowedDurations) state.allowedDurations = [...doc.allowedDurations].sort((a, b) => a - b);
  if (doc.imputationRegions) state.regions = doc.imputationRegions.map((r) => ({ ...r }));
  if (doc.noteCount) state.noteCount = { ...doc.noteCount };
  if (doc.lockedNotes) state.lockedNotes = doc.lockedNotes.map((n) => [...n] as typeof n);
  return state;
}
