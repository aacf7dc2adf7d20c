// Wire types shared with the generation service.

export type NoteTriple = [pitch: number, onset: number, duration: number];

export const GRID_STEPS = 64;
export const GRID_PITCHES = 36;
export const MAX_DURATION = 63;

export interface PitchClassesDoc {
  classes: number[];
  root: number;
}

export interface RegionDoc {
  pitchLo: number;
  pitchHi: number;
  stepLo: number;
  stepHi: number;
  mode: "generate" | "keep";
}

/** Constraint document, field names exactly as the service schema expects. */
export interface ConstraintSpecDoc {
  pitchClasses?: PitchClassesDoc;
  allowedPitches?: number[];
  allowedDurations?: number[];
  onsetGrid?: { period: number; phase: number };
  durationRange?: { min: number; max: number };
  imputationRegions?: RegionDoc[];
  noteCount?: { min: number; max: number };
  lockedNotes?: NoteTriple[];
  temperature: number;
  topP: number;
}

export interface GenerateRequest {
  constraints: ConstraintSpecDoc;
  baseNotes?: NoteTriple[];
  temperature?: number;
  topP?: number;
  seed?: number;
}

export interface GenerateResponse {
  notes: NoteTriple[];
  noteSlotIndices: number[];
  generatedSlotIndices: number[];
  traceId: string;
}

export interface TraceEventData {
  index: number;
  slot: number;
  attribute: "pitch" | "onset" | "duration";
  value: number | null;
  allowed: number;
}

export interface DoneEventData {
  notes: NoteTriple[];
  generatedSlotIndices: number[];
}

export interface ModelInfo {
  config: {
    hiddenSize: number;
    numLayers: number;
    numHeads: number;
    ffnMultiplier: number;
    slotCount: number;
  };
  checkpointId: string;
  slotCount: number;
  domains: { pitch: number; onset: number; duration: number };
}
