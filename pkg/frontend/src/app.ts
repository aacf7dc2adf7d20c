// Browser entry point: canvas piano roll, constraint painting, generation,
// trace playback animation and audio audition. All sampling happens on the
// service; this file only paints, posts and replays.

import { ServiceClient } from "./api.js";
import { EditorState, emptyState, toggleRow, validateState } from "./editorState.js";
import { cellsFromResponse, describeState, greenParityHolds, violations } from "./grid.js";
import { AudioContextLike, playNotes } from "./playback.js";
import { deserializeSpec, serializeSpec } from "./serialize.js";
import {
  GenerateResponse,
  GRID_PITCHES,
  GRID_STEPS,
  NoteTriple,
  TraceEventData,
} from "./types.js";

const CELL = 14;
const GUTTER = 28;

type Tool = "lock" | "region-generate" | "region-keep" | "erase";

interface PartialSlot {
  pitch?: number | null;
  onset?: number | null;
  duration?: number | null;
}

class App {
  state: EditorState = emptyState();
  seed = 0;
  tool: Tool = "lock";
  response: GenerateResponse | null = null;
  tracePosition = 0;
  partials = new Map<number, PartialSlot>();
  dragStart: { pitch: number; step: number } | null = null;
  client = new ServiceClient("");
  canvas: HTMLCanvasElement;
  ctx: CanvasRenderingContext2D;
  status: HTMLElement;
  audio: AudioContextLike | null = null;

  constructor() {
    this.canvas = document.getElementById("roll") as HTMLCanvasElement;
    this.canvas.width = GUTTER + GRID_STEPS * CELL;
    this.canvas.height = GRID_PITCHES * CELL;
    this.ctx = this.canvas.getContext("2d")!;
    this.status = document.getElementById("status")!;
    this.bindControls();
    this.draw();
    void this.pollHealth();
  }

  async pollHealth(): Promise<void> {
    const ok = await this.client.health();
    this.setStatus(ok ? "service ready" : "service unavailable, retrying...");
    if (!ok) setTimeout(() => void this.pollHealth(), 1500);
  }

  setStatus(text: string): void {
    this.status.textContent = `${text} | ${describeState(this.state)}`;
  }

  input<T extends HTMLElement>(id: string): T {
    return document.getElementById(id) as T;
  }

  bindControls(): void {
    const tools = this.input<HTMLSelectElement>("tool");
    tools.addEventListener("change", () => (this.tool = tools.value as Tool));

    const hook = (id: string, fn: () => void) =>
      this.input<HTMLElement>(id).addEventListener("change", () => {
        fn();
        this.draw();
        this.setStatus("edited");
      });

    hook("onset-enable", () => {
      const enabled = this.input<HTMLInputElement>("onset-enable").checked;
      const period = Number(this.input<HTMLInputElement>("onset-period").value);
      const phase = Number(this.input<HTMLInputElement>("onset-phase").value);
      this.state.onsetGrid = enabled ? { period, phase: phase % period } : null;
    });
    hook("onset-period", () => this.refreshOnset());
    hook("onset-phase", () => this.refreshOnset());
    hook("duration-enable", () => this.refreshDuration());
    hook("duration-min", () => this.refreshDuration());
    hook("duration-max", () => this.refreshDuration());
    hook("count-enable", () => this.refreshCount());
    hook("count-min", () => this.refreshCount());
    hook("count-max", () => this.refreshCount());
    hook("temperature", () => {
      this.state.temperature = Number(this.input<HTMLInputElement>("temperature").value);
    });
    hook("top-p", () => {
      this.state.topP = Number(this.input<HTMLInputElement>("top-p").value);
    });
    hook("seed", () => {
      this.seed = Number(this.input<HTMLInputElement>("seed").value);
    });

    this.input<HTMLButtonElement>("generate").addEventListener("click", () => void this.generate());
    this.input<HTMLButtonElement>("play").addEventListener("click", () => this.play());
    this.input<HTMLButtonElement>("clear").addEventListener("click", () => {
      this.state = emptyState();
      this.response = null;
      this.partials.clear();
      this.draw();
      this.setStatus("cleared");
    });
    this.input<HTMLButtonElement>("download").addEventListener("click", () => this.download());
    this.input<HTMLInputElement>("upload").addEventListener("change", (e) => void this.upload(e));

    this.canvas.addEventListener("mousedown", (e) => this.onMouseDown(e));
    this.canvas.addEventListener("mouseup", (e) => this.onMouseUp(e));
  }

  refreshOnset(): void {
    if (!this.input<HTMLInputElement>("onset-enable").checked) return;
    const period = Math.max(1, Number(this.input<HTMLInputElement>("onset-period").value));
    const phase = Number(this.input<HTMLInputElement>("onset-phase").value) % period;
    this.state.onsetGrid = { period, phase };
  }

  refreshDuration(): void {
    const enabled = this.input<HTMLInputElement>("duration-enable").checked;
    if (!enabled) {
      this.state.durationRange = null;
      return;
    }
    const min = Number(this.input<HTMLInputElement>("duration-min").value);
    const max = Number(this.input<HTMLInputElement>("duration-max").value);
    this.state.durationRange = { min: Math.max(1, min), max: Math.max(min, max) };
  }

  refreshCount(): void {
    const enabled = this.input<HTMLInputElement>("count-enable").checked;
    if (!enabled) {
      this.state.noteCount = null;
      return;
    }
    const min = Number(this.input<HTMLInputElement>("count-min").value);
    const max = Number(this.input<HTMLInputElement>("count-max").value);
    this.state.noteCount = { min: Math.max(0, min), max: Math.max(min, max) };
  }

  cellAt(e: MouseEvent): { pitch: number; step: number } | null {
    const rect = this.canvas.getBoundingClientRect();
    const x = e.clientX - rect.left - GUTTER;
    const y = e.clientY - rect.top;
    const step = Math.floor(x / CELL);
    const pitch = GRID_PITCHES - 1 - Math.floor(y / CELL);
    if (x < 0) return { pitch, step: -1 }; // gutter: row toggle
    if (step < 0 || step >= GRID_STEPS || pitch < 0 || pitch >= GRID_PITCHES) return null;
    return { pitch, step };
  }

  onMouseDown(e: MouseEvent): void {
    const cell = this.cellAt(e);
    if (!cell) return;
    if (cell.step < 0) {
      toggleRow(this.state, cell.pitch);
      this.draw();
      this.setStatus("rows painted");
      return;
    }
    this.dragStart = cell;
  }

  onMouseUp(e: MouseEvent): void {
    const start = this.dragStart;
    this.dragStart = null;
    const end = this.cellAt(e);
    if (!start || !end || end.step < 0) return;
    if (this.tool === "lock") {
      const duration = Number(this.input<HTMLInputElement>("lock-duration").value) || 2;
      const note: NoteTriple = [
        start.pitch,
        start.step,
        Math.min(duration, GRID_STEPS - start.step),
      ];
      this.state.lockedNotes.push(note);
    } else if (this.tool === "erase") {
      this.state.lockedNotes = this.state.lockedNotes.filter(
        ([p, o, d]) => !(p === start.pitch && o <= start.step && start.step < o + d)
      );
      this.state.regions = this.state.regions.filter(
        (r) =>
          !(
            r.pitchLo <= start.pitch &&
            start.pitch <= r.pitchHi &&
            r.stepLo <= start.step &&
            start.step <= r.stepHi
          )
      );
    } else {
      this.state.regions.push({
        pitchLo: Math.min(start.pitch, end.pitch),
        pitchHi: Math.max(start.pitch, end.pitch),
        stepLo: Math.min(start.step, end.step),
        stepHi: Math.max(start.step, end.step),
        mode: this.tool === "region-generate" ? "generate" : "keep",
      });
    }
    this.draw();
    this.setStatus("edited");
  }

  async generate(): Promise<void> {
    const problems = validateState(this.state);
    if (problems.length) {
      this.setStatus(`invalid state: ${problems[0]}`);
      return;
    }
    this.setStatus("generating...");
    this.partials.clear();
    this.response = null;
    try {
      const response = await this.client.generate(this.state, this.seed);
      this.tracePosition = 0;
      await this.client.streamTrace(response.traceId, (d) => this.queueDecision(d));
      this.response = response;
      const cells = cellsFromResponse(response);
      if (!greenParityHolds(response, cells)) {
        this.setStatus("warning: green parity check failed");
        return;
      }
      const bad = violations(this.state, response);
      this.setStatus(
        bad.length
          ? `constraint check FAILED: ${bad[0]}`
          : `generated ${response.notes.length} notes (trace ${response.traceId})`
      );
      this.draw();
    } catch (err) {
      this.setStatus(`error: ${(err as Error).message}`);
    }
  }

  queueDecision(d: TraceEventData): void {
    // animate the random-order fill-in: apply one decision per frame
    const apply = () => {
      const partial = this.partials.get(d.slot) ?? {};
      partial[d.attribute] = d.value;
      this.partials.set(d.slot, partial);
      this.tracePosition = d.index + 1;
      this.draw();
    };
    setTimeout(apply, d.index * 25);
  }

  play(): void {
    if (!this.response) return;
    if (!this.audio) {
      const Ctor = (window as unknown as { AudioContext: new () => AudioContextLike })
        .AudioContext;
      this.audio = new Ctor();
    }
    const tempo = Number(this.input<HTMLInputElement>("tempo").value) || 120;
    playNotes(this.audio, this.response.notes, tempo);
  }

  download(): void {
    const blob = new Blob([JSON.stringify(serializeSpec(this.state), null, 2)], {
      type: "application/json",
    });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "constraints.json";
    a.click();
    URL.revokeObjectURL(a.href);
  }

  async upload(e: Event): Promise<void> {
    const input = e.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    this.state = deserializeSpec(JSON.parse(await file.text()));
    this.response = null;
    this.partials.clear();
    this.draw();
    this.setStatus(`loaded ${file.name}`);
  }

  draw(): void {
    const { ctx } = this;
    ctx.fillStyle = "#ffffff";
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);

    // pitch-row shading and gutter
    for (let p = 0; p < GRID_PITCHES; p++) {
      const y = (GRID_PITCHES - 1 - p) * CELL;
      const allowed = !this.state.pitchRows || this.state.pitchRows[p];
      ctx.fillStyle = allowed ? "#fafafa" : "#f3d9d9";
      ctx.fillRect(GUTTER, y, GRID_STEPS * CELL, CELL);
      ctx.fillStyle = p % 12 === 0 ? "#90a4ae" : "#cfd8dc";
      ctx.fillRect(0, y, GUTTER - 4, CELL - 1);
    }
    // onset-grid shading
    if (this.state.onsetGrid) {
      const { period, phase } = this.state.onsetGrid;
      ctx.fillStyle = "rgba(33, 150, 243, 0.08)";
      for (let s = 0; s < GRID_STEPS; s++) {
        if (s % period !== phase) ctx.fillRect(GUTTER + s * CELL, 0, CELL, GRID_PITCHES * CELL);
      }
    }
    // regions
    for (const r of this.state.regions) {
      ctx.fillStyle =
        r.mode === "generate" ? "rgba(76, 175, 80, 0.15)" : "rgba(255, 193, 7, 0.2)";
      ctx.fillRect(
        GUTTER + r.stepLo * CELL,
        (GRID_PITCHES - 1 - r.pitchHi) * CELL,
        (r.stepHi - r.stepLo + 1) * CELL,
        (r.pitchHi - r.pitchLo + 1) * CELL
      );
    }
    // grid lines
    ctx.strokeStyle = "#e0e0e0";
    ctx.lineWidth = 1;
    for (let s = 0; s <= GRID_STEPS; s++) {
      ctx.beginPath();
      ctx.moveTo(GUTTER + s * CELL + 0.5, 0);
      ctx.lineTo(GUTTER + s * CELL + 0.5, GRID_PITCHES * CELL);
      ctx.stroke();
    }
    for (let p = 0; p <= GRID_PITCHES; p++) {
      ctx.beginPath();
      ctx.moveTo(GUTTER, p * CELL + 0.5);
      ctx.lineTo(GUTTER + GRID_STEPS * CELL, p * CELL + 0.5);
      ctx.stroke();
    }

    const drawNote = (pitch: number, onset: number, duration: number, fill: string) => {
      ctx.fillStyle = fill;
      ctx.fillRect(
        GUTTER + onset * CELL + 1,
        (GRID_PITCHES - 1 - pitch) * CELL + 1,
        duration * CELL - 2,
        CELL - 2
      );
    };

    // locked notes
    for (const [p, o, d] of this.state.lockedNotes) drawNote(p, o, d, "#546e7a");

    if (this.response) {
      for (const c of cellsFromResponse(this.response)) {
        drawNote(c.pitch, c.onset, c.duration, c.generated ? "#4caf50" : "#9e9e9e");
      }
    } else {
      // mid-trace preview: slots whose three attributes are all decided
      for (const partial of this.partials.values()) {
        if (
          partial.pitch != null &&
          partial.onset != null &&
          partial.duration != null
        ) {
          drawNote(partial.pitch, partial.onset, partial.duration, "#a5d6a7");
        }
      }
    }
  }
}

if (typeof document !== "undefined" && document.getElementById("roll")) {
  new App();
}
