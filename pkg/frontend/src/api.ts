// Thin client for the generation service.

import { EditorState } from "./editorState.js";
import { serializeSpec } from "./serialize.js";
import {
  DoneEventData,
  GenerateRequest,
  GenerateResponse,
  ModelInfo,
  TraceEventData,
} from "./types.js";
import { consumeEvents } from "./sse.js";

export class ServiceError extends Error {
  constructor(
    message: string,
    public readonly status: number,
    public readonly body: unknown
  ) {
    super(message);
  }
}

export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch
  ) {}

  async health(): Promise<boolean> {
    try {
      const r = await this.fetchImpl(`${this.baseUrl}/health`);
      return r.ok;
    } catch {
      return false;
    }
  }

  async modelInfo(): Promise<ModelInfo> {
    const r = await this.fetchImpl(`${this.baseUrl}/model/info`);
    if (!r.ok) throw new ServiceError("model info unavailable", r.status, await r.text());
    return (await r.json()) as ModelInfo;
  }

  async generate(state: EditorState, seed: number): Promise<GenerateResponse> {
    const request: GenerateRequest = { constraints: serializeSpec(state), seed };
    const r = await this.fetchImpl(`${this.baseUrl}/generate`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(request),
    });
    const body = await r.json();
    if (!r.ok) {
      throw new ServiceError(`generation failed (${r.status})`, r.status, body);
    }
    return body as GenerateResponse;
  }

  /** Replay the sampling trace in decision order; resolves on the done event. */
  async streamTrace(
    traceId: string,
    onDecision: (d: TraceEventData) => void
  ): Promise<DoneEventData> {
    let done: DoneEventData | null = null;
    await consumeEvents(
      `${this.baseUrl}/generate/${traceId}/events`,
      (e) => {
        if (e.event === "decision") onDecision(JSON.parse(e.data) as TraceEventData);
        else if (e.event === "done") done = JSON.parse(e.data) as DoneEventData;
      },
      this.fetchImpl
    );
    if (!done) throw new Error("event stream ended without a done event");
    return done;
  }
}
