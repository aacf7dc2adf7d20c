"""HTTP generation service.

Endpoints:
  POST /generate                     compile constraints, sample, respond
  GET  /generate/{sessionId}/events  server-sent trace replay + done event
  GET  /health                       200 once the model is loaded, else 503
  GET  /model/info                   config, checkpoint id, domain sizes

Requests are validated against a JSON schema (violations: 400); infeasible
constraints return 422 with a structured conflict report. Generation runs on
a bounded worker pool sized to the CPU count; requests beyond the queue
bound receive 429. Responses are deterministic: the trace id is a hash of
the request body and checkpoint id, so identical requests yield
byte-identical bodies.
"""

from __future__ import annotations

import asyncio
import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import jsonschema
import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse

from .net import ModelConfig, ModelParams, checkpoint_id, load_checkpoint
from .sampler import SamplerConfig, generate, generated_slot_indices
from .score_rep import (
    ATTRIBUTES,
    ConstraintSpec,
    Excerpt,
    InfeasibleConstraints,
    InfeasiblePrior,
    compile_constraints,
    constraint_schema,
)

log = logging.getLogger("smlm.service")

SESSION_TTL_SECONDS = 600


def request_schema() -> dict:
    constraints = constraint_schema()
    constraints.pop("$schema", None)
    constraints.pop("$id", None)
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "type": "object",
        "additionalProperties": False,
        "required": ["constraints"],
        "properties": {
            "constraints": constraints,
            "baseNotes": {
                "type": "array",
                "items": {
                    "type": "array",
                    "prefixItems": [
                        {"type": "integer", "minimum": 0, "maximum": 35},
                        {"type": "integer", "minimum": 0, "maximum": 63},
                        {"type": "integer", "minimum": 1, "maximum": 63},
                    ],
                    "minItems": 3,
                    "maxItems": 3,
                },
            },
            "temperature": {"type": "number", "exclusiveMinimum": 0},
            "topP": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "seed": {"type": "integer", "minimum": 0},
        },
    }


@dataclass
class Session:
    decisions: list[dict]
    notes: list[list[int]]
    generated_slots: list[int]
    created: float = field(default_factory=time.monotonic)
    done: bool = True


class ServiceState:
    def __init__(self, ckpt_path: str | None, max_workers: int | None, queue_bound: int):
        self.ckpt_path = ckpt_path
        self.params: ModelParams | None = None
        self.ckpt_id = ""
        self.max_workers = max_workers or os.cpu_count() or 1
        self.queue_bound = queue_bound
        self.pool = ThreadPoolExecutor(max_workers=self.max_workers)
        self.limit = self.max_workers + queue_bound
        self.inflight = 0
        self.gate = threading.Lock()
        self.sessions: dict[str, Session] = {}
        self.session_lock = threading.Lock()

    def load(self) -> None:
        if self.ckpt_path is None:
            raise RuntimeError("service was created without a checkpoint path")
        self.params = load_checkpoint(self.ckpt_path)
        self.ckpt_id = checkpoint_id(self.ckpt_path)

    def try_enter(self) -> bool:
        with self.gate:
            if self.inflight >= self.limit:
                return False
            self.inflight += 1
            return True

    def leave(self) -> None:
        with self.gate:
            self.inflight -= 1

    def put_session(self, sid: str, session: Session) -> None:
        with self.session_lock:
            now = time.monotonic()
            stale = [k for k, s in self.sessions.items() if now - s.created > SESSION_TTL_SECONDS]
            for k in stale:
                del self.sessions[k]
            self.sessions[sid] = session

    def get_session(self, sid: str) -> Session | None:
        with self.session_lock:
            s = self.sessions.get(sid)
            if s is not None and time.monotonic() - s.created > SESSION_TTL_SECONDS:
                del self.sessions[sid]
                return None
            return s


def _error(status: int, message: str, **extra) -> JSONResponse:
    return JSONResponse({"error": message, **extra}, status_code=status)


def _trace_id(body: dict, ckpt_id: str) -> str:
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256((canonical + ckpt_id).encode("utf-8")).hexdigest()[:16]


def _satisfies(grid, excerpt: Excerpt, spec: ConstraintSpec) -> bool:
    if not grid.contains_excerpt(excerpt):
        return False
    if spec.note_count is not None:
        lo, hi = spec.note_count
        if not lo <= len(excerpt.notes()) <= hi:
            return False
    return True


def _run_generation(state: ServiceState, body: dict) -> tuple[int, dict]:
    spec = ConstraintSpec.from_dict(body["constraints"])
    params = state.params
    cfg = params.cfg
    base = None
    if body.get("baseNotes"):
        try:
            base = Excerpt.from_notes(body["baseNotes"], slot_count=cfg.slot_count)
        except ValueError as e:
            return 400, {"error": f"invalid baseNotes: {e}"}
    try:
        grid = compile_constraints(spec, base_excerpt=base, slot_count=cfg.slot_count)
    except InfeasibleConstraints as e:
        return 422, {"error": "infeasible constraints", "conflict": e.report()}
    except (InfeasiblePrior, ValueError) as e:
        return 422, {"error": "infeasible constraints", "conflict": {"message": str(e)}}

    scfg = SamplerConfig(
        temperature=float(body.get("temperature", spec.temperature)),
        top_p=float(body.get("topP", spec.top_p)),
        seed=int(body.get("seed", 0)),
    )
    excerpt, trace = generate(grid, params, cfg, scfg)
    if not _satisfies(grid, excerpt, spec):
        log.error("ALERT: generation violated its constraints; request=%s", body)
        return 500, {"error": "internal constraint violation"}

    gen_slots = generated_slot_indices(grid)
    note_slots = excerpt.defined_slot_indices()
    notes = [[s.pitch, s.onset, s.duration] for s in (excerpt.slots[i] for i in note_slots)]
    sid = _trace_id(body, state.ckpt_id)
    decisions = [
        {"index": i, **d.to_dict()} for i, d in enumerate(trace.decisions)
    ]
    state.put_session(
        sid,
        Session(decisions=decisions, notes=notes, generated_slots=gen_slots),
    )
    response = {
        "notes": notes,
        "noteSlotIndices": note_slots,
        "generatedSlotIndices": gen_slots,
        "traceId": sid,
    }
    return 200, response


def create_app(
    ckpt_path: str | None = None,
    *,
    preload: bool = True,
    max_workers: int | None = None,
    queue_bound: int = 8,
) -> FastAPI:
    app = FastAPI(title="smlm generation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    state = ServiceState(ckpt_path, max_workers, queue_bound)
    app.state.service = state
    schema = request_schema()

    if preload and ckpt_path is not None:
        state.load()

    @app.get("/health")
    async def health():
        if state.params is None:
            return _error(503, "model is loading")
        return JSONResponse({"status": "ok"})

    @app.get("/model/info")
    async def model_info():
        if state.params is None:
            return _error(503, "model is loading")
        cfg = state.params.cfg
        return JSONResponse(
            {
                "config": {
                    "hiddenSize": cfg.hidden_size,
                    "numLayers": cfg.num_layers,
                    "numHeads": cfg.num_heads,
                    "ffnMultiplier": cfg.ffn_multiplier,
                    "slotCount": cfg.slot_count,
                },
                "checkpointId": state.ckpt_id,
                "slotCount": cfg.slot_count,
                "domains": {a.value: a.size for a in ATTRIBUTES},
            }
        )

    @app.post("/generate")
    async def handle_generate(request: Request):
        if state.params is None:
            return _error(503, "model is loading")
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body is not valid JSON")
        try:
            jsonschema.validate(body, schema)
        except jsonschema.ValidationError as e:
            return _error(400, f"schema violation: {e.message}")
        try:
            ConstraintSpec.from_dict(body["constraints"])
        except ValueError as e:
            return _error(400, f"invalid constraints: {e}")
        if not state.try_enter():
            return _error(429, "generation queue is full")
        try:
            loop = asyncio.get_running_loop()
            status, payload = await loop.run_in_executor(
                state.pool, _run_generation, state, body
            )
        finally:
            state.leave()
        return JSONResponse(payload, status_code=status)

    @app.get("/generate/{session_id}/events")
    async def stream_progress(session_id: str):
        session = state.get_session(session_id)
        if session is None:
            return _error(404, "unknown session")

        async def events():
            for decision in session.decisions:
                yield f"event: decision\ndata: {json.dumps(decision)}\n\n"
            done = {
                "notes": session.notes,
                "generatedSlotIndices": session.generated_slots,
            }
            yield f"event: done\ndata: {json.dumps(done)}\n\n"

        return StreamingResponse(events(), media_type="text/event-stream")

    return app
