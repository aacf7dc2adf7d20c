import json
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from smlm.net import ModelConfig, init_params, save_checkpoint
from smlm.service import create_app


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("svc") / "desk.smlm"
    save_checkpoint(str(path), init_params(ModelConfig.desk(), 0))
    return str(path)


@pytest.fixture(scope="module")
def client(ckpt):
    app = create_app(ckpt)
    with TestClient(app) as c:
        yield c


def parse_sse(text):
    events = []
    for block in text.strip().split("\n\n"):
        lines = block.split("\n")
        kind = lines[0].removeprefix("event: ")
        data = json.loads(lines[1].removeprefix("data: "))
        events.append((kind, data))
    return events


def test_health_before_model_load(ckpt):
    app = create_app(ckpt, preload=False)
    with TestClient(app) as c:
        assert c.get("/health").status_code == 503
        assert c.post("/generate", json={"constraints": {}}).status_code == 503
        app.state.service.load()
        assert c.get("/health").status_code == 200


def test_health_ok(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok"}


def test_model_info(client):
    r = client.get("/model/info")
    assert r.status_code == 200
    doc = r.json()
    assert doc["slotCount"] == 64
    assert doc["domains"] == {"pitch": 37, "onset": 65, "duration": 64}
    assert doc["config"]["hiddenSize"] == 64
    assert len(doc["checkpointId"]) == 16


def test_unknown_route_404(client):
    assert client.get("/nope").status_code == 404


def test_generate_deterministic_bytes(client):
    body = {
        "constraints": {"onsetGrid": {"period": 8, "phase": 0},
                        "noteCount": {"min": 1, "max": 10}},
        "seed": 5,
    }
    a = client.post("/generate", json=body)
    b = client.post("/generate", json=body)
    assert a.status_code == 200
    assert a.content == b.content
    doc = a.json()
    assert doc["notes"], "noteCount min forces at least one note"
    for p, o, d in doc["notes"]:
        assert o % 8 == 0
    assert len(doc["noteSlotIndices"]) == len(doc["notes"])


def test_generate_infeasible_names_families(client):
    body = {"constraints": {"allowedPitches": [], "noteCount": {"min": 1, "max": 8}}}
    r = client.post("/generate", json=body)
    assert r.status_code == 422
    conflict = r.json()["conflict"]
    assert conflict["slot"] == 0
    assert "allowedPitches" in conflict["families"]
    assert "noteCount" in conflict["families"]


def test_generate_schema_violation_400(client):
    assert client.post("/generate", json={"constraints": {"bogus": 1}}).status_code == 400
    assert client.post("/generate", json={"seed": 1}).status_code == 400
    assert client.post(
        "/generate", json={"constraints": {}, "seed": -1}
    ).status_code == 400
    r = client.post(
        "/generate",
        content=b"{not json",
        headers={"content-type": "application/json"},
    )
    assert r.status_code == 400


def test_generate_with_base_notes_imputation(client):
    base = [[2, 0, 4], [4, 8, 4], [30, 16, 8], [2, 32, 4], [4, 40, 4]]
    body = {
        "constraints": {
            "imputationRegions": [
                {"pitchLo": 20, "pitchHi": 35, "stepLo": 0, "stepHi": 63,
                 "mode": "generate"}
            ],
            "noteCount": {"min": 4, "max": 20},
        },
        "baseNotes": base,
        "seed": 9,
    }
    r = client.post("/generate", json=body)
    assert r.status_code == 200
    doc = r.json()
    kept = [n for i, n in zip(doc["noteSlotIndices"], doc["notes"])
            if i not in doc["generatedSlotIndices"]]
    gen = [n for i, n in zip(doc["noteSlotIndices"], doc["notes"])
           if i in doc["generatedSlotIndices"]]
    # the low notes outside the region are conditioning and survive verbatim
    assert sorted(map(tuple, kept)) == sorted(
        (p, o, d) for p, o, d in base if not 20 <= p <= 35
    )
    for p, o, d in gen:
        assert 20 <= p <= 35


def test_events_stream_order_and_replay(client):
    body = {
        "constraints": {"noteCount": {"min": 1, "max": 6}},
        "seed": 21,
    }
    r = client.post("/generate", json=body)
    assert r.status_code == 200
    doc = r.json()
    s = client.get(f"/generate/{doc['traceId']}/events")
    assert s.status_code == 200
    assert s.headers["content-type"].startswith("text/event-stream")
    events = parse_sse(s.text)
    kinds = [k for k, _ in events]
    assert kinds[-1] == "done"
    decisions = [d for k, d in events if k == "decision"]
    assert [d["index"] for d in decisions] == list(range(len(decisions)))
    done = events[-1][1]
    assert done["notes"] == doc["notes"]
    assert done["generatedSlotIndices"] == doc["generatedSlotIndices"]

    # replaying the streamed decisions reproduces the response notes
    from smlm.sampler import GenerationTrace, TraceDecision, replay
    from smlm.score_rep import Attribute, ConstraintSpec, compile_constraints

    spec = ConstraintSpec.from_dict(body["constraints"])
    grid = compile_constraints(spec)
    trace = GenerationTrace(
        [
            TraceDecision(
                d["slot"],
                Attribute(d["attribute"]),
                Attribute(d["attribute"]).value_to_index(d["value"]),
                d["allowed"],
            )
            for d in decisions
        ]
    )
    excerpt = replay(grid, trace)
    assert [list(n) for n in excerpt.notes()] == doc["notes"]


def test_events_unknown_session_404(client):
    assert client.get("/generate/deadbeef/events").status_code == 404


def test_queue_bound_returns_429(ckpt):
    app = create_app(ckpt, max_workers=1, queue_bound=0)
    with TestClient(app) as c:
        results = []

        def fire(seed):
            body = {"constraints": {}, "seed": seed}
            results.append(c.post("/generate", json=body).status_code)

        threads = [threading.Thread(target=fire, args=(s,)) for s in (1, 2, 3)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results.count(429) >= 1
        assert results.count(200) >= 1


def test_parallel_matches_sequential(client):
    bodies = [
        {"constraints": {"noteCount": {"min": 0, "max": 8}}, "seed": s}
        for s in range(4)
    ]
    sequential = [client.post("/generate", json=b).content for b in bodies]
    parallel: dict[int, bytes] = {}

    def fire(i):
        parallel[i] = client.post("/generate", json=bodies[i]).content

    threads = [threading.Thread(target=fire, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert [parallel[i] for i in range(4)] == sequential
