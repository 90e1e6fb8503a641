"""HTTP service for ingestion, graph curation, retrieval, and evaluation.

State is event-sourced: every accepted mutation appends one JSONL event;
startup replays the latest snapshot plus the event tail.  Graph mutations
use optimistic concurrency via expected_version.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, Header, HTTPException, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .config import RunConfig
from .corpus import CorpusStore
from .discovery import DiscoveryEngine, ReviewDecision
from .errors import CausalRagError, CorruptState, StaleVersion
from .graph import CausalGraph, Variable, VariableKind
from .metrics import (
    GenRecord,
    VqaRecord,
    evaluate_generation,
    evaluate_vqa,
)
from .retrieval import EmbeddingRecord, EmbeddingStore, RetrievalEngine, RetrievalRequest

SNAPSHOT_EVERY = 200


class ServiceState:
    """Owns all mutable state behind a single lock."""

    def __init__(self, data_dir: Path, cfg: Optional[RunConfig] = None):
        self.cfg = cfg or RunConfig(data_dir=Path(data_dir))
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.events_path = self.data_dir / "events.jsonl"
        self.snapshot_path = self.data_dir / "snapshot.json"
        self.lock = threading.RLock()
        self.graph = CausalGraph()
        self.corpus = CorpusStore(self.graph)
        self.store = EmbeddingStore()
        self.discovery = DiscoveryEngine(self.graph, self.corpus)
        self._events_since_snapshot = 0
        self._replayed_events = 0
        self._cpt_cache: Optional[tuple[tuple[int, int], dict]] = None
        self._replay()

    # -- persistence ---------------------------------------------------

    def _replay(self) -> None:
        start_offset = 0
        if self.snapshot_path.exists():
            try:
                snap = json.loads(self.snapshot_path.read_text(encoding="utf-8"))
                self._restore_snapshot(snap)
                start_offset = snap["event_offset"]
            except (KeyError, ValueError) as exc:
                raise CorruptState(f"snapshot unreadable: {exc}") from exc
        if self.events_path.exists():
            with self.events_path.open(encoding="utf-8") as fh:
                for i, line in enumerate(fh):
                    if i < start_offset:
                        continue
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        event = json.loads(line)
                        self._apply(event)
                    except CausalRagError:
                        # events were validated before append; a failure here
                        # means the log no longer matches the snapshot
                        raise CorruptState(f"event {i} failed to re-apply")
                    except ValueError as exc:
                        raise CorruptState(f"event {i} is not valid JSON: {exc}")
                    self._replayed_events = i + 1

    def _restore_snapshot(self, snap: dict) -> None:
        self.graph = CausalGraph.from_dict(snap["graph"])
        self.corpus = CorpusStore(self.graph)
        self.corpus.ingest_annotations(snap["annotations"])
        self.store = EmbeddingStore()
        for record in snap["embeddings"]:
            self.store.add(
                EmbeddingRecord(
                    id=record["id"], modality=record["modality"], vector=tuple(record["vector"])
                )
            )
        self.discovery = DiscoveryEngine(self.graph, self.corpus)
        self.graph.version = snap["graph"]["version"]

    def _write_snapshot(self) -> None:
        embeddings = []
        for modality in ("image", "report"):
            ids, matrix = self.store._dense(modality)
            for i, item_id in enumerate(ids):
                embeddings.append(
                    {"id": item_id, "modality": modality, "vector": list(map(float, matrix[i]))}
                )
        snap = {
            "graph": self.graph.to_dict(),
            "annotations": [img.to_dict() for img in self.corpus.images.values()]
            + [rep.to_dict() for rep in self.corpus.reports.values()],
            "embeddings": embeddings,
            "event_offset": self._replayed_events,
        }
        tmp = self.snapshot_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(snap), encoding="utf-8")
        tmp.replace(self.snapshot_path)
        self._events_since_snapshot = 0

    def record_event(self, event: dict) -> None:
        with self.events_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
        self._replayed_events += 1
        self._events_since_snapshot += 1
        if self._events_since_snapshot >= SNAPSHOT_EVERY:
            self._write_snapshot()

    # -- event application (also used during replay) -------------------

    def _apply(self, event: dict) -> dict:
        kind = event["type"]
        payload = event["payload"]
        if kind == "variables":
            for v in payload:
                self.graph.add_variable(
                    Variable(
                        id=v["id"],
                        kind=VariableKind(v["kind"]),
                        label=v.get("label", ""),
                        aliases=frozenset(v.get("aliases", [])),
                    )
                )
            return {"added": len(payload)}
        if kind == "annotations":
            return self.corpus.ingest_annotations(payload).to_dict()
        if kind == "embeddings":
            for record in payload:
                self.store.add(
                    EmbeddingRecord(
                        id=record["id"],
                        modality=record["modality"],
                        vector=tuple(record["vector"]),
                    )
                )
            return {"added": len(payload)}
        if kind == "proposals":
            lines = [json.dumps(p) for p in payload["proposals"]]
            return self.discovery.ingest_proposals_jsonl(
                lines, payload.get("confidence_floor", 0.0)
            )
        if kind == "decision":
            decision = ReviewDecision(
                src=payload["src"],
                dst=payload["dst"],
                verdict=payload["verdict"],
                reviewer=payload.get("reviewer", ""),
                note=payload.get("note", ""),
                decided_at=payload.get("decided_at", ""),
            )
            version = self.discovery.record_decision(decision)
            return {"graph_version": version}
        if kind == "prune":
            pruned = self.discovery.prune_spurious(payload["significance"])
            return {"pruned": [e.to_dict() for e in pruned], "graph_version": self.graph.version}
        if kind == "refine":
            removed = self.discovery.refine_by_ratio(payload["tau"])
            return {"removed": [e.to_dict() for e in removed], "graph_version": self.graph.version}
        raise CorruptState(f"unknown event type {kind!r}")

    def mutate(self, event: dict, expected_version: Optional[int]) -> dict:
        with self.lock:
            if expected_version is not None and expected_version != self.graph.version:
                raise StaleVersion(
                    f"expected version {expected_version}, graph at {self.graph.version}",
                    graph_version=self.graph.version,
                )
            result = self._apply(event)
            self.record_event(event)
            self._cpt_cache = None
            return result

    def retrieval_engine(self) -> RetrievalEngine:
        key = (self.graph.version, len(self.corpus.reports))
        if self._cpt_cache is None or self._cpt_cache[0] != key:
            self._cpt_cache = (key, self.corpus.estimate_all_cpts(self.cfg.smoothing))
        return RetrievalEngine(
            self.store, self.corpus, self.graph, self._cpt_cache[1], eps_floor=self.cfg.eps_floor
        )


# -- request/response models ------------------------------------------


class VariablesBody(BaseModel):
    variables: list[dict]
    expected_version: Optional[int] = None


class AnnotationsBody(BaseModel):
    records: list[dict]
    expected_version: Optional[int] = None


class EmbeddingsBody(BaseModel):
    records: list[dict]
    expected_version: Optional[int] = None


class ProposalsBody(BaseModel):
    proposals: list[dict]
    confidence_floor: float = 0.0
    expected_version: Optional[int] = None


class DecisionBody(BaseModel):
    src: str
    dst: str
    verdict: str
    reviewer: str = ""
    note: str = ""
    decided_at: str = ""
    expected_version: int


class PruneBody(BaseModel):
    significance: float
    expected_version: int


class RefineBody(BaseModel):
    tau: float
    expected_version: int


class RetrieveBody(BaseModel):
    image: object
    k: int = Field(default=10, ge=1)
    pool_multiplier: int = Field(default=4, ge=1)
    alpha: float = Field(default=0.5, ge=0.0, le=1.0)
    theta: Optional[float] = None
    discard_inconsistent: bool = False


class EvaluateBody(BaseModel):
    vqa: Optional[list[dict]] = None
    generation: Optional[list[dict]] = None


_ERROR_STATUS = {
    "StaleVersion": 409,
    "NotPending": 409,
    "CycleError": 409,
    "UnknownVariable": 404,
    "UnknownId": 404,
    "EmptyStore": 404,
    "NoImageVars": 422,
    "InvalidAlpha": 422,
    "InvalidRatio": 422,
    "InvalidSmoothing": 422,
    "EmptyInput": 422,
    "SingleClass": 422,
    "DimensionMismatch": 422,
    "ZeroVector": 422,
    "MalformedRecord": 422,
    "DuplicateId": 409,
}


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="causal retrieval service")
    app.state.service = state

    def check_token(authorization: Optional[str] = Header(default=None)):
        if state.cfg.token:
            if authorization != f"Bearer {state.cfg.token}":
                raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    auth = Depends(check_token)

    @app.exception_handler(CausalRagError)
    async def handle_domain_error(request: Request, exc: CausalRagError):
        body = {"code": exc.code, "message": exc.message}
        if "graph_version" in exc.context:
            body["graph_version"] = exc.context["graph_version"]
        return JSONResponse(status_code=_ERROR_STATUS.get(exc.code, 400), content=body)

    @app.get("/healthz")
    def healthz():
        with state.lock:
            return {
                "status": "ok",
                "graph_version": state.graph.version,
                "case_count": state.corpus.case_count,
                "image_embeddings": state.store.count("image"),
                "report_embeddings": state.store.count("report"),
            }

    @app.post("/variables", dependencies=[auth])
    def post_variables(body: VariablesBody):
        return state.mutate(
            {"type": "variables", "payload": body.variables}, body.expected_version
        )

    @app.post("/annotations", dependencies=[auth])
    def post_annotations(body: AnnotationsBody):
        return state.mutate(
            {"type": "annotations", "payload": body.records}, body.expected_version
        )

    @app.post("/embeddings", dependencies=[auth])
    def post_embeddings(body: EmbeddingsBody):
        return state.mutate(
            {"type": "embeddings", "payload": body.records}, body.expected_version
        )

    @app.post("/proposals", dependencies=[auth])
    def post_proposals(body: ProposalsBody):
        result = state.mutate(
            {
                "type": "proposals",
                "payload": {
                    "proposals": body.proposals,
                    "confidence_floor": body.confidence_floor,
                },
            },
            body.expected_version,
        )
        result["graph_version"] = state.graph.version
        return result

    @app.get("/graph", dependencies=[auth])
    def get_graph():
        with state.lock:
            doc = state.graph.to_dict()
            doc["audit_log"] = [d.to_dict() for d in state.discovery.audit_log]
            return doc

    @app.get("/graph/pending", dependencies=[auth])
    def get_pending():
        with state.lock:
            entries = [entry.to_dict() for entry in state.discovery.list_pending()]
            return {"entries": entries, "graph_version": state.graph.version}

    @app.post("/graph/decision", dependencies=[auth])
    def post_decision(body: DecisionBody):
        result = state.mutate(
            {
                "type": "decision",
                "payload": {
                    "src": body.src,
                    "dst": body.dst,
                    "verdict": body.verdict,
                    "reviewer": body.reviewer,
                    "note": body.note,
                    "decided_at": body.decided_at,
                },
            },
            body.expected_version,
        )
        return result

    @app.post("/graph/prune", dependencies=[auth])
    def post_prune(body: PruneBody):
        return state.mutate(
            {"type": "prune", "payload": {"significance": body.significance}},
            body.expected_version,
        )

    @app.post("/graph/refine", dependencies=[auth])
    def post_refine(body: RefineBody):
        return state.mutate(
            {"type": "refine", "payload": {"tau": body.tau}}, body.expected_version
        )

    @app.post("/retrieve", dependencies=[auth])
    def post_retrieve(body: RetrieveBody):
        with state.lock:
            engine = state.retrieval_engine()
            request = RetrievalRequest(
                image=body.image if isinstance(body.image, str) else list(body.image),
                k=body.k,
                pool_multiplier=body.pool_multiplier,
                alpha=body.alpha,
                theta=body.theta,
                discard_inconsistent=body.discard_inconsistent,
            )
            candidates = engine.retrieve(request)
            return {
                "candidates": [c.to_dict() for c in candidates],
                "graph_version": state.graph.version,
            }

    @app.post("/evaluate", dependencies=[auth])
    def post_evaluate(body: EvaluateBody):
        out = {}
        if body.vqa:
            records = [
                VqaRecord(
                    id=r.get("id", str(i)),
                    gold=int(r["gold"]),
                    predicted=int(r["predicted"]),
                    confidence=float(r.get("confidence", r.get("predicted", 0))),
                )
                for i, r in enumerate(body.vqa)
            ]
            out.update(evaluate_vqa(records))
        if body.generation:
            records = [
                GenRecord(
                    id=r.get("id", str(i)),
                    candidate=tuple(r["candidate"]),
                    references=tuple(tuple(ref) for ref in r["references"]),
                )
                for i, r in enumerate(body.generation)
            ]
            out.update(evaluate_generation(records))
        return {k: (None if v != v else round(v, 4)) for k, v in sorted(out.items())}

    return app


def serve(cfg: RunConfig) -> None:
    import uvicorn

    state = ServiceState(cfg.data_dir, cfg)
    app = create_app(state)
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="warning")
