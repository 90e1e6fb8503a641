"""Exact top-K embedding retrieval, causal log-likelihood scoring, and the
blended re-ranking pipeline."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .corpus import CorpusStore, ReportAnnotation
from .errors import (
    DimensionMismatch,
    EmptyStore,
    InvalidAlpha,
    MismatchedPair,
    MissingCpt,
    NoImageVars,
    UnknownVariable,
    ZeroVector,
)
from .graph import CausalGraph, VariableKind


@dataclass(frozen=True)
class EmbeddingRecord:
    id: str
    modality: str  # "image" | "report"
    vector: tuple[float, ...]


@dataclass
class RetrievalCandidate:
    report_id: str
    sim: float
    causal_loglik: float
    score: float
    consistent: bool
    used_floor: bool

    def to_dict(self) -> dict:
        return {
            "report_id": self.report_id,
            "sim": self.sim,
            "causal_loglik": self.causal_loglik,
            "score": self.score,
            "consistent": self.consistent,
            "used_floor": self.used_floor,
        }


@dataclass
class RetrievalRequest:
    image: Union[str, Sequence[float]]
    k: int = 10
    pool_multiplier: int = 4
    alpha: float = 0.5
    theta: Optional[float] = None
    discard_inconsistent: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"K must be >= 1, got {self.k}")
        if self.pool_multiplier < 1:
            raise ValueError(f"pool_multiplier must be >= 1, got {self.pool_multiplier}")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidAlpha(f"alpha must be in [0,1], got {self.alpha}")


def cosine_sim(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity undefined for a zero vector")
    return float(np.clip(float(a @ b) / (na * nb), -1.0, 1.0))


def blend_score(sim: float, causal_loglik: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise InvalidAlpha(f"alpha must be in [0,1], got {alpha}")
    return (1.0 - alpha) * causal_loglik + alpha * sim


class EmbeddingStore:
    """Contiguous brute-force vector store; exact search only."""

    def __init__(self):
        self._ids: dict[str, list[str]] = {"image": [], "report": []}
        self._rows: dict[str, list[np.ndarray]] = {"image": [], "report": []}
        self._matrix: dict[str, Optional[np.ndarray]] = {"image": None, "report": None}
        self.dim: Optional[int] = None

    def add(self, record: EmbeddingRecord) -> None:
        vec = np.asarray(record.vector, dtype=np.float64)
        if vec.ndim != 1 or vec.size == 0:
            raise DimensionMismatch(f"vector for {record.id!r} must be 1-D and non-empty")
        if self.dim is None:
            self.dim = vec.size
        elif vec.size != self.dim:
            raise DimensionMismatch(
                f"vector for {record.id!r} has dim {vec.size}, store dim {self.dim}"
            )
        modality = record.modality.lower()
        if modality not in self._ids:
            raise ValueError(f"modality must be image or report, got {record.modality!r}")
        self._ids[modality].append(record.id)
        self._rows[modality].append(vec)
        self._matrix[modality] = None

    def ingest_jsonl(self, lines: Iterable[str]) -> int:
        n = 0
        for line in lines:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            self.add(EmbeddingRecord(id=d["id"], modality=d["modality"], vector=tuple(d["vector"])))
            n += 1
        return n

    def get(self, item_id: str, modality: str) -> Optional[np.ndarray]:
        modality = modality.lower()
        try:
            idx = self._ids[modality].index(item_id)
        except ValueError:
            return None
        return self._rows[modality][idx]

    def count(self, modality: str) -> int:
        return len(self._ids[modality.lower()])

    def _dense(self, modality: str) -> tuple[list[str], np.ndarray]:
        if self._matrix[modality] is None:
            # sort by id so results are invariant under insertion order
            order = sorted(range(len(self._ids[modality])), key=lambda i: self._ids[modality][i])
            ids = [self._ids[modality][i] for i in order]
            rows = [self._rows[modality][i] for i in order]
            self._ids[modality] = ids
            self._rows[modality] = rows
            self._matrix[modality] = (
                np.stack(rows) if rows else np.zeros((0, self.dim or 0))
            )
        return self._ids[modality], self._matrix[modality]

    def knn(self, query: Sequence[float], k: int, modality: str = "report") -> list[tuple[str, float]]:
        """Exact top-k by cosine similarity, descending; ties by ascending id."""
        modality = modality.lower()
        ids, matrix = self._dense(modality)
        if matrix.shape[0] == 0:
            raise EmptyStore(f"no {modality} embeddings loaded")
        q = np.asarray(query, dtype=np.float64)
        if q.size != matrix.shape[1]:
            raise DimensionMismatch(f"query dim {q.size}, store dim {matrix.shape[1]}")
        qn = float(np.linalg.norm(q))
        if qn == 0.0:
            raise ZeroVector("query vector is zero")
        norms = np.linalg.norm(matrix, axis=1)
        norms[norms == 0.0] = 1.0
        sims = np.clip((matrix @ q) / (norms * qn), -1.0, 1.0)
        # ids are pre-sorted ascending, so a stable sort on -sim breaks ties by id
        order = np.argsort(-sims, kind="stable")[:k]
        return [(ids[i], float(sims[i])) for i in order]


@dataclass
class CausalLikelihood:
    value: float
    consistent: bool
    used_floor: bool


def causal_log_likelihood(
    image_vars: Iterable[str],
    report: ReportAnnotation,
    cpts: dict,
    graph: CausalGraph,
    eps_floor: float = 1e-6,
) -> CausalLikelihood:
    """Log-likelihood of the report's findings/diagnoses under the Accepted
    graph factorization, given the image's observed features.

    A mentioned finding or diagnosis with no Accepted path from any image
    variable contributes log(eps_floor) and marks the result inconsistent.
    """
    if not 0.0 < eps_floor < 1.0:
        raise ValueError(f"eps_floor must be in (0,1), got {eps_floor}")
    image_vars = set(image_vars)
    for v in image_vars:
        graph.get_variable(v)
    mentioned = sorted(report.mentioned)
    targets = [
        v
        for v in mentioned
        if graph.get_variable(v).kind in (VariableKind.FINDING, VariableKind.DIAGNOSIS)
    ]
    if not targets:
        return CausalLikelihood(value=0.0, consistent=True, used_floor=False)

    supported = graph.reachable_from(image_vars) if image_vars else set()
    evidence = image_vars | set(mentioned)
    value = 0.0
    consistent = True
    used_floor = False
    for var_id in targets:
        if var_id not in supported:
            value += math.log(eps_floor)
            consistent = False
            used_floor = True
            continue
        cpt = cpts.get(var_id)
        if cpt is None:
            raise MissingCpt(f"no CPT for supported variable {var_id!r}")
        bits = tuple(1 if p in evidence else 0 for p in cpt.parents)
        value += math.log(cpt.p(1, bits))
    return CausalLikelihood(value=value, consistent=consistent, used_floor=used_floor)


class RetrievalEngine:
    """Wires the embedding store, corpus, graph, and CPT snapshot into the
    rerank-and-filter pipeline."""

    def __init__(
        self,
        store: EmbeddingStore,
        corpus: CorpusStore,
        graph: CausalGraph,
        cpts: dict,
        eps_floor: float = 1e-6,
        extractor: Optional[Callable[[str], set[str]]] = None,
    ):
        self.store = store
        self.corpus = corpus
        self.graph = graph
        self.cpts = cpts
        self.eps_floor = eps_floor
        self.extractor = extractor

    def _resolve_image(self, request: RetrievalRequest) -> tuple[np.ndarray, set[str]]:
        if isinstance(request.image, str):
            vec = self.store.get(request.image, "image")
            if vec is None:
                raise UnknownVariable(f"no image embedding for {request.image!r}")
            image_vars: Optional[set[str]] = None
            ann = self.corpus.images.get(request.image)
            if ann is not None:
                image_vars = set(ann.present)
            elif self.extractor is not None:
                image_vars = set(self.extractor(request.image))
        else:
            vec = np.asarray(request.image, dtype=np.float64)
            image_vars = None
        if image_vars is None:
            if request.alpha < 1.0:
                raise NoImageVars("image variables unresolvable and alpha < 1")
            image_vars = set()
        return vec, image_vars

    def retrieve(self, request: RetrievalRequest) -> list[RetrievalCandidate]:
        vec, image_vars = self._resolve_image(request)
        pool = self.store.knn(vec, request.k * request.pool_multiplier, modality="report")
        candidates = []
        for report_id, sim in pool:
            report = self.corpus.reports.get(report_id)
            if report is None:
                report = ReportAnnotation(report_id=report_id, text="", mentioned=frozenset())
            lik = causal_log_likelihood(
                image_vars, report, self.cpts, self.graph, self.eps_floor
            )
            if request.discard_inconsistent and not lik.consistent:
                continue
            score = blend_score(sim, lik.value, request.alpha)
            candidates.append(
                RetrievalCandidate(
                    report_id=report_id,
                    sim=sim,
                    causal_loglik=lik.value,
                    score=score,
                    consistent=lik.consistent,
                    used_floor=lik.used_floor,
                )
            )
        candidates.sort(key=lambda c: (-c.score, c.report_id))
        if request.theta is not None:
            candidates = [c for c in candidates if c.score >= request.theta]
        return candidates[: request.k]


def export_preference_pairs(records: Iterable[dict]) -> list[str]:
    """Serialize (prompt, chosen, rejected) triples as schema-stable JSONL."""
    lines = []
    for i, record in enumerate(records):
        for key in ("prompt", "chosen", "rejected"):
            if not record.get(key):
                raise MismatchedPair(f"record {i} missing non-empty {key!r}")
        lines.append(
            json.dumps(
                {
                    "prompt": record["prompt"],
                    "chosen": record["chosen"],
                    "rejected": record["rejected"],
                },
                sort_keys=True,
            )
        )
    return lines


def parse_preference_pairs(lines: Iterable[str]) -> list[dict]:
    out = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        d = json.loads(line)
        out.append({"prompt": d["prompt"], "chosen": d["chosen"], "rejected": d["rejected"]})
    return out
