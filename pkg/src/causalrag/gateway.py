"""Boundary clients for external models (embedder, image-variable extractor,
generator) and deterministic prompt assembly.

All network I/O in the package lives here.  Every client retries once with
backoff and then fails loudly; offline fixture clients serve the same schema
from files for tests and air-gapped runs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import httpx

from .errors import (
    BadStatus,
    ClientTimeout,
    MissingAnnotation,
    SchemaError,
    UnknownTemplate,
)
from .graph import CausalGraph, VariableKind


@dataclass(frozen=True)
class EvidenceBlock:
    report_id: str
    text: str
    score: float


@dataclass
class PromptPayload:
    image_ref: str
    question: Optional[str]
    evidence: list[EvidenceBlock]
    template_id: str

    def to_dict(self) -> dict:
        return {
            "image_ref": self.image_ref,
            "question": self.question,
            "evidence": [
                {"report_id": e.report_id, "text": e.text, "score": e.score}
                for e in self.evidence
            ],
            "template_id": self.template_id,
        }


_TEMPLATES = {
    "default": {
        "header": "You are assisting with a radiology case. Image: {image_ref}\n",
        "question": "Question: {question}\n",
        "evidence_header": "Retrieved evidence, ranked:\n",
        "evidence_item": "[{rank}] (score={score:.4f}) {text}\n",
        "no_evidence": "No retrieved evidence is available for this case.\n",
        "footer": "Answer using only findings supported by the image and the evidence above.\n",
    },
    "report": {
        "header": "Write a radiology report for image {image_ref}.\n",
        "question": "",
        "evidence_header": "Reference reports from similar, causally consistent cases:\n",
        "evidence_item": "[{rank}] (score={score:.4f}) {text}\n",
        "no_evidence": "No reference reports were retrieved.\n",
        "footer": "",
    },
}


def registered_templates() -> list[str]:
    return sorted(_TEMPLATES)


def assemble_prompt(
    image_ref: str,
    question: Optional[str],
    candidates: Sequence,
    annotations: dict,
    template_id: str = "default",
) -> tuple[PromptPayload, str]:
    """Render the generation prompt; evidence blocks appear in rank order.

    `candidates` is the ranked RetrievalCandidate list; `annotations` maps
    report_id to its ReportAnnotation (source of the evidence text).
    """
    template = _TEMPLATES.get(template_id)
    if template is None:
        raise UnknownTemplate(f"template {template_id!r} is not registered")
    evidence = []
    for cand in candidates:
        ann = annotations.get(cand.report_id)
        if ann is None:
            raise MissingAnnotation(f"no stored annotation for report {cand.report_id!r}")
        evidence.append(EvidenceBlock(report_id=cand.report_id, text=ann.text, score=cand.score))
    payload = PromptPayload(
        image_ref=image_ref, question=question, evidence=evidence, template_id=template_id
    )
    parts = [template["header"].format(image_ref=image_ref)]
    if question and template["question"]:
        parts.append(template["question"].format(question=question))
    if evidence:
        parts.append(template["evidence_header"])
        for rank, block in enumerate(evidence, start=1):
            parts.append(
                template["evidence_item"].format(rank=rank, score=block.score, text=block.text)
            )
    else:
        parts.append(template["no_evidence"])
    parts.append(template["footer"])
    return payload, "".join(parts)


# -- clients -----------------------------------------------------------


class EmbedderClient(Protocol):
    def embed(self, modality: str, content_ref: str) -> list[float]: ...


class ExtractorClient(Protocol):
    def extract_variables(self, image_ref: str) -> dict[str, float]: ...


class GeneratorClient(Protocol):
    def generate(self, payload: PromptPayload, rendered: str) -> str: ...


@dataclass
class HttpClientConfig:
    base_url: str
    timeout_s: float = 10.0
    retry_backoff_s: float = 0.5
    bearer_token: Optional[str] = None


class _HttpBase:
    def __init__(self, config: HttpClientConfig, transport: Optional[httpx.BaseTransport] = None):
        self.config = config
        headers = {}
        if config.bearer_token:
            headers["Authorization"] = f"Bearer {config.bearer_token}"
        self._client = httpx.Client(
            base_url=config.base_url,
            timeout=config.timeout_s,
            headers=headers,
            transport=transport,
        )
        self._request_counter = 0

    def _post(self, path: str, body: dict) -> dict:
        self._request_counter += 1
        request_id = f"{path.strip('/')}-{self._request_counter}"
        last_exc: Exception | None = None
        for attempt in range(2):
            try:
                resp = self._client.post(path, json=body)
            except httpx.TimeoutException as exc:
                last_exc = ClientTimeout(f"request {request_id} timed out", request_id=request_id)
            except httpx.HTTPError as exc:
                last_exc = BadStatus(f"request {request_id} failed: {exc}", request_id=request_id)
            else:
                if resp.status_code != 200:
                    last_exc = BadStatus(
                        f"request {request_id} got status {resp.status_code}",
                        request_id=request_id,
                    )
                else:
                    try:
                        return resp.json()
                    except ValueError:
                        raise SchemaError(
                            f"request {request_id} returned non-JSON body", request_id=request_id
                        )
            if attempt == 0:
                time.sleep(self.config.retry_backoff_s)
        raise last_exc


class HttpEmbedderClient(_HttpBase):
    def embed(self, modality: str, content_ref: str) -> list[float]:
        out = self._post("/embed", {"inputs": {"modality": modality, "content_ref": content_ref}})
        vec = out.get("outputs")
        if not isinstance(vec, list) or not vec or not all(
            isinstance(x, (int, float)) for x in vec
        ):
            raise SchemaError(f"embedder returned malformed vector for {content_ref!r}")
        return [float(x) for x in vec]


class HttpExtractorClient(_HttpBase):
    def __init__(
        self,
        config: HttpClientConfig,
        graph: CausalGraph,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        super().__init__(config, transport)
        self._graph = graph

    def extract_variables(self, image_ref: str) -> dict[str, float]:
        out = self._post("/extract", {"inputs": {"image_ref": image_ref}})
        raw = out.get("outputs")
        if not isinstance(raw, dict):
            raise SchemaError(f"extractor returned malformed payload for {image_ref!r}")
        result = {}
        for var_id, conf in raw.items():
            if not self._graph.has_variable(var_id):
                raise SchemaError(f"extractor returned unknown variable {var_id!r}")
            if self._graph.get_variable(var_id).kind != VariableKind.IMAGE_FEATURE:
                raise SchemaError(f"extractor returned non-image variable {var_id!r}")
            result[var_id] = float(conf)
        return result


class HttpGeneratorClient(_HttpBase):
    def generate(self, payload: PromptPayload, rendered: str) -> str:
        out = self._post("/generate", {"inputs": {"payload": payload.to_dict(), "prompt": rendered}})
        text = out.get("outputs")
        if not isinstance(text, str) or not text:
            raise SchemaError("generator returned empty or non-string output")
        return text


# -- offline fixtures --------------------------------------------------


class OfflineFixtureClient:
    """Serves embed/extract/generate responses from a fixture directory.

    Layout: embeddings.json {"<modality>/<ref>": [..]},
    extractions.json {"<image_ref>": {"var": conf}},
    generations.json {"<image_ref>": "text"} (missing key echoes the prompt).
    """

    def __init__(self, fixture_dir: Path, graph: Optional[CausalGraph] = None):
        self.dir = Path(fixture_dir)
        self._graph = graph
        self._embeddings = self._load("embeddings.json")
        self._extractions = self._load("extractions.json")
        self._generations = self._load("generations.json")

    def _load(self, name: str) -> dict:
        path = self.dir / name
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
        return {}

    def embed(self, modality: str, content_ref: str) -> list[float]:
        key = f"{modality}/{content_ref}"
        if key not in self._embeddings:
            raise SchemaError(f"no fixture embedding for {key!r}")
        return [float(x) for x in self._embeddings[key]]

    def extract_variables(self, image_ref: str) -> dict[str, float]:
        raw = self._extractions.get(image_ref, {})
        if self._graph is not None:
            for var_id in raw:
                if not self._graph.has_variable(var_id):
                    raise SchemaError(f"fixture extraction names unknown variable {var_id!r}")
        return {k: float(v) for k, v in raw.items()}

    def generate(self, payload: PromptPayload, rendered: str) -> str:
        return self._generations.get(payload.image_ref, rendered)
