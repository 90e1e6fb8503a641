"""Annotation store, co-occurrence counting, and smoothed CPT estimation.

A "case" is the union of one report annotation and its paired image
annotation (matched on image_id).  Reports without an image form cases with
all ImageFeature variables absent.  Cases are kept as an explicit
case-by-variable bit table so arbitrary conditional queries stay exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Optional

import numpy as np

from .errors import InvalidSmoothing, MalformedRecord, UnknownVariable
from .graph import CausalGraph, VariableKind


@dataclass(frozen=True)
class ReportAnnotation:
    report_id: str
    text: str
    mentioned: frozenset[str]
    image_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "report_id": self.report_id,
            "image_id": self.image_id,
            "text": self.text,
            "mentioned": sorted(self.mentioned),
        }


@dataclass(frozen=True)
class ImageAnnotation:
    image_id: str
    present: frozenset[str]

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "present": sorted(self.present)}


@dataclass
class IngestionReport:
    accepted: int = 0
    rejected: int = 0
    reasons: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "rejected": self.rejected, "reasons": self.reasons}


@dataclass
class Cpt:
    """p(child = 1 | parent assignment) with add-lambda smoothing.

    table maps a tuple of parent bits (ordered as ``parents``) to p(child=1).
    """

    child: str
    parents: tuple[str, ...]
    table: dict[tuple[int, ...], float]
    smoothing: float

    def p(self, child_value: int, assignment: tuple[int, ...]) -> float:
        p1 = self.table[assignment]
        return p1 if child_value == 1 else 1.0 - p1

    def to_dict(self) -> dict:
        return {
            "child": self.child,
            "parents": list(self.parents),
            "table": {"".join(map(str, k)): v for k, v in sorted(self.table.items())},
            "smoothing": self.smoothing,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Cpt":
        return cls(
            child=d["child"],
            parents=tuple(d["parents"]),
            table={tuple(int(c) for c in k): v for k, v in d["table"].items()},
            smoothing=d["smoothing"],
        )


class CorpusStore:
    """Holds annotations and the binary case table for a fixed graph."""

    def __init__(self, graph: CausalGraph):
        self._graph = graph
        self.reports: dict[str, ReportAnnotation] = {}
        self.images: dict[str, ImageAnnotation] = {}
        self._case_matrix: Optional[np.ndarray] = None
        self._var_index: dict[str, int] = {}
        self._case_report_ids: list[str] = []

    # -- ingestion -----------------------------------------------------

    def ingest_annotations(self, records: Iterable[dict]) -> IngestionReport:
        """Consume a mixed stream of report/image annotation dicts.

        Malformed or invalid records are rejected with a reason; the stream
        is never aborted.
        """
        report = IngestionReport()
        for record in records:
            try:
                self._ingest_one(record)
                report.accepted += 1
            except (MalformedRecord, UnknownVariable) as exc:
                report.rejected += 1
                report.reasons.append(str(exc))
        self._case_matrix = None
        return report

    def _ingest_one(self, record) -> None:
        if not isinstance(record, dict):
            raise MalformedRecord(f"not a JSON object: {record!r}")
        if "report_id" in record:
            rid = record["report_id"]
            if not isinstance(rid, str) or not rid:
                raise MalformedRecord("report_id must be a non-empty string")
            if rid in self.reports:
                raise MalformedRecord(f"DuplicateId: report {rid!r} already ingested")
            mentioned = record.get("mentioned", [])
            if not isinstance(mentioned, list):
                raise MalformedRecord(f"report {rid!r}: mentioned must be a list")
            for var_id in mentioned:
                if not self._graph.has_variable(var_id):
                    raise UnknownVariable(f"report {rid!r} mentions unknown variable {var_id!r}")
            self.reports[rid] = ReportAnnotation(
                report_id=rid,
                image_id=record.get("image_id"),
                text=record.get("text", ""),
                mentioned=frozenset(mentioned),
            )
        elif "image_id" in record:
            iid = record["image_id"]
            if not isinstance(iid, str) or not iid:
                raise MalformedRecord("image_id must be a non-empty string")
            if iid in self.images:
                raise MalformedRecord(f"DuplicateId: image {iid!r} already ingested")
            present = record.get("present", [])
            if not isinstance(present, list):
                raise MalformedRecord(f"image {iid!r}: present must be a list")
            for var_id in present:
                if not self._graph.has_variable(var_id):
                    raise UnknownVariable(f"image {iid!r} lists unknown variable {var_id!r}")
                if self._graph.get_variable(var_id).kind != VariableKind.IMAGE_FEATURE:
                    raise MalformedRecord(
                        f"image {iid!r}: {var_id!r} is not an ImageFeature variable"
                    )
            self.images[iid] = ImageAnnotation(image_id=iid, present=frozenset(present))
        else:
            raise MalformedRecord(f"record without report_id or image_id: {record!r}")

    def ingest_jsonl(self, lines: Iterable[str]) -> IngestionReport:
        def parse():
            for line in lines:
                line = line.strip()
                if not line:
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError:
                    yield line  # rejected downstream as malformed
        return self.ingest_annotations(parse())

    # -- case table ----------------------------------------------------

    def _ensure_cases(self) -> None:
        if self._case_matrix is not None:
            return
        var_ids = sorted(v.id for v in self._graph.variables())
        self._var_index = {v: i for i, v in enumerate(var_ids)}
        rows = []
        self._case_report_ids = []
        for rid in sorted(self.reports):
            ann = self.reports[rid]
            present = set(ann.mentioned)
            if ann.image_id is not None and ann.image_id in self.images:
                present |= self.images[ann.image_id].present
            row = np.zeros(len(var_ids), dtype=np.uint8)
            for var_id in present:
                if var_id in self._var_index:
                    row[self._var_index[var_id]] = 1
            rows.append(row)
            self._case_report_ids.append(rid)
        if rows:
            self._case_matrix = np.stack(rows)
        else:
            self._case_matrix = np.zeros((0, len(var_ids)), dtype=np.uint8)

    @property
    def case_count(self) -> int:
        self._ensure_cases()
        return self._case_matrix.shape[0]

    def case_matrix(self) -> tuple[np.ndarray, dict[str, int]]:
        """The raw bit table and the variable -> column mapping."""
        self._ensure_cases()
        return self._case_matrix, dict(self._var_index)

    def joint_count(self, assignment: dict[str, int]) -> int:
        """Number of cases consistent with a partial {variable: bit} map."""
        self._ensure_cases()
        for var_id in assignment:
            if var_id not in self._var_index:
                if not self._graph.has_variable(var_id):
                    raise UnknownVariable(f"unknown variable {var_id!r}")
                raise UnknownVariable(f"variable {var_id!r} not in count store")
        mask = np.ones(self._case_matrix.shape[0], dtype=bool)
        for var_id, value in assignment.items():
            mask &= self._case_matrix[:, self._var_index[var_id]] == value
        return int(mask.sum())

    # -- CPT estimation ------------------------------------------------

    def estimate_cpt(self, child: str, parents: list[str], lam: float = 1.0) -> Cpt:
        if lam <= 0:
            raise InvalidSmoothing(f"smoothing must be > 0, got {lam}")
        self._graph.get_variable(child)
        for p in parents:
            self._graph.get_variable(p)
        if child in parents:
            raise ValueError(f"child {child!r} listed among its parents")
        table: dict[tuple[int, ...], float] = {}
        for bits in product((0, 1), repeat=len(parents)):
            base = dict(zip(parents, bits))
            n_parent = self.joint_count(base)
            n_child1 = self.joint_count({**base, child: 1})
            table[bits] = (n_child1 + lam) / (n_parent + 2 * lam)
        return Cpt(child=child, parents=tuple(parents), table=table, smoothing=lam)

    def estimate_all_cpts(self, lam: float = 1.0) -> dict[str, Cpt]:
        """CPT for every variable with at least one Accepted parent."""
        out = {}
        for var in self._graph.variables():
            parents = self._graph.accepted_parents(var.id)
            if parents:
                out[var.id] = self.estimate_cpt(var.id, parents, lam)
        return out
