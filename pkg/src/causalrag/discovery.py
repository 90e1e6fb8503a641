"""Graph refinement: proposal ingestion, conditional-independence pruning,
confidence-ratio refinement, and the human review queue."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy.stats import chi2

from .corpus import CorpusStore
from .errors import InvalidRatio, NotPending, StaleVersion, UnknownVariable
from .graph import (
    CausalEdge,
    CausalGraph,
    EdgeEvidence,
    EdgeStatus,
    Provenance,
)


@dataclass(frozen=True)
class EdgeProposal:
    src: str
    dst: str
    confidence: float
    source_pair: Optional[tuple[str, str]] = None  # (image_id, report_id)
    rationale: Optional[str] = None


@dataclass(frozen=True)
class ReviewDecision:
    src: str
    dst: str
    verdict: str  # "Accept" | "Reject"
    reviewer: str
    note: str = ""
    decided_at: str = ""

    def to_dict(self) -> dict:
        return {
            "src": self.src,
            "dst": self.dst,
            "verdict": self.verdict,
            "reviewer": self.reviewer,
            "note": self.note,
            "decided_at": self.decided_at,
        }


@dataclass
class CiResult:
    statistic: float
    dof: int
    p_value: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "dof": self.dof,
            "p_value": self.p_value,
            "degenerate": self.degenerate,
        }


@dataclass
class PendingEntry:
    edge: CausalEdge
    evidence: EdgeEvidence
    source_pairs: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "edge": self.edge.to_dict(),
            "evidence": self.evidence.to_dict(),
            "source_pairs": [list(p) for p in self.source_pairs],
        }


MAX_CONDITIONING_VARS = 3


def g_test(xs: np.ndarray, ys: np.ndarray, zbits: Optional[np.ndarray]) -> CiResult:
    """Conditional G-test of binary x vs y within strata of the z columns.

    dof = 2^n_z; empty strata contribute nothing; degenerate (x or y constant
    in every stratum) yields p = 1 with the flag set.
    """
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    n_z = 0 if zbits is None else zbits.shape[1]
    if n_z:
        strata = np.asarray(zbits, dtype=np.int64) @ (1 << np.arange(n_z, dtype=np.int64))
    else:
        strata = np.zeros(len(xs), dtype=np.int64)
    g_stat = 0.0
    x_varies = False
    y_varies = False
    for s in range(2**n_z):
        mask = strata == s
        total = int(mask.sum())
        if total == 0:
            continue
        counts = np.zeros((2, 2), dtype=np.int64)
        np.add.at(counts, (xs[mask], ys[mask]), 1)
        row = counts.sum(axis=1)
        col = counts.sum(axis=0)
        if row[0] and row[1]:
            x_varies = True
        if col[0] and col[1]:
            y_varies = True
        for i in (0, 1):
            for j in (0, 1):
                observed = counts[i, j]
                if observed == 0:
                    continue
                expected = row[i] * col[j] / total
                if expected > 0:
                    g_stat += 2.0 * observed * math.log(observed / expected)
    dof = 2**n_z
    if not (x_varies and y_varies):
        return CiResult(statistic=0.0, dof=dof, p_value=1.0, degenerate=True)
    g_stat = max(g_stat, 0.0)
    return CiResult(statistic=g_stat, dof=dof, p_value=float(chi2.sf(g_stat, dof)))


class DiscoveryEngine:
    """Binds a graph and a count store; owns the review audit log."""

    def __init__(self, graph: CausalGraph, corpus: CorpusStore, audit_path: Optional[Path] = None):
        self.graph = graph
        self.corpus = corpus
        self.audit_log: list[ReviewDecision] = []
        self.audit_path = Path(audit_path) if audit_path else None
        # example (image_id, report_id) pairs per proposed edge
        self._source_pairs: dict[tuple[str, str], list[tuple[str, str]]] = {}

    # -- proposals -----------------------------------------------------

    def ingest_proposals(
        self, proposals: Iterable[EdgeProposal], confidence_floor: float = 0.0
    ) -> dict:
        if not 0.0 <= confidence_floor <= 1.0:
            raise ValueError(f"confidence_floor out of [0,1]: {confidence_floor}")
        added = 0
        below = 0
        errors: list[str] = []
        for prop in proposals:
            if prop.confidence < confidence_floor:
                below += 1
                continue
            try:
                self.graph.propose_edge(prop.src, prop.dst, prop.confidence)
            except (UnknownVariable, ValueError) as exc:
                errors.append(str(exc))
                continue
            added += 1
            if prop.source_pair is not None:
                pairs = self._source_pairs.setdefault((prop.src, prop.dst), [])
                if len(pairs) < 5:
                    pairs.append(prop.source_pair)
        return {"added": added, "below_floor": below, "errors": errors}

    def ingest_proposals_jsonl(self, lines: Iterable[str], confidence_floor: float = 0.0) -> dict:
        def parse():
            for line in lines:
                line = line.strip()
                if not line:
                    continue
                d = json.loads(line)
                pair = None
                if d.get("image_id") and d.get("report_id"):
                    pair = (d["image_id"], d["report_id"])
                yield EdgeProposal(
                    src=d["src"],
                    dst=d["dst"],
                    confidence=float(d["confidence"]),
                    source_pair=pair,
                    rationale=d.get("rationale"),
                )
        return self.ingest_proposals(parse(), confidence_floor)

    # -- conditional independence test ---------------------------------

    def ci_test(self, x: str, y: str, given: Iterable[str]) -> CiResult:
        """Conditional G-test of x independent of y within strata of `given`.

        dof = 2^|given|; zero-total strata contribute nothing; if x or y is
        constant in every non-empty stratum the data carry no signal and the
        result is flagged degenerate with p = 1.
        """
        given = sorted(set(given))
        if x == y:
            raise ValueError("x and y must differ")
        if x in given or y in given:
            raise ValueError("x and y may not appear in the conditioning set")
        matrix, index = self.corpus.case_matrix()
        for var_id in [x, y, *given]:
            if var_id not in index:
                raise UnknownVariable(f"unknown variable {var_id!r}")

        xs = matrix[:, index[x]]
        ys = matrix[:, index[y]]
        zbits = matrix[:, [index[g] for g in given]] if given else None
        return g_test(xs, ys, zbits)

    # -- pruning -------------------------------------------------------

    def _conditional_probs(self, src: str, dst: str) -> dict[str, float]:
        probs = {}
        for x_val, key in ((1, "p(dst=1|src=1)"), (0, "p(dst=1|src=0)")):
            denom = self.corpus.joint_count({src: x_val})
            num = self.corpus.joint_count({src: x_val, dst: 1})
            probs[key] = (num + 1.0) / (denom + 2.0)  # add-one guard for empty strata
        return probs

    def prune_spurious(self, significance: float) -> list[CausalEdge]:
        """Prune edges whose endpoints test conditionally independent given the
        mediators on their mediated paths.

        Edges are visited in lexicographic (src, dst) order and the path sets
        are recomputed after each prune.
        """
        if not 0.0 < significance < 1.0:
            raise ValueError(f"significance must be in (0,1), got {significance}")
        pruned: list[CausalEdge] = []
        candidates = [
            (e.src, e.dst)
            for e in self.graph.edges()
            if e.status in (EdgeStatus.PROPOSED, EdgeStatus.ACCEPTED)
        ]
        for src, dst in sorted(candidates):
            edge = self.graph.get_edge(src, dst)
            if edge is None or edge.status == EdgeStatus.PRUNED:
                continue
            paths = self.graph.mediated_paths(src, dst)
            if not paths:
                continue
            mediators = sorted({node for path in paths for node in path[1:-1]})
            if len(mediators) > MAX_CONDITIONING_VARS:
                mediators = sorted(
                    mediators,
                    key=lambda m: (-self.corpus.joint_count({m: 1}), m),
                )[:MAX_CONDITIONING_VARS]
                mediators.sort()
            result = self.ci_test(src, dst, mediators)
            if result.p_value > significance:
                evidence = EdgeEvidence(
                    ci_p_value=result.p_value,
                    conditional_probs=self._conditional_probs(src, dst),
                    sample_count=self.corpus.case_count,
                )
                updated = self.graph.set_edge_status(
                    src,
                    dst,
                    EdgeStatus.PRUNED,
                    Provenance.STATISTICAL_PRUNE,
                    evidence=evidence,
                )
                pruned.append(updated)
        return pruned

    # -- ratio refinement ----------------------------------------------

    def refine_by_ratio(self, tau: float) -> list[CausalEdge]:
        """Prune the floor(tau * |Proposed|) lowest-confidence Proposed edges."""
        if not 0.0 <= tau <= 1.0:
            raise InvalidRatio(f"tau must be in [0,1], got {tau}")
        proposed = self.graph.edges(EdgeStatus.PROPOSED)
        proposed.sort(key=lambda e: (e.confidence, e.src, e.dst))
        n_remove = math.floor(tau * len(proposed))
        removed = []
        for edge in proposed[:n_remove]:
            removed.append(
                self.graph.set_edge_status(
                    edge.src, edge.dst, EdgeStatus.PRUNED, Provenance.STATISTICAL_PRUNE
                )
            )
        return removed

    # -- review queue --------------------------------------------------

    def list_pending(self) -> list[PendingEntry]:
        """Proposed edges ordered by ascending CI p-value (no evidence first)."""
        entries = []
        for edge in self.graph.edges(EdgeStatus.PROPOSED):
            if edge.evidence is not None and edge.evidence.ci_p_value is not None:
                p = edge.evidence.ci_p_value
                probs = dict(edge.evidence.conditional_probs)
                sample_count = edge.evidence.sample_count
            else:
                p = 0.0
                probs = {}
                sample_count = self.corpus.case_count
            if not probs and self.corpus.case_count:
                probs = self._conditional_probs(edge.src, edge.dst)
            entries.append(
                (
                    p,
                    edge.src,
                    edge.dst,
                    PendingEntry(
                        edge=edge,
                        evidence=EdgeEvidence(
                            ci_p_value=edge.evidence.ci_p_value if edge.evidence else None,
                            conditional_probs=probs,
                            sample_count=sample_count,
                        ),
                        source_pairs=list(self._source_pairs.get((edge.src, edge.dst), []))[:5],
                    ),
                )
            )
        entries.sort(key=lambda t: (t[0], t[1], t[2]))
        return [entry for *_, entry in entries]

    def record_decision(
        self, decision: ReviewDecision, expected_version: Optional[int] = None
    ) -> int:
        """Apply a review verdict atomically; returns the new graph version."""
        if expected_version is not None and expected_version != self.graph.version:
            raise StaleVersion(
                f"expected version {expected_version}, graph at {self.graph.version}",
                graph_version=self.graph.version,
            )
        edge = self.graph.get_edge(decision.src, decision.dst)
        if edge is None or edge.status != EdgeStatus.PROPOSED:
            raise NotPending(f"edge {decision.src}->{decision.dst} is not pending review")
        if decision.verdict not in ("Accept", "Reject"):
            raise ValueError(f"verdict must be Accept or Reject, got {decision.verdict!r}")
        status = EdgeStatus.ACCEPTED if decision.verdict == "Accept" else EdgeStatus.PRUNED
        evidence = edge.evidence or EdgeEvidence()
        evidence.reviewer_note = decision.note or evidence.reviewer_note
        self.graph.set_edge_status(
            decision.src, decision.dst, status, Provenance.MANUAL_DECISION, evidence=evidence
        )
        self.audit_log.append(decision)
        if self.audit_path is not None:
            with self.audit_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(decision.to_dict(), sort_keys=True) + "\n")
        return self.graph.version
