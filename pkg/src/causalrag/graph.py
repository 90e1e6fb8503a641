"""Causal graph model: variables, edge lifecycle, acyclicity, d-separation.

The graph is a versioned value.  Mutations go through a single writer (the
caller's responsibility, see :class:`causalrag.service`), increment ``version``
and either fully apply or leave the graph untouched.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .errors import CycleError, DuplicateId, UnknownVariable


class VariableKind(str, Enum):
    IMAGE_FEATURE = "ImageFeature"
    FINDING = "Finding"
    SYMPTOM = "Symptom"
    DIAGNOSIS = "Diagnosis"


class EdgeStatus(str, Enum):
    PROPOSED = "Proposed"
    ACCEPTED = "Accepted"
    PRUNED = "Pruned"


class Provenance(str, Enum):
    VLM_PROPOSED = "VlmProposed"
    STATISTICAL_PRUNE = "StatisticalPrune"
    MANUAL_DECISION = "ManualDecision"


# Expected causal layering; deviations are warned about, never rejected.
_KIND_RANK = {
    VariableKind.IMAGE_FEATURE: 0,
    VariableKind.FINDING: 1,
    VariableKind.SYMPTOM: 1,
    VariableKind.DIAGNOSIS: 2,
}


@dataclass(frozen=True)
class Variable:
    id: str
    kind: VariableKind
    label: str = ""
    aliases: frozenset[str] = field(default_factory=frozenset)


@dataclass
class EdgeEvidence:
    ci_p_value: Optional[float] = None
    conditional_probs: dict[str, float] = field(default_factory=dict)
    sample_count: int = 0
    reviewer_note: Optional[str] = None

    def __post_init__(self):
        if self.ci_p_value is not None and not 0.0 <= self.ci_p_value <= 1.0:
            raise ValueError(f"ci_p_value out of [0,1]: {self.ci_p_value}")
        for name, p in self.conditional_probs.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"conditional prob {name} out of [0,1]: {p}")
        if self.sample_count < 0:
            raise ValueError(f"negative sample_count: {self.sample_count}")

    def to_dict(self) -> dict:
        return {
            "ci_p_value": self.ci_p_value,
            "conditional_probs": dict(sorted(self.conditional_probs.items())),
            "sample_count": self.sample_count,
            "reviewer_note": self.reviewer_note,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EdgeEvidence":
        return cls(
            ci_p_value=d.get("ci_p_value"),
            conditional_probs=dict(d.get("conditional_probs", {})),
            sample_count=int(d.get("sample_count", 0)),
            reviewer_note=d.get("reviewer_note"),
        )


@dataclass
class CausalEdge:
    src: str
    dst: str
    status: EdgeStatus
    confidence: float = 0.0
    provenance: Provenance = Provenance.VLM_PROPOSED
    evidence: Optional[EdgeEvidence] = None

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError(f"self-loop edge {self.src}->{self.dst}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of [0,1]: {self.confidence}")

    def to_dict(self) -> dict:
        return {
            "src": self.src,
            "dst": self.dst,
            "status": self.status.value,
            "confidence": self.confidence,
            "provenance": self.provenance.value,
            "evidence": self.evidence.to_dict() if self.evidence else None,
        }


class CausalGraph:
    """Directed graph over clinical variables with edge lifecycle status.

    Only edges with status ``Accepted`` participate in path queries and
    d-separation; the Accepted subgraph is kept acyclic as an invariant.
    """

    def __init__(self):
        self._variables: dict[str, Variable] = {}
        self._edges: dict[tuple[str, str], CausalEdge] = {}
        self.version = 0

    # -- introspection -------------------------------------------------

    def variables(self) -> list[Variable]:
        return [self._variables[k] for k in sorted(self._variables)]

    def get_variable(self, var_id: str) -> Variable:
        try:
            return self._variables[var_id]
        except KeyError:
            raise UnknownVariable(f"unknown variable {var_id!r}") from None

    def has_variable(self, var_id: str) -> bool:
        return var_id in self._variables

    def edges(self, status: Optional[EdgeStatus] = None) -> list[CausalEdge]:
        out = [self._edges[k] for k in sorted(self._edges)]
        if status is not None:
            out = [e for e in out if e.status == status]
        return out

    def get_edge(self, src: str, dst: str) -> Optional[CausalEdge]:
        return self._edges.get((src, dst))

    def accepted_parents(self, var_id: str) -> list[str]:
        self.get_variable(var_id)
        return sorted(
            e.src
            for e in self._edges.values()
            if e.dst == var_id and e.status == EdgeStatus.ACCEPTED
        )

    def accepted_children(self, var_id: str) -> list[str]:
        self.get_variable(var_id)
        return sorted(
            e.dst
            for e in self._edges.values()
            if e.src == var_id and e.status == EdgeStatus.ACCEPTED
        )

    def kind_order_warnings(self) -> list[str]:
        """Edges running against the ImageFeature->Finding->Diagnosis layering."""
        warnings = []
        for (src, dst), edge in sorted(self._edges.items()):
            if edge.status == EdgeStatus.PRUNED:
                continue
            if _KIND_RANK[self._variables[src].kind] > _KIND_RANK[self._variables[dst].kind]:
                warnings.append(f"{src}->{dst} runs against the expected clinical layering")
        return warnings

    # -- mutation ------------------------------------------------------

    def add_variable(self, variable: Variable) -> None:
        if variable.id in self._variables:
            raise DuplicateId(f"variable {variable.id!r} already present")
        self._variables[variable.id] = variable
        self.version += 1

    def set_edge_status(
        self,
        src: str,
        dst: str,
        status: EdgeStatus,
        provenance: Provenance,
        confidence: Optional[float] = None,
        evidence: Optional[EdgeEvidence] = None,
    ) -> CausalEdge:
        self.get_variable(src)
        self.get_variable(dst)
        if src == dst:
            raise ValueError(f"self-loop edge {src}->{dst}")
        existing = self._edges.get((src, dst))
        if confidence is None:
            confidence = existing.confidence if existing else 0.0
        if status == EdgeStatus.ACCEPTED and self._would_cycle(src, dst):
            raise CycleError(f"accepting {src}->{dst} would create a cycle")
        edge = CausalEdge(
            src=src,
            dst=dst,
            status=status,
            confidence=confidence,
            provenance=provenance,
            evidence=evidence if evidence is not None else (existing.evidence if existing else None),
        )
        self._edges[(src, dst)] = edge
        self.version += 1
        return edge

    def propose_edge(self, src: str, dst: str, confidence: float) -> CausalEdge:
        """Upsert a Proposed edge; re-proposal keeps the max confidence.

        An edge already Accepted or Pruned keeps its status; only confidence
        is merged.
        """
        self.get_variable(src)
        self.get_variable(dst)
        existing = self._edges.get((src, dst))
        if existing is not None:
            merged = max(existing.confidence, confidence)
            edge = CausalEdge(
                src=src,
                dst=dst,
                status=existing.status,
                confidence=merged,
                provenance=existing.provenance,
                evidence=existing.evidence,
            )
        else:
            edge = CausalEdge(
                src=src,
                dst=dst,
                status=EdgeStatus.PROPOSED,
                confidence=confidence,
                provenance=Provenance.VLM_PROPOSED,
            )
        self._edges[(src, dst)] = edge
        self.version += 1
        return edge

    def _would_cycle(self, src: str, dst: str) -> bool:
        # Accepting src->dst cycles iff src is already reachable from dst
        # over Accepted edges.
        seen = {dst}
        queue = deque([dst])
        adj: dict[str, list[str]] = {}
        for (a, b), e in self._edges.items():
            if e.status == EdgeStatus.ACCEPTED:
                adj.setdefault(a, []).append(b)
        while queue:
            node = queue.popleft()
            if node == src:
                return True
            for nxt in adj.get(node, ()):
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return False

    # -- queries over the Accepted subgraph ----------------------------

    def _accepted_adj(self) -> dict[str, list[str]]:
        adj: dict[str, list[str]] = {v: [] for v in self._variables}
        for (a, b), e in self._edges.items():
            if e.status == EdgeStatus.ACCEPTED:
                adj[a].append(b)
        for lst in adj.values():
            lst.sort()
        return adj

    def _accepted_parents_map(self) -> dict[str, list[str]]:
        par: dict[str, list[str]] = {v: [] for v in self._variables}
        for (a, b), e in self._edges.items():
            if e.status == EdgeStatus.ACCEPTED:
                par[b].append(a)
        return par

    def mediated_paths(self, src: str, dst: str) -> list[list[str]]:
        """All simple directed src->..->dst paths of length >= 2 over Accepted
        edges, in lexicographic node-id order."""
        self.get_variable(src)
        self.get_variable(dst)
        adj = self._accepted_adj()
        paths: list[list[str]] = []
        stack = [src]
        on_path = {src}

        def dfs(node: str):
            for nxt in adj[node]:
                if nxt in on_path:
                    continue
                if nxt == dst:
                    if len(stack) >= 2:
                        paths.append(stack + [dst])
                    continue
                stack.append(nxt)
                on_path.add(nxt)
                dfs(nxt)
                stack.pop()
                on_path.discard(nxt)

        dfs(src)
        return paths

    def reachable_from(self, sources: Iterable[str]) -> set[str]:
        """Nodes reachable from any source over Accepted edges (sources excluded
        unless reachable themselves)."""
        adj = self._accepted_adj()
        seen: set[str] = set()
        queue = deque()
        for s in sources:
            self.get_variable(s)
            queue.append(s)
        while queue:
            node = queue.popleft()
            for nxt in adj[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return seen

    def d_separated(self, x: str, y: str, given: Iterable[str]) -> bool:
        """Standard d-separation over the Accepted subgraph (Bayes-ball)."""
        given = set(given)
        self.get_variable(x)
        self.get_variable(y)
        for g in given:
            self.get_variable(g)
        if x in given or y in given:
            raise ValueError("query nodes may not appear in the conditioning set")

        parents = self._accepted_parents_map()
        children = {v: [] for v in self._variables}
        for (a, b), e in self._edges.items():
            if e.status == EdgeStatus.ACCEPTED:
                children[a].append(b)

        # ancestors of the conditioning set, including the set itself
        anc = set()
        todo = deque(given)
        while todo:
            node = todo.popleft()
            if node in anc:
                continue
            anc.add(node)
            todo.extend(parents[node])

        # reachability with direction-of-approach states
        visited: set[tuple[str, str]] = set()
        queue = deque([(x, "up")])
        while queue:
            node, direction = queue.popleft()
            if (node, direction) in visited:
                continue
            visited.add((node, direction))
            if node == y and node not in given:
                return False
            if direction == "up" and node not in given:
                for p in parents[node]:
                    queue.append((p, "up"))
                for c in children[node]:
                    queue.append((c, "down"))
            elif direction == "down":
                if node not in given:
                    for c in children[node]:
                        queue.append((c, "down"))
                if node in anc:
                    for p in parents[node]:
                        queue.append((p, "up"))
        return True

    def topological_order_accepted(self) -> list[str]:
        """Kahn's algorithm over the Accepted subgraph; raises CycleError if
        the invariant is ever violated."""
        adj = self._accepted_adj()
        indeg = {v: 0 for v in self._variables}
        for a, outs in adj.items():
            for b in outs:
                indeg[b] += 1
        queue = deque(sorted(v for v, d in indeg.items() if d == 0))
        order = []
        while queue:
            node = queue.popleft()
            order.append(node)
            for nxt in adj[node]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    queue.append(nxt)
        if len(order) != len(self._variables):
            raise CycleError("Accepted subgraph contains a cycle")
        return order

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "variables": [
                {
                    "id": v.id,
                    "kind": v.kind.value,
                    "label": v.label,
                    "aliases": sorted(v.aliases),
                }
                for v in self.variables()
            ],
            "edges": [e.to_dict() for e in self.edges()],
            "version": self.version,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "CausalGraph":
        g = cls()
        for v in d.get("variables", []):
            g._variables[v["id"]] = Variable(
                id=v["id"],
                kind=VariableKind(v["kind"]),
                label=v.get("label", ""),
                aliases=frozenset(v.get("aliases", [])),
            )
        for e in d.get("edges", []):
            ev = e.get("evidence")
            g._edges[(e["src"], e["dst"])] = CausalEdge(
                src=e["src"],
                dst=e["dst"],
                status=EdgeStatus(e["status"]),
                confidence=e.get("confidence", 0.0),
                provenance=Provenance(e.get("provenance", "VlmProposed")),
                evidence=EdgeEvidence.from_dict(ev) if ev else None,
            )
        g.version = int(d.get("version", 0))
        g.topological_order_accepted()
        return g

    @classmethod
    def from_json(cls, text: str) -> "CausalGraph":
        return cls.from_dict(json.loads(text))
