"""Synthetic corpora from known ground-truth causal models.

Generates cases by ancestral sampling from true CPTs, emits the exact JSONL
schemas the store/engine/discovery modules consume, and records a truth
manifest (including per-query relevance sets) for oracle-based tests.

Embedding geometry: each variable gets a fixed random unit direction; an
item's embedding is the unit-normalized sum of its variables' directions
plus Gaussian noise.  Similarity therefore tracks variable overlap, which
lets confounded reports be near-duplicates in embedding space while being
causally inconsistent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidSpec, UnknownId
from .graph import CausalGraph, EdgeStatus, Provenance, Variable, VariableKind


@dataclass
class SynthSpec:
    """Ground truth for one synthetic corpus.

    params maps each variable to its true CPT: keys are parent-bit strings
    (ordered as true_parents, "" for roots), values are p(var = 1 | bits).
    confound_strength is the fraction of corpus reports whose finding and
    diagnosis mentions are swapped with another case's, keeping the image
    features (high similarity, broken causal support).
    """

    variables: list[tuple[str, str, str]]  # (id, kind, label)
    true_edges: list[tuple[str, str]]
    params: dict[str, dict[str, float]]
    n_cases: int
    spurious_edges: list[tuple[str, str]] = field(default_factory=list)
    confound_strength: float = 0.0
    dim: int = 32
    sigma: float = 0.0
    seed: int = 0
    n_queries: int = 0

    def validate(self) -> None:
        ids = [v[0] for v in self.variables]
        if len(set(ids)) != len(ids):
            raise InvalidSpec("duplicate variable ids")
        known = set(ids)
        for src, dst in self.true_edges + self.spurious_edges:
            if src not in known or dst not in known:
                raise InvalidSpec(f"edge {src}->{dst} references unknown variable")
            if src == dst:
                raise InvalidSpec(f"self-loop {src}->{dst}")
        if self.n_cases < 0 or self.n_queries < 0:
            raise InvalidSpec("case counts must be nonnegative")
        if not 0.0 <= self.confound_strength <= 1.0:
            raise InvalidSpec("confound_strength must be in [0,1]")
        if self.sigma < 0:
            raise InvalidSpec("sigma must be >= 0")
        if self.dim < 1:
            raise InvalidSpec("dim must be >= 1")
        for var_id, table in self.params.items():
            for bits, p in table.items():
                if not 0.0 < p < 1.0:
                    raise InvalidSpec(f"param p({var_id}=1|{bits!r})={p} outside (0,1)")
        self._topo_order()  # raises on cycles

    def parents_of(self, var_id: str) -> list[str]:
        return sorted(src for src, dst in self.true_edges if dst == var_id)

    def _topo_order(self) -> list[str]:
        ids = sorted(v[0] for v in self.variables)
        indeg = {v: 0 for v in ids}
        for src, dst in self.true_edges:
            indeg[dst] += 1
        order = []
        ready = sorted(v for v in ids if indeg[v] == 0)
        while ready:
            node = ready.pop(0)
            order.append(node)
            for src, dst in self.true_edges:
                if src == node:
                    indeg[dst] -= 1
                    if indeg[dst] == 0:
                        ready.append(dst)
            ready.sort()
        if len(order) != len(ids):
            raise InvalidSpec("true edge set contains a cycle")
        return order

    def to_dict(self) -> dict:
        return {
            "variables": [list(v) for v in self.variables],
            "true_edges": [list(e) for e in self.true_edges],
            "params": self.params,
            "n_cases": self.n_cases,
            "spurious_edges": [list(e) for e in self.spurious_edges],
            "confound_strength": self.confound_strength,
            "dim": self.dim,
            "sigma": self.sigma,
            "seed": self.seed,
            "n_queries": self.n_queries,
        }


@dataclass
class SynthCorpus:
    annotation_lines: list[str]
    embedding_lines: list[str]
    proposal_lines: list[str]
    manifest: dict

    def write_to(self, out_dir: Path) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "annotations": out_dir / "annotations.jsonl",
            "embeddings": out_dir / "embeddings.jsonl",
            "proposals": out_dir / "proposals.jsonl",
            "manifest": out_dir / "manifest.json",
        }
        paths["annotations"].write_text(
            "".join(line + "\n" for line in self.annotation_lines), encoding="utf-8"
        )
        paths["embeddings"].write_text(
            "".join(line + "\n" for line in self.embedding_lines), encoding="utf-8"
        )
        paths["proposals"].write_text(
            "".join(line + "\n" for line in self.proposal_lines), encoding="utf-8"
        )
        paths["manifest"].write_text(
            json.dumps(self.manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )
        return paths


def _sample_case(spec: SynthSpec, order: list[str], rng: np.random.Generator) -> set[str]:
    present: set[str] = set()
    for var_id in order:
        parents = spec.parents_of(var_id)
        bits = "".join("1" if p in present else "0" for p in parents)
        p1 = spec.params[var_id][bits]
        if rng.random() < p1:
            present.add(var_id)
    return present


def generate(spec: SynthSpec) -> SynthCorpus:
    spec.validate()
    rng = np.random.default_rng(np.random.Philox(spec.seed))
    order = spec._topo_order()
    kinds = {v[0]: v[1] for v in spec.variables}
    labels = {v[0]: v[2] for v in spec.variables}
    image_vars = sorted(v for v, k in kinds.items() if k == "ImageFeature")
    fd_kinds = {"Finding", "Diagnosis"}

    # fixed random unit direction per variable, plus a background direction
    directions: dict[str, np.ndarray] = {}
    for var_id in sorted(kinds) + ["__background__"]:
        vec = rng.normal(size=spec.dim)
        directions[var_id] = vec / np.linalg.norm(vec)

    def embed(present: set[str], restrict: Optional[set[str]] = None) -> list[float]:
        use = sorted(present if restrict is None else (present & restrict))
        if use:
            total = np.sum([directions[v] for v in use], axis=0)
        else:
            total = directions["__background__"].copy()
        if spec.sigma > 0:
            total = total + rng.normal(scale=spec.sigma, size=spec.dim)
        norm = np.linalg.norm(total)
        if norm == 0.0:
            total = directions["__background__"].copy()
            norm = 1.0
        return [float(x) for x in total / norm]

    # corpus cases
    cases = [_sample_case(spec, order, rng) for _ in range(spec.n_cases)]
    corrupted_from = [-1] * spec.n_cases
    if spec.confound_strength > 0 and spec.n_cases > 1:
        for i in range(spec.n_cases):
            if rng.random() < spec.confound_strength:
                j = int(rng.integers(spec.n_cases - 1))
                corrupted_from[i] = j if j < i else j + 1

    annotation_lines: list[str] = []
    embedding_lines: list[str] = []
    report_fd_sets: dict[str, list[str]] = {}

    for i, present in enumerate(cases):
        image_id = f"img{i:06d}"
        report_id = f"rep{i:06d}"
        image_present = sorted(present & set(image_vars))
        # report mentions: the case's image features plus its (possibly
        # swapped-in) non-image variables
        donor = cases[corrupted_from[i]] if corrupted_from[i] >= 0 else present
        non_image = sorted(v for v in donor if kinds[v] != "ImageFeature")
        mentioned = sorted(set(image_present) | set(non_image))
        text = " ".join(labels[v] for v in mentioned)
        annotation_lines.append(
            json.dumps({"image_id": image_id, "present": image_present}, sort_keys=True)
        )
        annotation_lines.append(
            json.dumps(
                {
                    "report_id": report_id,
                    "image_id": image_id,
                    "text": text,
                    "mentioned": mentioned,
                },
                sort_keys=True,
            )
        )
        embedding_lines.append(
            json.dumps(
                {"id": image_id, "modality": "image", "vector": embed(set(image_present))},
                sort_keys=True,
            )
        )
        embedding_lines.append(
            json.dumps(
                {"id": report_id, "modality": "report", "vector": embed(set(mentioned))},
                sort_keys=True,
            )
        )
        report_fd_sets[report_id] = sorted(v for v in mentioned if kinds[v] in fd_kinds)

    # query cases: clean image-only cases with ground-truth relevance
    queries = []
    for qi in range(spec.n_queries):
        present = _sample_case(spec, order, rng)
        query_id = f"qry{qi:04d}"
        q_image = sorted(present & set(image_vars))
        q_fd = sorted(v for v in present if kinds[v] in fd_kinds)
        annotation_lines.append(
            json.dumps({"image_id": query_id, "present": q_image}, sort_keys=True)
        )
        embedding_lines.append(
            json.dumps(
                {"id": query_id, "modality": "image", "vector": embed(set(q_image))},
                sort_keys=True,
            )
        )
        # a report is relevant when it makes no false finding/diagnosis claim
        # about the query's sampled case
        q_fd_set = set(q_fd)
        relevant = sorted(
            rid for rid, fd in report_fd_sets.items() if set(fd) <= q_fd_set
        )
        queries.append(
            {
                "query_id": query_id,
                "image_vars": q_image,
                "fd_set": q_fd,
                "case_vars": sorted(present),
                "relevant": relevant,
            }
        )

    # proposals: true edges at high confidence, spurious at middling
    proposal_lines = []
    for src, dst in sorted(spec.true_edges):
        conf = 0.7 + 0.3 * rng.random()
        proposal_lines.append(
            json.dumps(
                {"src": src, "dst": dst, "confidence": round(conf, 6), "rationale": "true"},
                sort_keys=True,
            )
        )
    for src, dst in sorted(spec.spurious_edges):
        conf = 0.3 + 0.6 * rng.random()
        proposal_lines.append(
            json.dumps(
                {"src": src, "dst": dst, "confidence": round(conf, 6), "rationale": "spurious"},
                sort_keys=True,
            )
        )

    manifest = {
        "spec": spec.to_dict(),
        "report_fd_sets": report_fd_sets,
        "queries": queries,
        "corrupted_reports": sorted(
            f"rep{i:06d}" for i in range(spec.n_cases) if corrupted_from[i] >= 0
        ),
    }
    return SynthCorpus(
        annotation_lines=annotation_lines,
        embedding_lines=embedding_lines,
        proposal_lines=proposal_lines,
        manifest=manifest,
    )


def build_truth_graph(spec: SynthSpec) -> CausalGraph:
    """The ground-truth graph with all true edges Accepted."""
    g = CausalGraph()
    for var_id, kind, label in sorted(spec.variables):
        g.add_variable(Variable(id=var_id, kind=VariableKind(kind), label=label))
    for src, dst in sorted(spec.true_edges):
        g.set_edge_status(
            src, dst, EdgeStatus.ACCEPTED, Provenance.MANUAL_DECISION, confidence=1.0
        )
    return g


def oracle_precision_at_k(manifest: dict, query_id: str, retrieved_ids: list[str], k: int) -> float:
    """Fraction of the top-k retrieved report ids in the query's relevance set."""
    known = set(manifest["report_fd_sets"])
    for rid in retrieved_ids:
        if rid not in known:
            raise UnknownId(f"retrieved id {rid!r} not in the corpus")
    by_id = {q["query_id"]: q for q in manifest["queries"]}
    if query_id not in by_id:
        raise UnknownId(f"unknown query {query_id!r}")
    relevant = set(by_id[query_id]["relevant"])
    top = retrieved_ids[:k]
    if not top:
        return 0.0
    return sum(1 for rid in top if rid in relevant) / len(top)


def exact_marginals(spec: SynthSpec) -> dict[str, float]:
    """Brute-force marginal p(var = 1) by enumerating all assignments."""
    ids = sorted(v[0] for v in spec.variables)
    if len(ids) > 16:
        raise InvalidSpec("exact enumeration limited to 16 variables")
    order = spec._topo_order()
    marginals = {v: 0.0 for v in ids}
    for bits in product((0, 1), repeat=len(ids)):
        assign = dict(zip(ids, bits))
        prob = 1.0
        for var_id in order:
            parents = spec.parents_of(var_id)
            key = "".join(str(assign[p]) for p in parents)
            p1 = spec.params[var_id][key]
            prob *= p1 if assign[var_id] == 1 else 1.0 - p1
        for var_id in ids:
            if assign[var_id] == 1:
                marginals[var_id] += prob
    return marginals


# -- canned specs ------------------------------------------------------


def chain_spec(
    n_chains: int = 6,
    n_cases: int = 5000,
    seed: int = 0,
    spurious_mode: str = "skip",
    n_false: Optional[int] = None,
    sigma: float = 0.05,
    n_queries: int = 0,
) -> SynthSpec:
    """Parallel ImageFeature -> Finding -> Diagnosis chains with true CPTs
    p(F=1|I=1)=0.9 and p(D=1|F=1)=0.8.

    spurious_mode "skip" injects the direct I_k -> D_k edge per chain;
    "cross" injects cross-chain false edges (no mediated path), n_false of
    them, for refinement-ratio experiments.
    """
    variables = []
    true_edges = []
    params: dict[str, dict[str, float]] = {}
    for k in range(n_chains):
        i, f, d = f"i{k}", f"f{k}", f"d{k}"
        variables += [
            (i, "ImageFeature", f"feature-{k}"),
            (f, "Finding", f"finding-{k}"),
            (d, "Diagnosis", f"diagnosis-{k}"),
        ]
        true_edges += [(i, f), (f, d)]
        params[i] = {"": 0.5}
        params[f] = {"0": 0.1, "1": 0.9}
        params[d] = {"0": 0.1, "1": 0.8}
    if spurious_mode == "skip":
        spurious = [(f"i{k}", f"d{k}") for k in range(n_chains)]
    elif spurious_mode == "cross":
        candidates = []
        for k in range(n_chains):
            nk = (k + 1) % n_chains
            candidates.append((f"i{k}", f"f{nk}"))
            candidates.append((f"f{k}", f"d{nk}"))
            candidates.append((f"i{k}", f"d{nk}"))
        count = n_false if n_false is not None else math.ceil(
            0.3 / 0.7 * len(true_edges)
        )
        spurious = candidates[:count]
    elif spurious_mode == "none":
        spurious = []
    else:
        raise InvalidSpec(f"unknown spurious_mode {spurious_mode!r}")
    return SynthSpec(
        variables=variables,
        true_edges=true_edges,
        params=params,
        n_cases=n_cases,
        spurious_edges=spurious,
        sigma=sigma,
        seed=seed,
        n_queries=n_queries,
    )


def confounded_spec(
    n_chains: int = 4,
    n_cases: int = 2000,
    confound_strength: float = 0.8,
    sigma: float = 0.05,
    seed: int = 0,
    n_queries: int = 20,
    dim: int = 32,
) -> SynthSpec:
    """Chain corpus with a fraction of reports whose findings/diagnoses are
    swapped with another case's: near-duplicate embeddings, broken causal
    support."""
    spec = chain_spec(
        n_chains=n_chains,
        n_cases=n_cases,
        seed=seed,
        spurious_mode="none",
        sigma=sigma,
        n_queries=n_queries,
    )
    spec.confound_strength = confound_strength
    spec.dim = dim
    return spec
