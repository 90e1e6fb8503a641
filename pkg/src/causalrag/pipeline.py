"""End-to-end wiring used by both the CLI and tests: load corpus files,
refine the graph, estimate CPTs, retrieve, and score against ground truth."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from .config import RunConfig
from .corpus import CorpusStore
from .discovery import DiscoveryEngine
from .errors import CycleError
from .graph import CausalGraph, EdgeStatus, Provenance, Variable, VariableKind
from .metrics import GenRecord, bleu, tokenize
from .retrieval import EmbeddingStore, RetrievalEngine, RetrievalRequest
from . import synth


def graph_from_variables(variables: list[dict]) -> CausalGraph:
    graph = CausalGraph()
    for v in variables:
        graph.add_variable(
            Variable(
                id=v["id"],
                kind=VariableKind(v["kind"]),
                label=v.get("label", ""),
                aliases=frozenset(v.get("aliases", [])),
            )
        )
    return graph


def load_variables_file(path: Path) -> list[dict]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict) and "variables" in data:
        data = data["variables"]
    return data


def accept_remaining(graph: CausalGraph) -> int:
    """Accept all still-Proposed edges, highest confidence first, skipping
    any acceptance that would close a cycle.  Returns edges accepted."""
    proposed = graph.edges(EdgeStatus.PROPOSED)
    proposed.sort(key=lambda e: (-e.confidence, e.src, e.dst))
    accepted = 0
    for edge in proposed:
        try:
            graph.set_edge_status(
                edge.src, edge.dst, EdgeStatus.ACCEPTED, Provenance.MANUAL_DECISION
            )
            accepted += 1
        except CycleError:
            continue
    return accepted


class Workspace:
    """Graph + corpus + embeddings loaded from a data directory."""

    def __init__(self, graph: CausalGraph, corpus: CorpusStore, store: EmbeddingStore):
        self.graph = graph
        self.corpus = corpus
        self.store = store

    @classmethod
    def load(cls, cfg: RunConfig, graph: Optional[CausalGraph] = None) -> "Workspace":
        if graph is None:
            graph_path = cfg.resolve("graph")
            if graph_path.exists():
                graph = CausalGraph.from_json(graph_path.read_text(encoding="utf-8"))
            else:
                manifest_path = Path(cfg.data_dir) / "manifest.json"
                variables_path = Path(cfg.data_dir) / "variables.json"
                if variables_path.exists():
                    graph = graph_from_variables(load_variables_file(variables_path))
                elif manifest_path.exists():
                    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
                    graph = graph_from_variables(
                        [
                            {"id": v[0], "kind": v[1], "label": v[2]}
                            for v in manifest["spec"]["variables"]
                        ]
                    )
                else:
                    raise FileNotFoundError(
                        f"no graph.json, variables.json, or manifest.json under {cfg.data_dir}"
                    )
        corpus = CorpusStore(graph)
        ann_path = cfg.resolve("annotations")
        if ann_path.exists():
            with ann_path.open(encoding="utf-8") as fh:
                corpus.ingest_jsonl(fh)
        store = EmbeddingStore()
        emb_path = cfg.resolve("embeddings")
        if emb_path.exists():
            with emb_path.open(encoding="utf-8") as fh:
                store.ingest_jsonl(fh)
        return cls(graph, corpus, store)

    def discovery(self, audit_path: Optional[Path] = None) -> DiscoveryEngine:
        return DiscoveryEngine(self.graph, self.corpus, audit_path=audit_path)

    def retrieval_engine(self, cfg: RunConfig) -> RetrievalEngine:
        cpts = self.corpus.estimate_all_cpts(cfg.smoothing)
        return RetrievalEngine(
            self.store, self.corpus, self.graph, cpts, eps_floor=cfg.eps_floor
        )


def build_refined_graph(
    base_graph: CausalGraph,
    corpus: CorpusStore,
    proposal_lines: list[str],
    tau: float,
    confidence_floor: float = 0.0,
) -> CausalGraph:
    """Fresh graph from proposals, ratio-refined at tau, remainder accepted."""
    graph = CausalGraph()
    for v in base_graph.variables():
        graph.add_variable(v)
    scoped = CorpusStore(graph)
    scoped.reports = corpus.reports
    scoped.images = corpus.images
    engine = DiscoveryEngine(graph, scoped)
    engine.ingest_proposals_jsonl(proposal_lines, confidence_floor)
    engine.refine_by_ratio(tau)
    accept_remaining(graph)
    return graph


def evaluate_retrieval_against_truth(
    engine: RetrievalEngine,
    manifest: dict,
    k: int,
    alpha: float,
    theta: Optional[float] = None,
    pool_multiplier: int = 4,
) -> dict[str, float]:
    """Retrieval quality proxies against the synthetic ground truth.

    acc: fraction of queries whose top-ranked report is relevant.
    f1: mean F1 of the retrieved set against the relevance set.
    bleu: mean BLEU of the top report's text against relevant reports' texts.
    """
    queries = manifest["queries"]
    if not queries:
        return {"acc": 0.0, "f1": 0.0, "bleu": 0.0}
    texts = {rid: None for rid in manifest["report_fd_sets"]}
    for rid in texts:
        ann = engine.corpus.reports.get(rid)
        texts[rid] = ann.text if ann else ""
    acc_sum = f1_sum = bleu_sum = 0.0
    for query in queries:
        request = RetrievalRequest(
            image=query["query_id"],
            k=k,
            alpha=alpha,
            theta=theta,
            pool_multiplier=pool_multiplier,
        )
        candidates = engine.retrieve(request)
        retrieved = [c.report_id for c in candidates]
        relevant = set(query["relevant"])
        hit = 1.0 if retrieved and retrieved[0] in relevant else 0.0
        acc_sum += hit
        if retrieved and relevant:
            tp = sum(1 for rid in retrieved if rid in relevant)
            precision = tp / len(retrieved)
            recall = tp / len(relevant)
            if precision + recall:
                f1_sum += 2 * precision * recall / (precision + recall)
        if retrieved and relevant:
            refs = tuple(
                tuple(tokenize(texts[rid])) for rid in sorted(relevant) if texts[rid]
            )
            if refs:
                record = GenRecord(
                    id=query["query_id"],
                    candidate=tuple(tokenize(texts.get(retrieved[0], "") or "")),
                    references=refs,
                )
                bleu_sum += bleu(record)
    n = len(queries)
    return {"acc": acc_sum / n, "f1": f1_sum / n, "bleu": bleu_sum / n}


def run_sweep(
    cfg: RunConfig,
    manifest: dict,
    proposal_lines: list[str],
    taus: list[float],
    alphas: list[float],
    ks: list[int],
    thetas: list[Optional[float]],
) -> list[dict]:
    """Grid over tau/alpha/K/theta; each tau rebuilds the refined graph."""
    base = Workspace.load(cfg)
    rows = []
    for tau in taus:
        graph = build_refined_graph(base.graph, base.corpus, proposal_lines, tau)
        corpus = CorpusStore(graph)
        corpus.reports = base.corpus.reports
        corpus.images = base.corpus.images
        cpts = corpus.estimate_all_cpts(cfg.smoothing)
        engine = RetrievalEngine(
            base.store, corpus, graph, cpts, eps_floor=cfg.eps_floor
        )
        for alpha in alphas:
            for k in ks:
                for theta in thetas:
                    scores = evaluate_retrieval_against_truth(
                        engine, manifest, k, alpha, theta, cfg.pool_multiplier
                    )
                    rows.append(
                        {
                            "tau": tau,
                            "alpha": alpha,
                            "k": k,
                            "theta": "" if theta is None else theta,
                            "acc": round(scores["acc"], 6),
                            "f1": round(scores["f1"], 6),
                            "bleu": round(scores["bleu"], 6),
                        }
                    )
    return rows


SWEEP_CSV_HEADER = ["tau", "alpha", "k", "theta", "acc", "f1", "bleu"]


def sweep_rows_to_csv(rows: list[dict]) -> str:
    lines = [",".join(SWEEP_CSV_HEADER)]
    for row in rows:
        lines.append(",".join(str(row[col]) for col in SWEEP_CSV_HEADER))
    return "\n".join(lines) + "\n"
