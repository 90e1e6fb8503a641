"""Batch command-line driver for the full pipeline and ablation sweeps."""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Optional

import click

from . import synth
from .config import RunConfig, load_config
from .errors import CausalRagError
from .graph import CausalGraph
from .metrics import (
    GenRecord,
    VqaRecord,
    evaluate_generation,
    evaluate_vqa,
    format_metrics,
    tokenize,
)
from .pipeline import (
    Workspace,
    accept_remaining,
    run_sweep,
    sweep_rows_to_csv,
)
from .retrieval import RetrievalRequest


def _fail(message: str) -> None:
    click.echo(f"error: {message}".replace("\n", " "), err=True)
    sys.exit(1)


def _load_cfg(config: Optional[str], data: Optional[str], **overrides) -> RunConfig:
    try:
        cfg = load_config(Path(config) if config else None)
        if data:
            cfg.data_dir = Path(data)
        for key, value in overrides.items():
            if value is not None:
                setattr(cfg, key, value)
        cfg.__post_init__()
        return cfg
    except (ValueError, OSError) as exc:
        _fail(str(exc))


def _write_graph(cfg: RunConfig, graph: CausalGraph) -> None:
    path = cfg.resolve("graph")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(graph.to_json() + "\n", encoding="utf-8")


@click.group()
def main():
    """Causal retrieval pipeline driver."""


@main.command()
@click.option("--out", required=True, help="Output directory for the corpus files.")
@click.option(
    "--kind",
    type=click.Choice(["chain", "confounded"]),
    default="chain",
    show_default=True,
    help="Canned ground-truth layout.",
)
@click.option("--n-cases", type=int, default=5000, show_default=True)
@click.option("--n-chains", type=int, default=6, show_default=True)
@click.option("--n-queries", type=int, default=20, show_default=True)
@click.option("--confound", type=float, default=0.8, show_default=True)
@click.option("--sigma", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option(
    "--spurious-mode",
    type=click.Choice(["skip", "cross", "none"]),
    default="skip",
    show_default=True,
)
def synth_cmd(out, kind, n_cases, n_chains, n_queries, confound, sigma, seed, spurious_mode):
    """Generate a synthetic corpus with a known ground-truth graph."""
    try:
        if kind == "chain":
            spec = synth.chain_spec(
                n_chains=n_chains,
                n_cases=n_cases,
                seed=seed,
                spurious_mode=spurious_mode,
                sigma=sigma,
                n_queries=n_queries,
            )
        else:
            spec = synth.confounded_spec(
                n_chains=n_chains,
                n_cases=n_cases,
                confound_strength=confound,
                sigma=sigma,
                seed=seed,
                n_queries=n_queries,
            )
        corpus = synth.generate(spec)
        paths = corpus.write_to(Path(out))
        variables = [
            {"id": v[0], "kind": v[1], "label": v[2]} for v in sorted(spec.variables)
        ]
        (Path(out) / "variables.json").write_text(
            json.dumps(variables, indent=1, sort_keys=True) + "\n", encoding="utf-8"
        )
        click.echo(json.dumps({k: str(v) for k, v in paths.items()}, sort_keys=True))
    except CausalRagError as exc:
        _fail(f"{exc.code}: {exc.message}")


main.add_command(synth_cmd, name="synth")


@main.command()
@click.option("--config", default=None, help="Config file path (key = value lines).")
@click.option("--data", default=None, help="Data directory.")
def ingest(config, data):
    """Validate and load annotations + embeddings; print the ingestion report."""
    cfg = _load_cfg(config, data)
    try:
        ws = Workspace.load(cfg)
        click.echo(
            json.dumps(
                {
                    "cases": ws.corpus.case_count,
                    "reports": len(ws.corpus.reports),
                    "images": len(ws.corpus.images),
                    "image_embeddings": ws.store.count("image"),
                    "report_embeddings": ws.store.count("report"),
                },
                sort_keys=True,
            )
        )
    except (CausalRagError, FileNotFoundError) as exc:
        _fail(str(exc))


@main.command("build-graph")
@click.option("--config", default=None, help="Config file path.")
@click.option("--data", default=None, help="Data directory.")
@click.option("--floor", type=float, default=0.0, show_default=True, help="Confidence floor.")
@click.option(
    "--accept-remaining/--no-accept-remaining",
    "accept",
    default=False,
    show_default=True,
    help="Accept all surviving proposals (highest confidence first, skipping cycles).",
)
def build_graph(config, data, floor, accept):
    """Ingest edge proposals into a fresh or existing graph and save it."""
    cfg = _load_cfg(config, data)
    try:
        ws = Workspace.load(cfg)
        engine = ws.discovery()
        proposals_path = cfg.resolve("proposals")
        with proposals_path.open(encoding="utf-8") as fh:
            result = engine.ingest_proposals_jsonl(fh, floor)
        if accept:
            result["accepted"] = accept_remaining(ws.graph)
        _write_graph(cfg, ws.graph)
        result["graph_version"] = ws.graph.version
        click.echo(json.dumps(result, sort_keys=True))
    except (CausalRagError, FileNotFoundError, ValueError) as exc:
        _fail(str(exc))


@main.command()
@click.option("--config", default=None, help="Config file path.")
@click.option("--data", default=None, help="Data directory.")
@click.option("--significance", type=float, default=None, help="CI significance level.")
def prune(config, data, significance):
    """Prune mediated edges whose endpoints test conditionally independent."""
    cfg = _load_cfg(config, data, significance=significance)
    try:
        ws = Workspace.load(cfg)
        engine = ws.discovery()
        pruned = engine.prune_spurious(cfg.significance)
        _write_graph(cfg, ws.graph)
        click.echo(
            json.dumps(
                {
                    "pruned": [f"{e.src}->{e.dst}" for e in pruned],
                    "graph_version": ws.graph.version,
                },
                sort_keys=True,
            )
        )
    except (CausalRagError, FileNotFoundError, ValueError) as exc:
        _fail(str(exc))


@main.command()
@click.option("--config", default=None, help="Config file path.")
@click.option("--data", default=None, help="Data directory.")
@click.option("--tau", type=float, default=None, help="Fraction of proposed edges to remove.")
@click.option(
    "--accept-remaining/--no-accept-remaining",
    "accept",
    default=False,
    show_default=True,
    help="Accept the surviving proposals after refinement.",
)
def refine(config, data, tau, accept):
    """Remove the lowest-confidence fraction of proposed edges."""
    cfg = _load_cfg(config, data, tau=tau)
    try:
        ws = Workspace.load(cfg)
        engine = ws.discovery()
        removed = engine.refine_by_ratio(cfg.tau)
        if accept:
            accept_remaining(ws.graph)
        _write_graph(cfg, ws.graph)
        click.echo(
            json.dumps(
                {
                    "removed": [f"{e.src}->{e.dst}" for e in removed],
                    "graph_version": ws.graph.version,
                },
                sort_keys=True,
            )
        )
    except (CausalRagError, FileNotFoundError, ValueError) as exc:
        _fail(str(exc))


@main.command()
@click.option("--config", default=None, help="Config file path.")
@click.option("--data", default=None, help="Data directory.")
@click.option("--image", default=None, help="Query image id; defaults to manifest queries.")
@click.option("--alpha", type=float, default=None, help="Similarity blend weight.")
@click.option("--k", type=int, default=None, help="Result count.")
@click.option("--pool-multiplier", type=int, default=None)
@click.option("--theta", type=float, default=None, help="Blended-score threshold.")
@click.option("--discard-inconsistent", is_flag=True, default=False, show_default=True)
@click.option("--out", default=None, help="Write JSON output here instead of stdout.")
def retrieve(config, data, image, alpha, k, pool_multiplier, theta, discard_inconsistent, out):
    """Retrieve and rerank reports for one image or every manifest query."""
    cfg = _load_cfg(config, data, alpha=alpha, k=k, pool_multiplier=pool_multiplier)
    if theta is not None:
        cfg.theta = theta
    try:
        ws = Workspace.load(cfg)
        engine = ws.retrieval_engine(cfg)
        if image is not None:
            images = [image]
        else:
            manifest_path = Path(cfg.data_dir) / "manifest.json"
            if not manifest_path.exists():
                _fail("no --image given and no manifest.json with queries found")
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            images = [q["query_id"] for q in manifest["queries"]]
        results = {}
        for image_id in images:
            request = RetrievalRequest(
                image=image_id,
                k=cfg.k,
                pool_multiplier=cfg.pool_multiplier,
                alpha=cfg.alpha,
                theta=cfg.theta,
                discard_inconsistent=discard_inconsistent,
            )
            results[image_id] = [c.to_dict() for c in engine.retrieve(request)]
        payload = json.dumps(results, sort_keys=True, indent=1) + "\n"
        if out:
            Path(out).write_text(payload, encoding="utf-8")
        else:
            click.echo(payload, nl=False)
    except (CausalRagError, FileNotFoundError, ValueError) as exc:
        _fail(str(exc))


@main.command()
@click.option("--vqa", default=None, help="JSONL of {id, gold, predicted, confidence}.")
@click.option("--gen", default=None, help="JSONL of {id, candidate, references} (text or tokens).")
def evaluate(vqa, gen):
    """Compute evaluation metrics from JSONL records."""
    out = {}
    try:
        if vqa:
            records = []
            with open(vqa, encoding="utf-8") as fh:
                for i, line in enumerate(fh):
                    if not line.strip():
                        continue
                    d = json.loads(line)
                    records.append(
                        VqaRecord(
                            id=d.get("id", str(i)),
                            gold=int(d["gold"]),
                            predicted=int(d["predicted"]),
                            confidence=float(d.get("confidence", d["predicted"])),
                        )
                    )
            out.update(evaluate_vqa(records))
        if gen:
            records = []
            with open(gen, encoding="utf-8") as fh:
                for i, line in enumerate(fh):
                    if not line.strip():
                        continue
                    d = json.loads(line)
                    cand = d["candidate"]
                    refs = d["references"]
                    cand_tokens = tuple(tokenize(cand) if isinstance(cand, str) else cand)
                    ref_tokens = tuple(
                        tuple(tokenize(r) if isinstance(r, str) else r) for r in refs
                    )
                    records.append(
                        GenRecord(id=d.get("id", str(i)), candidate=cand_tokens, references=ref_tokens)
                    )
            out.update(evaluate_generation(records))
        if not out:
            _fail("nothing to evaluate; pass --vqa and/or --gen")
        click.echo(format_metrics({k: v for k, v in out.items() if v == v}))
    except (CausalRagError, FileNotFoundError, KeyError, ValueError) as exc:
        _fail(str(exc))


@main.command()
@click.option("--config", default=None, help="Config file path.")
@click.option("--data", default=None, help="Data directory.")
@click.option("--tau", default="0.0,0.5,0.7,0.9", show_default=True, help="Comma list.")
@click.option("--alpha", default=None, help="Comma list; defaults to the config alpha.")
@click.option("--k", default=None, help="Comma list; defaults to the config K.")
@click.option("--theta", default=None, help="Comma list; empty entry disables the filter.")
@click.option("--out", default=None, help="Write the CSV here instead of stdout.")
def sweep(config, data, tau, alpha, k, theta, out):
    """Grid over tau/alpha/K/theta; emits a CSV results table."""
    cfg = _load_cfg(config, data)
    try:
        taus = [float(x) for x in tau.split(",") if x != ""]
        alphas = [float(x) for x in alpha.split(",")] if alpha else [cfg.alpha]
        ks = [int(x) for x in k.split(",")] if k else [cfg.k]
        thetas = (
            [None if x == "" else float(x) for x in theta.split(",")] if theta else [cfg.theta]
        )
        manifest_path = Path(cfg.data_dir) / "manifest.json"
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        with cfg.resolve("proposals").open(encoding="utf-8") as fh:
            proposal_lines = [line.rstrip("\n") for line in fh if line.strip()]
        rows = run_sweep(cfg, manifest, proposal_lines, taus, alphas, ks, thetas)
        csv_text = sweep_rows_to_csv(rows)
        if out:
            Path(out).write_text(csv_text, encoding="utf-8")
        else:
            click.echo(csv_text, nl=False)
    except (CausalRagError, FileNotFoundError, ValueError) as exc:
        _fail(str(exc))


@main.command()
@click.option("--config", default=None, help="Config file path (or MCRAG_CONFIG env).")
@click.option("--data", default=None, help="Data directory.")
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
def serve(config, data, host, port):
    """Run the curation/retrieval HTTP service."""
    cfg = _load_cfg(config, data)
    if host:
        cfg.host = host
    if port:
        cfg.port = port
    from .service import serve as _serve

    try:
        _serve(cfg)
    except OSError as exc:
        _fail(f"PortInUse: {exc}")


if __name__ == "__main__":
    main()
