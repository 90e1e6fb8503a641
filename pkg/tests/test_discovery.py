import itertools
import math

import numpy as np
import pytest

from causalrag.corpus import CorpusStore
from causalrag.discovery import (
    DiscoveryEngine,
    EdgeProposal,
    ReviewDecision,
    g_test,
)
from causalrag.errors import InvalidRatio, NotPending, StaleVersion
from causalrag.graph import EdgeStatus, Provenance

from conftest import make_graph
from oracles import chi2_sf_numeric, g_statistic_bruteforce


def engine_for(graph, cases=()):
    """cases: list of sets of present variable ids."""
    store = CorpusStore(graph)
    records = []
    all_vars = {v.id for v in graph.variables()}
    image_vars = {v.id for v in graph.variables() if v.kind.value == "ImageFeature"}
    for i, present in enumerate(cases):
        assert present <= all_vars
        records.append({"image_id": f"im{i}", "present": sorted(present & image_vars)})
        records.append(
            {
                "report_id": f"r{i}",
                "image_id": f"im{i}",
                "text": "",
                "mentioned": sorted(present - image_vars),
            }
        )
    out = store.ingest_annotations(records)
    assert out.rejected == 0
    return DiscoveryEngine(graph, store)


class TestIngestProposals:
    def test_threshold_split(self, chain_graph):
        eng = engine_for(chain_graph)
        out = eng.ingest_proposals(
            [EdgeProposal("v_i", "v_f", 0.9), EdgeProposal("v_i", "v_d", 0.2)],
            confidence_floor=0.5,
        )
        assert out["added"] == 1 and out["below_floor"] == 1

    def test_max_merge(self, chain_graph):
        eng = engine_for(chain_graph)
        eng.ingest_proposals(
            [EdgeProposal("v_i", "v_d", 0.4), EdgeProposal("v_i", "v_d", 0.8)], 0.0
        )
        edge = chain_graph.get_edge("v_i", "v_d")
        assert edge.confidence == 0.8
        assert len([e for e in chain_graph.edges() if (e.src, e.dst) == ("v_i", "v_d")]) == 1

    def test_five_distinct(self):
        g = make_graph([(f"v{i}", "Finding") for i in range(6)])
        eng = engine_for(g)
        proposals = [EdgeProposal(f"v{i}", f"v{i+1}", 0.5) for i in range(5)]
        out = eng.ingest_proposals(proposals, 0.0)
        assert out["added"] == 5

    def test_unknown_variable_reported_not_fatal(self, chain_graph):
        eng = engine_for(chain_graph)
        out = eng.ingest_proposals(
            [EdgeProposal("v_i", "ghost", 0.9), EdgeProposal("v_i", "v_f", 0.9)], 0.0
        )
        assert out["added"] == 1 and len(out["errors"]) == 1


class TestCiTest:
    def test_perfectly_mediated_counts(self, chain_graph):
        # counts factorize within each stratum of the mediator: G must be 0
        cases = []
        for m in (0, 1):
            for x in (0, 1):
                for y in (0, 1):
                    # p(x|m) * p(y|m) factorized with multiplicities
                    n = (3 if x == m else 1) * (4 if y == m else 2)
                    for _ in range(n):
                        present = set()
                        if x:
                            present.add("v_i")
                        if m:
                            present.add("v_f")
                        if y:
                            present.add("v_d")
                        cases.append(present)
        eng = engine_for(chain_graph, cases)
        result = eng.ci_test("v_i", "v_d", {"v_f"})
        assert result.statistic == pytest.approx(0.0, abs=1e-9)
        assert result.p_value == pytest.approx(1.0, abs=1e-9)

    def test_identical_variables_dependent(self, chain_graph):
        cases = [{"v_i", "v_d"} if i % 2 else set() for i in range(100)]
        eng = engine_for(chain_graph, cases)
        result = eng.ci_test("v_i", "v_d", set())
        assert result.p_value < 1e-6

    def test_fixed_2x2x2_matches_bruteforce(self, chain_graph):
        counts = {
            (0, 0, 0): 30, (0, 0, 1): 10, (0, 1, 0): 12, (0, 1, 1): 18,
            (1, 0, 0): 8, (1, 0, 1): 22, (1, 1, 0): 20, (1, 1, 1): 40,
        }
        cases = []
        dict_cases = []
        for (x, z, y), n in counts.items():
            for _ in range(n):
                present = set()
                if x:
                    present.add("v_i")
                if z:
                    present.add("v_f")
                if y:
                    present.add("v_d")
                cases.append(present)
                dict_cases.append({"v_i": x, "v_f": z, "v_d": y})
        eng = engine_for(chain_graph, cases)
        result = eng.ci_test("v_i", "v_d", {"v_f"})
        expected_g, _ = g_statistic_bruteforce(dict_cases, "v_i", "v_d", ["v_f"])
        assert result.statistic == pytest.approx(expected_g, abs=1e-9)
        assert result.dof == 2
        assert result.p_value == pytest.approx(chi2_sf_numeric(expected_g, 2), abs=1e-9)

    def test_symmetric_in_x_and_y(self, chain_graph):
        rng = np.random.default_rng(11)
        for _ in range(20):
            cases = []
            for _ in range(rng.integers(20, 60)):
                present = {v for v in ("v_i", "v_f", "v_d") if rng.random() < 0.5}
                cases.append(present)
            eng = engine_for(chain_graph, cases)
            a = eng.ci_test("v_i", "v_d", {"v_f"})
            b = eng.ci_test("v_d", "v_i", {"v_f"})
            assert a.statistic == pytest.approx(b.statistic, abs=1e-12)
            assert a.p_value == pytest.approx(b.p_value, abs=1e-12)

    def test_degenerate_constant_variable(self, chain_graph):
        cases = [{"v_i"} for _ in range(20)]  # v_d never present
        eng = engine_for(chain_graph, cases)
        result = eng.ci_test("v_i", "v_d", set())
        assert result.degenerate is True
        assert result.p_value == 1.0

    def test_zero_total_strata_skipped(self, chain_graph):
        # all cases have v_f = 1; the v_f = 0 stratum is empty
        cases = [{"v_f", "v_i"}, {"v_f", "v_d"}, {"v_f"}, {"v_f", "v_i", "v_d"}] * 5
        eng = engine_for(chain_graph, cases)
        result = eng.ci_test("v_i", "v_d", {"v_f"})
        assert result.dof == 2
        assert 0.0 <= result.p_value <= 1.0


class TestGTestCalibration:
    def test_uniformish_p_under_true_chain(self):
        # X -> M -> Y; test X indep Y | M on fresh draws
        rejections = 0
        n_draws = 200
        for seed in range(n_draws):
            rng = np.random.default_rng(np.random.Philox(seed))
            n = 2000
            x = (rng.random(n) < 0.5).astype(np.uint8)
            m = (rng.random(n) < np.where(x == 1, 0.9, 0.1)).astype(np.uint8)
            y = (rng.random(n) < np.where(m == 1, 0.8, 0.2)).astype(np.uint8)
            result = g_test(x, y, m.reshape(-1, 1))
            if result.p_value < 0.05:
                rejections += 1
        assert 0.01 <= rejections / n_draws <= 0.12


class TestPruneSpurious:
    def _chain_engine_with_direct_edge(self, n=5000, seed=0):
        from causalrag import synth
        from causalrag.pipeline import accept_remaining

        spec = synth.chain_spec(n_chains=1, n_cases=n, seed=seed)
        corp = synth.generate(spec)
        graph = make_graph(
            [(v[0], v[1]) for v in spec.variables]
        )
        store = CorpusStore(graph)
        store.ingest_jsonl(corp.annotation_lines)
        eng = DiscoveryEngine(graph, store)
        eng.ingest_proposals_jsonl(corp.proposal_lines)
        accept_remaining(graph)
        return eng

    def test_direct_edge_pruned_chain_kept(self):
        eng = self._chain_engine_with_direct_edge()
        pruned = eng.prune_spurious(0.01)
        assert [(e.src, e.dst) for e in pruned] == [("i0", "d0")]
        assert eng.graph.get_edge("i0", "f0").status == EdgeStatus.ACCEPTED
        assert eng.graph.get_edge("f0", "d0").status == EdgeStatus.ACCEPTED
        evidence = pruned[0].evidence
        assert evidence.ci_p_value > 0.01
        assert set(evidence.conditional_probs) == {"p(dst=1|src=1)", "p(dst=1|src=0)"}
        assert evidence.sample_count == 5000

    def test_no_mediated_paths_noop(self, chain_graph):
        eng = engine_for(chain_graph, [{"v_i"}, {"v_f"}])
        # only direct edges exist, none mediated
        assert eng.prune_spurious(0.01) == []

    def test_rejection_keeps_edge(self, chain_graph):
        # strong dependence even given the mediator: edge must survive
        cases = []
        for _ in range(200):
            cases.append({"v_i", "v_f", "v_d"})
            cases.append({"v_f"})
            cases.append(set())
        eng = engine_for(chain_graph, cases)
        chain_graph.propose_edge("v_i", "v_d", 0.9)
        result = eng.ci_test("v_i", "v_d", {"v_f"})
        assert result.p_value < 0.01
        assert eng.prune_spurious(0.01) == []
        assert chain_graph.get_edge("v_i", "v_d").status == EdgeStatus.PROPOSED

    def test_never_prunes_unmediated_property(self):
        rng = np.random.default_rng(5)
        for trial in range(10):
            n_vars = 5
            g = make_graph([(f"v{i}", "Finding") for i in range(n_vars)])
            cases = [
                {f"v{i}" for i in range(n_vars) if rng.random() < 0.5} for _ in range(50)
            ]
            eng = engine_for(g, cases)
            for i in range(n_vars):
                for j in range(n_vars):
                    if i != j and rng.random() < 0.3:
                        g.propose_edge(f"v{i}", f"v{j}", float(rng.random()))
            mediated_before = {
                (e.src, e.dst): bool(g.mediated_paths(e.src, e.dst)) for e in g.edges()
            }
            pruned = eng.prune_spurious(0.5)
            for e in pruned:
                assert mediated_before[(e.src, e.dst)] or any(
                    True for _ in ()
                ), f"{e.src}->{e.dst} pruned without a mediated path"


class TestRefineByRatio:
    def _graph_with_proposals(self, confidences):
        n = len(confidences) + 1
        g = make_graph([(f"v{i}", "Finding") for i in range(n)])
        for i, c in enumerate(confidences):
            g.propose_edge(f"v{i}", f"v{i+1}", c)
        return g

    def test_tau_zero_identity(self):
        g = self._graph_with_proposals([0.5, 0.6])
        eng = DiscoveryEngine(g, CorpusStore(g))
        before = g.to_dict()["edges"]
        assert eng.refine_by_ratio(0.0) == []
        assert g.to_dict()["edges"] == before

    def test_tau_one_removes_all(self):
        g = self._graph_with_proposals([0.5, 0.6, 0.7])
        eng = DiscoveryEngine(g, CorpusStore(g))
        removed = eng.refine_by_ratio(1.0)
        assert len(removed) == 3
        assert g.edges(EdgeStatus.PROPOSED) == []

    def test_seven_lowest_of_ten(self):
        confidences = [0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95]
        g = self._graph_with_proposals(confidences)
        eng = DiscoveryEngine(g, CorpusStore(g))
        removed = eng.refine_by_ratio(0.7)
        # independent sort-and-count oracle
        expected = sorted(confidences)[: math.floor(0.7 * 10)]
        assert [e.confidence for e in removed] == expected

    def test_deterministic_removal_list(self):
        for _ in range(3):
            g = self._graph_with_proposals([0.5, 0.5, 0.5, 0.9])
            eng = DiscoveryEngine(g, CorpusStore(g))
            removed = [f"{e.src}->{e.dst}" for e in eng.refine_by_ratio(0.5)]
            assert removed == ["v0->v1", "v1->v2"]  # ties broken lexicographically

    def test_invalid_ratio(self):
        g = self._graph_with_proposals([0.5])
        eng = DiscoveryEngine(g, CorpusStore(g))
        with pytest.raises(InvalidRatio):
            eng.refine_by_ratio(1.5)


class TestListPending:
    def test_no_evidence_lexicographic(self):
        g = make_graph([("v_i", "ImageFeature"), ("v_f", "Finding"), ("v_d", "Diagnosis")])
        eng = engine_for(g)
        g.propose_edge("v_i", "v_d", 0.5)
        g.propose_edge("v_f", "v_d", 0.5)
        g.propose_edge("v_i", "v_f", 0.5)
        entries = eng.list_pending()
        assert [(e.edge.src, e.edge.dst) for e in entries] == [
            ("v_f", "v_d"), ("v_i", "v_d"), ("v_i", "v_f"),
        ]

    def test_pruned_edges_absent(self):
        from causalrag.pipeline import accept_remaining

        eng = TestPruneSpurious()._chain_engine_with_direct_edge(n=3000, seed=1)
        # put one extra proposal in to stay pending
        eng.graph.propose_edge("d0", "f0", 0.2)
        eng.prune_spurious(0.01)
        pending = {(e.edge.src, e.edge.dst) for e in eng.list_pending()}
        assert ("i0", "d0") not in pending

    def test_count_matches_proposed(self):
        rng = np.random.default_rng(3)
        for trial in range(100):
            n = int(rng.integers(2, 7))
            g = make_graph([(f"v{i}", "Finding") for i in range(n)])
            for i in range(n):
                for j in range(n):
                    if i != j and rng.random() < 0.4:
                        g.propose_edge(f"v{i}", f"v{j}", float(rng.random()))
            eng = DiscoveryEngine(g, CorpusStore(g))
            assert len(eng.list_pending()) == len(g.edges(EdgeStatus.PROPOSED))


class TestRecordDecision:
    def test_accept(self, chain_graph):
        eng = engine_for(chain_graph)
        chain_graph.propose_edge("v_i", "v_d", 0.5)
        version = eng.record_decision(
            ReviewDecision("v_i", "v_d", "Accept", reviewer="dr-a")
        )
        assert chain_graph.get_edge("v_i", "v_d").status == EdgeStatus.ACCEPTED
        assert version == chain_graph.version

    def test_reject_appends_audit(self, chain_graph):
        eng = engine_for(chain_graph)
        chain_graph.propose_edge("v_i", "v_d", 0.5)
        eng.record_decision(ReviewDecision("v_i", "v_d", "Reject", reviewer="dr-a"))
        assert chain_graph.get_edge("v_i", "v_d").status == EdgeStatus.PRUNED
        assert chain_graph.get_edge("v_i", "v_d").provenance == Provenance.MANUAL_DECISION
        assert len(eng.audit_log) == 1

    def test_cycle_acceptance_atomic(self, chain_graph):
        eng = engine_for(chain_graph)
        chain_graph.propose_edge("v_d", "v_i", 0.5)
        version = chain_graph.version
        from causalrag.errors import CycleError

        with pytest.raises(CycleError):
            eng.record_decision(ReviewDecision("v_d", "v_i", "Accept", reviewer="x"))
        assert chain_graph.version == version
        assert chain_graph.get_edge("v_d", "v_i").status == EdgeStatus.PROPOSED
        assert eng.audit_log == []

    def test_not_pending(self, chain_graph):
        eng = engine_for(chain_graph)
        with pytest.raises(NotPending):
            eng.record_decision(ReviewDecision("v_i", "v_f", "Accept", reviewer="x"))

    def test_stale_version(self, chain_graph):
        eng = engine_for(chain_graph)
        chain_graph.propose_edge("v_i", "v_d", 0.5)
        with pytest.raises(StaleVersion):
            eng.record_decision(
                ReviewDecision("v_i", "v_d", "Accept", reviewer="x"),
                expected_version=chain_graph.version - 1,
            )
        assert chain_graph.get_edge("v_i", "v_d").status == EdgeStatus.PROPOSED
