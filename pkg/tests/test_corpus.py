import json

import pytest

from causalrag.corpus import CorpusStore
from causalrag.errors import InvalidSmoothing, UnknownVariable

from conftest import make_graph


@pytest.fixture
def store(chain_graph):
    return CorpusStore(chain_graph)


def report(rid, mentioned, image_id=None, text=""):
    return {"report_id": rid, "image_id": image_id, "text": text, "mentioned": mentioned}


class TestIngestion:
    def test_clean_records(self, store):
        out = store.ingest_annotations(
            [
                {"image_id": "img1", "present": ["v_i"]},
                report("r1", ["v_f"], image_id="img1"),
                report("r2", ["v_f", "v_d"]),
            ]
        )
        assert out.accepted == 3 and out.rejected == 0

    def test_unknown_variable_rejected(self, store):
        out = store.ingest_annotations([report("r1", ["xyz"])])
        assert out.rejected == 1
        assert any("unknown variable" in r for r in out.reasons)

    def test_duplicate_report_rejected(self, store):
        out = store.ingest_annotations([report("r1", []), report("r1", [])])
        assert out.accepted == 1 and out.rejected == 1
        assert any("DuplicateId" in r for r in out.reasons)

    def test_stream_never_aborts(self, store):
        out = store.ingest_jsonl(
            [
                "not json at all",
                json.dumps(report("ok", ["v_f"])),
                json.dumps({"neither": 1}),
            ]
        )
        assert out.accepted == 1 and out.rejected == 2

    def test_image_present_must_be_image_features(self, store):
        out = store.ingest_annotations([{"image_id": "i1", "present": ["v_f"]}])
        assert out.rejected == 1

    def test_unpaired_report_has_image_features_absent(self, store):
        store.ingest_annotations([report("r1", ["v_f"])])
        assert store.joint_count({"v_i": 0, "v_f": 1}) == 1


class TestJointCount:
    @pytest.fixture
    def ten_cases(self, store):
        # handcrafted 10-case corpus: v_i and v_f jointly present in 4 cases
        rows = [
            ({"v_i"}, {"v_f"}),
            ({"v_i"}, {"v_f", "v_d"}),
            ({"v_i"}, {"v_f"}),
            ({"v_i"}, {"v_f", "v_d"}),
            ({"v_i"}, set()),
            (set(), {"v_f"}),
            (set(), set()),
            (set(), {"v_d"}),
            ({"v_i"}, {"v_d"}),
            (set(), set()),
        ]
        records = []
        for i, (img, rep) in enumerate(rows):
            records.append({"image_id": f"img{i}", "present": sorted(img)})
            records.append(report(f"r{i}", sorted(rep), image_id=f"img{i}"))
        out = store.ingest_annotations(records)
        assert out.rejected == 0
        return store, rows

    def test_empty_assignment_is_total(self, ten_cases):
        store, rows = ten_cases
        assert store.joint_count({}) == 10

    def test_contradiction_is_zero(self, store):
        store.ingest_annotations([report("r1", ["v_f"])])
        assert store.joint_count({"v_f": 1, "v_d": 1, "v_i": 1}) == 0

    def test_matches_linear_scan(self, ten_cases):
        store, rows = ten_cases
        cases = [img | rep for img, rep in rows]
        for assignment in (
            {"v_i": 1, "v_f": 1},
            {"v_i": 0, "v_d": 1},
            {"v_f": 0},
            {"v_i": 1, "v_f": 0, "v_d": 0},
        ):
            expected = sum(
                1
                for case in cases
                if all((var in case) == bool(bit) for var, bit in assignment.items())
            )
            assert store.joint_count(assignment) == expected

    def test_monotone_under_extension(self, ten_cases):
        store, _ = ten_cases
        assert store.joint_count({"v_i": 1, "v_f": 1}) <= store.joint_count({"v_i": 1})

    def test_unknown_variable(self, store):
        store.ingest_annotations([report("r1", [])])
        with pytest.raises(UnknownVariable):
            store.joint_count({"bogus": 1})


class TestEstimateCpt:
    def _corpus_with_counts(self, store, n11, n10, n01, n00):
        """n11 cases v_f=1 given v_i=1 etc. (counts of (v_i, v_f) pairs)."""
        records = []
        idx = 0
        for (i_bit, f_bit), count in (((1, 1), n11), ((1, 0), n10), ((0, 1), n01), ((0, 0), n00)):
            for _ in range(count):
                img = [f"v_i"] if i_bit else []
                men = ["v_f"] if f_bit else []
                records.append({"image_id": f"im{idx}", "present": img})
                records.append(report(f"r{idx}", men, image_id=f"im{idx}"))
                idx += 1
        out = store.ingest_annotations(records)
        assert out.rejected == 0

    def test_laplace_formula(self, store):
        # 90 of 100 parent=1 cases have the child: (90 + 1) / (100 + 2)
        self._corpus_with_counts(store, n11=90, n10=10, n01=0, n00=0)
        cpt = store.estimate_cpt("v_f", ["v_i"], 1.0)
        assert cpt.table[(1,)] == pytest.approx(91 / 102, abs=1e-9)
        assert cpt.table[(1,)] == pytest.approx(0.892157, abs=1e-6)

    def test_unseen_assignment_is_half(self, store):
        store.ingest_annotations([report("r0", [])])
        cpt = store.estimate_cpt("v_d", ["v_f"], 1.0)
        assert cpt.table[(1,)] == 0.5

    def test_zero_of_n(self, store):
        self._corpus_with_counts(store, n11=0, n10=0, n01=0, n00=25)
        cpt = store.estimate_cpt("v_f", ["v_i"], 1.0)
        assert cpt.table[(0,)] == pytest.approx(1 / 27, abs=1e-12)

    def test_probabilities_sum_to_one(self, store):
        self._corpus_with_counts(store, n11=7, n10=3, n01=2, n00=8)
        cpt = store.estimate_cpt("v_f", ["v_i"], 0.7)
        for bits in cpt.table:
            assert cpt.p(1, bits) + cpt.p(0, bits) == pytest.approx(1.0, abs=1e-12)

    def test_small_lambda_converges_to_frequency(self, store):
        self._corpus_with_counts(store, n11=90, n10=10, n01=5, n00=15)
        cpt = store.estimate_cpt("v_f", ["v_i"], 1e-9)
        assert cpt.table[(1,)] == pytest.approx(0.9, abs=1e-6)
        assert cpt.table[(0,)] == pytest.approx(0.25, abs=1e-6)

    def test_invalid_smoothing(self, store):
        with pytest.raises(InvalidSmoothing):
            store.estimate_cpt("v_f", ["v_i"], 0.0)

    def test_child_in_parents(self, store):
        with pytest.raises(ValueError):
            store.estimate_cpt("v_f", ["v_f"], 1.0)

    def test_estimate_all_cpts_covers_accepted_children(self, store):
        store.ingest_annotations([report("r0", [])])
        cpts = store.estimate_all_cpts()
        assert set(cpts) == {"v_f", "v_d"}
        assert cpts["v_f"].parents == ("v_i",)
