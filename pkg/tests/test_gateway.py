import json

import httpx
import pytest

from causalrag.errors import (
    BadStatus,
    MissingAnnotation,
    SchemaError,
    UnknownTemplate,
)
from causalrag.gateway import (
    HttpClientConfig,
    HttpEmbedderClient,
    HttpExtractorClient,
    OfflineFixtureClient,
    assemble_prompt,
    registered_templates,
)


class Cand:
    def __init__(self, report_id, score):
        self.report_id = report_id
        self.score = score


class Ann:
    def __init__(self, text):
        self.text = text


ANNS = {"r1": Ann("left basal opacity"), "r2": Ann("clear lungs")}


class TestAssemblePrompt:
    def test_ranked_evidence(self):
        payload, text = assemble_prompt(
            "img7", "pneumonia?", [Cand("r1", 0.91234), Cand("r2", 0.5)], ANNS
        )
        assert "[1] (score=0.9123) left basal opacity" in text
        assert "[2] (score=0.5000) clear lungs" in text
        assert text.index("[1]") < text.index("[2]")
        assert payload.evidence[0].report_id == "r1"
        assert "Question: pneumonia?" in text

    def test_no_evidence_block(self):
        _, text = assemble_prompt("img7", None, [], ANNS)
        assert "No retrieved evidence" in text

    def test_unknown_template(self):
        with pytest.raises(UnknownTemplate):
            assemble_prompt("img7", None, [], ANNS, template_id="nope")

    def test_missing_annotation(self):
        with pytest.raises(MissingAnnotation):
            assemble_prompt("img7", None, [Cand("ghost", 0.1)], ANNS)

    def test_deterministic(self):
        args = ("img7", "q?", [Cand("r1", 0.25), Cand("r2", -0.5)], ANNS)
        assert assemble_prompt(*args)[1] == assemble_prompt(*args)[1]

    def test_length_monotone_in_evidence(self):
        cands = [Cand("r1", 0.9), Cand("r2", 0.5)]
        lens = [len(assemble_prompt("i", "q", cands[:k], ANNS)[1]) for k in range(3)]
        assert lens[1] > len(assemble_prompt("i", "q", [], ANNS)[1]) or lens[0] < lens[1]
        assert lens[1] < lens[2]

    def test_report_template_registered(self):
        assert registered_templates() == ["default", "report"]
        _, text = assemble_prompt("img7", None, [Cand("r1", 0.9)], ANNS, template_id="report")
        assert text.startswith("Write a radiology report")


def mock_client(handler, cls=HttpEmbedderClient, **kwargs):
    config = HttpClientConfig(base_url="http://model.test", retry_backoff_s=0.0)
    return cls(config, transport=httpx.MockTransport(handler), **kwargs)


class TestHttpEmbedder:
    def test_success(self):
        def handler(request):
            body = json.loads(request.content)
            assert body["inputs"]["modality"] == "image"
            return httpx.Response(200, json={"outputs": [0.1, 0.2]})

        client = mock_client(handler)
        assert client.embed("image", "img1") == [0.1, 0.2]

    def test_retry_once_then_succeed(self):
        calls = []

        def handler(request):
            calls.append(1)
            if len(calls) == 1:
                return httpx.Response(500)
            return httpx.Response(200, json={"outputs": [1.0]})

        client = mock_client(handler)
        assert client.embed("image", "img1") == [1.0]
        assert len(calls) == 2

    def test_two_failures_raise(self):
        def handler(request):
            return httpx.Response(503)

        client = mock_client(handler)
        with pytest.raises(BadStatus):
            client.embed("image", "img1")

    def test_malformed_vector(self):
        def handler(request):
            return httpx.Response(200, json={"outputs": "not a vector"})

        client = mock_client(handler)
        with pytest.raises(SchemaError):
            client.embed("image", "img1")


class TestHttpExtractor:
    def test_rejects_non_image_variable(self, chain_graph):
        def handler(request):
            return httpx.Response(200, json={"outputs": {"v_f": 0.9}})

        client = mock_client(handler, cls=HttpExtractorClient, graph=chain_graph)
        with pytest.raises(SchemaError):
            client.extract_variables("img1")

    def test_accepts_image_features(self, chain_graph):
        def handler(request):
            return httpx.Response(200, json={"outputs": {"v_i": 0.8}})

        client = mock_client(handler, cls=HttpExtractorClient, graph=chain_graph)
        assert client.extract_variables("img1") == {"v_i": 0.8}

    def test_unknown_variable(self, chain_graph):
        def handler(request):
            return httpx.Response(200, json={"outputs": {"ghost": 0.8}})

        client = mock_client(handler, cls=HttpExtractorClient, graph=chain_graph)
        with pytest.raises(SchemaError):
            client.extract_variables("img1")


class TestOfflineFixtures:
    @pytest.fixture
    def fixture_dir(self, tmp_path):
        (tmp_path / "embeddings.json").write_text(json.dumps({"image/img1": [0.5, 0.5]}))
        (tmp_path / "extractions.json").write_text(json.dumps({"img1": {"v_i": 0.9}}))
        (tmp_path / "generations.json").write_text(json.dumps({"img1": "canned answer"}))
        return tmp_path

    def test_embed(self, fixture_dir):
        client = OfflineFixtureClient(fixture_dir)
        assert client.embed("image", "img1") == [0.5, 0.5]
        with pytest.raises(SchemaError):
            client.embed("image", "missing")

    def test_extract_with_graph_check(self, fixture_dir, chain_graph):
        client = OfflineFixtureClient(fixture_dir, graph=chain_graph)
        assert client.extract_variables("img1") == {"v_i": 0.9}
        assert client.extract_variables("img_other") == {}

    def test_generate_and_echo_fallback(self, fixture_dir):
        client = OfflineFixtureClient(fixture_dir)
        payload, rendered = assemble_prompt("img1", None, [], {})
        assert client.generate(payload, rendered) == "canned answer"
        payload2, rendered2 = assemble_prompt("img2", None, [], {})
        assert client.generate(payload2, rendered2) == rendered2

    def test_missing_files_tolerated(self, tmp_path):
        client = OfflineFixtureClient(tmp_path)
        assert client.extract_variables("anything") == {}
