"""HTTP chat service endpoints exercised through an in-process test client."""

import pytest
from fastapi.testclient import TestClient

from convrec.kb import entities_of_type
from convrec.pipeline import PipelineConfig
from convrec.service import MAX_TEXT_LEN, checkpoint_sha256, create_app


@pytest.fixture(scope="module")
def client(corpus, trained, ckpt_path):
    kb, _, _ = corpus
    model, emb = trained
    app = create_app(model, kb, emb, PipelineConfig(),
                     checkpoint_hash=checkpoint_sha256(ckpt_path))
    with TestClient(app) as c:
        c.kb = kb
        yield c


def elicitation_text(corpus):
    _, splits, _ = corpus
    return next(
        d.turns[j - 1].text
        for d in splits["test"] for j, t in enumerate(d.turns)
        if t.speaker == "agent" and t.trigger)


class TestHealth:
    def test_reports_model_hash(self, client, ckpt_path):
        r = client.get("/v1/health")
        assert r.status_code == 200
        assert r.json() == {"status": "ok",
                            "model": checkpoint_sha256(ckpt_path)}


class TestSession:
    def test_create_defaults_to_hopskip(self, client):
        r = client.post("/v1/session", json={})
        assert r.status_code == 201
        doc = r.json()
        assert doc["decoder"] == "hopskip"
        assert doc["session_id"]

    def test_create_with_explicit_decoder(self, client):
        r = client.post("/v1/session", json={"decoder": "cold"})
        assert r.status_code == 201
        assert r.json()["decoder"] == "cold"

    def test_unknown_decoder_rejected(self, client):
        r = client.post("/v1/session", json={"decoder": "telepathy"})
        assert r.status_code == 400
        assert "decoder" in r.json()["error"]

    def test_distinct_ids(self, client):
        ids = {client.post("/v1/session", json={}).json()["session_id"]
               for _ in range(5)}
        assert len(ids) == 5


class TestMessage:
    def new_session(self, client):
        return client.post("/v1/session", json={}).json()["session_id"]

    def test_unknown_session_404(self, client):
        r = client.post("/v1/session/nope/message", json={"text": "hi"})
        assert r.status_code == 404

    def test_empty_text_422(self, client):
        sid = self.new_session(client)
        r = client.post(f"/v1/session/{sid}/message", json={"text": "   "})
        assert r.status_code == 422

    def test_oversized_text_422(self, client):
        sid = self.new_session(client)
        r = client.post(f"/v1/session/{sid}/message",
                        json={"text": "x" * (MAX_TEXT_LEN + 1)})
        assert r.status_code == 422

    def test_triggered_reply_names_entity(self, client, corpus):
        sid = self.new_session(client)
        r = client.post(f"/v1/session/{sid}/message",
                        json={"text": elicitation_text(corpus)})
        assert r.status_code == 200
        doc = r.json()
        assert doc["triggered"]
        assert doc["entity"] is not None
        assert doc["entity"]["name"] in doc["reply"]
        assert doc["candidates"][0]["id"] == doc["entity"]["id"]
        dist = doc["type_distribution"]
        assert set(dist) == set(client.kb.types)
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-6)
        assert doc["latency_ms"] >= 0

    def test_chitchat_reply_has_no_entity(self, client):
        sid = self.new_session(client)
        r = client.post(f"/v1/session/{sid}/message",
                        json={"text": "hello how are you today"})
        assert r.status_code == 200
        doc = r.json()
        if not doc["triggered"]:
            assert doc["entity"] is None
            assert doc["candidates"] == []


class TestHistory:
    def test_unknown_session_404(self, client):
        r = client.get("/v1/session/nope/history")
        assert r.status_code == 404

    def test_transcript_accumulates(self, client, corpus):
        sid = client.post("/v1/session", json={}).json()["session_id"]
        assert client.get(f"/v1/session/{sid}/history").json() == {"turns": []}
        text = elicitation_text(corpus)
        reply = client.post(f"/v1/session/{sid}/message",
                            json={"text": text}).json()["reply"]
        turns = client.get(f"/v1/session/{sid}/history").json()["turns"]
        assert turns == [{"speaker": "user", "text": text},
                         {"speaker": "agent", "text": reply}]


class TestKBEndpoint:
    def test_all_entities(self, client):
        doc = client.get("/v1/kb/entities").json()
        assert len(doc["entities"]) == len(client.kb.entities)
        first = doc["entities"][0]
        assert set(first) == {"id", "name", "type", "attributes"}

    def test_type_filter_matches_index(self, client):
        for i, tname in enumerate(client.kb.types):
            doc = client.get("/v1/kb/entities", params={"type": tname}).json()
            assert [e["id"] for e in doc["entities"]] == \
                entities_of_type(client.kb, i)

    def test_unknown_type_400(self, client):
        r = client.get("/v1/kb/entities", params={"type": "spaceship"})
        assert r.status_code == 400
