"""HTTP chat service: sessions, per-turn responses with introspection, KB browsing."""

from __future__ import annotations

import hashlib
import threading
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field, replace

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import kb as kb_mod
from .decode import DecodeConfig, DecodeMode
from .history import DialogHistory, Turn
from .model import tokenize_words
from .pipeline import PipelineConfig, respond

MAX_SESSIONS = 1000
MAX_TEXT_LEN = 512

DECODER_NAMES = {m.value: m for m in DecodeMode}


@dataclass
class Session:
    id: str
    decoder: DecodeMode
    turns: list = field(default_factory=list)        # token-level Turn objects
    transcript: list = field(default_factory=list)   # {"speaker", "text"} dicts
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    """In-memory LRU session map; per-session serialization via Session.lock."""

    def __init__(self, max_sessions=MAX_SESSIONS):
        self.max_sessions = max_sessions
        self._sessions: OrderedDict[str, Session] = OrderedDict()
        self._lock = threading.Lock()

    def create(self, decoder: DecodeMode) -> Session:
        session = Session(id=uuid.uuid4().hex, decoder=decoder)
        with self._lock:
            self._sessions[session.id] = session
            while len(self._sessions) > self.max_sessions:
                self._sessions.popitem(last=False)
        return session

    def get(self, session_id: str) -> Session | None:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is not None:
                self._sessions.move_to_end(session_id)
            return session


def _error(status, message):
    return JSONResponse(status_code=status, content={"error": message})


def create_app(model, kb, emb, pipeline_cfg: PipelineConfig | None = None,
               checkpoint_hash: str = "", allow_origin: str | None = None) -> FastAPI:
    cfg = pipeline_cfg or PipelineConfig()
    store = SessionStore()
    app = FastAPI(title="convrec")
    if allow_origin:
        app.add_middleware(
            CORSMiddleware, allow_origins=[allow_origin],
            allow_methods=["*"], allow_headers=["*"])

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "model": checkpoint_hash}

    @app.post("/v1/session", status_code=201)
    def create_session(body: dict | None = None):
        name = (body or {}).get("decoder", "hopskip")
        if name not in DECODER_NAMES:
            return _error(400, f"unknown decoder {name!r}")
        session = store.create(DECODER_NAMES[name])
        return {"session_id": session.id, "decoder": name}

    @app.post("/v1/session/{session_id}/message")
    def message(session_id: str, body: dict):
        session = store.get(session_id)
        if session is None:
            return _error(404, "unknown session")
        text = body.get("text", "")
        if not isinstance(text, str) or not text.strip():
            return _error(422, "text must be a non-empty string")
        if len(text) > MAX_TEXT_LEN:
            return _error(422, f"text longer than {MAX_TEXT_LEN} characters")
        with session.lock:
            turn_cfg = replace(cfg, decoder=replace(cfg.decoder, mode=session.decoder))
            decision = respond(
                model, kb, emb, DialogHistory(session.turns), text, turn_cfg)
            words = tokenize_words(text)
            session.turns.append(Turn(
                speaker="user",
                tokens=tuple(model.vocab.index.get(w, model.vocab.unk_id) for w in words),
                entity_mentions=tuple(kb_mod.link_mentions(words, kb)),
            ))
            reply_words = tokenize_words(decision.utterance)
            session.turns.append(Turn(
                speaker="agent",
                tokens=tuple(model.vocab.index.get(w, model.vocab.unk_id)
                             for w in reply_words),
                entity_mentions=tuple(kb_mod.link_mentions(reply_words, kb)),
            ))
            session.transcript.append({"speaker": "user", "text": text})
            session.transcript.append({"speaker": "agent", "text": decision.utterance})
        entity = None
        if decision.chosen is not None:
            ent = kb.entities[decision.chosen]
            entity = {"id": ent.id, "name": ent.name, "type": kb.types[ent.type_id]}
        return {
            "reply": decision.utterance,
            "triggered": decision.triggered,
            "entity": entity,
            "candidates": [
                {"id": eid, "name": kb.entities[eid].name, "score": score}
                for eid, score in decision.candidates
            ],
            "type_distribution": {
                kb.types[i]: p for i, p in enumerate(decision.type_probs)
            },
            "latency_ms": sum(decision.timings.values()),
        }

    @app.get("/v1/session/{session_id}/history")
    def history(session_id: str):
        session = store.get(session_id)
        if session is None:
            return _error(404, "unknown session")
        with session.lock:
            return {"turns": list(session.transcript)}

    @app.get("/v1/kb/entities")
    def kb_entities(type: str | None = None):
        if type is None:
            ids = [e.id for e in kb.entities]
        else:
            if type not in kb.types:
                return _error(400, f"unknown type {type!r}")
            ids = kb_mod.entities_of_type(kb, kb.types.index(type))
        return {"entities": [
            {
                "id": eid,
                "name": kb.entities[eid].name,
                "type": kb.types[kb.entities[eid].type_id],
                "attributes": dict(kb.entities[eid].attributes),
            }
            for eid in ids
        ]}

    return app


def checkpoint_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
