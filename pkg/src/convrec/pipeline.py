"""One system turn: trigger -> type filter -> entity scoring -> decoding."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import torch

from . import kb as kb_mod
from . import model as model_mod
from .decode import (
    DecodeConfig, DecodeMode, decode_cold, decode_hopskip, decode_unconstrained,
)
from .history import DialogHistory, Turn, build_unified_history, reverse_history
from .model import Direction, tokenize_words


@dataclass
class PipelineConfig:
    trigger_threshold: float = 0.5
    use_trigger: bool = True
    use_type_filter: bool = True
    decoder: DecodeConfig = field(default_factory=DecodeConfig)
    top_k_report: int = 10

    def __post_init__(self):
        if not 0.0 < self.trigger_threshold < 1.0:
            raise ValueError("trigger threshold must be in (0, 1)")


@dataclass
class TurnDecision:
    triggered: bool
    trigger_prob: float
    type_star: int | None
    type_probs: list
    candidates: list          # ranked (entity_id, score), truncated to top_k_report
    chosen: int | None
    utterance: str
    decoder_used: DecodeMode
    fallback_used: bool
    timings: dict


def user_turn_from_text(text: str, vocab, kb) -> Turn:
    words = tokenize_words(text)
    ids = tuple(vocab.index.get(w, vocab.unk_id) for w in words)
    mentions = tuple(kb_mod.link_mentions(words, kb))
    return Turn(speaker="user", tokens=ids, entity_mentions=mentions)


def rank_candidates(model, s: torch.Tensor, pool) -> list:
    scores = s @ model.V[:, list(pool)]
    order = torch.argsort(scores, descending=True, stable=True)
    return [(pool[int(i)], float(scores[int(i)].item())) for i in order]


def respond(model, kb, emb, history: DialogHistory, user_text: str,
            cfg: PipelineConfig) -> TurnDecision:
    timings = {}
    t0 = time.perf_counter()
    vocab = model.vocab
    next_user = user_turn_from_text(user_text, vocab, kb)
    hist = build_unified_history(
        history, next_user, vocab, model.config.max_context_length)
    h_vecs = hist.materialize(model.base_emb.weight, emb.vectors)
    timings["history_ms"] = (time.perf_counter() - t0) * 1000

    t0 = time.perf_counter()
    with torch.no_grad():
        s = model.encode_vectors(h_vecs.unsqueeze(0))[0, -1]
        trig_p = float(model_mod.trigger_score(model, s).item())
        type_probs = model_mod.type_distribution(model, s).tolist()
    timings["encode_ms"] = (time.perf_counter() - t0) * 1000

    triggered = trig_p >= cfg.trigger_threshold if cfg.use_trigger else True
    type_star = None
    candidates: list = []
    chosen = None
    fallback = False
    decoder_used = cfg.decoder.mode if triggered else DecodeMode.GREEDY

    t0 = time.perf_counter()
    with torch.no_grad():
        if triggered:
            type_star = model_mod.predict_type(model, s)
            if cfg.use_type_filter:
                pool = kb_mod.entities_of_type(kb, type_star)
                if not pool:
                    pool = [e.id for e in kb.entities]
                    fallback = True
            else:
                pool = [e.id for e in kb.entities]
            ranked = rank_candidates(model, s, pool)
            candidates = ranked[: cfg.top_k_report]
            chosen = ranked[0][0]
    timings["rank_ms"] = (time.perf_counter() - t0) * 1000

    t0 = time.perf_counter()
    with torch.no_grad():
        if triggered and cfg.decoder.mode is DecodeMode.HOPSKIP:
            rev_vecs = reverse_history(hist).materialize(
                model.base_emb.weight, emb.vectors)
            surface = vocab.encode(kb.entities[chosen].name)
            result = decode_hopskip(
                model, h_vecs, rev_vecs, chosen, emb.vectors[chosen],
                surface, cfg.decoder)
        elif triggered and cfg.decoder.mode is DecodeMode.COLD:
            mandatory = set(vocab.encode(kb.entities[chosen].name))
            result = decode_cold(model, h_vecs, mandatory, cfg.decoder)
        elif triggered and cfg.decoder.mode in (DecodeMode.GREEDY, DecodeMode.BEAM):
            result = decode_unconstrained(model, h_vecs, cfg.decoder)
        else:
            greedy_cfg = DecodeConfig(mode=DecodeMode.GREEDY, max_len=cfg.decoder.max_len)
            result = decode_unconstrained(model, h_vecs, greedy_cfg)
    timings["decode_ms"] = (time.perf_counter() - t0) * 1000

    return TurnDecision(
        triggered=triggered,
        trigger_prob=trig_p,
        type_star=type_star,
        type_probs=type_probs,
        candidates=candidates,
        chosen=chosen,
        utterance=vocab.decode(result.tokens),
        decoder_used=decoder_used,
        fallback_used=fallback,
        timings=timings,
    )
