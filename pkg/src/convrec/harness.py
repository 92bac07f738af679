"""Corpus-level evaluation: retrieval, generation, and component metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from . import kb as kb_mod
from . import metrics as metrics_mod
from . import model as model_mod
from .history import DialogHistory, build_unified_history
from .metrics import MetricsReport, RankedList
from .model import tokenize_words
from .pipeline import PipelineConfig, rank_candidates, respond, user_turn_from_text
from .train import dialog_to_turns


@dataclass
class EvalExtras:
    trigger_precision: float = 0.0
    trigger_recall: float = 0.0
    trigger_f1: float = 0.0
    type_accuracy: float = 0.0
    constraint_rate: float = 0.0  # triggered turns whose reply names the chosen entity
    ranked_lists: list = field(default_factory=list)


def _f1(tp, fp, fn):
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


def evaluate(model, kb, emb, dialogs, cfg: PipelineConfig):
    """Run the pipeline over every agent turn with teacher-forced gold context.

    Retrieval metrics are computed on gold recommendation turns regardless of
    the trigger decision (the trigger is scored separately).
    """
    type_of_name = {name: i for i, name in enumerate(kb.types)}
    ranked_lists = []
    preds, golds = [], []
    tp = fp = fn = 0
    type_hits = type_total = 0
    sat_hits = sat_total = 0
    with torch.no_grad():
        for dialog in dialogs:
            tturns = dialog_to_turns(dialog, kb=kb, vocab=model.vocab)
            for j, raw in enumerate(dialog.turns):
                if raw.speaker != "agent":
                    continue
                history = DialogHistory(tturns[: j - 1] if j >= 1 else [])
                user_text = dialog.turns[j - 1].text if j >= 1 else ""
                decision = respond(model, kb, emb, history, user_text, cfg)
                preds.append(decision.utterance)
                golds.append(raw.text)
                gold_trig = bool(raw.trigger)
                if decision.triggered and gold_trig:
                    tp += 1
                elif decision.triggered:
                    fp += 1
                elif gold_trig:
                    fn += 1
                if decision.triggered and decision.chosen is not None:
                    sat_total += 1
                    name = kb.entities[decision.chosen].name.casefold()
                    sat_hits += int(name in decision.utterance.casefold())
                if gold_trig:
                    hist = build_unified_history(
                        history, user_turn_from_text(user_text, model.vocab, kb),
                        model.vocab, model.config.max_context_length)
                    s = model.encode_vectors(
                        hist.materialize(model.base_emb.weight, emb.vectors).unsqueeze(0)
                    )[0, -1]
                    t_star = model_mod.predict_type(model, s)
                    gold_type = type_of_name[raw.gold_type]
                    type_hits += int(t_star == gold_type)
                    type_total += 1
                    if cfg.use_type_filter:
                        pool = kb_mod.entities_of_type(kb, t_star)
                        if not pool:
                            pool = [e.id for e in kb.entities]
                    else:
                        pool = [e.id for e in kb.entities]
                    ranked = rank_candidates(model, s, pool)
                    ranked_lists.append(RankedList(
                        candidates=tuple(eid for eid, _ in ranked),
                        gold=raw.gold_entity))

    recall_at = {k: metrics_mod.recall_at_k(ranked_lists, k) for k in (1, 10, 50)} \
        if ranked_lists else {1: 0.0, 10: 0.0, 50: 0.0}
    report = MetricsReport(
        recall_at=recall_at,
        mrr=metrics_mod.mrr(ranked_lists) if ranked_lists else 0.0,
        bleu1=metrics_mod.corpus_bleu_n(
            [tokenize_words(t) for t in preds], [tokenize_words(t) for t in golds], 1),
        bleu2=metrics_mod.corpus_bleu_n(
            [tokenize_words(t) for t in preds], [tokenize_words(t) for t in golds], 2),
        entity_f1=metrics_mod.entity_f1(preds, golds, kb),
        multiset_f1=metrics_mod.multiset_entity_f1(preds, golds, kb),
        n_examples=len(preds),
    )
    p, r, f1 = _f1(tp, fp, fn)
    extras = EvalExtras(
        trigger_precision=p,
        trigger_recall=r,
        trigger_f1=f1,
        type_accuracy=type_hits / type_total if type_total else 0.0,
        constraint_rate=sat_hits / sat_total if sat_total else 0.0,
        ranked_lists=ranked_lists,
    )
    return report, extras
