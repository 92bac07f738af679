"""Retrieval metrics (Recall@k, MRR) and generation metrics (BLEU, entity F1)."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, asdict

from . import kb as kb_mod
from .model import tokenize_words


@dataclass(frozen=True)
class RankedList:
    candidates: tuple  # entity ids, best first, duplicate-free
    gold: int

    def __post_init__(self):
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("ranked candidates contain duplicates")


@dataclass
class MetricsReport:
    recall_at: dict
    mrr: float
    bleu1: float
    bleu2: float
    entity_f1: float
    multiset_f1: float
    n_examples: int

    def to_json(self) -> dict:
        return {
            "r1": self.recall_at.get(1),
            "r10": self.recall_at.get(10),
            "r50": self.recall_at.get(50),
            "mrr": self.mrr,
            "bleu1": self.bleu1,
            "bleu2": self.bleu2,
            "entity_f1": self.entity_f1,
            "multiset_f1": self.multiset_f1,
            "n": self.n_examples,
        }


def recall_at_k(lists, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    lists = list(lists)
    if not lists:
        raise ValueError("recall over an empty collection is undefined")
    hits = sum(1 for rl in lists if rl.gold in rl.candidates[:k])
    return hits / len(lists)


def mrr(lists) -> float:
    lists = list(lists)
    if not lists:
        raise ValueError("MRR over an empty collection is undefined")
    total = 0.0
    for rl in lists:
        try:
            rank = rl.candidates.index(rl.gold) + 1
        except ValueError:
            continue
        total += 1.0 / rank
    return total / len(lists)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(hypothesis, reference, n: int) -> float:
    """Sentence BLEU: geometric mean of modified precisions times brevity penalty."""
    if n not in (1, 2):
        raise ValueError("only BLEU-1 and BLEU-2 are supported")
    hyp = list(hypothesis)
    ref = list(reference)
    if not hyp:
        return 0.0
    log_sum = 0.0
    for m in range(1, n + 1):
        hyp_grams = _ngrams(hyp, m)
        ref_grams = _ngrams(ref, m)
        overlap = sum(min(c, ref_grams[g]) for g, c in hyp_grams.items())
        total = sum(hyp_grams.values())
        if total == 0 or overlap == 0:
            return 0.0
        log_sum += math.log(overlap / total)
    bp = math.exp(min(0.0, 1.0 - len(ref) / len(hyp)))
    return bp * math.exp(log_sum / n)


def corpus_bleu_n(hypotheses, references, n: int) -> float:
    pairs = list(zip(hypotheses, references, strict=True))
    if not pairs:
        raise ValueError("BLEU over an empty corpus is undefined")
    return sum(bleu_n(h, r, n) for h, r in pairs) / len(pairs)


def _utterance_entities(text: str, kb) -> list[int]:
    return [eid for _, eid in kb_mod.link_mentions(tokenize_words(text), kb)]


def _micro_f1(pred_bags, gold_bags) -> float:
    inter = sum(sum((p & g).values()) for p, g in zip(pred_bags, gold_bags))
    n_pred = sum(sum(p.values()) for p in pred_bags)
    n_gold = sum(sum(g.values()) for g in gold_bags)
    if n_pred == 0 or n_gold == 0 or inter == 0:
        return 0.0
    precision = inter / n_pred
    recall = inter / n_gold
    return 2 * precision * recall / (precision + recall)


def entity_f1(pred_utterances, gold_utterances, kb) -> float:
    if len(pred_utterances) != len(gold_utterances):
        raise ValueError("prediction/gold length mismatch")
    pred = [Counter(set(_utterance_entities(t, kb))) for t in pred_utterances]
    gold = [Counter(set(_utterance_entities(t, kb))) for t in gold_utterances]
    return _micro_f1(pred, gold)


def multiset_entity_f1(pred_utterances, gold_utterances, kb) -> float:
    if len(pred_utterances) != len(gold_utterances):
        raise ValueError("prediction/gold length mismatch")
    pred = [Counter(_utterance_entities(t, kb)) for t in pred_utterances]
    gold = [Counter(_utterance_entities(t, kb)) for t in gold_utterances]
    return _micro_f1(pred, gold)
