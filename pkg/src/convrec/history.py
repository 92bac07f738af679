"""Unified conversation-history vector sequence and its locally-reversed form.

The history is kept symbolic (position kinds + ids); `materialize` resolves it
against a base-embedding matrix and an entity-embedding table so training can
re-embed the same structure every step.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import torch


class PositionKind(IntEnum):
    BASE_TOKEN = 0
    ENT_MARKER = 1
    ENTITY_EMBED = 2
    SUM_MARKER = 3


@dataclass(frozen=True)
class Turn:
    speaker: str  # "user" or "agent"
    tokens: tuple  # token ids
    entity_mentions: tuple  # ((start, end), entity_id) pairs, disjoint, sorted

    def __post_init__(self):
        if self.speaker not in ("user", "agent"):
            raise ValueError(f"unknown speaker {self.speaker!r}")
        prev_end = 0
        for (start, end), _ in self.entity_mentions:
            if not (0 <= start < end <= len(self.tokens)):
                raise ValueError("mention span outside the turn")
            if start < prev_end:
                raise ValueError("mention spans overlap")
            prev_end = end


@dataclass
class DialogHistory:
    turns: list[Turn]


@dataclass
class UnifiedHistory:
    kinds: list[PositionKind]
    token_ids: list[int]     # -1 at ENTITY_EMBED positions
    entity_ids: list         # entity id at ENT_MARKER / ENTITY_EMBED, else None
    turn_of: list[int]       # -1 at the SUM position

    def __len__(self) -> int:
        return len(self.kinds)

    @property
    def entity_at(self) -> dict:
        return {i: e for i, e in enumerate(self.entity_ids) if e is not None}

    def materialize(self, base_emb: torch.Tensor, ent_vectors: torch.Tensor) -> torch.Tensor:
        rows = []
        for kind, tok, ent in zip(self.kinds, self.token_ids, self.entity_ids):
            if kind is PositionKind.ENTITY_EMBED:
                rows.append(ent_vectors[ent])
            else:
                rows.append(base_emb[tok])
        return torch.stack(rows)


_Pos = tuple  # (kind, token_id, entity_id)


def _turn_segment(turn: Turn, vocab, include_speaker: bool) -> list[_Pos]:
    seg: list[_Pos] = []
    if include_speaker:
        marker = vocab.usr_id if turn.speaker == "user" else vocab.sys_id
        seg.append((PositionKind.BASE_TOKEN, marker, None))
    span_start = {start: (end, eid) for (start, end), eid in turn.entity_mentions}
    i = 0
    while i < len(turn.tokens):
        if i in span_start:
            end, eid = span_start[i]
            seg.append((PositionKind.ENT_MARKER, vocab.ent_id, eid))
            i = end
        else:
            seg.append((PositionKind.BASE_TOKEN, turn.tokens[i], None))
            i += 1
    for _, eid in turn.entity_mentions:
        seg.append((PositionKind.ENTITY_EMBED, -1, eid))
    return seg


def _trim_front(seg: list[_Pos], n: int) -> list[_Pos]:
    dropped_markers = sum(1 for p in seg[:n] if p[0] is PositionKind.ENT_MARKER)
    rest = list(seg[n:])
    for _ in range(dropped_markers):
        for j, p in enumerate(rest):
            if p[0] is PositionKind.ENTITY_EMBED:
                del rest[j]
                break
    return rest


def build_unified_history(
    history: DialogHistory,
    next_user: Turn | None,
    vocab,
    max_len: int,
    include_speaker: bool = True,
) -> UnifiedHistory:
    if max_len < 2:
        raise ValueError("max_len must hold the summary marker plus one token")
    turns = list(history.turns)
    if next_user is not None:
        turns.append(next_user)
    segments = [_turn_segment(t, vocab, include_speaker) for t in turns]
    turn_ids = list(range(len(segments)))
    budget = max_len - 1
    # drop whole oldest turns first, keeping the most recent ones intact
    while len(segments) > 1 and sum(map(len, segments)) > budget:
        segments.pop(0)
        turn_ids.pop(0)
    while segments and sum(map(len, segments)) > budget:
        over = sum(map(len, segments)) - budget
        segments[0] = _trim_front(segments[0], over)

    kinds, token_ids, entity_ids, turn_of = [], [], [], []
    for tid, seg in zip(turn_ids, segments):
        for kind, tok, ent in seg:
            kinds.append(kind)
            token_ids.append(tok)
            entity_ids.append(ent)
            turn_of.append(tid)
    kinds.append(PositionKind.SUM_MARKER)
    token_ids.append(vocab.sum_id)
    entity_ids.append(None)
    turn_of.append(-1)
    return UnifiedHistory(kinds, token_ids, entity_ids, turn_of)


def reverse_history(hist: UnifiedHistory) -> UnifiedHistory:
    """Reverse the token part of each turn segment; appendices and order stay put."""
    kinds, token_ids, entity_ids, turn_of = [], [], [], []
    i = 0
    n = len(hist.kinds)
    while i < n:
        if hist.kinds[i] is PositionKind.SUM_MARKER:
            kinds.append(hist.kinds[i])
            token_ids.append(hist.token_ids[i])
            entity_ids.append(hist.entity_ids[i])
            turn_of.append(hist.turn_of[i])
            i += 1
            continue
        tid = hist.turn_of[i]
        j = i
        while j < n and hist.turn_of[j] == tid:
            j += 1
        seg = list(range(i, j))
        tok_part = [p for p in seg if hist.kinds[p] is not PositionKind.ENTITY_EMBED]
        app_part = [p for p in seg if hist.kinds[p] is PositionKind.ENTITY_EMBED]
        for p in reversed(tok_part):
            kinds.append(hist.kinds[p])
            token_ids.append(hist.token_ids[p])
            entity_ids.append(hist.entity_ids[p])
            turn_of.append(tid)
        for p in app_part:
            kinds.append(hist.kinds[p])
            token_ids.append(hist.token_ids[p])
            entity_ids.append(hist.entity_ids[p])
            turn_of.append(tid)
        i = j
    return UnifiedHistory(kinds, token_ids, entity_ids, turn_of)
