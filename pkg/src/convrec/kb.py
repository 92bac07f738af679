"""Knowledge base: typed entities with attribute text, type index, mention linking."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import torch

from .model import tokenize_words

SEPARATOR = "[SEP]"


class KBError(Exception):
    pass


@dataclass(frozen=True)
class Entity:
    id: int
    name: str
    type_id: int
    attributes: tuple  # ordered (key, value) pairs

    def __post_init__(self):
        if not self.name:
            raise KBError(f"entity {self.id} has an empty name")
        keys = [k for k, _ in self.attributes]
        if len(set(keys)) != len(keys):
            raise KBError(f"entity {self.id} has duplicate attribute keys")


@dataclass
class KnowledgeBase:
    types: list[str]
    entities: list[Entity]
    triples: list[tuple[int, str, int]]
    type_index: list[list[int]] = field(default_factory=list)
    _name_tokens: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.types:
            raise KBError("knowledge base needs at least one type")
        for i, ent in enumerate(self.entities):
            if ent.id != i:
                raise KBError(f"entity ids must be dense: expected {i}, got {ent.id}")
            if not 0 <= ent.type_id < len(self.types):
                raise KBError(f"entity {ent.id} has unknown type id {ent.type_id}")
        n = len(self.entities)
        for s, r, o in self.triples:
            if not (0 <= s < n and 0 <= o < n):
                raise KBError(f"triple ({s}, {r!r}, {o}) has a dangling endpoint")
        if not self.type_index:
            self.type_index = [[] for _ in self.types]
            for ent in self.entities:
                self.type_index[ent.type_id].append(ent.id)
        if not self._name_tokens:
            by_tokens: dict[tuple, int] = {}
            for ent in self.entities:
                by_tokens.setdefault(tuple(tokenize_words(ent.name)), ent.id)
            self._name_tokens = by_tokens


def load_kb(path) -> KnowledgeBase:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise KBError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    try:
        types = list(doc["types"])
        raw_entities = doc["entities"]
        raw_triples = doc.get("triples", [])
    except (KeyError, TypeError) as exc:
        raise KBError(f"{path}: missing field {exc}") from exc
    type_of = {name: i for i, name in enumerate(types)}
    seen_ids = set()
    entities = []
    for raw in raw_entities:
        if raw["id"] in seen_ids:
            raise KBError(f"{path}: duplicate entity id {raw['id']}")
        seen_ids.add(raw["id"])
        if raw["type"] not in type_of:
            raise KBError(f"{path}: entity {raw['id']} has unknown type {raw['type']!r}")
        entities.append(Entity(
            id=raw["id"],
            name=raw["name"],
            type_id=type_of[raw["type"]],
            attributes=tuple((k, v) for k, v in raw.get("attributes", {}).items()),
        ))
    entities.sort(key=lambda e: e.id)
    triples = [tuple(t) for t in raw_triples]
    return KnowledgeBase(types=types, entities=entities, triples=triples)


def save_kb(kb: KnowledgeBase, path) -> None:
    doc = {
        "types": kb.types,
        "entities": [
            {
                "id": e.id,
                "name": e.name,
                "type": kb.types[e.type_id],
                "attributes": dict(e.attributes),
            }
            for e in kb.entities
        ],
        "triples": [list(t) for t in kb.triples],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, ensure_ascii=False, indent=1)


def entities_of_type(kb: KnowledgeBase, type_id: int) -> list[int]:
    if not 0 <= type_id < len(kb.types):
        raise KBError(f"type index {type_id} out of range")
    return list(kb.type_index[type_id])


def render_entity_text(kb: KnowledgeBase, entity_id: int) -> str:
    ent = kb.entities[entity_id]
    parts = [ent.name, kb.types[ent.type_id]]
    parts.extend(f"{k}: {v}" for k, v in ent.attributes)
    return f" {SEPARATOR} ".join(parts)


def link_mentions(tokens, kb: KnowledgeBase) -> list[tuple[tuple[int, int], int]]:
    """Left-greedy longest-match, case-insensitive entity name linking over tokens."""
    folded = [t.casefold() for t in tokens]
    names = kb._name_tokens
    max_len = max((len(n) for n in names), default=0)
    out = []
    i = 0
    while i < len(folded):
        match = None
        for span in range(min(max_len, len(folded) - i), 0, -1):
            cand = tuple(folded[i:i + span])
            if cand in names:
                match = (span, names[cand])
                break
        if match is None:
            i += 1
        else:
            span, eid = match
            out.append(((i, i + span), eid))
            i += span
    return out


@dataclass
class EntityEmbeddingTable:
    dim: int
    vectors: torch.Tensor  # |E| x D

    def __post_init__(self):
        if self.vectors.shape[1] != self.dim:
            raise ValueError("embedding width does not match dim")
        if not torch.isfinite(self.vectors).all():
            raise ValueError("entity embeddings contain non-finite values")


def entity_token_ids(kb: KnowledgeBase, vocab) -> list[list[int]]:
    return [vocab.encode(render_entity_text(kb, e.id)) for e in kb.entities]


def embed_entity(kb: KnowledgeBase, entity_id: int, model) -> torch.Tensor:
    ids = model.vocab.encode(render_entity_text(kb, entity_id))
    batch = torch.tensor([ids], dtype=torch.long)
    return model.encode_entity_tokens(batch)[0]


def precompute_embeddings(kb: KnowledgeBase, model) -> EntityEmbeddingTable:
    # Row-at-a-time so each row is bit-identical to an embed_entity call.
    with torch.no_grad():
        vectors = torch.stack([embed_entity(kb, e.id, model) for e in kb.entities])
    return EntityEmbeddingTable(dim=vectors.shape[1], vectors=vectors)
