"""Knowledge base construction, rendering, mention linking, entity embeddings."""

import json

import pytest
import torch
from hypothesis import given, settings, strategies as st

from convrec import data
from convrec.kb import (
    Entity, KBError, KnowledgeBase, embed_entity, entities_of_type, link_mentions,
    load_kb, precompute_embeddings, render_entity_text, save_kb,
)
from convrec.model import ModelConfig, ModelBundle, tokenize_words


def make_kb(names_by_type, attributes=None):
    types = list(names_by_type)
    entities = []
    for t, names in enumerate(names_by_type.values()):
        for name in names:
            entities.append(Entity(
                id=len(entities), name=name, type_id=t,
                attributes=tuple((attributes or {}).get(name, ()))))
    return KnowledgeBase(types=types, entities=entities, triples=[])


class TestConstruction:
    def test_empty_name_rejected(self):
        with pytest.raises(KBError):
            Entity(id=0, name="", type_id=0, attributes=())

    def test_duplicate_attribute_keys_rejected(self):
        with pytest.raises(KBError):
            Entity(id=0, name="x", type_id=0, attributes=(("a", "1"), ("a", "2")))

    def test_sparse_ids_rejected(self):
        with pytest.raises(KBError):
            KnowledgeBase(types=["t"], entities=[
                Entity(id=1, name="x", type_id=0, attributes=())], triples=[])

    def test_unknown_type_rejected(self):
        with pytest.raises(KBError):
            KnowledgeBase(types=["t"], entities=[
                Entity(id=0, name="x", type_id=3, attributes=())], triples=[])

    def test_dangling_triple_rejected(self):
        with pytest.raises(KBError):
            KnowledgeBase(types=["t"], entities=[
                Entity(id=0, name="x", type_id=0, attributes=())],
                triples=[(0, "rel", 5)])


class TestEntitiesOfType:
    def test_simple(self):
        kb = make_kb({"movie": ["e0"], "music": ["e1"]})
        assert entities_of_type(kb, 0) == [0]
        assert entities_of_type(kb, 1) == [1]

    def test_empty_type(self):
        kb = make_kb({"movie": ["e0"], "music": []})
        assert entities_of_type(kb, 1) == []

    def test_out_of_range(self):
        kb = make_kb({"movie": ["e0"]})
        with pytest.raises(KBError):
            entities_of_type(kb, 2)

    def test_matches_brute_force_scan(self, corpus):
        kb, _, _ = corpus
        assert len(kb.entities) == 40
        for t in range(len(kb.types)):
            want = [e.id for e in kb.entities if e.type_id == t]
            assert entities_of_type(kb, t) == want
            assert len(want) == 10


class TestRender:
    def test_full_format(self):
        kb = make_kb({"food": ["baked scallion pancakes"]},
                     {"baked scallion pancakes": (
                         ("description", "savory pancake"),
                         ("main_ingredients", "scallions, flour, ginger"))})
        got = render_entity_text(kb, 0)
        assert got == ("baked scallion pancakes [SEP] food [SEP] "
                       "description: savory pancake [SEP] "
                       "main_ingredients: scallions, flour, ginger")

    def test_zero_attributes(self):
        kb = make_kb({"movie": ["solaris"]})
        assert render_entity_text(kb, 0) == "solaris [SEP] movie"

    def test_deterministic(self, corpus):
        kb, _, _ = corpus
        assert render_entity_text(kb, 3) == render_entity_text(kb, 3)


class TestLinkMentions:
    def test_basic_span(self):
        kb = make_kb({"movie": ["true lies"]})
        toks = tokenize_words("i love True Lies")
        assert link_mentions(toks, kb) == [((2, 4), 0)]

    def test_no_names(self):
        kb = make_kb({"movie": ["true lies"]})
        assert link_mentions(tokenize_words("nothing to see"), kb) == []

    def test_longest_match_wins(self):
        kb = make_kb({"movie": ["fly me to polaris", "polaris"]})
        toks = tokenize_words("watch fly me to polaris tonight")
        assert link_mentions(toks, kb) == [((1, 5), 0)]

    def test_case_insensitive(self):
        kb = make_kb({"movie": ["true lies"]})
        assert link_mentions(["TRUE", "LIES"], kb) == [((0, 2), 0)]

    @given(st.lists(st.sampled_from(
        ["true", "lies", "polaris", "fly", "me", "to", "and", "the"]),
        max_size=12))
    @settings(max_examples=60)
    def test_matches_brute_force_left_greedy(self, words):
        kb = make_kb({"movie": ["true lies", "fly me to polaris", "polaris"]})
        got = link_mentions(words, kb)
        names = {tuple(tokenize_words(e.name)): e.id for e in kb.entities}
        expect = []
        i = 0
        folded = [w.casefold() for w in words]
        while i < len(folded):
            hit = None
            for ln in range(len(folded) - i, 0, -1):
                if tuple(folded[i:i + ln]) in names:
                    hit = (ln, names[tuple(folded[i:i + ln])])
                    break
            if hit is None:
                i += 1
            else:
                expect.append(((i, i + hit[0]), hit[1]))
                i += hit[0]
        assert got == expect
        ends = 0
        for (s, e), eid in got:
            assert s >= ends  # disjoint
            ends = e
            assert folded[s:e] == tokenize_words(kb.entities[eid].name)


class TestSerialization:
    def test_round_trip(self, corpus, tmp_path):
        kb, _, _ = corpus
        save_kb(kb, tmp_path / "kb.json")
        back = load_kb(tmp_path / "kb.json")
        assert back.types == kb.types
        assert back.entities == kb.entities

    def test_duplicate_id_rejected(self, tmp_path):
        doc = {"types": ["t"], "entities": [
            {"id": 0, "name": "a", "type": "t", "attributes": {}},
            {"id": 0, "name": "b", "type": "t", "attributes": {}}]}
        p = tmp_path / "kb.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(KBError):
            load_kb(p)

    def test_invalid_json_reports_line(self, tmp_path):
        p = tmp_path / "kb.json"
        p.write_text("{\n  broken")
        with pytest.raises(KBError, match="line"):
            load_kb(p)


class TestEmbeddings:
    def test_identical_text_identical_vectors(self, small_model):
        kb, _, model, _ = small_model
        a = embed_entity(kb, 0, model)
        b = embed_entity(kb, 0, model)
        assert torch.equal(a, b)

    def test_shapes(self, small_model):
        kb, _, model, emb = small_model
        assert emb.vectors.shape == (len(kb.entities), model.config.dim)

    def test_distinct_text_distinct_vectors(self, small_model):
        kb, _, model, _ = small_model
        a = embed_entity(kb, 0, model)
        b = embed_entity(kb, 1, model)
        assert torch.norm(a - b).item() > 0

    def test_rows_match_individual_calls(self, small_model):
        kb, _, model, emb = small_model
        for eid in (0, 2, 3, 5, 7):
            assert torch.equal(emb.vectors[eid], embed_entity(kb, eid, model))

    def test_recompute_identical(self, small_model):
        kb, _, model, emb = small_model
        again = precompute_embeddings(kb, model)
        assert torch.equal(emb.vectors, again.vectors)

    def test_finite_over_many_seeds(self):
        cfg = data.CorpusConfig(seed=5, n_dialogs=2, n_entities_per_type=2)
        kb, _ = data.generate_corpus(cfg)
        vocab = data.build_vocab(kb)
        for seed in range(100):
            torch.manual_seed(seed)
            model = ModelBundle(ModelConfig(
                dim=8, layers=1, heads=2, max_context_length=64,
                vocab_size=len(vocab), n_types=len(kb.types),
                n_entities=len(kb.entities)), vocab)
            table = precompute_embeddings(kb, model)
            assert torch.isfinite(table.vectors).all()
