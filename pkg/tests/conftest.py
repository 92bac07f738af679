"""Shared fixtures: the reference corpus and a fully trained model.

Training the reference model takes about 90 seconds on a laptop CPU; it is
session-scoped and shared by the pipeline, service, and acceptance tests.
"""

import pytest
import torch

from convrec import data, kb as kb_mod, model as model_mod, train as train_mod

REFERENCE_SEED = 7
REFERENCE_DIALOGS = 300
REFERENCE_OVERLAP = 0.25
REFERENCE_EPOCHS = 25
TRAIN_SEED = 1
TORCH_SEED = 0


def train_reference_model(attribute_overlap=REFERENCE_OVERLAP,
                          n_dialogs=REFERENCE_DIALOGS,
                          epochs=REFERENCE_EPOCHS):
    """One fixed training protocol used everywhere a trained model is needed."""
    cfg = data.CorpusConfig(seed=REFERENCE_SEED, n_dialogs=n_dialogs,
                            attribute_overlap=attribute_overlap)
    kb, splits = data.generate_corpus(cfg)
    vocab = data.build_vocab(kb)
    torch.manual_seed(TORCH_SEED)
    mcfg = model_mod.ModelConfig(
        vocab_size=len(vocab), n_types=len(kb.types), n_entities=len(kb.entities))
    model = model_mod.ModelBundle(mcfg, vocab)
    model, report = train_mod.train(
        model, splits["train"], kb, train_mod.TrainConfig(epochs=epochs, seed=TRAIN_SEED))
    return kb, splits, model, report


@pytest.fixture(scope="session")
def corpus():
    cfg = data.CorpusConfig(seed=REFERENCE_SEED, n_dialogs=REFERENCE_DIALOGS,
                            attribute_overlap=REFERENCE_OVERLAP)
    kb, splits = data.generate_corpus(cfg)
    return kb, splits, data.build_vocab(kb)


@pytest.fixture(scope="session")
def trained(corpus):
    kb, splits, vocab = corpus
    kb2, splits2, model, _ = train_reference_model()
    assert [e.name for e in kb2.entities] == [e.name for e in kb.entities]
    emb = kb_mod.precompute_embeddings(kb, model)
    return model, emb


@pytest.fixture(scope="session")
def ckpt_path(trained, tmp_path_factory):
    model, _ = trained
    path = tmp_path_factory.mktemp("ckpt") / "reference.ckpt"
    model_mod.save_checkpoint(model, path)
    return path


@pytest.fixture(scope="session")
def data_dir(corpus, tmp_path_factory):
    kb, splits, _ = corpus
    out = tmp_path_factory.mktemp("data")
    kb_mod.save_kb(kb, out / "kb.json")
    for name, dialogs in splits.items():
        data.save_dialogs(dialogs, out / f"{name}.jsonl")
    return out


@pytest.fixture()
def small_model():
    """Untrained small model over a tiny KB for fast structural tests."""
    cfg = data.CorpusConfig(seed=3, n_dialogs=4, n_entities_per_type=2)
    kb, splits = data.generate_corpus(cfg)
    vocab = data.build_vocab(kb)
    torch.manual_seed(11)
    mcfg = model_mod.ModelConfig(
        dim=16, layers=1, heads=2, max_context_length=128,
        vocab_size=len(vocab), n_types=len(kb.types), n_entities=len(kb.entities))
    model = model_mod.ModelBundle(mcfg, vocab)
    emb = kb_mod.precompute_embeddings(kb, model)
    return kb, splits, model, emb
