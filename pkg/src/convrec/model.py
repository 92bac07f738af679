"""Tokenizer, tiny transformer stacks, prediction heads, and checkpointing.

One shared bidirectional encoder produces the summary vector reused by the
trigger / type / entity heads.  Two independent causal decoders (forward and
backward) consume the history vectors as a conditioning prefix.  A separate
one-layer encoder embeds rendered entity text.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

SPECIAL_TOKENS = (
    "[pad]", "[unk]", "[bos]", "[eos]", "[ent]", "[sum]", "[sep]", "[usr]", "[sys]",
)

_TOKEN_RE = re.compile(
    r"\[(?:pad|unk|bos|eos|ent|sum|sep|usr|sys)\]|[a-z0-9_']+|[^\sa-z0-9_']"
)


def tokenize_words(text: str) -> list[str]:
    """Lowercased word/punctuation split; bracketed specials stay intact."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Surface-string <-> id bijection with the fixed special tokens first."""

    def __init__(self, tokens: list[str]):
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocab must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocab contains duplicate tokens")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, texts) -> "Vocab":
        words = set()
        for text in texts:
            words.update(tokenize_words(text))
        words -= set(SPECIAL_TOKENS)
        return cls(list(SPECIAL_TOKENS) + sorted(words))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self): return 0
    @property
    def unk_id(self): return 1
    @property
    def bos_id(self): return 2
    @property
    def eos_id(self): return 3
    @property
    def ent_id(self): return 4
    @property
    def sum_id(self): return 5
    @property
    def sep_id(self): return 6
    @property
    def usr_id(self): return 7
    @property
    def sys_id(self): return 8

    def encode(self, text: str) -> list[int]:
        return [self.index.get(w, self.unk_id) for w in tokenize_words(text)]

    def decode(self, ids) -> str:
        return " ".join(self.tokens[i] for i in ids)


def tokenize(vocab: Vocab, text: str) -> list[int]:
    return vocab.encode(text)


def detokenize(vocab: Vocab, ids) -> str:
    return vocab.decode(ids)


@dataclass
class ModelConfig:
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    max_context_length: int = 256
    vocab_size: int = 0
    n_types: int = 4
    n_entities: int = 0

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")
        for name in ("dim", "layers", "heads", "ffn_mult", "max_context_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class Direction(Enum):
    FWD = "fwd"
    BWD = "bwd"


class _SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, mask):
        # mask: B x 1 x L x L boolean, True = attend
        B, L, C = x.shape
        qkv = self.qkv(x).reshape(B, L, 3, self.heads, C // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(C // self.heads)
        att = att.masked_fill(~mask, float("-inf"))
        att = F.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, L, C)
        return self.proj(y)


class _Block(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_mult: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = _SelfAttention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, ffn_mult * dim), nn.GELU(), nn.Linear(ffn_mult * dim, dim)
        )

    def forward(self, x, mask):
        x = x + self.attn(self.ln1(x), mask)
        x = x + self.mlp(self.ln2(x))
        return x


class VectorTransformer(nn.Module):
    """Transformer over raw input vectors with learned positions."""

    def __init__(self, dim, layers, heads, ffn_mult, max_len, causal: bool):
        super().__init__()
        self.causal = causal
        self.max_len = max_len
        self.pos_emb = nn.Parameter(torch.zeros(max_len, dim))
        self.blocks = nn.ModuleList(_Block(dim, heads, ffn_mult) for _ in range(layers))
        self.ln_f = nn.LayerNorm(dim)

    def forward(self, x, pad_mask=None):
        # x: B x L x D; pad_mask: B x L boolean, True = real position
        B, L, _ = x.shape
        if L > self.max_len:
            raise ValueError(f"sequence length {L} exceeds max length {self.max_len}")
        x = x + self.pos_emb[:L]
        mask = torch.ones(L, L, dtype=torch.bool, device=x.device)
        if self.causal:
            mask = torch.tril(mask)
        mask = mask.expand(B, 1, L, L)
        if pad_mask is not None:
            mask = mask & pad_mask[:, None, None, :]
        for block in self.blocks:
            x = block(x, mask)
        return self.ln_f(x)


class ModelBundle(nn.Module):
    """All parameters: base embeddings, encoder, two decoders, entity encoder, heads."""

    def __init__(self, config: ModelConfig, vocab: Vocab):
        super().__init__()
        if config.vocab_size != len(vocab):
            raise ValueError("config.vocab_size does not match vocab")
        self.config = config
        self.vocab = vocab
        D = config.dim
        L = config.max_context_length
        self.base_emb = nn.Embedding(config.vocab_size, D)
        self.encoder = VectorTransformer(
            D, config.layers, config.heads, config.ffn_mult, L, causal=False)
        self.fwd_decoder = VectorTransformer(
            D, config.layers, config.heads, config.ffn_mult, L, causal=True)
        self.bwd_decoder = VectorTransformer(
            D, config.layers, config.heads, config.ffn_mult, L, causal=True)
        self.fwd_head = nn.Linear(D, config.vocab_size, bias=False)
        self.bwd_head = nn.Linear(D, config.vocab_size, bias=False)
        self.entity_encoder = VectorTransformer(
            D, 1, config.heads, config.ffn_mult, L, causal=False)
        self.entity_proj = nn.Linear(D, D)
        self.w = nn.Parameter(torch.zeros(D))
        self.W = nn.Parameter(torch.zeros(D, config.n_types))
        self.V = nn.Parameter(torch.zeros(D, config.n_entities))
        self._init_weights()

    def _init_weights(self):
        for p in self.parameters():
            if p.dim() >= 2:
                nn.init.normal_(p, mean=0.0, std=0.02)
        with torch.no_grad():
            self.w.normal_(0.0, 0.02)

    def _decoder(self, direction: Direction):
        if direction is Direction.FWD:
            return self.fwd_decoder, self.fwd_head
        return self.bwd_decoder, self.bwd_head

    def encode_vectors(self, x, pad_mask=None):
        """Shared encoder over a batch of vector sequences -> B x L x D."""
        return self.encoder(x, pad_mask)

    def decoder_hidden(self, direction: Direction, x, pad_mask=None):
        dec, _ = self._decoder(direction)
        return dec(x, pad_mask)

    def decoder_all_probs(self, direction: Direction, ctx):
        """Per-position next-token distributions for one context (L x D) -> L x V."""
        dec, head = self._decoder(direction)
        hidden = dec(ctx.unsqueeze(0))[0]
        return F.softmax(head(hidden), dim=-1)

    def next_token_probs(self, direction: Direction, ctx):
        """Distribution at the final position of one context (L x D)."""
        return self.decoder_all_probs(direction, ctx)[-1]

    def encode_entity_tokens(self, ids_batch, pad_mask=None):
        """Mean-pooled entity text encoding + affine layer -> B x D."""
        x = self.base_emb(ids_batch)
        hidden = self.entity_encoder(x, pad_mask)
        if pad_mask is None:
            pooled = hidden.mean(dim=1)
        else:
            m = pad_mask.unsqueeze(-1).to(hidden.dtype)
            pooled = (hidden * m).sum(dim=1) / m.sum(dim=1).clamp(min=1.0)
        return self.entity_proj(pooled)


def encode_history(model: ModelBundle, hist, emb) -> torch.Tensor:
    """Contextual output at the final ([SUM]) position of the unified history."""
    from .history import PositionKind  # local import avoids a cycle

    if hist.kinds[-1] is not PositionKind.SUM_MARKER:
        raise ValueError("unified history must end with the summary marker")
    ent_vectors = emb.vectors if hasattr(emb, "vectors") else emb
    vecs = hist.materialize(model.base_emb.weight, ent_vectors)
    if vecs.shape[0] > model.config.max_context_length:
        raise ValueError("history longer than max_context_length; truncate first")
    return model.encode_vectors(vecs.unsqueeze(0))[0, -1]


def trigger_score(model: ModelBundle, s: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(s @ model.w)


def type_distribution(model: ModelBundle, s: torch.Tensor) -> torch.Tensor:
    return F.softmax(s @ model.W, dim=-1)


def predict_type(model: ModelBundle, s: torch.Tensor) -> int:
    # torch.argmax returns the first maximal index: ties break toward low index
    return int(torch.argmax(s @ model.W).item())


def score_entity(model: ModelBundle, s: torch.Tensor, entity_id: int) -> torch.Tensor:
    if not 0 <= entity_id < model.config.n_entities:
        raise IndexError(f"entity id {entity_id} out of range")
    return s @ model.V[:, entity_id]


def next_token_distribution(model, direction: Direction, ctx) -> torch.Tensor:
    return model.next_token_probs(direction, ctx)


CHECKPOINT_MAGIC = b"CRCG"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(model: ModelBundle, path) -> None:
    manifest = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().to(torch.float32).numpy()
        data = arr.astype("<f4", copy=False).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({
        "config": asdict(model.config),
        "vocab": model.vocab.tokens,
        "tensors": manifest,
    }).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> ModelBundle:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes: not a checkpoint file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    header_end = 16 + header_len
    if header_end > len(raw):
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(raw[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from exc
    config = ModelConfig(**header["config"])
    vocab = Vocab(header["vocab"])
    data = raw[header_end:]
    total = 0
    for entry in header["tensors"]:
        total += int(np.prod(entry["shape"], dtype=np.int64)) * 4
    if total != len(data):
        raise CheckpointError(
            f"tensor data length mismatch: header implies {total} bytes, file has {len(data)}")
    model = ModelBundle(config, vocab)
    state = model.state_dict()
    names = {entry["name"] for entry in header["tensors"]}
    if names != set(state):
        raise CheckpointError("tensor manifest does not cover the model parameters")
    with torch.no_grad():
        for entry in header["tensors"]:
            name, shape, offset = entry["name"], entry["shape"], entry["offset"]
            if name not in state:
                raise CheckpointError(f"unknown tensor {name!r} in manifest")
            expected = list(state[name].shape)
            if expected != shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: header {shape}, model expects {expected}")
            n = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape)
            state[name].copy_(torch.from_numpy(arr.copy()))
    return model
