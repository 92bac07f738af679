"""Joint training: trigger BCE, type CE, negative-sampled entity CE, and
teacher-forced language-model losses for both directional decoders."""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import kb as kb_mod
from .history import DialogHistory, PositionKind, Turn, build_unified_history, reverse_history
from .model import Direction, ModelBundle, tokenize_words


class TrainingDivergedError(Exception):
    pass


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 32
    lr: float = 1e-3
    neg_samples: int = 50
    loss_weights: tuple = (1.0, 1.0, 1.0, 1.0)  # trigger, type, entity, lm
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("invalid training config")
        if any(w < 0 for w in self.loss_weights):
            raise ValueError("loss weights must be >= 0")


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # per-epoch loss dicts
    dev: list = field(default_factory=list)     # per-epoch dev snapshots
    wall_time: float = 0.0

    def to_json(self) -> dict:
        return {"epochs": self.epochs, "dev": self.dev, "wall_time": self.wall_time}


def negative_sample(candidates, gold, n, rng) -> list:
    if not candidates:
        raise ValueError("candidate set is empty")
    if n < 1:
        raise ValueError("n must be >= 1")
    pool = [c for c in candidates if c != gold]
    total = min(n, len(pool) + 1)
    return [gold] + rng.sample(pool, total - 1)


def dialog_to_turns(dialog, vocab, kb) -> list[Turn]:
    turns = []
    for t in dialog.turns:
        words = tokenize_words(t.text)
        ids = tuple(vocab.index.get(w, vocab.unk_id) for w in words)
        mentions = tuple(kb_mod.link_mentions(words, kb))
        turns.append(Turn(speaker=t.speaker, tokens=ids, entity_mentions=mentions))
    return turns


@dataclass
class TrainItem:
    dialog_id: str
    turn_index: int
    trigger: float
    hist_arrays: tuple
    fwd_arrays: tuple
    bwd_arrays: tuple | None = None
    gold_type: int | None = None
    gold_entity: int | None = None


def _slots_to_arrays(kinds, token_ids, entity_ids):
    n = len(kinds)
    tok = np.zeros(n, dtype=np.int64)
    embed = np.zeros(n, dtype=bool)
    ent = np.zeros(n, dtype=np.int64)
    for i, (k, t, e) in enumerate(zip(kinds, token_ids, entity_ids)):
        if k is PositionKind.ENTITY_EMBED:
            embed[i] = True
            ent[i] = e
        else:
            tok[i] = t
    return tok, embed, ent


def _hist_arrays(hist):
    tok, embed, ent = _slots_to_arrays(hist.kinds, hist.token_ids, hist.entity_ids)
    return tok, embed, ent, np.full(len(tok), -1, dtype=np.int64)


def _lm_arrays(hist, gold_entity, pre_ids, trigger_tok, post_ids, targets):
    """History slots + optional entity-embed slot + token context, with labels."""
    tok, embed, ent, _ = _hist_arrays(hist)
    extra_tok, extra_embed, extra_ent = [], [], []
    if gold_entity is not None:
        extra_tok.append(0)
        extra_embed.append(True)
        extra_ent.append(gold_entity)
    ctx = list(pre_ids) + [trigger_tok] + list(post_ids)
    extra_tok.extend(ctx)
    extra_embed.extend([False] * len(ctx))
    extra_ent.extend([0] * len(ctx))
    tok = np.concatenate([tok, np.array(extra_tok, dtype=np.int64)])
    embed = np.concatenate([embed, np.array(extra_embed, dtype=bool)])
    ent = np.concatenate([ent, np.array(extra_ent, dtype=np.int64)])
    labels = np.full(len(tok), -1, dtype=np.int64)
    start = len(tok) - len(post_ids) - 1  # the trigger token position
    for i, y in enumerate(targets):
        labels[start + i] = y
    return tok, embed, ent, labels


def compile_items(dialogs, kb, vocab, max_ctx, type_of_name=None) -> list[TrainItem]:
    if type_of_name is None:
        type_of_name = {name: i for i, name in enumerate(kb.types)}
    items = []
    for dialog in dialogs:
        tturns = dialog_to_turns(dialog, vocab, kb)
        for j, raw in enumerate(dialog.turns):
            if raw.speaker != "agent":
                continue
            if raw.trigger and raw.gold_entity is None:
                raise ValueError(f"{dialog.id} turn {j}: trigger without gold entity")
            hist = build_unified_history(
                DialogHistory(tturns[:j]), None, vocab, max_ctx)
            if raw.trigger:
                agent = tturns[j]
                span = next(
                    (sp for sp, eid in agent.entity_mentions if eid == raw.gold_entity),
                    None)
                if span is None:
                    raise ValueError(
                        f"{dialog.id} turn {j}: gold entity not mentioned in the utterance")
                left = list(agent.tokens[: span[0]])
                right = list(agent.tokens[span[1]:])
                rev = reverse_history(hist)
                fwd = _lm_arrays(
                    hist, raw.gold_entity, left, vocab.ent_id, right,
                    right + [vocab.eos_id])
                bwd = _lm_arrays(
                    rev, raw.gold_entity, list(reversed(right)), vocab.ent_id,
                    list(reversed(left)), list(reversed(left)) + [vocab.bos_id])
                items.append(TrainItem(
                    dialog_id=dialog.id, turn_index=j, trigger=1.0,
                    hist_arrays=_hist_arrays(hist), fwd_arrays=fwd, bwd_arrays=bwd,
                    gold_type=type_of_name[raw.gold_type],
                    gold_entity=raw.gold_entity))
            else:
                full = list(tturns[j].tokens)
                fwd = _lm_arrays(hist, None, [], vocab.bos_id, full,
                                 full + [vocab.eos_id])
                items.append(TrainItem(
                    dialog_id=dialog.id, turn_index=j, trigger=0.0,
                    hist_arrays=_hist_arrays(hist), fwd_arrays=fwd))
    return items


def _pad_batch(arrays, device=None):
    """arrays: list of (tok, embed, ent, labels) -> padded tensors + mask."""
    L = max(len(a[0]) for a in arrays)
    B = len(arrays)
    tok = torch.zeros(B, L, dtype=torch.long)
    embed = torch.zeros(B, L, dtype=torch.bool)
    ent = torch.zeros(B, L, dtype=torch.long)
    labels = torch.full((B, L), -1, dtype=torch.long)
    mask = torch.zeros(B, L, dtype=torch.bool)
    lengths = torch.zeros(B, dtype=torch.long)
    for i, (t, e, n, lab) in enumerate(arrays):
        k = len(t)
        tok[i, :k] = torch.from_numpy(t)
        embed[i, :k] = torch.from_numpy(e)
        ent[i, :k] = torch.from_numpy(n)
        labels[i, :k] = torch.from_numpy(lab)
        mask[i, :k] = True
        lengths[i] = k
    return tok, embed, ent, labels, mask, lengths


def _materialize(model, ent_table, tok, embed, ent):
    base = model.base_emb(tok)
    ent_rows = ent_table[ent]
    return torch.where(embed.unsqueeze(-1), ent_rows, base)


def _lm_loss(model, direction, ent_table, arrays):
    tok, embed, ent, labels, mask, _ = _pad_batch(arrays)
    x = _materialize(model, ent_table, tok, embed, ent)
    hidden = model.decoder_hidden(direction, x, mask)
    head = model.fwd_head if direction is Direction.FWD else model.bwd_head
    logits = head(hidden)
    flat = logits.reshape(-1, logits.shape[-1])
    return F.cross_entropy(flat, labels.reshape(-1), ignore_index=-1)


def entity_table(model, kb, requires_grad=True) -> torch.Tensor:
    """Entity embeddings through the live entity encoder, batched."""
    all_ids = kb_mod.entity_token_ids(kb, model.vocab)
    width = max(len(ids) for ids in all_ids)
    batch = torch.zeros(len(all_ids), width, dtype=torch.long)
    mask = torch.zeros(len(all_ids), width, dtype=torch.bool)
    for i, ids in enumerate(all_ids):
        batch[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        mask[i, : len(ids)] = True
    if requires_grad:
        return model.encode_entity_tokens(batch, mask)
    with torch.no_grad():
        return model.encode_entity_tokens(batch, mask)


def training_losses(model, batch, kb, ent_table, neg_samples, rng) -> dict:
    """Five loss components over a batch of TrainItems."""
    tok, embed, ent, _, mask, lengths = _pad_batch([it.hist_arrays for it in batch])
    x = _materialize(model, ent_table, tok, embed, ent)
    hidden = model.encode_vectors(x, mask)
    s = hidden[torch.arange(len(batch)), lengths - 1]

    trig_logits = s @ model.w
    trig_labels = torch.tensor([it.trigger for it in batch], dtype=trig_logits.dtype)
    l_trig = F.binary_cross_entropy_with_logits(trig_logits, trig_labels)

    rec_idx = [i for i, it in enumerate(batch) if it.trigger > 0.5]
    zero = s.new_zeros(())
    l_type = zero
    l_ent = zero
    l_lm_bwd = zero
    if rec_idx:
        s_rec = s[rec_idx]
        types = torch.tensor([batch[i].gold_type for i in rec_idx], dtype=torch.long)
        l_type = F.cross_entropy(s_rec @ model.W, types)
        ent_losses = []
        for row, i in enumerate(rec_idx):
            it = batch[i]
            pool = kb_mod.entities_of_type(kb, kb.entities[it.gold_entity].type_id)
            cands = negative_sample(pool, it.gold_entity, neg_samples, rng)
            logits = s_rec[row] @ model.V[:, cands]
            ent_losses.append(F.cross_entropy(
                logits.unsqueeze(0), torch.zeros(1, dtype=torch.long)))
        l_ent = torch.stack(ent_losses).mean()
        l_lm_bwd = _lm_loss(model, Direction.BWD, ent_table,
                            [batch[i].bwd_arrays for i in rec_idx])
    l_lm_fwd = _lm_loss(model, Direction.FWD, ent_table,
                        [it.fwd_arrays for it in batch])
    return {
        "trigger": l_trig,
        "type": l_type,
        "entity": l_ent,
        "lm_fwd": l_lm_fwd,
        "lm_bwd": l_lm_bwd,
    }


def total_loss(losses: dict, weights) -> torch.Tensor:
    lt, ly, le, lm = weights
    return (lt * losses["trigger"] + ly * losses["type"] + le * losses["entity"]
            + lm * (losses["lm_fwd"] + losses["lm_bwd"]))


def train(model: ModelBundle, dialogs, kb, cfg: TrainConfig, dev_dialogs=None):
    """Mini-batch AdamW with linear warmup over the first epoch."""
    start = time.perf_counter()
    report = TrainReport()
    if cfg.epochs == 0:
        return model, report
    items = compile_items(dialogs, kb, model.vocab, model.config.max_context_length)
    if not items:
        raise ValueError("training corpus has no agent turns")
    torch.manual_seed(cfg.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=0.0)
    steps_per_epoch = max(1, math.ceil(len(items) / cfg.batch_size))
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda step: min(1.0, (step + 1) / steps_per_epoch))
    dev_items = None
    if dev_dialogs:
        dev_items = compile_items(dev_dialogs, kb, model.vocab,
                                  model.config.max_context_length)
    for epoch in range(cfg.epochs):
        order = list(range(len(items)))
        random.Random(cfg.seed * 100003 + epoch).shuffle(order)
        neg_rng = random.Random(cfg.seed * 7919 + epoch)
        sums = {k: 0.0 for k in ("trigger", "type", "entity", "lm_fwd", "lm_bwd", "total")}
        n_batches = 0
        for b in range(0, len(order), cfg.batch_size):
            batch = [items[i] for i in order[b: b + cfg.batch_size]]
            ent_table = entity_table(model, kb)
            losses = training_losses(model, batch, kb, ent_table,
                                     cfg.neg_samples, neg_rng)
            loss = total_loss(losses, cfg.loss_weights)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} batch {n_batches}")
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            sched.step()
            for k, v in losses.items():
                sums[k] += float(v.item())
            sums["total"] += float(loss.item())
            n_batches += 1
        report.epochs.append({k: v / n_batches for k, v in sums.items()})
        if dev_items:
            report.dev.append(_dev_snapshot(model, kb, dev_items, cfg))
    report.wall_time = time.perf_counter() - start
    return model, report


@torch.no_grad()
def _dev_snapshot(model, kb, items, cfg) -> dict:
    ent_table = entity_table(model, kb, requires_grad=False)
    tok, embed, ent, _, mask, lengths = _pad_batch([it.hist_arrays for it in items])
    x = _materialize(model, ent_table, tok, embed, ent)
    hidden = model.encode_vectors(x, mask)
    s = hidden[torch.arange(len(items)), lengths - 1]
    trig_pred = (torch.sigmoid(s @ model.w) >= 0.5).float()
    trig_gold = torch.tensor([it.trigger for it in items])
    trig_acc = float((trig_pred == trig_gold).float().mean().item())
    rec = [(i, it) for i, it in enumerate(items) if it.trigger > 0.5]
    type_acc = r1 = float("nan")
    if rec:
        idx = torch.tensor([i for i, _ in rec])
        s_rec = s[idx]
        types = torch.tensor([it.gold_type for _, it in rec])
        type_acc = float((torch.argmax(s_rec @ model.W, dim=1) == types).float().mean().item())
        hits = 0
        for row, (_, it) in enumerate(rec):
            pool = kb_mod.entities_of_type(kb, kb.entities[it.gold_entity].type_id)
            scores = s_rec[row] @ model.V[:, pool]
            hits += int(pool[int(torch.argmax(scores))] == it.gold_entity)
        r1 = hits / len(rec)
    return {"trigger_acc": trig_acc, "type_acc": type_acc, "recall1_goldtype": r1}
