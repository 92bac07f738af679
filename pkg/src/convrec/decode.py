"""Response generators: greedy/beam, HopSkip bidirectional, and COLD relaxed.

All decoders take the conditioning history as a materialized vector sequence;
the pipeline module materializes UnifiedHistory before calling in here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import torch

from .model import Direction


class DecodeMode(Enum):
    GREEDY = "greedy"
    BEAM = "beam"
    HOPSKIP = "hopskip"
    COLD = "cold"


class DecodeError(Exception):
    pass


@dataclass
class ColdConfig:
    T_relaxed: int = 0          # 0 = derive from the greedy draft
    steps: int = 15
    step_size: float = 1.0
    phi_fluency: float = 1.0
    phi_compulsory: float = 5.0
    init_smoothing: float = 0.15

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not 0.0 < self.init_smoothing < 1.0:
            raise ValueError("init_smoothing must be in (0, 1)")


@dataclass
class DecodeConfig:
    mode: DecodeMode = DecodeMode.HOPSKIP
    max_len: int = 24
    beam_width: int = 4
    cold: ColdConfig = field(default_factory=ColdConfig)

    def __post_init__(self):
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")


@dataclass
class DecodeResult:
    tokens: list
    entity_included: bool
    entity_position: int | None
    trace: list   # (side, token id, probability) per emission
    repairs: int = 0


def _base_rows(model, ids):
    weight = model.base_emb.weight if hasattr(model.base_emb, "weight") else model.base_emb
    if not ids:
        return weight[:0]
    return weight[torch.tensor(list(ids), dtype=torch.long)]


def decode_unconstrained(model, h_vecs: torch.Tensor, cfg: DecodeConfig) -> DecodeResult:
    if cfg.mode not in (DecodeMode.GREEDY, DecodeMode.BEAM):
        raise ValueError("decode_unconstrained handles GREEDY and BEAM only")
    if cfg.mode is DecodeMode.GREEDY or cfg.beam_width == 1:
        return _greedy(model, h_vecs, cfg)
    return _beam(model, h_vecs, cfg)


def _greedy(model, h_vecs, cfg) -> DecodeResult:
    vocab = model.vocab
    ctx = torch.cat([h_vecs, _base_rows(model, [vocab.bos_id])])
    tokens = []
    trace = []
    for _ in range(cfg.max_len):
        probs = model.next_token_probs(Direction.FWD, ctx)
        t = int(torch.argmax(probs).item())
        trace.append(("R", t, float(probs[t].item())))
        if t == vocab.eos_id:
            break
        tokens.append(t)
        ctx = torch.cat([ctx, _base_rows(model, [t])])
    return DecodeResult(tokens, False, None, trace)


def _hyp_score(logp: float, tokens, ended: bool) -> float:
    emitted = len(tokens) + (1 if ended else 0)
    return logp / max(1, emitted)


def _beam(model, h_vecs, cfg) -> DecodeResult:
    vocab = model.vocab
    prefix = torch.cat([h_vecs, _base_rows(model, [vocab.bos_id])])
    # hypothesis: (tokens, logp, ended, trace)
    beams = [([], 0.0, False, [])]
    for _ in range(cfg.max_len):
        candidates = []
        for tokens, logp, ended, trace in beams:
            if ended:
                candidates.append((tokens, logp, ended, trace))
                continue
            ctx = torch.cat([prefix, _base_rows(model, tokens)])
            probs = model.next_token_probs(Direction.FWD, ctx)
            top = torch.topk(probs, min(cfg.beam_width, probs.shape[0]))
            for p, t in zip(top.values.tolist(), top.indices.tolist()):
                lp = logp + math.log(max(p, 1e-30))
                step = ("R", t, p)
                if t == vocab.eos_id:
                    candidates.append((tokens, lp, True, trace + [step]))
                else:
                    candidates.append((tokens + [t], lp, False, trace + [step]))
        candidates.sort(key=lambda h: h[1], reverse=True)
        beams = candidates[: cfg.beam_width]
        if all(h[2] for h in beams):
            break
    best = max(beams, key=lambda h: _hyp_score(h[1], h[0], h[2]))
    return DecodeResult(best[0], False, None, best[3])


def decode_hopskip(
    model,
    h_vecs: torch.Tensor,
    rev_h_vecs: torch.Tensor,
    entity_id: int,
    e_vec: torch.Tensor,
    entity_surface: list,
    cfg: DecodeConfig,
) -> DecodeResult:
    if cfg.mode is not DecodeMode.HOPSKIP:
        raise ValueError("config mode must be HOPSKIP")
    vocab = model.vocab
    e_row = e_vec.unsqueeze(0)
    left: list[int] = []    # emission order y_-1, y_-2, ...
    right: list[int] = []   # y_1, y_2, ...
    left_open = right_open = True
    cap = cfg.max_len // 2
    trace = []
    while left_open or right_open:
        if right_open:
            ctx = torch.cat([
                h_vecs, e_row,
                _base_rows(model, list(reversed(left))),
                _base_rows(model, [vocab.ent_id]),
                _base_rows(model, right),
            ])
            probs = model.next_token_probs(Direction.FWD, ctx)
            t = int(torch.argmax(probs).item())
            trace.append(("R", t, float(probs[t].item())))
            if t == vocab.eos_id:
                right_open = False
            else:
                right.append(t)
                if len(right) >= cap:
                    right_open = False
        if left_open:
            ctx = torch.cat([
                rev_h_vecs, e_row,
                _base_rows(model, list(reversed(right))),
                _base_rows(model, [vocab.ent_id]),
                _base_rows(model, left),
            ])
            probs = model.next_token_probs(Direction.BWD, ctx)
            t = int(torch.argmax(probs).item())
            trace.append(("L", t, float(probs[t].item())))
            if t == vocab.bos_id:
                left_open = False
            else:
                left.append(t)
                if len(left) >= cap:
                    left_open = False
    tokens = list(reversed(left)) + list(entity_surface) + right
    return DecodeResult(
        tokens=tokens,
        entity_included=True,
        entity_position=len(left),
        trace=trace,
    )


_LOG_FLOOR = 1e-12


def fluency_constraint(model, h_vecs: torch.Tensor, Y: torch.Tensor) -> torch.Tensor:
    """Negative-KL fluency score of a relaxed sequence; always <= 0."""
    vocab = model.vocab
    W, T = Y.shape
    weight = model.base_emb.weight if hasattr(model.base_emb, "weight") else model.base_emb
    expected = Y.t() @ weight  # T x D expected emissions
    ctx = torch.cat([h_vecs, weight[vocab.bos_id].unsqueeze(0), expected[: T - 1]])
    all_probs = model.decoder_all_probs(Direction.FWD, ctx)
    pred = all_probs[h_vecs.shape[0]:]  # T x W, row t predicts position t
    return (pred * torch.log(Y.t().clamp(min=_LOG_FLOOR))).sum()


def compulsory_constraint(Y: torch.Tensor, mandatory: set) -> torch.Tensor:
    """Log-probability-style score that each mandatory token appears somewhere."""
    if not mandatory:
        raise ValueError("mandatory token set must be non-empty")
    total = Y.new_zeros(())
    for s in mandatory:
        p_never = (1.0 - Y[s, :]).prod()
        total = total + torch.log((1.0 - p_never).clamp(min=_LOG_FLOOR))
    return total


def decode_cold(model, h_vecs: torch.Tensor, mandatory: set, cfg: DecodeConfig,
                energy_log: list | None = None) -> DecodeResult:
    if cfg.mode is not DecodeMode.COLD:
        raise ValueError("config mode must be COLD")
    vocab = model.vocab
    W = len(vocab)
    cold = cfg.cold
    draft = _greedy(model, h_vecs, cfg).tokens
    T = cold.T_relaxed or min(max(len(draft), 4), cfg.max_len)
    cols = (draft + [vocab.eos_id] * T)[:T]
    eps = cold.init_smoothing
    probs0 = torch.full((W, T), eps / W, dtype=torch.float32)
    for t, tok in enumerate(cols):
        probs0[tok, t] += 1.0 - eps
    Z = torch.log(probs0)

    def energy(z):
        Y = torch.softmax(z, dim=0)
        e = cold.phi_fluency * fluency_constraint(model, h_vecs, Y)
        e = e + cold.phi_compulsory * compulsory_constraint(Y, mandatory)
        return e

    with torch.enable_grad():
        Z = Z.requires_grad_(True)
        e = energy(Z)
        if not torch.isfinite(e):
            raise DecodeError("non-finite energy at initialization")
        if energy_log is not None:
            energy_log.append(float(e.item()))
        for _ in range(cold.steps):
            (grad,) = torch.autograd.grad(e, Z)
            if not torch.isfinite(grad).all():
                raise DecodeError("non-finite energy gradient")
            step = cold.step_size
            accepted = None
            for _halving in range(30):
                cand = (Z.detach() + step * grad).requires_grad_(True)
                e_cand = energy(cand)
                if torch.isfinite(e_cand) and e_cand >= e:
                    accepted = (cand, e_cand)
                    break
                step /= 2.0
            if accepted is None:
                break
            Z, e = accepted
            if energy_log is not None:
                energy_log.append(float(e.item()))
    Y = torch.softmax(Z.detach(), dim=0)
    tokens = [int(t) for t in torch.argmax(Y, dim=0).tolist()]
    while tokens and tokens[-1] in (vocab.eos_id, vocab.pad_id):
        tokens.pop()
    included = any(t in mandatory for t in tokens)
    pos = next((i for i, t in enumerate(tokens) if t in mandatory), None)
    trace = [("C", t, float(Y[t, i].item())) for i, t in enumerate(tokens)]
    return DecodeResult(tokens, included, pos, trace)
