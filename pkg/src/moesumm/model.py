"""Toy encoder-decoder transformer whose FFN slots are the mixture layer.

Pre-norm residual blocks, learned positional embeddings, output projection
tied to the token embedding. Forward passes operate on padded [batch, len]
id arrays with additive attention masks; the public per-example surfaces
wrap batches of one. All batches are homogeneous in dataset_id so the
dataset-aware gate is well-defined per call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .data import BOS_ID, PAD_ID
from .moe import MoeFfnParams, init_moe_params, moe_apply
from .tensor import (Tensor, add, embedding, layernorm, log_softmax, matmul,
                     gather_last, reshape, scalar_mul, softmax, transpose)

_MASK_NEG = -1e9


class ModelError(ValueError):
    pass


@dataclass
class LayerNormParams:
    gain: Tensor
    offset: Tensor

    def named_tensors(self, prefix):
        return [(f"{prefix}.gain", self.gain), (f"{prefix}.offset", self.offset)]


@dataclass
class AttentionParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    def named_tensors(self, prefix):
        return [(f"{prefix}.{n}", getattr(self, n))
                for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]


@dataclass
class EncoderLayerParams:
    ln1: LayerNormParams
    attn: AttentionParams
    ln2: LayerNormParams
    moe: MoeFfnParams

    def named_tensors(self, prefix):
        return (self.ln1.named_tensors(f"{prefix}.ln1")
                + self.attn.named_tensors(f"{prefix}.attn")
                + self.ln2.named_tensors(f"{prefix}.ln2")
                + self.moe.named_tensors(f"{prefix}.moe"))


@dataclass
class DecoderLayerParams:
    ln1: LayerNormParams
    self_attn: AttentionParams
    ln2: LayerNormParams
    cross_attn: AttentionParams
    ln3: LayerNormParams
    moe: MoeFfnParams

    def named_tensors(self, prefix):
        return (self.ln1.named_tensors(f"{prefix}.ln1")
                + self.self_attn.named_tensors(f"{prefix}.self_attn")
                + self.ln2.named_tensors(f"{prefix}.ln2")
                + self.cross_attn.named_tensors(f"{prefix}.cross_attn")
                + self.ln3.named_tensors(f"{prefix}.ln3")
                + self.moe.named_tensors(f"{prefix}.moe"))


@dataclass
class TransformerParams:
    config: ModelConfig
    tok_emb: Tensor
    enc_pos: Tensor
    dec_pos: Tensor
    enc_layers: list = field(default_factory=list)
    dec_layers: list = field(default_factory=list)
    enc_ln_f: LayerNormParams = None
    dec_ln_f: LayerNormParams = None

    def named_tensors(self):
        out = [("tok_emb", self.tok_emb), ("enc_pos", self.enc_pos),
               ("dec_pos", self.dec_pos)]
        for i, lp in enumerate(self.enc_layers):
            out += lp.named_tensors(f"enc.{i}")
        out += self.enc_ln_f.named_tensors("enc.ln_f")
        for i, lp in enumerate(self.dec_layers):
            out += lp.named_tensors(f"dec.{i}")
        out += self.dec_ln_f.named_tensors("dec.ln_f")
        return out

    def tensors(self):
        return [t for _, t in self.named_tensors()]

    def clone(self):
        new = empty_params(self.config)
        for (_, dst), (_, src) in zip(new.named_tensors(), self.named_tensors()):
            dst.data = src.data.copy()
        return new


def _sinusoidal_table(n, d):
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def _build_params(cfg, weight_fn):
    """Construct the parameter tree in one fixed order."""
    cfg.validate()
    d = cfg.d_model
    moe_set = set(cfg.moe_layer_indices())

    def w(*shape):
        return Tensor(weight_fn(shape), requires_grad=True)

    def b(n):
        return Tensor(np.zeros(n), requires_grad=True)

    def ln():
        return LayerNormParams(Tensor(np.ones(d), requires_grad=True), b(d))

    def attn():
        return AttentionParams(w(d, d), b(d), w(d, d), b(d), w(d, d), b(d), w(d, d), b(d))

    if cfg.positional == "learned":
        enc_pos = w(cfg.max_src_len, d)
        dec_pos = w(cfg.max_tgt_len, d)
    else:
        enc_pos = Tensor(_sinusoidal_table(cfg.max_src_len, d), requires_grad=True)
        dec_pos = Tensor(_sinusoidal_table(cfg.max_tgt_len, d), requires_grad=True)

    params = TransformerParams(config=cfg, tok_emb=w(cfg.vocab_size, d),
                               enc_pos=enc_pos, dec_pos=dec_pos)
    for i in range(cfg.n_layers):
        params.enc_layers.append(EncoderLayerParams(
            ln(), attn(), ln(), init_moe_params(cfg, weight_fn, with_deputies=i in moe_set)))
    params.enc_ln_f = ln()
    for i in range(cfg.n_layers):
        params.dec_layers.append(DecoderLayerParams(
            ln(), attn(), ln(), attn(), ln(),
            init_moe_params(cfg, weight_fn, with_deputies=i in moe_set)))
    params.dec_ln_f = ln()
    return params


def init_params(config, seed):
    """Weights ~ N(0, 0.02), biases/offsets 0, gains 1; deterministic per seed."""
    rng = np.random.default_rng(int(seed))
    return _build_params(config, lambda shape: rng.normal(0.0, 0.02, size=shape))


def empty_params(config):
    """Zero-weight skeleton with the exact tensor layout of init_params."""
    return _build_params(config, lambda shape: np.zeros(shape))


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def _effective_mode(cfg, mode):
    if mode == "full":
        if cfg.gating_mode == "classic":
            return "classic"
        if cfg.gating_mode == "main_only":
            return "main_only"
    return mode


class TraceCollector:
    """Accumulates per-layer raw routings of one forward pass."""

    def __init__(self):
        self.entries = []  # (stack, layer, BatchRouting, valid_mask [B, T])

    def add(self, stack, layer, routing, valid_mask):
        if routing is not None:
            self.entries.append((stack, layer, routing, valid_mask))

    def deputy_counts(self, n_deputies, side=None):
        counts = np.zeros(n_deputies, dtype=np.int64)
        for stack, _, routing, valid in self.entries:
            if side is not None and stack != side:
                continue
            idx = routing.deputy_index[valid.astype(bool)]
            counts += np.bincount(idx, minlength=n_deputies)[:n_deputies]
        return counts


def _ln(x, p):
    return layernorm(x, p.gain, p.offset)


def _attention(x_q, x_kv, p, n_heads, mask_bias):
    Bq, Tq, d = x_q.data.shape
    Tk = x_kv.data.shape[1]
    dk = d // n_heads
    q = add(matmul(x_q, p.wq), p.bq)
    k = add(matmul(x_kv, p.wk), p.bk)
    v = add(matmul(x_kv, p.wv), p.bv)
    q = transpose(reshape(q, (Bq, Tq, n_heads, dk)), (0, 2, 1, 3))
    k = transpose(reshape(k, (Bq, Tk, n_heads, dk)), (0, 2, 1, 3))
    v = transpose(reshape(v, (Bq, Tk, n_heads, dk)), (0, 2, 1, 3))
    scores = scalar_mul(matmul(q, transpose(k)), 1.0 / math.sqrt(dk))
    if mask_bias is not None:
        scores = add(scores, Tensor(mask_bias))
    ctx = matmul(softmax(scores), v)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (Bq, Tq, d))
    return add(matmul(ctx, p.wo), p.bo)


def _key_bias(key_mask):
    """Additive bias [B, 1, 1, Tk] silencing padded keys; None if no pads."""
    if key_mask is None or key_mask.all():
        return None
    return (1.0 - key_mask[:, None, None, :]) * _MASK_NEG


def _causal_bias(T):
    return np.triu(np.full((1, 1, T, T), _MASK_NEG), k=1)


def encode_batch(params, src_ids, src_mask, dataset_id, mode="full",
                 forced_deputy=None, gate_override=None, trace=None):
    """src_ids [B, S] int, src_mask [B, S] {0,1} float -> Tensor [B, S, d]."""
    cfg = params.config
    mode = _effective_mode(cfg, mode)
    B, S = src_ids.shape
    h = add(embedding(params.tok_emb, src_ids), embedding(params.enc_pos, np.arange(S)))
    bias = _key_bias(src_mask)
    for li, lp in enumerate(params.enc_layers):
        h = add(h, _attention(_ln(h, lp.ln1), _ln(h, lp.ln1), lp.attn, cfg.n_heads, bias))
        layer_mode = mode if lp.moe.deputies or mode == "main_only" else "main_only"
        x, routing = moe_apply(_ln(h, lp.ln2), dataset_id, lp.moe, layer_mode,
                               activation=cfg.activation, gate_site=cfg.gate_site,
                               forced_deputy=forced_deputy, gate_override=gate_override)
        if trace is not None:
            trace.add("enc", li, routing, src_mask)
        h = add(h, x)
    return _ln(h, params.enc_ln_f)


def decode_batch(params, tgt_ids, enc_out, src_mask, dataset_id, mode="full",
                 forced_deputy=None, gate_override=None, trace=None, tgt_mask=None):
    """tgt_ids [B, T] int -> logits Tensor [B, T, vocab]."""
    cfg = params.config
    mode = _effective_mode(cfg, mode)
    B, T = tgt_ids.shape
    h = add(embedding(params.tok_emb, tgt_ids), embedding(params.dec_pos, np.arange(T)))
    causal = _causal_bias(T)
    cross_bias = _key_bias(src_mask)
    for li, lp in enumerate(params.dec_layers):
        h = add(h, _attention(_ln(h, lp.ln1), _ln(h, lp.ln1), lp.self_attn,
                              cfg.n_heads, causal))
        h = add(h, _attention(_ln(h, lp.ln2), enc_out, lp.cross_attn,
                              cfg.n_heads, cross_bias))
        layer_mode = mode if lp.moe.deputies or mode == "main_only" else "main_only"
        x, routing = moe_apply(_ln(h, lp.ln3), dataset_id, lp.moe, layer_mode,
                               activation=cfg.activation, gate_site=cfg.gate_site,
                               forced_deputy=forced_deputy, gate_override=gate_override)
        if trace is not None:
            mask = tgt_mask if tgt_mask is not None else np.ones((B, T))
            trace.add("dec", li, routing, mask)
        h = add(h, x)
    h = _ln(h, params.dec_ln_f)
    return matmul(h, transpose(params.tok_emb))  # weight-tied output projection


def _check_tokens(cfg, tokens, cap, what):
    tokens = list(int(t) for t in tokens)
    if len(tokens) > cap:
        raise ModelError(f"{what} length {len(tokens)} exceeds cap {cap}")
    bad = [t for t in tokens if not 0 <= t < cfg.vocab_size]
    if bad:
        raise ModelError(f"{what} token id {bad[0]} outside vocabulary "
                         f"[0, {cfg.vocab_size})")
    return tokens


def encode(params, src_tokens, dataset_id, mode="full"):
    """Single sequence -> Tensor [src_len, d_model]."""
    cfg = params.config
    src = _check_tokens(cfg, src_tokens, cfg.max_src_len, "source")
    if not src:
        raise ModelError("source must be non-empty")
    if mode == "full" and cfg.gating_mode == "dataset_aware" \
            and not 0 <= dataset_id < cfg.n_datasets:
        raise ModelError(f"dataset_id {dataset_id} out of range [0, {cfg.n_datasets})")
    ids = np.asarray([src], dtype=np.int64)
    out = encode_batch(params, ids, np.ones_like(ids, dtype=np.float64),
                       dataset_id, mode)
    return reshape(out, (len(src), cfg.d_model))


def decode_step(params, tgt_prefix, enc_out, dataset_id, mode="full"):
    """Next-token logits [vocab] for the last position of the prefix."""
    cfg = params.config
    prefix = _check_tokens(cfg, tgt_prefix, cfg.max_tgt_len, "target prefix")
    if not prefix:
        raise ModelError("target prefix must be non-empty (begins with BOS)")
    if prefix[0] != BOS_ID:
        raise ModelError("target prefix must begin with BOS")
    S = enc_out.data.shape[0]
    enc3 = reshape(enc_out, (1, S, cfg.d_model))
    ids = np.asarray([prefix], dtype=np.int64)
    logits = decode_batch(params, ids, enc3, None, dataset_id, mode)
    return reshape(slice_rows_last(logits, len(prefix) - 1), (cfg.vocab_size,))


def slice_rows_last(logits, t):
    """Pick position t from [B, T, V] -> [B, V] (keeps the graph)."""
    B, T, V = logits.data.shape
    flat = reshape(logits, (B * T, V))
    return reshape(embedding(flat, np.arange(B) * T + t), (B, V))


def teacher_forced_log_probs(params, src_ids, src_mask, tgt_ids, dataset_id,
                             mode="full", forced_deputy=None, gate_override=None,
                             trace=None):
    """Batched teacher forcing.

    Returns (log_probs Tensor [B, T-1], label_mask [B, T-1]) where entry
    [b, t] is log P(target[b, t+1] | target[b, :t+1], source[b]).
    """
    dec_in = tgt_ids[:, :-1]
    labels = tgt_ids[:, 1:]
    label_mask = (labels != PAD_ID).astype(np.float64)
    logits = decode_batch(params, dec_in,
                          encode_batch(params, src_ids, src_mask, dataset_id, mode,
                                       forced_deputy, gate_override, trace),
                          src_mask, dataset_id, mode, forced_deputy, gate_override,
                          trace, tgt_mask=label_mask)
    lsm = log_softmax(logits)
    return gather_last(lsm, labels), label_mask


def forward_log_probs(params, example, expert_mode="full"):
    """Per-token gold log-probabilities [n_y] under teacher forcing."""
    cfg = params.config
    if expert_mode not in ("full", "main_only"):
        raise ModelError(f"expert_mode must be 'full' or 'main_only', got {expert_mode}")
    src = _check_tokens(cfg, example.source_ids, cfg.max_src_len, "source")
    tgt = _check_tokens(cfg, example.target_ids, cfg.max_tgt_len, "target")
    if len(tgt) < 2:
        raise ModelError("target must contain BOS plus at least one token")
    src_ids = np.asarray([src], dtype=np.int64)
    tgt_ids = np.asarray([tgt], dtype=np.int64)
    lp, _ = teacher_forced_log_probs(params, src_ids,
                                     np.ones_like(src_ids, dtype=np.float64),
                                     tgt_ids, example.dataset_id, expert_mode)
    return reshape(lp, (len(tgt) - 1,))
