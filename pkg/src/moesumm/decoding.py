"""Greedy and length-normalized beam-search decoding.

Both decoders drive a step function mapping a prefix to next-token
log-probabilities, so the search logic is testable against hand-built
distributions without a model. Model decoding runs without a tape.
Tie-breaks always favor the lowest token id, which makes beam size 1
token-identical to greedy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._threads import single_thread_blas
from .data import BOS_ID, EOS_ID, PAD_ID
from .model import TraceCollector, decode_batch, encode_batch
from .tensor import log_softmax, no_grad


class DecodeError(ValueError):
    pass


@dataclass
class DecodeOutput:
    token_ids: list                 # generated ids, EOS stripped
    text: str
    step_traces: list               # per generated step: [(layer, deputy, gate), ...]
    length: int
    mode: str
    score: float = 0.0


def _model_step_fn(params, src_tokens, dataset_id, mode, forced_deputy=None):
    """Build the prefix -> log-prob closure for one source sequence."""
    cfg = params.config
    src = np.asarray([list(src_tokens)], dtype=np.int64)
    src_mask = np.ones_like(src, dtype=np.float64)
    with no_grad():
        enc_out = encode_batch(params, src, src_mask, dataset_id, mode,
                               forced_deputy=forced_deputy)

    def step(prefix):
        ids = np.asarray([prefix], dtype=np.int64)
        trace = TraceCollector()
        with no_grad():
            logits = decode_batch(params, ids, enc_out, src_mask, dataset_id,
                                  mode, forced_deputy=forced_deputy, trace=trace)
            lp = log_softmax(logits).data[0, -1]
        step_trace = []
        for stack, layer, routing, _ in trace.entries:
            step_trace.append((f"{stack}.{layer}", int(routing.deputy_index[0, -1]),
                               float(routing.gate_value[0, -1])))
        return lp, step_trace

    return step


def greedy_core(step_fn, max_len, eos_id=EOS_ID, bos_id=BOS_ID):
    """Argmax decoding (ties to the lowest id); stops at EOS or max_len."""
    prefix = [bos_id]
    traces = []
    while len(prefix) - 1 < max_len:
        lp, step_trace = step_fn(prefix)
        tok = int(np.argmax(lp))
        traces.append(step_trace)
        if tok == eos_id:
            break
        prefix.append(tok)
    return prefix[1:], traces


@dataclass
class _Hyp:
    tokens: list
    logprob: float
    traces: list = field(default_factory=list)


def _norm_score(logprob, n_tokens, alpha):
    n = max(n_tokens, 1)
    return logprob / (n ** alpha)


def beam_core(step_fn, max_len, beam_size, alpha=1.0, eos_id=EOS_ID, bos_id=BOS_ID):
    """Length-normalized beam search: score = logprob / len^alpha.

    Finished hypotheses compete under the same normalization; the best
    finished hypothesis (or best live one at the cap) is returned.
    """
    if beam_size < 1:
        raise DecodeError("beam_size must be >= 1")
    live = [_Hyp([bos_id], 0.0)]
    finished = []
    for _ in range(max_len):
        candidates = []
        for hyp in live:
            lp, step_trace = step_fn(hyp.tokens)
            # beam_size + 1 expansions per hypothesis guarantee at least
            # beam_size non-EOS candidates overall (EOS is a single token)
            top = np.argsort(-lp, kind="stable")[:beam_size + 1]
            for tok in top:
                tok = int(tok)
                candidates.append((hyp.logprob + float(lp[tok]), tok, hyp, step_trace))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        new_live = []
        for rank, (logprob, tok, hyp, step_trace) in enumerate(candidates):
            if tok == eos_id:
                # an EOS candidate finishes only from within the step's
                # global top-beam_size selection; lower-ranked EOS is pruned
                # (this is what makes beam 1 identical to greedy)
                if rank < beam_size:
                    n_gen = len(hyp.tokens)  # generated tokens incl. EOS
                    finished.append((_norm_score(logprob, n_gen, alpha),
                                     _Hyp(hyp.tokens + [tok], logprob,
                                          hyp.traces + [step_trace])))
            elif len(new_live) < beam_size:
                new_live.append(_Hyp(hyp.tokens + [tok], logprob,
                                     hyp.traces + [step_trace]))
            if len(new_live) >= beam_size and rank + 1 >= beam_size:
                break
        live = new_live
        if not live:
            break
    if not finished:
        finished = [(_norm_score(h.logprob, len(h.tokens), alpha), h) for h in live]
    finished.sort(key=lambda f: -f[0])
    score, best = finished[0]
    toks = [t for t in best.tokens[1:] if t != eos_id]
    return toks, best.traces, score


def _decode_output(tokens, traces, mode, vocab=None, score=0.0):
    text = vocab.decode(tokens) if vocab is not None else ""
    return DecodeOutput(token_ids=tokens, text=text, step_traces=traces,
                        length=len(tokens), mode=mode, score=score)


def greedy_decode(params, src_tokens, dataset_id, mode="full", vocab=None,
                  forced_deputy=None):
    step = _model_step_fn(params, src_tokens, dataset_id, mode, forced_deputy)
    tokens, traces = greedy_core(step, params.config.max_tgt_len - 1)
    return _decode_output(tokens, traces, mode, vocab)


def beam_decode(params, src_tokens, dataset_id, mode="full", beam_size=4,
                length_norm_alpha=1.0, vocab=None, forced_deputy=None):
    step = _model_step_fn(params, src_tokens, dataset_id, mode, forced_deputy)
    tokens, traces, score = beam_core(step, params.config.max_tgt_len - 1,
                                      beam_size, length_norm_alpha)
    return _decode_output(tokens, traces, mode, vocab, score)


def greedy_decode_batch(params, sources, dataset_id, mode="full", vocab=None,
                        forced_deputy=None, collect_routing=True):
    """Greedy-decode many sources of one dataset in lockstep.

    Returns a list of DecodeOutput. Routing traces are collected per step
    for the generated (still unfinished) rows only.
    """
    cfg = params.config
    B = len(sources)
    if B == 0:
        return []
    with single_thread_blas():
        return _greedy_batch_impl(params, sources, dataset_id, mode, vocab,
                                  forced_deputy, collect_routing)


def _greedy_batch_impl(params, sources, dataset_id, mode, vocab,
                       forced_deputy, collect_routing):
    cfg = params.config
    B = len(sources)
    S = max(len(s) for s in sources)
    src = np.full((B, S), PAD_ID, dtype=np.int64)
    src_mask = np.zeros((B, S))
    for i, s in enumerate(sources):
        src[i, :len(s)] = s
        src_mask[i, :len(s)] = 1.0
    with no_grad():
        enc_out = encode_batch(params, src, src_mask, dataset_id, mode,
                               forced_deputy=forced_deputy)

    prefixes = np.full((B, 1), BOS_ID, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    out_tokens = [[] for _ in range(B)]
    out_traces = [[] for _ in range(B)]
    max_new = cfg.max_tgt_len - 1
    for _ in range(max_new):
        trace = TraceCollector() if collect_routing else None
        with no_grad():
            logits = decode_batch(params, prefixes, enc_out, src_mask, dataset_id,
                                  mode, forced_deputy=forced_deputy, trace=trace)
            lp = log_softmax(logits).data[:, -1, :]
        nxt = lp.argmax(axis=1)
        if trace is not None:
            for i in range(B):
                if done[i]:
                    continue
                out_traces[i].append([(f"{stack}.{layer}",
                                       int(routing.deputy_index[i, -1]),
                                       float(routing.gate_value[i, -1]))
                                      for stack, layer, routing, _ in trace.entries])
        for i in range(B):
            if done[i]:
                continue
            if nxt[i] == EOS_ID:
                done[i] = True
            else:
                out_tokens[i].append(int(nxt[i]))
        if done.all():
            break
        step_tok = np.where(done, PAD_ID, nxt).astype(np.int64)
        prefixes = np.concatenate([prefixes, step_tok[:, None]], axis=1)
    return [_decode_output(out_tokens[i], out_traces[i], mode, vocab)
            for i in range(B)]
