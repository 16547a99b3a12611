"""Greedy and beam search against enumeration oracles."""

import itertools
import math

import numpy as np
import pytest

from moesumm import desk_config, init_params
from moesumm.data import BOS_ID, EOS_ID
from moesumm.decoding import (DecodeError, beam_core, beam_decode, greedy_core,
                              greedy_decode, greedy_decode_batch)


def table_step_fn(table, vocab):
    """Step function over a hand-built conditional distribution table.

    table maps a prefix tuple (starting at BOS) to a probability vector.
    Unlisted prefixes fall back to 'always EOS'.
    """
    def step(prefix):
        probs = table.get(tuple(prefix))
        if probs is None:
            probs = np.zeros(vocab)
            probs[EOS_ID] = 1.0
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(probs, dtype=float)), []
    return step


def enumerate_sequences(table, vocab, max_len):
    """Brute-force all EOS-terminated sequences with their probabilities."""
    results = []

    def walk(prefix, logp, depth):
        probs = table.get(tuple(prefix))
        if probs is None:
            probs = np.zeros(vocab)
            probs[EOS_ID] = 1.0
        for tok, p in enumerate(probs):
            if p <= 0.0:
                continue
            lp = logp + math.log(p)
            if tok == EOS_ID:
                results.append((tuple(prefix[1:]), lp))
            elif depth < max_len:
                walk(prefix + [tok], lp, depth + 1)

    walk([BOS_ID], 0.0, 1)
    return results


class TestCores:
    def test_greedy_follows_argmax(self):
        # vocab: 0..5 (ids 0..3 reserved); tokens 4, 5 are content
        table = {
            (BOS_ID,): [0, 0, 0.1, 0, 0.6, 0.3],
            (BOS_ID, 4): [0, 0, 0.2, 0, 0.3, 0.5],
            (BOS_ID, 4, 5): [0, 0, 1.0, 0, 0, 0],
        }
        toks, _ = greedy_core(table_step_fn(table, 6), max_len=5)
        assert toks == [4, 5]

    def test_beam_one_alpha_zero_equals_greedy(self, rng):
        # random tables driven by a seeded generator
        for trial in range(50):
            table = {}
            vocab = 6
            for prefix_len in range(4):
                for prefix in itertools.product([4, 5], repeat=prefix_len):
                    probs = rng.dirichlet(np.ones(4))
                    row = np.zeros(vocab)
                    row[[EOS_ID, 4, 5]] = probs[:3]
                    row[EOS_ID] += probs[3]
                    table[(BOS_ID, *prefix)] = row
            step = table_step_fn(table, vocab)
            g_toks, _ = greedy_core(step, max_len=4)
            b_toks, _, _ = beam_core(step, max_len=4, beam_size=1, alpha=0.0)
            assert g_toks == b_toks

    def test_beam_two_beats_greedy_on_counterexample(self):
        # 3-step toy distribution where the greedy first step is a trap:
        # token 4 looks best now but leads to a low-probability continuation
        table = {
            (BOS_ID,):    [0, 0, 0.0, 0, 0.55, 0.45],
            (BOS_ID, 4):  [0, 0, 0.1, 0, 0.5, 0.4],
            (BOS_ID, 5):  [0, 0, 0.0, 0, 0.9, 0.1],
            (BOS_ID, 4, 4): [0, 0, 1.0, 0, 0, 0],
            (BOS_ID, 4, 5): [0, 0, 1.0, 0, 0, 0],
            (BOS_ID, 5, 4): [0, 0, 1.0, 0, 0, 0],
            (BOS_ID, 5, 5): [0, 0, 1.0, 0, 0, 0],
        }
        vocab = 6
        step = table_step_fn(table, vocab)
        greedy_toks, _ = greedy_core(step, max_len=3)
        beam_toks, _, _ = beam_core(step, max_len=3, beam_size=2, alpha=0.0)
        # the enumeration oracle finds the true argmax sequence
        seqs = enumerate_sequences(table, vocab, max_len=3)
        best = max(seqs, key=lambda s: s[1])[0]
        assert beam_toks == list(best)
        assert greedy_toks != list(best)

        def seq_logp(toks):
            return dict((s, lp) for s, lp in seqs)[tuple(toks)]
        assert seq_logp(beam_toks) > seq_logp(greedy_toks)

    def test_beam_returns_best_normalized_finished(self, rng):
        # returned score must dominate every finished hypothesis's score
        for _ in range(10):
            table = {}
            vocab = 6
            for prefix_len in range(3):
                for prefix in itertools.product([4, 5], repeat=prefix_len):
                    row = np.zeros(vocab)
                    row[[EOS_ID, 4, 5]] = rng.dirichlet(np.ones(3))
                    table[(BOS_ID, *prefix)] = row
            step = table_step_fn(table, vocab)
            toks, _, score = beam_core(step, max_len=3, beam_size=3, alpha=1.0)
            seqs = enumerate_sequences(table, vocab, max_len=3)
            best_norm = max(lp / max(len(s) + 1, 1) for s, lp in seqs)
            assert score <= best_norm + 1e-12

    def test_beam_size_zero_rejected(self):
        with pytest.raises(DecodeError):
            beam_core(lambda p: (np.zeros(6), []), 3, beam_size=0)


class TestModelDecoding:
    @pytest.fixture
    def params(self):
        cfg = desk_config(vocab_size=16, d_model=8, n_heads=2, n_layers=1,
                          d_hidden_main=12, d_hidden_deputy=6, n_deputies=2,
                          n_datasets=2, max_src_len=8, max_tgt_len=6)
        return init_params(cfg, 21)

    def test_output_caps_and_mode(self, params):
        out = greedy_decode(params, [4, 5, 6], 0)
        assert out.length <= params.config.max_tgt_len
        assert out.mode == "full"
        assert all(0 <= t < 16 for t in out.token_ids)

    def test_main_only_traces_empty(self, params):
        out = greedy_decode(params, [4, 5, 6], 0, mode="main_only")
        assert all(step == [] for step in out.step_traces)

    def test_full_mode_traces_cover_layers(self, params):
        out = greedy_decode(params, [4, 5, 6], 0, mode="full")
        for step in out.step_traces:
            assert [layer for layer, _, _ in step] == ["dec.0"]
            for _, deputy, gate in step:
                assert 0 <= deputy < 2
                assert 0.0 < gate < 1.0

    def test_beam_one_matches_greedy_on_models(self, params, rng):
        for _ in range(10):
            src = list(rng.integers(4, 16, size=int(rng.integers(2, 8))))
            g = greedy_decode(params, src, 0)
            b = beam_decode(params, src, 0, beam_size=1, length_norm_alpha=0.0)
            assert g.token_ids == b.token_ids

    def test_batch_greedy_matches_single(self, params, rng):
        sources = [list(rng.integers(4, 16, size=int(rng.integers(2, 8))))
                   for _ in range(7)]
        batch_out = greedy_decode_batch(params, sources, 0)
        for src, out in zip(sources, batch_out):
            single = greedy_decode(params, src, 0)
            assert out.token_ids == single.token_ids

    def test_main_only_never_reads_deputies(self, params):
        # corrupting every deputy and selector with NaN leaves main_only
        # decoding unchanged
        src = [4, 5, 6, 7]
        before = greedy_decode(params, src, 0, mode="main_only")
        for stack in (params.enc_layers, params.dec_layers):
            for lp in stack:
                for dep in lp.moe.deputies:
                    dep.w1.data[:] = np.nan
                    dep.b1.data[:] = np.nan
                    dep.w2.data[:] = np.nan
                for sel in lp.moe.selectors:
                    sel.data[:] = np.nan
        after = greedy_decode(params, src, 0, mode="main_only")
        assert before.token_ids == after.token_ids
