"""Training regimes: determinism, freeze discipline, parameter accounting."""

import numpy as np
import pytest

from moesumm import desk_config, init_params
from moesumm.data import SyntheticSpec, generate_synthetic
from moesumm.training import (FreezeMask, TrainingError, extend_for_dataset,
                              finetune_deputy, hash_tensor, param_report,
                              train_mixed)


def small_cfg(**kw):
    base = dict(vocab_size=48, d_model=16, n_heads=2, n_layers=1,
                d_hidden_main=24, d_hidden_deputy=12, n_deputies=3,
                n_datasets=3, max_src_len=14, max_tgt_len=10)
    base.update(kw)
    return desk_config(**base)


@pytest.fixture(scope="module")
def corpora():
    spec = SyntheticSpec(n_domains=3, n_per_domain=12, vocab_size=48,
                         src_len_range=(8, 10), seed=21)
    return generate_synthetic(spec)


def _train(cfg, corpora, epochs=1, seed=0, **kw):
    args = dict(lr=1e-3, batch_size=4, grad_accum_steps=1, warmup_steps=0)
    args.update(kw)
    return train_mixed(cfg, corpora, epochs, seed, **args)


class TestTrainMixed:
    def test_same_seed_bitwise_identical(self, corpora):
        cfg = small_cfg()
        p1, _ = _train(cfg, corpora, seed=3)
        p2, _ = _train(cfg, corpora, seed=3)
        for (n1, t1), (n2, t2) in zip(p1.named_tensors(), p2.named_tensors()):
            assert n1 == n2
            assert np.array_equal(t1.data, t2.data), n1

    def test_different_seed_differs(self, corpora):
        cfg = small_cfg()
        p1, _ = _train(cfg, corpora, seed=3)
        p2, _ = _train(cfg, corpora, seed=4)
        assert any(not np.array_equal(t1.data, t2.data)
                   for (_, t1), (_, t2) in zip(p1.named_tensors(),
                                               p2.named_tensors()))

    def test_empty_corpus_rejected(self):
        with pytest.raises(TrainingError, match="empty"):
            _train(small_cfg(), [(0, [])])

    def test_dataset_id_overflow_rejected(self, corpora):
        cfg = small_cfg(n_datasets=2)
        with pytest.raises(TrainingError, match="out of range"):
            _train(cfg, corpora)

    def test_report_utilization_rows_sum_to_one(self, corpora):
        cfg = small_cfg()
        _, report = _train(cfg, corpora, epochs=1)
        assert set(report.utilization) == {0, 1, 2}
        for row in report.utilization.values():
            assert abs(sum(row) - 1.0) < 1e-9

    def test_lambda_zero_equals_margin_free_oracle(self, corpora):
        # a margin-free training loop written out by hand must produce the
        # same trajectory as margin_weight = 0 through the real code path
        from moesumm.losses import batch_total_loss
        from moesumm.model import init_params as init
        from moesumm.optim import Adam
        from moesumm.tensor import Tape, backward
        from moesumm.training import _batch_pool, pad_batch

        cfg = small_cfg(margin_weight=0.0)
        seed, epochs = 5, 2
        p_real, _ = _train(cfg, corpora, epochs=epochs, seed=seed, lr=1e-3)

        ss = np.random.SeedSequence(seed).generate_state(2)
        params = init(cfg, int(ss[0]))
        rng = np.random.default_rng(np.random.SeedSequence([int(ss[1]), 0xDA7A]))
        opt = Adam(params.named_tensors(), lr=1e-3)
        for _ in range(epochs):
            for dataset_id, batch in _batch_pool(corpora, 4, rng):
                src, mask, tgt = pad_batch(batch, cfg.max_src_len, cfg.max_tgt_len)
                with Tape() as tape:
                    # cross-entropy only: the margin code is never touched
                    loss = batch_total_loss(params, src, mask, tgt, dataset_id,
                                            margin_weight=0.0)
                    backward(loss.node, tape)
                opt.step()
                opt.zero_grad()
        for (n1, t1), (n2, t2) in zip(p_real.named_tensors(),
                                      params.named_tensors()):
            assert np.array_equal(t1.data, t2.data), n1

    def test_memorization_sanity_run(self):
        # 1-example corpus: gen loss falls below 0.1 with enough epochs
        spec = SyntheticSpec(n_domains=1, n_per_domain=1, vocab_size=48,
                             src_len_range=(8, 8), seed=30)
        corpus = generate_synthetic(spec)
        cfg = small_cfg(n_datasets=1)
        _, report = _train(cfg, corpus, epochs=100, seed=1, lr=1e-2, batch_size=1)
        assert report.per_epoch[-1]["gen_loss"] < 0.1
        # loss non-increasing over epochs within a 5% tolerance band
        gl = [row["gen_loss"] for row in report.per_epoch]
        for a, b in zip(gl, gl[1:]):
            assert b <= a * 1.05 + 1e-6

    def test_grad_accumulation_changes_nothing_but_step_count(self, corpora):
        # accumulating over the whole epoch equals full-batch behavior in
        # expectation; here just verify it runs and stays deterministic
        cfg = small_cfg()
        p1, _ = _train(cfg, corpora, seed=9, grad_accum_steps=3)
        p2, _ = _train(cfg, corpora, seed=9, grad_accum_steps=3)
        for (_, t1), (_, t2) in zip(p1.named_tensors(), p2.named_tensors()):
            assert np.array_equal(t1.data, t2.data)


@pytest.fixture(scope="module")
def base(corpora):
    params, _ = _train(small_cfg(), corpora, epochs=1, seed=7)
    return params


class TestFinetuneDeputy:
    def _fourth_domain(self, n=8, seed=40):
        spec = SyntheticSpec(n_domains=4, n_per_domain=n, vocab_size=48,
                             src_len_range=(8, 10), seed=seed)
        return generate_synthetic(spec)[3]

    def test_zero_epochs_is_identity(self, base):
        ds, exs = self._fourth_domain()
        tuned, _ = finetune_deputy(base, (ds, exs), 0, seed=1)
        old = dict(base.named_tensors())
        for name, t in tuned.named_tensors():
            if name in old:
                assert np.array_equal(t.data, old[name].data)

    def test_frozen_tensors_bitwise_stable(self, base):
        ds, exs = self._fourth_domain()
        tuned, report = finetune_deputy(base, (ds, exs), 2, seed=2,
                                        lr=1e-3, batch_size=4)
        assert report.frozen_params_unchanged
        mask = FreezeMask.deputy_finetune(tuned)
        old = dict(base.named_tensors())
        for name, t in mask.frozen_params(tuned):
            assert hash_tensor(t) == hash_tensor(old[name]), name
        # and something trainable actually moved
        assert any(not np.array_equal(t.data, old[name].data)
                   for name, t in mask.trainable_params(tuned) if name in old)

    def test_new_domain_allocates_one_selector(self, base):
        ds, exs = self._fourth_domain()
        tuned, _ = finetune_deputy(base, (ds, exs), 1, seed=3, lr=1e-3,
                                   batch_size=4)
        assert tuned.config.n_datasets == 4
        old_names = {n for n, _ in base.named_tensors()}
        new_names = {n for n, _ in tuned.named_tensors()}
        added = sorted(new_names - old_names)
        assert added == [n for n in added if ".moe.selector.3" in n]
        assert len(added) == 2 * len(base.config.moe_layer_indices())

    def test_gap_dataset_id_rejected(self, base):
        ds, exs = self._fourth_domain()
        for ex in exs:
            ex.dataset_id = 7
        with pytest.raises(TrainingError, match="gap"):
            finetune_deputy(base, (7, exs), 1, seed=1)

    def test_existing_slot_reuse(self, base, corpora):
        ds, exs = corpora[1]
        tuned, report = finetune_deputy(base, (ds, exs), 1, seed=5, lr=1e-3,
                                        batch_size=4)
        assert tuned.config.n_datasets == base.config.n_datasets
        assert report.frozen_params_unchanged

    def test_add_fresh_deputy_variant(self, base):
        ds, exs = self._fourth_domain()
        tuned, report = finetune_deputy(base, (ds, exs), 1, seed=6, lr=1e-3,
                                        batch_size=4, add_fresh_deputy=True)
        cfg = tuned.config
        assert cfg.n_deputies == base.config.n_deputies + 1
        assert cfg.selector_widths == (3, 3, 3, 4)
        assert report.frozen_params_unchanged
        # old selectors keep their width; the new dataset sees the new deputy
        for lp in tuned.enc_layers:
            assert lp.moe.selectors[0].data.shape == (16, 3)
            assert lp.moe.selectors[3].data.shape == (16, 4)
            assert len(lp.moe.deputies) == 4

    def test_input_params_not_mutated(self, base):
        snapshot = {n: t.data.copy() for n, t in base.named_tensors()}
        ds, exs = self._fourth_domain()
        finetune_deputy(base, (ds, exs), 1, seed=8, lr=1e-3, batch_size=4)
        for name, t in base.named_tensors():
            assert np.array_equal(t.data, snapshot[name])


class TestParamReport:
    def test_desk_formulas(self):
        # P_f = 64*128 + 128 + 128*64 = 16512; selectors 4*3*64*3 = 2304
        rep = param_report(desk_config())
        f = rep["formula"]
        assert f["p_f_per_deputy"] == 16512
        assert f["moe_bearing_blocks"] == 4
        assert f["deputy_total"] == 4 * 3 * 16512
        assert f["selector_total"] == 2304
        assert rep["match"]

    def test_adding_dataset_grows_only_selectors(self):
        a = param_report(desk_config(n_datasets=3))
        b = param_report(desk_config(n_datasets=4))
        assert b["formula"]["deputy_total"] == a["formula"]["deputy_total"]
        assert b["formula"]["backbone"] == a["formula"]["backbone"]
        growth = b["formula"]["selector_total"] - a["formula"]["selector_total"]
        assert growth == a["formula"]["selector_growth_per_dataset"] == 4 * 64 * 3

    def test_selector_share_is_small(self):
        rep = param_report(desk_config())["formula"]
        assert rep["selector_total"] < rep["deputy_total"]
        assert rep["selector_total"] * 10 < rep["deputy_total"]

    @pytest.mark.parametrize("seed", range(5))
    def test_formulas_match_walk_on_random_configs(self, seed):
        rng = np.random.default_rng(seed)
        heads = int(rng.choice([1, 2, 4]))
        cfg = desk_config(
            vocab_size=int(rng.integers(8, 64)),
            d_model=int(heads * rng.integers(2, 10)),
            n_heads=heads,
            n_layers=int(rng.integers(1, 4)),
            d_hidden_main=int(rng.integers(4, 40)),
            d_hidden_deputy=int(rng.integers(2, 24)),
            n_deputies=int(rng.integers(1, 5)),
            n_datasets=int(rng.integers(1, 5)),
            max_src_len=int(rng.integers(4, 20)),
            max_tgt_len=int(rng.integers(4, 20)))
        rep = param_report(cfg)
        assert rep["match"], rep

    def test_moe_layer_subset_counts(self):
        cfg = desk_config(n_layers=3, moe_layers=(0, 2))
        rep = param_report(cfg)
        assert rep["formula"]["moe_bearing_blocks"] == 4
        assert rep["match"]


class TestExtendForDataset:
    def test_reuse_returns_clone(self):
        cfg = small_cfg()
        params = init_params(cfg, 0)
        clone, ds = extend_for_dataset(params, 1, seed=0)
        assert ds == 1
        assert clone is not params
        for (_, a), (_, b) in zip(params.named_tensors(), clone.named_tensors()):
            assert np.array_equal(a.data, b.data)

    def test_fresh_selector_is_seeded_and_nonzero(self):
        cfg = small_cfg()
        params = init_params(cfg, 0)
        a, _ = extend_for_dataset(params, 3, seed=5)
        b, _ = extend_for_dataset(params, 3, seed=5)
        sel_a = a.enc_layers[0].moe.selectors[3]
        sel_b = b.enc_layers[0].moe.selectors[3]
        assert np.array_equal(sel_a.data, sel_b.data)
        assert np.abs(sel_a.data).max() > 0


def test_k_copies_utilization_valid_distributions():
    # same corpus cloned under 3 dataset ids: utilization rows stay valid
    spec = SyntheticSpec(n_domains=1, n_per_domain=10, vocab_size=48,
                         src_len_range=(8, 10), seed=50)
    base = generate_synthetic(spec)[0][1]
    import copy
    corpora = []
    for d in range(3):
        clones = copy.deepcopy(base)
        for ex in clones:
            ex.dataset_id = d
        corpora.append((d, clones))
    _, report = _train(small_cfg(), corpora, epochs=1, seed=2)
    for d, row in report.utilization.items():
        assert abs(sum(row) - 1.0) < 1e-9


def test_train_report_json_roundtrip(corpora, tmp_path):
    import json
    _, report = _train(small_cfg(), corpora, epochs=1, seed=11)
    path = tmp_path / "report.json"
    path.write_text(json.dumps(report.to_dict()))
    loaded = json.loads(path.read_text())
    assert loaded["epochs"] == 1
    assert loaded["regime"] == "train_mixed"
    assert set(loaded["utilization"]) == {"0", "1", "2"}
    assert len(loaded["per_epoch"]) == 1
