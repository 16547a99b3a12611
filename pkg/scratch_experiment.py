"""Full-scale tuning run mirroring the acceptance experiment (3 seeds)."""
import json
import time

import numpy as np

from moesumm.data import SyntheticSpec, generate_synthetic, make_synthetic_vocab
from moesumm import desk_config
from moesumm.decoding import greedy_decode_batch
from moesumm.metrics import expertise_report, mean_rouge, rouge
from moesumm.training import finetune_deputy, train_mixed

TRAIN_SPEC = SyntheticSpec(n_domains=3, n_per_domain=2000, vocab_size=104,
                           src_len_range=(9, 14), seed=100)
EVAL_SPEC = SyntheticSpec(n_domains=3, n_per_domain=200, vocab_size=104,
                          src_len_range=(9, 14), seed=999)
FOURTH_TRAIN = SyntheticSpec(n_domains=4, n_per_domain=100, vocab_size=104,
                             src_len_range=(9, 14), seed=555)
FOURTH_EVAL = SyntheticSpec(n_domains=4, n_per_domain=200, vocab_size=104,
                            src_len_range=(9, 14), seed=777)

corpora = generate_synthetic(TRAIN_SPEC)
eval_sets = generate_synthetic(EVAL_SPEC)
vocab = make_synthetic_vocab(104)
cfg = desk_config(vocab_size=104, max_src_len=20, max_tgt_len=10)
d4_train = generate_synthetic(FOURTH_TRAIN)[3]
d4_eval = generate_synthetic(FOURTH_EVAL)[3]

results = []
for seed in (0, 1, 2):
    t0 = time.perf_counter()
    params, rep = train_mixed(cfg, corpora, 30, seed, lr=2e-3, batch_size=32,
                              grad_accum_steps=1, warmup_steps=200)
    train_min = (time.perf_counter() - t0) / 60
    r = expertise_report(params, eval_sets, vocab, include_pinned=False,
                         max_margin_examples=50)
    entry = {"seed": seed, "train_min": train_min,
             "final_loss": rep.per_epoch[-1]["gen_loss"],
             "per_dataset": {}}
    for ds, e in r["per_dataset"].items():
        entry["per_dataset"][ds] = dict(
            r1_full=e["rouge_full"]["r1"]["f1"],
            r1_main=e["rouge_main_only"]["r1"]["f1"],
            len_full=e["gen_length_mean_full"],
            len_main=e["gen_length_mean_main_only"],
            gold_len=e["gold_length_mean"],
            margin=e["mean_margin"],
            util=e["utilization"])
    # few-shot 4th domain
    ds4, exs4 = d4_train
    zero_out = greedy_decode_batch(params, [x.source_ids for x in d4_eval[1]],
                                   0, "main_only", vocab)
    r1_zero = mean_rouge([rouge(o.token_ids, x.target_ids[1:-1])
                          for o, x in zip(zero_out, d4_eval[1])]).r1.f1
    t1 = time.perf_counter()
    tuned, ftrep = finetune_deputy(params, (ds4, exs4), 30, seed, lr=1e-3,
                                   batch_size=16, grad_accum_steps=1,
                                   warmup_steps=0)
    ft_out = greedy_decode_batch(tuned, [x.source_ids for x in d4_eval[1]],
                                 3, "full", vocab)
    r1_ft = mean_rouge([rouge(o.token_ids, x.target_ids[1:-1])
                        for o, x in zip(ft_out, d4_eval[1])]).r1.f1
    entry["fourth"] = dict(r1_zero_shot=r1_zero, r1_finetuned=r1_ft,
                           finetune_min=(time.perf_counter() - t1) / 60,
                           frozen_ok=ftrep.frozen_params_unchanged)
    results.append(entry)
    print(json.dumps(entry, indent=1), flush=True)

with open("scratch_results.json", "w") as fh:
    json.dump(results, fh, indent=1)
print("DONE")
