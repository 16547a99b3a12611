"""One recipe, one seed: prints a JSON result line."""
import json, sys, time
from moesumm.data import SyntheticSpec, generate_synthetic, make_synthetic_vocab
from moesumm import desk_config
from moesumm.metrics import expertise_report
from moesumm.training import train_mixed

lr, bs, warm, lam, epochs, seed = (float(sys.argv[1]), int(sys.argv[2]),
                                   int(sys.argv[3]), float(sys.argv[4]),
                                   int(sys.argv[5]), int(sys.argv[6]))
corpora = generate_synthetic(SyntheticSpec(n_domains=3, n_per_domain=2000,
                                           vocab_size=104, src_len_range=(9, 14), seed=100))
eval_sets = generate_synthetic(SyntheticSpec(n_domains=3, n_per_domain=100,
                                             vocab_size=104, src_len_range=(9, 14), seed=999))
vocab = make_synthetic_vocab(104)
cfg = desk_config(vocab_size=104, max_src_len=20, max_tgt_len=10,
                  margin_weight=lam)
t0 = time.perf_counter()
params, rep = train_mixed(cfg, corpora, epochs, seed, lr=lr, batch_size=bs,
                          grad_accum_steps=1, warmup_steps=warm)
r = expertise_report(params, eval_sets, vocab, include_pinned=False,
                     max_margin_examples=20)
r1s = {ds: round(e["rouge_full"]["r1"]["f1"], 3)
       for ds, e in sorted(r["per_dataset"].items())}
print(json.dumps(dict(lr=lr, bs=bs, warm=warm, lam=lam, epochs=epochs, seed=seed,
                      minutes=round((time.perf_counter() - t0) / 60, 1),
                      final_loss=round(rep.per_epoch[-1]["gen_loss"], 4),
                      r1=r1s)), flush=True)
