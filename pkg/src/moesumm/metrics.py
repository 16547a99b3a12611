"""ROUGE-1/2/L F1 and the expertise analytics report.

ROUGE recipe: lowercase, whitespace tokens, clipped n-gram counts for
R1/R2, token-level LCS for RL, F1 = 2PR/(P+R). No stemming, no sentence
splitting; the exact recipe is fixed so scores are stable.

The expertise report measures, per dataset: deputy utilization over decoded
tokens, generated-length statistics, the mean gold-token margin, and ROUGE
for the full model against main-only (zero-shot) and pinned-deputy modes.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ._threads import single_thread_blas
from .data import tokenize
from .decoding import greedy_decode_batch
from .losses import batch_total_loss
from .model import TraceCollector, teacher_forced_log_probs
from .tensor import no_grad
from .training import pad_batch


@dataclass
class RougeComponent:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0

    def as_tuple(self):
        return (self.precision, self.recall, self.f1)

    def to_dict(self):
        return dict(precision=self.precision, recall=self.recall, f1=self.f1)


@dataclass
class RougeScore:
    r1: RougeComponent = field(default_factory=RougeComponent)
    r2: RougeComponent = field(default_factory=RougeComponent)
    rl: RougeComponent = field(default_factory=RougeComponent)
    empty_reference: bool = False

    def to_dict(self):
        return dict(r1=self.r1.to_dict(), r2=self.r2.to_dict(), rl=self.rl.to_dict(),
                    empty_reference=self.empty_reference)


def _f1(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _ngram_component(cand, ref, n):
    if len(cand) < n or len(ref) < n:
        return RougeComponent()
    cg, rg = _ngrams(cand, n), _ngrams(ref, n)
    overlap = sum(min(c, rg[g]) for g, c in cg.items())  # clipped counts
    p = overlap / max(len(cand) - n + 1, 1)
    r = overlap / max(len(ref) - n + 1, 1)
    return RougeComponent(p, r, _f1(p, r))


def _lcs_len(a, b):
    dp = [0] * (len(b) + 1)
    for x in a:
        prev = 0
        for j, y in enumerate(b, start=1):
            cur = dp[j]
            dp[j] = prev + 1 if x == y else max(dp[j], dp[j - 1])
            prev = cur
    return dp[-1]


def rouge(candidate, reference):
    """ROUGE-1/2/L F1 over token sequences (lists of tokens or ids)."""
    cand, ref = list(candidate), list(reference)
    if not ref:
        return RougeScore(empty_reference=True)
    score = RougeScore()
    score.r1 = _ngram_component(cand, ref, 1)
    score.r2 = _ngram_component(cand, ref, 2)
    if cand:
        lcs = _lcs_len(cand, ref)
        p, r = lcs / len(cand), lcs / len(ref)
        score.rl = RougeComponent(p, r, _f1(p, r))
    return score


def rouge_from_text(candidate_text, reference_text):
    return rouge(tokenize(candidate_text), tokenize(reference_text))


def mean_rouge(scores):
    """Average each component across RougeScore objects."""
    out = RougeScore()
    if not scores:
        return out
    for attr in ("r1", "r2", "rl"):
        comps = [getattr(s, attr) for s in scores]
        setattr(out, attr, RougeComponent(
            float(np.mean([c.precision for c in comps])),
            float(np.mean([c.recall for c in comps])),
            float(np.mean([c.f1 for c in comps]))))
    return out


# ---------------------------------------------------------------------------
# Expertise analytics
# ---------------------------------------------------------------------------

def _utilization_from_traces(outputs, n_deputies, side="dec"):
    counts = np.zeros(n_deputies, dtype=np.int64)
    for out in outputs:
        for step in out.step_traces:
            for layer, deputy, _gate in step:
                if layer.startswith(side):
                    counts[deputy] += 1
    total = counts.sum()
    return (counts / total).tolist() if total else [0.0] * n_deputies


def _rouge_over(outputs, examples):
    return mean_rouge([rouge(o.token_ids, ex.target_ids[1:-1])
                       for o, ex in zip(outputs, examples)])


def _mean_margin(params, examples, dataset_id):
    cfg = params.config
    src, src_mask, tgt = pad_batch(examples, cfg.max_src_len, cfg.max_tgt_len)
    with no_grad():
        lp_full, mask = teacher_forced_log_probs(params, src, src_mask, tgt,
                                                 dataset_id, "full")
        lp_main, _ = teacher_forced_log_probs(params, src, src_mask, tgt,
                                              dataset_id, "main_only")
    m = (np.exp(lp_full.data) - np.exp(lp_main.data)) * mask
    return float(m.sum() / mask.sum())


def expertise_report(params, eval_sets, vocab=None, utilization_side="decoder",
                     include_pinned=True, max_margin_examples=None):
    """Per-dataset utilization, length, margin, and mode-comparison ROUGE.

    eval_sets: list of (dataset_id, examples). Utilization is computed over
    decoded tokens (decoder side by default; 'encoder' counts encoder
    routing instead). Margins are teacher-forced on gold tokens.
    """
    with single_thread_blas():
        return _expertise_report_impl(params, eval_sets, vocab,
                                      utilization_side, include_pinned,
                                      max_margin_examples)


def _expertise_report_impl(params, eval_sets, vocab, utilization_side,
                           include_pinned, max_margin_examples):
    cfg = params.config
    side = "dec" if utilization_side == "decoder" else "enc"
    report = {"per_dataset": {}, "n_deputies": cfg.n_deputies,
              "utilization_side": utilization_side}
    for dataset_id, examples in eval_sets:
        sources = [ex.source_ids for ex in examples]
        golds = [ex.target_ids[1:-1] for ex in examples]
        full_out = greedy_decode_batch(params, sources, dataset_id, "full", vocab)
        main_out = greedy_decode_batch(params, sources, dataset_id, "main_only", vocab)

        gold_lens = [len(g) for g in golds]
        entry = {
            "n_examples": len(examples),
            "utilization": _utilization_from_traces(full_out, cfg.n_deputies, side),
            "gold_length_mean": float(np.mean(gold_lens)),
            "gen_length_mean_full": float(np.mean([o.length for o in full_out])),
            "gen_length_median_full": float(np.median([o.length for o in full_out])),
            "gen_length_mean_main_only": float(np.mean([o.length for o in main_out])),
            "gen_length_median_main_only": float(np.median([o.length for o in main_out])),
            "rouge_full": _rouge_over(full_out, examples).to_dict(),
            "rouge_main_only": _rouge_over(main_out, examples).to_dict(),
        }
        margin_pool = examples if max_margin_examples is None \
            else examples[:max_margin_examples]
        entry["mean_margin"] = _mean_margin(params, margin_pool, dataset_id)
        if include_pinned and cfg.n_deputies >= 1:
            pinned = {}
            for k in range(cfg.selector_width(dataset_id) if dataset_id < cfg.n_datasets
                           else cfg.n_deputies):
                out_k = greedy_decode_batch(params, sources, dataset_id, "full",
                                            vocab, forced_deputy=k)
                pinned[str(k)] = _rouge_over(out_k, examples).to_dict()
            entry["rouge_pinned"] = pinned
        report["per_dataset"][str(dataset_id)] = entry
    return report


def write_report_csvs(report, out_dir):
    """Plot-ready CSVs: utilization matrix, length stats, margin, ROUGE table."""
    import os
    per = report["per_dataset"]
    nd = report["n_deputies"]

    with open(os.path.join(out_dir, "utilization.csv"), "w", newline="",
              encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["dataset_id"] + [f"deputy_{k}" for k in range(nd)])
        for ds, entry in sorted(per.items(), key=lambda kv: int(kv[0])):
            row = entry["utilization"] + [0.0] * (nd - len(entry["utilization"]))
            wr.writerow([ds] + [f"{u:.6f}" for u in row])

    with open(os.path.join(out_dir, "length_stats.csv"), "w", newline="",
              encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["dataset_id", "gold_mean", "full_mean", "full_median",
                     "main_only_mean", "main_only_median"])
        for ds, entry in sorted(per.items(), key=lambda kv: int(kv[0])):
            wr.writerow([ds, entry["gold_length_mean"], entry["gen_length_mean_full"],
                         entry["gen_length_median_full"],
                         entry["gen_length_mean_main_only"],
                         entry["gen_length_median_main_only"]])

    with open(os.path.join(out_dir, "margin_stats.csv"), "w", newline="",
              encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["dataset_id", "mean_margin"])
        for ds, entry in sorted(per.items(), key=lambda kv: int(kv[0])):
            wr.writerow([ds, f"{entry['mean_margin']:.8f}"])

    with open(os.path.join(out_dir, "rouge.csv"), "w", newline="",
              encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["dataset_id", "mode", "r1_f1", "r2_f1", "rl_f1"])
        for ds, entry in sorted(per.items(), key=lambda kv: int(kv[0])):
            for mode_key, label in (("rouge_full", "full"),
                                    ("rouge_main_only", "main_only")):
                sc = entry[mode_key]
                wr.writerow([ds, label, sc["r1"]["f1"], sc["r2"]["f1"], sc["rl"]["f1"]])
            for k, sc in sorted(entry.get("rouge_pinned", {}).items()):
                wr.writerow([ds, f"pinned_{k}", sc["r1"]["f1"], sc["r2"]["f1"],
                             sc["rl"]["f1"]])


def write_report_json(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
