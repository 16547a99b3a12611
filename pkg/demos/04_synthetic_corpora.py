"""The synthetic multi-domain summarization tasks.

Three rule-based domains make specialization measurable: summaries are
exactly derivable from sources, so a correct model can reach ROUGE ~1 and
every example can be re-checked against its rule.
"""

from moesumm.data import (SyntheticSpec, derive_summary, generate_synthetic,
                          gold_summary_length, make_synthetic_vocab, write_jsonl)

spec = SyntheticSpec(n_domains=4, n_per_domain=3, vocab_size=104,
                     src_len_range=(9, 14), seed=42)
corpora = generate_synthetic(spec)
vocab = make_synthetic_vocab(104)

RULE_BLURBS = {
    "lead": "summary = first 4 source tokens (news-style lead)",
    "tagged": "summary = style token + the 3 keywords flagged by 'mrk'",
    "tail_reverse": "summary = style token + last 6 tokens reversed",
    "tail": "summary = style token + last 3 tokens (held-out 4th domain)",
}

for (dataset_id, examples), rule in zip(corpora, spec.rules):
    print(f"=== domain {dataset_id}: {rule} ===")
    print(f"    {RULE_BLURBS[rule]}; gold length {gold_summary_length(rule)}")
    for ex in examples[:2]:
        print(f"  src: {ex.raw_source}")
        print(f"  sum: {ex.raw_summary}")
        # the oracle re-derives every summary from the source alone
        rederived = " ".join(derive_summary(rule, ex.raw_source.split()))
        assert rederived == ex.raw_summary
    print()

write_jsonl(corpora[0][1], "domain0_sample.jsonl")
print("wrote domain0_sample.jsonl; lines look like:")
print(open("domain0_sample.jsonl").readline().strip())
