"""Tokenization, JSONL corpus ingestion, and the synthetic multi-domain generator.

Tokenization is whitespace over lowercased text; ids 0..3 are reserved for
PAD/BOS/EOS/UNK. The synthetic generator produces rule-based domains whose
summaries are exactly re-derivable from the source, so decoding quality on
them is crisp rather than fuzzy.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

# special tokens used by the synthetic domain rules
MARK_TOKEN = "mrk"
STYLE_TOKENS = ("sty1", "sty2", "sty3")


class CorpusError(ValueError):
    pass


def tokenize(text):
    return text.lower().split()


class Vocabulary:
    """Bijective token <-> id map with fixed reserved ids 0..3."""

    def __init__(self, tokens):
        self.tokens = list(RESERVED_TOKENS) + [t for t in tokens if t not in RESERVED_TOKENS]
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise CorpusError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def encode(self, text):
        return [self.index.get(t, UNK_ID) for t in tokenize(text)]

    def encode_tokens(self, toks):
        return [self.index.get(t, UNK_ID) for t in toks]

    def decode(self, ids, keep_special=False):
        toks = []
        for i in ids:
            if not keep_special and i in (PAD_ID, BOS_ID, EOS_ID):
                continue
            toks.append(self.tokens[i])
        return " ".join(toks)

    def to_list(self):
        return list(self.tokens)


def build_vocab(texts, max_size=None):
    """Frequency-sorted vocabulary (ties alphabetical), reserved ids prepended."""
    if not texts:
        raise CorpusError("build_vocab: empty corpus")
    counts = {}
    for text in texts:
        for tok in tokenize(text):
            counts[tok] = counts.get(tok, 0) + 1
    ordered = sorted(counts, key=lambda t: (-counts[t], t))
    if max_size is not None:
        ordered = ordered[:max(0, max_size - len(RESERVED_TOKENS))]
    return Vocabulary(ordered)


@dataclass
class Example:
    """One tokenized source/summary pair tagged with its dataset."""

    source_ids: list
    target_ids: list  # [BOS, ..., EOS]
    dataset_id: int
    raw_source: str = ""
    raw_summary: str = ""

    @property
    def n_y(self):
        """Target length excluding BOS (the number of predicted positions)."""
        return len(self.target_ids) - 1


def make_example(source_text, summary_text, dataset_id, vocab):
    src = vocab.encode(source_text)
    tgt = [BOS_ID] + vocab.encode(summary_text) + [EOS_ID]
    return Example(src, tgt, dataset_id, source_text, summary_text)


@dataclass
class LoadReport:
    path: str
    loaded: int = 0
    truncated_sources: int = 0
    rejected_targets: int = 0

    def to_dict(self):
        return dict(path=self.path, loaded=self.loaded,
                    truncated_sources=self.truncated_sources,
                    rejected_targets=self.rejected_targets)


def load_jsonl(path, dataset_id, vocab, max_src_len, max_tgt_len):
    """Read {"source": ..., "summary": ...} lines into Examples.

    Sources longer than max_src_len are truncated (counted); targets that
    would not fit in max_tgt_len (with BOS/EOS) are rejected (counted).
    Malformed lines fail with the 1-based line number.
    """
    examples = []
    report = LoadReport(path=str(path))
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
            for key in ("source", "summary"):
                if key not in obj or not isinstance(obj[key], str):
                    raise CorpusError(f"{path}:{lineno}: missing field '{key}'")
            src_ids = vocab.encode(obj["source"])
            if len(src_ids) > max_src_len:
                src_ids = src_ids[:max_src_len]
                report.truncated_sources += 1
            tgt_body = vocab.encode(obj["summary"])
            if len(tgt_body) + 2 > max_tgt_len:
                report.rejected_targets += 1
                continue
            examples.append(Example(src_ids, [BOS_ID] + tgt_body + [EOS_ID],
                                    dataset_id, obj["source"], obj["summary"]))
            report.loaded += 1
    return examples, report


def write_jsonl(examples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"source": ex.raw_source, "summary": ex.raw_summary,
                                 "dataset": ex.dataset_id}) + "\n")


def corpus_hash(examples):
    """Stable content hash used in checkpoint provenance."""
    h = hashlib.sha256()
    for ex in examples:
        h.update(json.dumps([ex.source_ids, ex.target_ids, ex.dataset_id]).encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Synthetic multi-domain corpus
# ---------------------------------------------------------------------------

# Each rule maps a source to exactly one summary; derive_summary re-derives
# it from the source alone, independent of how the example was built.
RULE_IDS = ("lead", "tagged", "tail_reverse", "tail")

LEAD_LEN = 4        # lead: summary = first 4 source tokens
TAGGED_KEYWORDS = 3  # tagged: keywords marked in the source, style prefix
TAIL_REVERSE_LEN = 6
TAIL_LEN = 3


def derive_summary(rule_id, source_tokens):
    """Recompute the gold summary from the source under a domain rule."""
    if rule_id == "lead":
        return list(source_tokens[:LEAD_LEN])
    if rule_id == "tagged":
        kws = [source_tokens[i + 1] for i, t in enumerate(source_tokens) if t == MARK_TOKEN]
        return [STYLE_TOKENS[0]] + kws
    if rule_id == "tail_reverse":
        return [STYLE_TOKENS[1]] + list(source_tokens[-TAIL_REVERSE_LEN:])[::-1]
    if rule_id == "tail":
        return [STYLE_TOKENS[2]] + list(source_tokens[-TAIL_LEN:])
    raise CorpusError(f"unknown domain rule: {rule_id}")


def gold_summary_length(rule_id):
    return {"lead": LEAD_LEN, "tagged": 1 + TAGGED_KEYWORDS,
            "tail_reverse": 1 + TAIL_REVERSE_LEN, "tail": 1 + TAIL_LEN}[rule_id]


@dataclass
class SyntheticSpec:
    n_domains: int = 3
    vocab_size: int = 104
    src_len_range: tuple = (9, 14)  # inclusive; before marker insertion
    seed: int = 0
    n_per_domain: int = 2000
    rules: tuple = RULE_IDS

    def validate(self):
        if not 1 <= self.n_domains <= len(self.rules):
            raise CorpusError(f"n_domains must be in [1, {len(self.rules)}]")
        if self.vocab_size < len(RESERVED_TOKENS) + 1 + len(STYLE_TOKENS) + 8:
            raise CorpusError("vocab too small for markers and style tokens")
        lo, hi = self.src_len_range
        if lo < max(LEAD_LEN, TAIL_REVERSE_LEN) or hi < lo:
            raise CorpusError(f"src_len_range {self.src_len_range} too small for the rules")
        if self.n_per_domain < 1:
            raise CorpusError("n_per_domain must be >= 1")
        return self

    def to_dict(self):
        return dict(n_domains=self.n_domains, vocab_size=self.vocab_size,
                    src_len_range=list(self.src_len_range), seed=self.seed,
                    n_per_domain=self.n_per_domain, rules=list(self.rules))

    @classmethod
    def from_dict(cls, d):
        known = {"n_domains", "vocab_size", "src_len_range", "seed", "n_per_domain", "rules"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise CorpusError(f"unknown synthetic key: {unknown[0]}")
        d = dict(d)
        if "src_len_range" in d:
            d["src_len_range"] = tuple(d["src_len_range"])
        if "rules" in d:
            d["rules"] = tuple(d["rules"])
        return cls(**d).validate()


def make_synthetic_vocab(vocab_size):
    """Deterministic synthetic vocabulary: specials then w000, w001, ..."""
    n_content = vocab_size - len(RESERVED_TOKENS) - 1 - len(STYLE_TOKENS)
    content = [f"w{i:03d}" for i in range(n_content)]
    return Vocabulary([MARK_TOKEN, *STYLE_TOKENS, *content])


def _content_tokens(vocab):
    special = set(RESERVED_TOKENS) | {MARK_TOKEN} | set(STYLE_TOKENS)
    return [t for t in vocab.tokens if t not in special]


def generate_synthetic(spec):
    """Deterministic rule-based corpora: list of (dataset_id, examples).

    Sources are uniform draws over the content tokens; each domain applies
    its rule to produce the summary. Every generated example satisfies
    derive_summary exactly.
    """
    spec.validate()
    vocab = make_synthetic_vocab(spec.vocab_size)
    content = _content_tokens(vocab)
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.src_len_range

    corpora = []
    for domain in range(spec.n_domains):
        rule = spec.rules[domain]
        examples = []
        for _ in range(spec.n_per_domain):
            n = int(rng.integers(lo, hi + 1))
            src = [content[i] for i in rng.integers(0, len(content), size=n)]
            # summaries built inline from the generator's own choices;
            # derive_summary re-derives them from the source as the oracle
            if rule == "lead":
                summary = src[:LEAD_LEN]
            elif rule == "tagged":
                marked = sorted(int(i) for i in rng.choice(n, size=TAGGED_KEYWORDS, replace=False))
                keywords = [src[i] for i in marked]
                for pos in reversed(marked):
                    src.insert(pos, MARK_TOKEN)
                summary = [STYLE_TOKENS[0]] + keywords
            elif rule == "tail_reverse":
                summary = [STYLE_TOKENS[1]] + src[-TAIL_REVERSE_LEN:][::-1]
            elif rule == "tail":
                summary = [STYLE_TOKENS[2]] + src[-TAIL_LEN:]
            else:
                raise CorpusError(f"unknown domain rule: {rule}")
            examples.append(make_example(" ".join(src), " ".join(summary), domain, vocab))
        corpora.append((domain, examples))
    return corpora
