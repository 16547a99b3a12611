"""Training regimes: mixed multi-dataset training, deputy-only fine-tuning,
and parameter accounting.

Batches are homogeneous in dataset_id (the dataset-aware gate needs one
selector per batch); the batch pool interleaves datasets in shuffled order.
All randomness flows from the single run seed. Fine-tuning freezes
everything except the expert selectors and the deputy experts; frozen
tensors are bitwise untouched.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._threads import single_thread_blas
from .data import PAD_ID
from .losses import batch_total_loss
from .model import TraceCollector, empty_params, init_params
from .optim import Adam
from .tensor import Tape, backward, scalar_mul


class TrainingError(ValueError):
    pass


@dataclass
class FreezeMask:
    """Per-parameter trainable flags, keyed by tensor name."""

    trainable: dict

    @classmethod
    def all_trainable(cls, params):
        return cls({name: True for name, _ in params.named_tensors()})

    @classmethod
    def deputy_finetune(cls, params):
        """Trainable = expert selectors and deputy experts; everything else frozen."""
        flags = {}
        for name, _ in params.named_tensors():
            flags[name] = ".moe.deputy." in name or ".moe.selector." in name
        return cls(flags)

    def trainable_params(self, params):
        return [(n, t) for n, t in params.named_tensors() if self.trainable[n]]

    def frozen_params(self, params):
        return [(n, t) for n, t in params.named_tensors() if not self.trainable[n]]


@dataclass
class TrainReport:
    epochs: int
    regime: str
    per_epoch: list = field(default_factory=list)  # dicts of epoch-mean losses
    utilization: dict = field(default_factory=dict)  # dataset_id -> [fraction per deputy]
    wall_clock_sec: float = 0.0
    checkpoint_path: str | None = None
    loss_rows: list = field(default_factory=list)  # (step, gen, margin, total, mean_margin)
    frozen_params_unchanged: bool | None = None

    def to_dict(self):
        return dict(epochs=self.epochs, regime=self.regime, per_epoch=self.per_epoch,
                    utilization={str(k): list(v) for k, v in self.utilization.items()},
                    wall_clock_sec=self.wall_clock_sec,
                    checkpoint_path=self.checkpoint_path,
                    frozen_params_unchanged=self.frozen_params_unchanged)


def write_loss_csv(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,gen_loss,margin_loss,total,mean_margin\n")
        for step, gen, marg, total, mm in rows:
            fh.write(f"{step},{gen:.10g},{marg:.10g},{total:.10g},{mm:.10g}\n")


def pad_batch(examples, max_src_len, max_tgt_len):
    """Pack examples into padded [B, S] / [B, T] id arrays plus the source mask."""
    B = len(examples)
    S = min(max_src_len, max(len(ex.source_ids) for ex in examples))
    T = min(max_tgt_len, max(len(ex.target_ids) for ex in examples))
    src = np.full((B, S), PAD_ID, dtype=np.int64)
    tgt = np.full((B, T), PAD_ID, dtype=np.int64)
    src_mask = np.zeros((B, S))
    for i, ex in enumerate(examples):
        s, t = ex.source_ids[:S], ex.target_ids[:T]
        src[i, :len(s)] = s
        tgt[i, :len(t)] = t
        src_mask[i, :len(s)] = 1.0
    return src, src_mask, tgt


def _batch_pool(corpora, batch_size, rng):
    """Shuffled union of homogeneous batches for one epoch."""
    pool = []
    for dataset_id, examples in corpora:
        order = rng.permutation(len(examples))
        for lo in range(0, len(examples), batch_size):
            idx = order[lo:lo + batch_size]
            pool.append((dataset_id, [examples[i] for i in idx]))
    perm = rng.permutation(len(pool))
    return [pool[i] for i in perm]


def _validate_corpora(corpora, n_datasets):
    if not corpora or all(len(exs) == 0 for _, exs in corpora):
        raise TrainingError("empty corpus")
    for dataset_id, examples in corpora:
        if not 0 <= dataset_id < n_datasets:
            raise TrainingError(f"dataset_id {dataset_id} out of range [0, {n_datasets})")
        for ex in examples:
            if ex.dataset_id != dataset_id:
                raise TrainingError(f"example tagged {ex.dataset_id} in corpus {dataset_id}")


def _run_training(params, corpora, epochs, seed, mask, *, lr, batch_size,
                  grad_accum_steps, warmup_steps, betas, eps, margin_weight,
                  regime, log=None):
    with single_thread_blas():
        return _run_training_impl(
            params, corpora, epochs, seed, mask, lr=lr, batch_size=batch_size,
            grad_accum_steps=grad_accum_steps, warmup_steps=warmup_steps,
            betas=betas, eps=eps, margin_weight=margin_weight, regime=regime,
            log=log)


def _run_training_impl(params, corpora, epochs, seed, mask, *, lr, batch_size,
                       grad_accum_steps, warmup_steps, betas, eps,
                       margin_weight, regime, log=None):
    cfg = params.config
    _validate_corpora(corpora, cfg.n_datasets)
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xDA7A]))
    trainable = mask.trainable_params(params)
    opt = Adam(trainable, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    report = TrainReport(epochs=epochs, regime=regime)
    step = 0
    util_counts = {d: np.zeros(max(cfg.n_deputies, 1), dtype=np.int64) for d, _ in corpora}
    for epoch in range(epochs):
        for d in util_counts:
            util_counts[d][:] = 0
        sums = dict(gen=0.0, margin=0.0, total=0.0, n=0)
        batches = _batch_pool(corpora, batch_size, rng)
        accum = 0
        for dataset_id, batch in batches:
            src, src_mask, tgt = pad_batch(batch, cfg.max_src_len, cfg.max_tgt_len)
            trace = TraceCollector()
            with Tape() as tape:
                loss = batch_total_loss(params, src, src_mask, tgt, dataset_id,
                                        margin_weight=margin_weight, trace=trace)
                root = loss.node if grad_accum_steps == 1 else \
                    scalar_mul(loss.node, 1.0 / grad_accum_steps)
                backward(root, tape)
            accum += 1
            if accum == grad_accum_steps:
                step += 1
                lr_t = lr * min(1.0, step / warmup_steps) if warmup_steps > 0 else lr
                opt.step(lr=lr_t)
                opt.zero_grad()
                accum = 0
            if cfg.n_deputies >= 1:
                util_counts[dataset_id] += trace.deputy_counts(cfg.n_deputies, side="dec")
            report.loss_rows.append((len(report.loss_rows), loss.gen_loss,
                                     loss.margin_loss, loss.total, loss.mean_margin))
            sums["gen"] += loss.gen_loss
            sums["margin"] += loss.margin_loss
            sums["total"] += loss.total
            sums["n"] += 1
        if accum:  # trailing partial accumulation group
            step += 1
            lr_t = lr * min(1.0, step / warmup_steps) if warmup_steps > 0 else lr
            opt.step(lr=lr_t)
            opt.zero_grad()
        n = max(sums["n"], 1)
        epoch_row = dict(epoch=epoch, gen_loss=sums["gen"] / n,
                         margin_loss=sums["margin"] / n, total=sums["total"] / n)
        report.per_epoch.append(epoch_row)
        if log:
            log(f"epoch {epoch + 1}/{epochs} "
                f"gen {epoch_row['gen_loss']:.4f} total {epoch_row['total']:.4f}")

    for d, counts in util_counts.items():
        tot = counts.sum()
        report.utilization[d] = (counts / tot).tolist() if tot else \
            [0.0] * len(counts)
    report.wall_clock_sec = time.perf_counter() - t0
    return report


def train_mixed(config, corpora, epochs, seed, *, lr=3e-5, batch_size=8,
                grad_accum_steps=4, warmup_steps=500, betas=(0.9, 0.999),
                eps=1e-8, margin_weight=None, log=None):
    """Mixed multi-dataset training of all parameters from a fresh init."""
    config.validate()
    ss = np.random.SeedSequence(int(seed)).generate_state(2)
    params = init_params(config, int(ss[0]))
    mask = FreezeMask.all_trainable(params)
    report = _run_training(params, corpora, epochs, int(ss[1]), mask, lr=lr,
                           batch_size=batch_size, grad_accum_steps=grad_accum_steps,
                           warmup_steps=warmup_steps, betas=betas, eps=eps,
                           margin_weight=margin_weight, regime="train_mixed", log=log)
    return params, report


def extend_for_dataset(params, dataset_id, seed, add_fresh_deputy=False):
    """Clone params, allocating a fresh selector (and optionally deputy) slot.

    dataset_id == n_datasets allocates a new selector per MoE layer; larger
    ids are rejected (no gaps). With add_fresh_deputy the new dataset's
    selector also covers one brand-new deputy per layer, unreachable from
    the older (frozen-width) selectors.
    """
    cfg = params.config
    if dataset_id > cfg.n_datasets:
        raise TrainingError(f"dataset_id {dataset_id} would leave a gap "
                            f"(n_datasets is {cfg.n_datasets})")
    if dataset_id < cfg.n_datasets and not add_fresh_deputy:
        return params.clone(), dataset_id

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xF00D]))
    widths = [cfg.selector_width(e) for e in range(cfg.n_datasets)]
    n_dep = cfg.n_deputies + (1 if add_fresh_deputy else 0)
    if dataset_id == cfg.n_datasets:
        widths.append(n_dep)
        new_cfg = cfg.with_(n_datasets=cfg.n_datasets + 1, n_deputies=n_dep,
                            selector_widths=tuple(widths))
    else:
        widths[dataset_id] = n_dep
        new_cfg = cfg.with_(n_deputies=n_dep, selector_widths=tuple(widths))

    new = empty_params(new_cfg)
    old_named = dict(params.named_tensors())
    for name, tensor in new.named_tensors():
        if name in old_named:
            tensor.data = old_named[name].data.copy()
        else:
            # fresh selector column/matrix or fresh deputy weights
            if name.endswith((".b1",)):
                tensor.data = np.zeros(tensor.data.shape)
            else:
                tensor.data = rng.normal(0.0, 0.02, size=tensor.data.shape)
    return new, dataset_id


def finetune_deputy(params, new_corpus, epochs, seed, *, lr=3e-5, batch_size=8,
                    grad_accum_steps=4, warmup_steps=0, betas=(0.9, 0.999),
                    eps=1e-8, margin_in_finetune=True, add_fresh_deputy=False,
                    log=None):
    """Fine-tune selectors and deputies only; the input params are not mutated.

    new_corpus is one (dataset_id, examples) pair. dataset_id may reuse an
    existing selector slot or equal n_datasets to allocate a fresh one.
    Returns (tuned_params, report); report.frozen_params_unchanged verifies
    the freeze by hash comparison.
    """
    dataset_id, examples = new_corpus
    if not examples:
        raise TrainingError("finetune_deputy: empty corpus")
    tuned, dataset_id = extend_for_dataset(params, dataset_id, seed,
                                           add_fresh_deputy=add_fresh_deputy)
    for ex in examples:
        if ex.dataset_id != dataset_id:
            raise TrainingError(f"example tagged {ex.dataset_id}, expected {dataset_id}")
    mask = FreezeMask.deputy_finetune(tuned)
    before = {name: hash_tensor(t) for name, t in mask.frozen_params(tuned)}
    lam = None if margin_in_finetune else 0.0
    ss = np.random.SeedSequence(int(seed)).generate_state(2)
    report = _run_training(tuned, [(dataset_id, examples)], epochs, int(ss[1]), mask,
                           lr=lr, batch_size=batch_size,
                           grad_accum_steps=grad_accum_steps,
                           warmup_steps=warmup_steps, betas=betas, eps=eps,
                           margin_weight=lam, regime="finetune_deputy", log=log)
    after = {name: hash_tensor(t) for name, t in mask.frozen_params(tuned)}
    report.frozen_params_unchanged = before == after
    return tuned, report


def hash_tensor(t):
    import hashlib
    return hashlib.sha256(t.data.tobytes()).hexdigest()


# ---------------------------------------------------------------------------
# Parameter accounting
# ---------------------------------------------------------------------------

def param_report(config):
    """Closed-form parameter counts checked against an exhaustive tensor walk.

    Deputy experts cost L * N^p * P_f with P_f = d*d_h + d_h + d_h*d (no
    second bias); selectors cost L * N^p * d * T. L counts MoE-bearing
    blocks across both stacks. Growing the dataset count only grows the
    selector term.
    """
    cfg = config.validate()
    d, dh = cfg.d_model, cfg.d_hidden_deputy
    L = 2 * len(cfg.moe_layer_indices())  # encoder + decoder stacks
    p_f = d * dh + dh + dh * d
    deputy_total = L * cfg.n_deputies * p_f
    selector_total = L * sum(d * cfg.selector_width(e) for e in range(cfg.n_datasets))
    selector_growth_per_dataset = L * d * cfg.n_deputies

    walk = {"deputy": 0, "selector": 0, "backbone": 0, "total": 0}
    params = empty_params(cfg)
    for name, t in params.named_tensors():
        n = t.data.size
        walk["total"] += n
        if ".moe.deputy." in name:
            walk["deputy"] += n
        elif ".moe.selector." in name:
            walk["selector"] += n
        else:
            walk["backbone"] += n

    formula = dict(p_f_per_deputy=p_f, deputy_total=deputy_total,
                   selector_total=selector_total,
                   selector_growth_per_dataset=selector_growth_per_dataset,
                   backbone=walk["total"] - deputy_total - selector_total,
                   moe_bearing_blocks=L)
    return dict(formula=formula, walk=walk,
                match=(formula["deputy_total"] == walk["deputy"]
                       and formula["selector_total"] == walk["selector"]
                       and formula["backbone"] == walk["backbone"]))
