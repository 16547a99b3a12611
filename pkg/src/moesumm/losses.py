"""Generation loss, the token margin, and the quintic max-margin objective.

The margin of a gold token is the probability gap the deputies buy:
m_t = P_full(y_t) - P_main(y_t), with both probabilities from teacher-forced
passes of the same inputs (deputies on vs. main expert only). The margin
loss sums (1 - P_full) * (1 - m^5) / 2 over tokens: it leans on tokens the
full model is still unsure about, and on those it rewards a large margin,
pushing the main expert away from over-confident solo predictions. The
fifth power keeps the pressure gentle near m = 0.

Total objective = token-mean cross-entropy + margin_weight * margin loss.
Gradients flow through both forward passes unless detach_main is set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import teacher_forced_log_probs, forward_log_probs
from .tensor import Tensor, add, exp, mul, no_grad, pow_int, scalar_mul, sum_


class LossError(ValueError):
    pass


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def generation_loss(log_probs):
    """Mean negative log-likelihood over target positions; scalar Tensor."""
    lp = _as_tensor(log_probs)
    if lp.size == 0:
        raise LossError("generation_loss: empty target")
    if np.any(lp.data > 1e-12):
        raise LossError("generation_loss: log-probabilities must be <= 0")
    return scalar_mul(sum_(lp), -1.0 / lp.size)


def margin(p_full_t, p_main_t):
    """Gold-token probability gap between the full and main-only models."""
    for v in (p_full_t, p_main_t):
        if not 0.0 <= v <= 1.0:
            raise LossError(f"margin: probability {v} outside [0, 1]")
    return p_full_t - p_main_t


def max_margin_loss(p_full, p_main):
    """Sum over tokens of (1 - P_full) * (1 - m^5) / 2; scalar Tensor."""
    pf, pm = _as_tensor(p_full), _as_tensor(p_main)
    if pf.data.shape != pm.data.shape:
        raise LossError(f"max_margin_loss: length mismatch {pf.shape} vs {pm.shape}")
    if np.any(pf.data < -1e-12) or np.any(pf.data > 1 + 1e-12) \
            or np.any(pm.data < -1e-12) or np.any(pm.data > 1 + 1e-12):
        raise LossError("max_margin_loss: probabilities must lie in [0, 1]")
    m = add(pf, scalar_mul(pm, -1.0))
    term = mul(add(scalar_mul(pf, -1.0), 1.0),
               scalar_mul(add(scalar_mul(pow_int(m, 5), -1.0), 1.0), 0.5))
    return sum_(term)


@dataclass
class LossBreakdown:
    gen_loss: float
    margin_loss: float
    total: float
    per_token_margins: np.ndarray
    node: Tensor  # graph root; call backward on this


def total_loss(params, example, margin_weight=None, detach_main=None):
    """Combined objective for one example; two teacher-forced passes."""
    cfg = params.config
    lam = cfg.margin_weight if margin_weight is None else float(margin_weight)
    if lam < 0:
        raise LossError("margin_weight must be non-negative")
    detach = cfg.detach_main if detach_main is None else detach_main

    lp_full = forward_log_probs(params, example, "full")
    gen = generation_loss(lp_full)
    if lam == 0.0:
        zeros = np.zeros(lp_full.size)
        return LossBreakdown(gen.item(), 0.0, gen.item(), zeros, gen)

    if detach:
        with no_grad():
            lp_main = forward_log_probs(params, example, "main_only").detach()
    else:
        lp_main = forward_log_probs(params, example, "main_only")
    pf, pm = exp(lp_full), exp(lp_main)
    lm = max_margin_loss(pf, pm)
    total = add(gen, scalar_mul(lm, lam))
    return LossBreakdown(gen.item(), lm.item(), total.item(),
                         pf.data - pm.data, total)


@dataclass
class BatchLoss:
    gen_loss: float
    margin_loss: float
    total: float
    mean_margin: float
    n_tokens: int
    node: Tensor


def batch_total_loss(params, src_ids, src_mask, tgt_ids, dataset_id,
                     margin_weight=None, detach_main=None, trace=None):
    """Batched objective on padded arrays (homogeneous dataset batch).

    Generation loss is the mean over non-pad target tokens of the batch;
    the margin loss is summed per example over tokens, then averaged over
    the batch. Pad positions contribute to neither.
    """
    cfg = params.config
    lam = cfg.margin_weight if margin_weight is None else float(margin_weight)
    if lam < 0:
        raise LossError("margin_weight must be non-negative")
    detach = cfg.detach_main if detach_main is None else detach_main

    lp_full, label_mask = teacher_forced_log_probs(
        params, src_ids, src_mask, tgt_ids, dataset_id, "full", trace=trace)
    n_tokens = int(label_mask.sum())
    if n_tokens == 0:
        raise LossError("batch has no target tokens")
    mask_t = Tensor(label_mask)
    gen = scalar_mul(sum_(mul(lp_full, mask_t)), -1.0 / n_tokens)

    if lam == 0.0:
        return BatchLoss(gen.item(), 0.0, gen.item(), 0.0, n_tokens, gen)

    if detach:
        with no_grad():
            lp_main, _ = teacher_forced_log_probs(
                params, src_ids, src_mask, tgt_ids, dataset_id, "main_only")
        lp_main = lp_main.detach()
    else:
        lp_main, _ = teacher_forced_log_probs(
            params, src_ids, src_mask, tgt_ids, dataset_id, "main_only")
    pf, pm = exp(lp_full), exp(lp_main)
    m = add(pf, scalar_mul(pm, -1.0))
    term = mul(add(scalar_mul(pf, -1.0), 1.0),
               scalar_mul(add(scalar_mul(pow_int(m, 5), -1.0), 1.0), 0.5))
    B = src_ids.shape[0]
    lm = scalar_mul(sum_(mul(term, mask_t)), 1.0 / B)  # token-sum, batch-mean
    total = add(gen, scalar_mul(lm, lam))
    mean_margin = float((m.data * label_mask).sum() / n_tokens)
    return BatchLoss(gen.item(), lm.item(), total.item(), mean_margin,
                     n_tokens, total)
