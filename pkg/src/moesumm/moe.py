"""The mixture FFN: a shared main expert fused with one top-1-routed deputy.

Routing is dataset-aware: each dataset owns a selector matrix turning the
token representation into gate logits over the deputies; softmax of those
logits gives the gate distribution, the argmax deputy is taken, and its
gate value scales the deputy branch inside the activation:

    H_m = act(a W1_m + b1_m)
    H_p = act(g_p (a W1_p + b1_p))        (gate inside the activation)
    x   = H_m W2_m + H_p W2_p + b2_m      (deputies carry no second bias)

Gradient flows through the selected gate value only; the argmax index is
treated as piecewise-constant. A "classic" mode routes through one shared
gate matrix with no dataset information, as a flat-MoE baseline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .tensor import (ACTIVATIONS, Tensor, add, embedding, matmul, mul, reshape,
                     scatter_rows, softmax, sum_)

MODES = ("full", "main_only", "classic")


class RoutingError(ValueError):
    pass


@dataclass
class DeputyParams:
    w1: Tensor  # [d_model, d_hidden_deputy]
    b1: Tensor  # [d_hidden_deputy]
    w2: Tensor  # [d_hidden_deputy, d_model]  (no second bias)


@dataclass
class MoeFfnParams:
    main_w1: Tensor
    main_b1: Tensor
    main_w2: Tensor
    main_b2: Tensor
    deputies: list = field(default_factory=list)       # [DeputyParams]
    selectors: list = field(default_factory=list)      # per dataset [d_model, width]
    classic_gate: Tensor | None = None                 # [d_model, n_deputies]

    def named_tensors(self, prefix):
        out = [(f"{prefix}.main.w1", self.main_w1), (f"{prefix}.main.b1", self.main_b1),
               (f"{prefix}.main.w2", self.main_w2), (f"{prefix}.main.b2", self.main_b2)]
        for i, dep in enumerate(self.deputies):
            out += [(f"{prefix}.deputy.{i}.w1", dep.w1), (f"{prefix}.deputy.{i}.b1", dep.b1),
                    (f"{prefix}.deputy.{i}.w2", dep.w2)]
        for e, sel in enumerate(self.selectors):
            out.append((f"{prefix}.selector.{e}", sel))
        if self.classic_gate is not None:
            out.append((f"{prefix}.classic_gate", self.classic_gate))
        return out


def init_moe_params(cfg, weight_fn, with_deputies=True):
    """weight_fn(shape) -> ndarray supplies every weight draw."""
    d, dm, dp = cfg.d_model, cfg.d_hidden_main, cfg.d_hidden_deputy

    def w(*shape):
        return Tensor(weight_fn(shape), requires_grad=True)

    def b(n):
        return Tensor(np.zeros(n), requires_grad=True)

    p = MoeFfnParams(main_w1=w(d, dm), main_b1=b(dm), main_w2=w(dm, d), main_b2=b(d))
    if with_deputies and cfg.n_deputies >= 1:
        p.deputies = [DeputyParams(w(d, dp), b(dp), w(dp, d)) for _ in range(cfg.n_deputies)]
        p.selectors = [w(d, cfg.selector_width(e)) for e in range(cfg.n_datasets)]
        p.classic_gate = w(d, cfg.n_deputies)
    return p


@dataclass
class TokenRouting:
    position: int
    dataset_id: int
    deputy_index: int
    gate_value: float
    gate_distribution: np.ndarray


@dataclass
class RoutingTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def deputy_counts(self, n_deputies):
        counts = np.zeros(n_deputies, dtype=np.int64)
        for r in self.records:
            counts[r.deputy_index] += 1
        return counts


def write_routing_csv(path, layered_traces):
    """layered_traces: iterable of (layer_label, RoutingTrace)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["layer", "position", "dataset_id", "deputy_index", "gate_value"])
        for layer, trace in layered_traces:
            for r in trace.records:
                wr.writerow([layer, r.position, r.dataset_id, r.deputy_index,
                             f"{r.gate_value:.12g}"])


def _softmax_rows(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def route_dataset_aware(a_s, dataset_id, params):
    """Gate one token: logits a.W_e, softmax, argmax (ties to lowest index)."""
    if not 0 <= dataset_id < len(params.selectors):
        raise RoutingError(f"dataset_id {dataset_id} out of range "
                           f"[0, {len(params.selectors)})")
    a = np.asarray(a_s, dtype=np.float64)
    dist = _softmax_rows(a @ params.selectors[dataset_id].data)
    p = int(np.argmax(dist))
    return p, float(dist[p]), dist


def route_classic(a_s, params):
    """Dataset-blind gating through the single shared matrix."""
    if params.classic_gate is None:
        raise RoutingError("model has no classic gate (n_deputies == 0)")
    a = np.asarray(a_s, dtype=np.float64)
    dist = _softmax_rows(a @ params.classic_gate.data)
    p = int(np.argmax(dist))
    return p, float(dist[p]), dist


class BatchRouting:
    """Raw per-token routing of one moe_apply call on a [..., d] input."""

    __slots__ = ("deputy_index", "gate_value", "distribution")

    def __init__(self, deputy_index, gate_value, distribution):
        self.deputy_index = deputy_index      # int array [...]
        self.gate_value = gate_value          # float array [...]
        self.distribution = distribution      # float array [..., width]


def moe_apply(A, dataset_id, params, mode, *, activation="gelu",
              gate_site="pre_activation", forced_deputy=None, gate_override=None):
    """Apply the mixture FFN to a Tensor [..., d_model].

    Returns (X, BatchRouting | None). main_only bypasses routing entirely.
    forced_deputy pins the routed index (gate value still read from the
    distribution); gate_override replaces the gate value by a constant,
    which is how the zero-gate equivalence is exercised.
    """
    if mode not in MODES:
        raise RoutingError(f"unknown moe mode: {mode}")
    act = ACTIVATIONS[activation]

    h_main = act(add(matmul(A, params.main_w1), params.main_b1))
    main_out = matmul(h_main, params.main_w2)
    if mode == "main_only":
        return add(main_out, params.main_b2), None

    if not params.deputies:
        raise RoutingError("full/classic mode requires n_deputies >= 1")
    if mode == "classic":
        sel = params.classic_gate
    else:
        if not 0 <= dataset_id < len(params.selectors):
            raise RoutingError(f"dataset_id {dataset_id} out of range "
                               f"[0, {len(params.selectors)})")
        sel = params.selectors[dataset_id]
    width = sel.data.shape[-1]

    lead = A.data.shape[:-1]
    d = A.data.shape[-1]
    n = int(np.prod(lead)) if lead else 1
    flat = reshape(A, (n, d)) if A.data.ndim != 2 else A

    dist = softmax(matmul(flat, sel))  # [n, width]
    if forced_deputy is None:
        p_flat = np.argmax(dist.data, axis=-1)  # ties break toward the lowest index
    else:
        if not 0 <= forced_deputy < width:
            raise RoutingError(f"forced deputy {forced_deputy} out of range [0, {width})")
        p_flat = np.full(n, forced_deputy, dtype=np.int64)
    onehot = np.zeros(dist.data.shape)
    onehot[np.arange(n), p_flat] = 1.0
    gate = sum_(mul(dist, Tensor(onehot)), axis=-1, keepdims=True)  # [n, 1]
    if gate_override is not None:
        gate = Tensor(np.full(gate.data.shape, float(gate_override)))

    # top-1 dispatch: each deputy processes only the rows routed to it
    acc = None
    for i, dep in enumerate(params.deputies[:width]):
        rows = np.nonzero(p_flat == i)[0]
        if rows.size == 0:
            continue
        a_i = embedding(flat, rows)
        g_i = embedding(gate, rows)
        z = add(matmul(a_i, dep.w1), dep.b1)
        if gate_site == "pre_activation":
            y = matmul(act(mul(g_i, z)), dep.w2)  # gate inside the activation
        else:
            y = mul(g_i, matmul(act(z), dep.w2))
        placed = scatter_rows(y, rows, n)
        acc = placed if acc is None else add(acc, placed)
    deputy_sum = acc if acc is not None else Tensor(np.zeros((n, d)))
    if A.data.ndim != 2:
        deputy_sum = reshape(deputy_sum, lead + (d,))
    X = add(add(main_out, deputy_sum), params.main_b2)

    p_idx = p_flat.reshape(lead) if lead else p_flat
    gate_vals = dist.data[np.arange(n), p_flat].reshape(lead)
    routing = BatchRouting(p_idx, gate_vals, dist.data.reshape(lead + (width,)))
    return X, routing


def moe_forward(A, dataset_id, params, mode, *, activation="gelu",
                gate_site="pre_activation", forced_deputy=None, gate_override=None):
    """Single-matrix surface: A is [n, d_model]; returns (X, RoutingTrace)."""
    A = A if isinstance(A, Tensor) else Tensor(A)
    if A.data.ndim != 2:
        raise RoutingError(f"moe_forward expects a [n, d_model] matrix, got {A.shape}")
    X, routing = moe_apply(A, dataset_id, params, mode, activation=activation,
                           gate_site=gate_site, forced_deputy=forced_deputy,
                           gate_override=gate_override)
    trace = RoutingTrace()
    if routing is not None:
        for s in range(A.data.shape[0]):
            trace.records.append(TokenRouting(
                position=s,
                dataset_id=dataset_id if mode != "classic" else -1,
                deputy_index=int(routing.deputy_index[s]),
                gate_value=float(routing.gate_value[s]),
                gate_distribution=routing.distribution[s].copy()))
    return X, trace
