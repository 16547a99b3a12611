"""moesumm: a desk-scale mixture-of-experts summarization transformer.

A shared main expert carries the general summarization skill; small
deputy experts, selected per token by a dataset-aware gate, carry the
domain-specific skills. A quintic max-margin loss drives the separation.
Everything runs on a from-scratch float64 autodiff engine.
"""

from .config import ModelConfig, RunConfig, desk_config, paper_scale_config
from .data import (Example, SyntheticSpec, Vocabulary, build_vocab,
                   derive_summary, generate_synthetic, load_jsonl,
                   make_synthetic_vocab)
from .decoding import DecodeOutput, beam_decode, greedy_decode, greedy_decode_batch
from .gradcheck import finite_diff_check
from .losses import (LossBreakdown, batch_total_loss, generation_loss, margin,
                     max_margin_loss, total_loss)
from .metrics import RougeScore, expertise_report, rouge, rouge_from_text
from .model import (TransformerParams, decode_step, encode, forward_log_probs,
                    init_params)
from .moe import (MoeFfnParams, RoutingTrace, moe_forward, route_classic,
                  route_dataset_aware)
from .optim import Adam, adam_step
from .tensor import Tape, Tensor, backward, no_grad
from .training import (FreezeMask, TrainReport, finetune_deputy, param_report,
                       train_mixed)
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Adam", "DecodeOutput", "Example", "FreezeMask", "LossBreakdown",
    "ModelConfig", "MoeFfnParams", "RougeScore", "RoutingTrace", "RunConfig",
    "SyntheticSpec", "Tape", "Tensor", "TrainReport", "TransformerParams",
    "Vocabulary", "adam_step", "backward", "batch_total_loss", "beam_decode",
    "build_vocab", "decode_step", "derive_summary", "desk_config", "encode",
    "expertise_report", "finetune_deputy", "finite_diff_check",
    "forward_log_probs", "generate_synthetic", "generation_loss",
    "greedy_decode", "greedy_decode_batch", "init_params", "load_checkpoint",
    "load_jsonl", "make_synthetic_vocab", "margin", "max_margin_loss",
    "moe_forward", "no_grad", "paper_scale_config", "param_report", "rouge",
    "rouge_from_text", "route_classic", "route_dataset_aware",
    "save_checkpoint", "total_loss", "train_mixed",
]
