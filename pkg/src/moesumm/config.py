"""Model and run configuration, with the two named profiles.

ModelConfig carries every dimension and architectural switch; RunConfig
mirrors it in JSON form and adds the training-regime fields. Unknown JSON
keys are rejected by name so config typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace

GATING_MODES = ("dataset_aware", "classic", "main_only")
GATE_SITES = ("pre_activation", "post_activation")
ACTIVATION_NAMES = ("gelu", "relu")
POSITIONAL_KINDS = ("learned", "sinusoidal")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int = 512
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_hidden_main: int = 256
    d_hidden_deputy: int = 128
    n_deputies: int = 3
    n_datasets: int = 3
    max_src_len: int = 24
    max_tgt_len: int = 12
    gating_mode: str = "dataset_aware"
    margin_weight: float = 1.0
    seed: int = 0
    activation: str = "gelu"
    gate_site: str = "pre_activation"
    positional: str = "learned"
    detach_main: bool = False
    # layer indices (within each stack) that carry deputies; None = all
    moe_layers: tuple | None = None
    # per-dataset selector widths; None = n_deputies for every dataset.
    # Only differs after a fine-tune that added a fresh deputy.
    selector_widths: tuple | None = None

    def validate(self):
        positives = ("vocab_size", "d_model", "n_heads", "n_layers", "d_hidden_main",
                     "d_hidden_deputy", "n_datasets", "max_src_len", "max_tgt_len")
        for name in positives:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.gating_mode not in GATING_MODES:
            raise ConfigError(f"gating_mode must be one of {GATING_MODES}")
        if self.gating_mode != "main_only" and self.n_deputies < 1:
            raise ConfigError("n_deputies must be >= 1 unless gating_mode is main_only")
        if self.n_deputies < 0:
            raise ConfigError("n_deputies must be >= 0")
        if self.margin_weight < 0:
            raise ConfigError("margin_weight must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.activation not in ACTIVATION_NAMES:
            raise ConfigError(f"activation must be one of {ACTIVATION_NAMES}")
        if self.gate_site not in GATE_SITES:
            raise ConfigError(f"gate_site must be one of {GATE_SITES}")
        if self.positional not in POSITIONAL_KINDS:
            raise ConfigError(f"positional must be one of {POSITIONAL_KINDS}")
        if self.moe_layers is not None:
            bad = [i for i in self.moe_layers if not 0 <= i < self.n_layers]
            if bad:
                raise ConfigError(f"moe_layers indices out of range: {bad}")
        if self.selector_widths is not None:
            if len(self.selector_widths) != self.n_datasets:
                raise ConfigError("selector_widths must have one entry per dataset")
            bad = [w for w in self.selector_widths if not 1 <= w <= self.n_deputies]
            if bad:
                raise ConfigError(f"selector_widths out of range: {bad}")
        return self

    def moe_layer_indices(self):
        return tuple(range(self.n_layers)) if self.moe_layers is None else tuple(self.moe_layers)

    def selector_width(self, dataset_id):
        if self.selector_widths is None:
            return self.n_deputies
        return self.selector_widths[dataset_id]

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        for key in ("moe_layers", "selector_widths"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key: {unknown[0]}")
        d = dict(d)
        for key in ("moe_layers", "selector_widths"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d).validate()

    def with_(self, **kw):
        return replace(self, **kw).validate()


def desk_config(**overrides):
    """The scaled-down profile every test and demo runs on."""
    return ModelConfig(**overrides).validate()


def paper_scale_config(**overrides):
    """Dimensions matching the published setup; not meant to run on a desk."""
    base = dict(vocab_size=50625, d_model=1024, n_heads=16, n_layers=12,
                d_hidden_main=4096, d_hidden_deputy=512, n_deputies=3,
                n_datasets=3, max_src_len=1024, max_tgt_len=300)
    base.update(overrides)
    return ModelConfig(**base).validate()


# Regime fields live beside the model fields in one flat JSON document.
_MODEL_FIELD_NAMES = tuple(f.name for f in fields(ModelConfig))

_REGIME_DEFAULTS_DESK = dict(epochs=30, batch_size=32, grad_accum_steps=1,
                             lr=2e-3, warmup_steps=200, beam_size=4,
                             length_norm_alpha=1.0)
_REGIME_DEFAULTS_PAPER = dict(epochs=1, batch_size=8, grad_accum_steps=4,
                              lr=3e-5, warmup_steps=500, beam_size=4,
                              length_norm_alpha=1.0)

PROFILES = {
    "desk": (desk_config, _REGIME_DEFAULTS_DESK),
    "paper-scale": (paper_scale_config, _REGIME_DEFAULTS_PAPER),
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=desk_config)
    epochs: int = 30
    batch_size: int = 32
    grad_accum_steps: int = 1
    lr: float = 1e-3
    warmup_steps: int = 0
    beam_size: int = 4
    length_norm_alpha: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    # corpora: list of {"path": ..., "dataset_id": ...} JSONL sources
    corpora: list = field(default_factory=list)
    # synthetic: inline generator spec (see data.SyntheticSpec) as a dict
    synthetic: dict | None = None
    eval_corpora: list = field(default_factory=list)
    out_dir: str = "."
    finetune_dataset_id: int | None = None
    add_fresh_deputy: bool = False
    margin_in_finetune: bool = True
    utilization_side: str = "decoder"

    def validate(self):
        self.model.validate()
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        for name in ("batch_size", "grad_accum_steps", "beam_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr <= 0 or self.adam_eps <= 0:
            raise ConfigError("lr and adam_eps must be positive")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if self.utilization_side not in ("decoder", "encoder"):
            raise ConfigError("utilization_side must be 'decoder' or 'encoder'")
        if not self.corpora and self.synthetic is None:
            raise ConfigError("config must provide corpora or a synthetic block")
        return self

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        profile = doc.pop("profile", "desk")
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile: {profile}")
        model_factory, regime_defaults = PROFILES[profile]

        regime_names = {f.name for f in fields(cls)} - {"model"}
        model_kw, regime_kw = {}, dict(regime_defaults)
        for key, val in doc.items():
            if key in _MODEL_FIELD_NAMES:
                model_kw[key] = val
            elif key in regime_names:
                regime_kw[key] = val
            else:
                raise ConfigError(f"unknown config key: {key}")
        for key in ("moe_layers", "selector_widths"):
            if model_kw.get(key) is not None:
                model_kw[key] = tuple(model_kw[key])
        rc = cls(model=model_factory(**model_kw), **regime_kw)
        return rc.validate()

    @classmethod
    def from_json(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "model"}
        d.update(self.model.to_dict())
        return d
