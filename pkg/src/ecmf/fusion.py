"""The fusion network: per-stream residual encoders, learnable modal tokens,
a two-layer multi-head self-attention stack, mean-pool read-out, 6-class head.

Parameters live in a flat {name: float64 array} map so the optimizer,
gradient clipping, and checkpointing all treat the model uniformly. The
forward graph is built on the autodiff tape; evaluation-mode forwards are
deterministic pure functions of (parameters, input).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import autodiff as ad
from .dataset import (
    LABELS,
    MODALITIES,
    NUM_CLASSES,
    Dataset,
    EmotionLabel,
    Modality,
    Sample,
    StreamSchema,
)
from .errors import DimMismatch, InvalidConfig, IoFailure, SchemaMismatch, ShapeMismatch
from .preprocess import NormStats

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    schema: StreamSchema
    hidden_dim: int = 128
    dropout_rate: float = 0.6
    num_heads: int = 2
    num_attn_layers: int = 2
    enable_norm: bool = True
    enable_modal_token: bool = True
    enable_residual_mlp: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim <= 0 or self.num_heads <= 0 or self.num_attn_layers <= 0:
            raise InvalidConfig("hidden_dim, num_heads, num_attn_layers must be positive")
        if self.hidden_dim % self.num_heads != 0:
            raise InvalidConfig(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig(f"dropout_rate must be in [0,1), got {self.dropout_rate}")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_json(self) -> dict:
        return {
            "schema": self.schema.to_json(),
            "hidden_dim": self.hidden_dim,
            "dropout_rate": self.dropout_rate,
            "num_heads": self.num_heads,
            "num_attn_layers": self.num_attn_layers,
            "enable_norm": self.enable_norm,
            "enable_modal_token": self.enable_modal_token,
            "enable_residual_mlp": self.enable_residual_mlp,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "ModelConfig":
        return ModelConfig(
            schema=StreamSchema.from_json(obj["schema"]),
            hidden_dim=int(obj["hidden_dim"]),
            dropout_rate=float(obj["dropout_rate"]),
            num_heads=int(obj["num_heads"]),
            num_attn_layers=int(obj["num_attn_layers"]),
            enable_norm=bool(obj["enable_norm"]),
            enable_modal_token=bool(obj["enable_modal_token"]),
            enable_residual_mlp=bool(obj["enable_residual_mlp"]),
            seed=int(obj["seed"]),
        )


@dataclass
class FusionModel:
    config: ModelConfig
    params: dict[str, np.ndarray]

    def param_names(self) -> list[str]:
        return sorted(self.params)

    def active_param_names(self) -> list[str]:
        """Parameters the forward graph actually touches under the config's flags."""
        names = []
        for name in sorted(self.params):
            if not self.config.enable_modal_token and name.startswith("modal_token."):
                continue
            if not self.config.enable_residual_mlp and (".w_mid" in name or ".b_mid" in name):
                continue
            names.append(name)
        return names

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: Mapping[str, np.ndarray]) -> None:
        if set(params) != set(self.params):
            raise ShapeMismatch("parameter name sets differ")
        for k, v in params.items():
            if v.shape != self.params[k].shape:
                raise ShapeMismatch(f"parameter {k!r}: shape {v.shape} vs {self.params[k].shape}")
            self.params[k] = np.array(v, dtype=np.float64, copy=True)

    def token_count(self) -> int:
        n = len(self.config.schema)
        if self.config.enable_modal_token:
            n += len(self.config.schema.modalities())
        return n


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def init_model(config: ModelConfig) -> FusionModel:
    """Allocate and initialize all parameters.

    Matrices: uniform Glorot [-a, a], a = sqrt(6/(fan_in+fan_out)). Biases:
    zero. Modal tokens: N(0, 0.02^2). Ablation flags do not change what is
    allocated or the draw order, only what the forward graph uses, so two
    configs sharing a seed share the init of every common component.
    """
    rng = np.random.default_rng(config.seed)
    h = config.hidden_dim
    params: dict[str, np.ndarray] = {}
    for spec in config.schema:
        params[f"enc.{spec.name}.w_in"] = _glorot(rng, spec.dim, h)
        params[f"enc.{spec.name}.b_in"] = np.zeros(h)
        params[f"enc.{spec.name}.w_mid"] = _glorot(rng, h, h)
        params[f"enc.{spec.name}.b_mid"] = np.zeros(h)
    for modality in config.schema.modalities():
        params[f"modal_token.{modality.value}"] = rng.normal(0.0, 0.02, size=h)
    for layer in range(config.num_attn_layers):
        for proj in ("q", "k", "v", "o"):
            params[f"attn.{layer}.w_{proj}"] = _glorot(rng, h, h)
            params[f"attn.{layer}.b_{proj}"] = np.zeros(h)
    params["cls.w"] = _glorot(rng, h, NUM_CLASSES)
    params["cls.b"] = np.zeros(NUM_CLASSES)
    return FusionModel(config, params)


# --- graph construction -------------------------------------------------------

def _dropout(t: ad.Tensor, rate: float, train_mode: bool, rng: np.random.Generator | None) -> ad.Tensor:
    if not train_mode or rate <= 0.0:
        return t
    if rng is None:
        raise InvalidConfig("train-mode forward with dropout needs an rng")
    mask = (rng.random(t.shape) >= rate) / (1.0 - rate)
    return ad.mul(t, mask)


def _wrap_params(model: FusionModel, trainable: bool) -> dict[str, ad.Tensor]:
    return {k: ad.Tensor(v, requires_grad=trainable) for k, v in model.params.items()}


def _encode_stream_tensor(
    p: Mapping[str, ad.Tensor],
    config: ModelConfig,
    name: str,
    x: ad.Tensor,
    train_mode: bool,
    rng: np.random.Generator | None,
) -> ad.Tensor:
    """x: (batch, dim) -> (batch, hidden). Residual branch vanishes when disabled."""
    h = ad.add(ad.matmul(x, p[f"enc.{name}.w_in"]), p[f"enc.{name}.b_in"])
    if not config.enable_residual_mlp:
        return h
    z = ad.gelu(ad.add(ad.matmul(h, p[f"enc.{name}.w_mid"]), p[f"enc.{name}.b_mid"]))
    z = _dropout(z, config.dropout_rate, train_mode, rng)
    return ad.add(h, z)


def _assemble_tokens_tensor(
    p: Mapping[str, ad.Tensor],
    config: ModelConfig,
    features: Mapping[str, np.ndarray],
    train_mode: bool,
    rng: np.random.Generator | None,
) -> ad.Tensor:
    """Build the (batch, tokens, hidden) sequence: per modality in fixed order,
    the modality's modal token (when enabled) followed by its encoded streams."""
    batch = next(iter(features.values())).shape[0]
    h = config.hidden_dim
    parts: list[ad.Tensor] = []
    for modality in config.schema.modalities():
        if config.enable_modal_token:
            tok = ad.reshape(p[f"modal_token.{modality.value}"], (1, 1, h))
            parts.append(ad.broadcast_to(tok, (batch, 1, h)))
        for spec in config.schema.for_modality(modality):
            x = ad.Tensor(features[spec.name])
            enc = _encode_stream_tensor(p, config, spec.name, x, train_mode, rng)
            parts.append(ad.reshape(enc, (batch, 1, h)))
    return ad.concat(parts, axis=1)


def _attention_layer_tensor(
    p: Mapping[str, ad.Tensor],
    config: ModelConfig,
    layer: int,
    tokens: ad.Tensor,
    train_mode: bool,
    rng: np.random.Generator | None,
) -> ad.Tensor:
    """One block: multi-head scaled dot-product attention, dropout, residual, LayerNorm."""
    batch, length, h = tokens.shape
    nh, dh = config.num_heads, config.head_dim

    def proj(which: str) -> ad.Tensor:
        y = ad.add(ad.matmul(tokens, p[f"attn.{layer}.w_{which}"]), p[f"attn.{layer}.b_{which}"])
        y = ad.reshape(y, (batch, length, nh, dh))
        return ad.swapaxes(y, 1, 2)  # (batch, heads, tokens, head_dim)

    q, k, v = proj("q"), proj("k"), proj("v")
    scores = ad.mul(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dh))
    attn = ad.softmax(scores, axis=-1)
    heads = ad.matmul(attn, v)                                  # (batch, heads, tokens, head_dim)
    merged = ad.reshape(ad.swapaxes(heads, 1, 2), (batch, length, h))
    out = ad.add(ad.matmul(merged, p[f"attn.{layer}.w_o"]), p[f"attn.{layer}.b_o"])
    out = _dropout(out, config.dropout_rate, train_mode, rng)
    return ad.layer_norm(ad.add(tokens, out))


def build_logits(
    p: Mapping[str, ad.Tensor],
    config: ModelConfig,
    features: Mapping[str, np.ndarray],
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> ad.Tensor:
    """Full forward graph over a feature batch {stream: (batch, dim)} -> (batch, 6)."""
    tokens = _assemble_tokens_tensor(p, config, features, train_mode, rng)
    for layer in range(config.num_attn_layers):
        tokens = _attention_layer_tensor(p, config, layer, tokens, train_mode, rng)
    pooled = ad.mean(tokens, axis=1)
    return ad.add(ad.matmul(pooled, p["cls.w"]), p["cls.b"])


# --- numpy-facing operations ---------------------------------------------------

def to_feature_arrays(samples: Iterable[Sample], schema: StreamSchema) -> dict[str, np.ndarray]:
    """Stack samples into {stream: (n, dim)} matrices in the given order."""
    samples = list(samples)
    out = {}
    for spec in schema:
        try:
            out[spec.name] = np.stack([s.streams[spec.name].values for s in samples])
        except KeyError as e:
            raise SchemaMismatch(f"a sample lacks stream {e.args[0]!r}") from None
    return out


def _single(sample: Sample, schema: StreamSchema) -> dict[str, np.ndarray]:
    return to_feature_arrays([sample], schema)


def encode_stream(
    model: FusionModel,
    stream,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Encode one FeatureStream into the hidden space: affine projection plus
    (when enabled) a dropout-regularized GELU residual branch."""
    spec = next((e for e in model.config.schema if e.name == stream.stream_name), None)
    if spec is None:
        raise SchemaMismatch(f"stream {stream.stream_name!r} is not in the model schema")
    if stream.dim != spec.dim:
        raise DimMismatch("<stream>", stream.stream_name, spec.dim, stream.dim)
    p = _wrap_params(model, trainable=False)
    x = ad.Tensor(stream.values.reshape(1, -1))
    out = _encode_stream_tensor(p, model.config, stream.stream_name, x, train_mode, rng)
    return out.data[0]


def assemble_tokens(
    model: FusionModel,
    sample: Sample,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Token sequence for one sample, (tokens, hidden)."""
    p = _wrap_params(model, trainable=False)
    t = _assemble_tokens_tensor(p, model.config, _single(sample, model.config.schema), train_mode, rng)
    return t.data[0]


def self_attention_layer(
    model: FusionModel,
    tokens: np.ndarray,
    layer: int,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Apply one attention block to a (tokens, hidden) array."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[1] != model.config.hidden_dim:
        raise ShapeMismatch(f"expected (tokens, {model.config.hidden_dim}), got {tokens.shape}")
    p = _wrap_params(model, trainable=False)
    t = _attention_layer_tensor(p, model.config, layer, ad.Tensor(tokens[None]), train_mode, rng)
    return t.data[0]


def attention_probs(model: FusionModel, tokens: np.ndarray, layer: int) -> np.ndarray:
    """Eval-mode attention matrices for one block, (heads, tokens, tokens)."""
    tokens = np.asarray(tokens, dtype=np.float64)
    h, nh, dh = model.config.hidden_dim, model.config.num_heads, model.config.head_dim
    length = tokens.shape[0]

    def proj(which: str) -> np.ndarray:
        y = tokens @ model.params[f"attn.{layer}.w_{which}"] + model.params[f"attn.{layer}.b_{which}"]
        return y.reshape(length, nh, dh).swapaxes(0, 1)

    q, k = proj("q"), proj("k")
    scores = q @ k.swapaxes(-1, -2) / math.sqrt(dh)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


def apply_attention_stack(model: FusionModel, tokens: np.ndarray) -> np.ndarray:
    """Eval-mode pass of all attention blocks over a (tokens, hidden) array."""
    out = np.asarray(tokens, dtype=np.float64)
    for layer in range(model.config.num_attn_layers):
        out = self_attention_layer(model, out, layer)
    return out


def forward(
    model: FusionModel,
    sample: Sample,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Logits (6,) for one sample. In eval mode this is deterministic.

    When config.enable_norm is set the caller must already have standardized
    the sample's features.
    """
    p = _wrap_params(model, trainable=False)
    logits = build_logits(p, model.config, _single(sample, model.config.schema), train_mode, rng)
    return logits.data[0]


def forward_batch(model: FusionModel, features: Mapping[str, np.ndarray]) -> np.ndarray:
    """Eval-mode logits (n, 6) for a stacked feature batch."""
    p = _wrap_params(model, trainable=False)
    return build_logits(p, model.config, features, train_mode=False).data


def np_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def predict(model: FusionModel, sample: Sample) -> tuple[EmotionLabel, np.ndarray]:
    """Argmax label and softmax probabilities; ties go to the lower class index."""
    probs = np_softmax(forward(model, sample))
    return LABELS[int(np.argmax(probs))], probs


# --- checkpointing --------------------------------------------------------------

def save_checkpoint(
    path: str | Path,
    model: FusionModel,
    norm_stats: NormStats | None = None,
) -> None:
    """Write a flat, versioned .npz: parameter arrays plus a JSON meta entry."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_json(),
        "param_names": model.param_names(),
        "norm_stats": norm_stats.to_json() if norm_stats is not None else None,
    }
    arrays = {f"param/{name}": model.params[name] for name in model.param_names()}
    try:
        with Path(path).open("wb") as fh:
            np.savez(fh, _meta=np.array(json.dumps(meta)), **arrays)
    except OSError as e:
        raise IoFailure(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path: str | Path) -> tuple[FusionModel, NormStats | None]:
    try:
        with np.load(Path(path), allow_pickle=False) as data:
            meta = json.loads(str(data["_meta"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise IoFailure(f"unsupported checkpoint version {meta.get('version')!r}")
            config = ModelConfig.from_json(meta["config"])
            params = {name: np.array(data[f"param/{name}"]) for name in meta["param_names"]}
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise IoFailure(f"cannot read checkpoint {path}: {e}") from e
    model = FusionModel(config, params)
    stats = NormStats.from_json(meta["norm_stats"]) if meta["norm_stats"] is not None else None
    return model, stats
