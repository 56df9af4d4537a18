"""
The shared core model: a small post-LN transformer encoder.

The core is trained once (pretrain_core), frozen (freeze_core) and then shared
by every domain. Adapters plug into forward():
    - a LoRA adapter adds (alpha/r) * B(A x) to its targeted projections,
    - a prefix adapter contributes p extra key/value positions per layer.
Outputs are produced only for real input positions.
"""
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np

from .errors import ContractError, LengthError, ParameterError, ShapeError, VocabError
from .tensor import (
    Tensor, add, broadcast_to, concat, gather_rows, gelu, layer_norm, matmul, normal, ones,
    reshape, scale, softmax, swapaxes, transpose, zeros,
)

INIT_STD = 0.02

# adapter target name -> parameter suffix inside a layer
PROJECTIONS = OrderedDict([
    ('q', 'attn.q'),
    ('k', 'attn.k'),
    ('v', 'attn.v'),
    ('o', 'attn.o'),
    ('ffn_in', 'ffn_in'),
    ('ffn_out', 'ffn_out'),
])


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    n_layers: int = 2
    d_model: int = 32
    n_heads: int = 2
    d_ff: int = 64
    max_seq_len: int = 512
    ln_eps: float = 1e-5

    def __post_init__(self):
        for field in ('vocab_size', 'n_layers', 'd_model', 'n_heads', 'd_ff', 'max_seq_len'):
            value = getattr(self, field)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ParameterError(f"EncoderConfig.{field} must be a positive integer, got {value!r}")
        if self.ln_eps <= 0:
            raise ParameterError(f"EncoderConfig.ln_eps must be > 0, got {self.ln_eps}")
        if self.d_model % self.n_heads != 0:
            raise ParameterError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def max_positions(self) -> int:
        """Position slots: one for [CLS] plus max_seq_len content tokens."""
        return self.max_seq_len + 1

    def projection_shape(self, target: str):
        """(d_in, d_out) of an adapter-targetable projection."""
        if target not in PROJECTIONS:
            raise ParameterError(f"unknown projection '{target}'; choose from {list(PROJECTIONS)}")
        if target == 'ffn_in':
            return self.d_model, self.d_ff
        if target == 'ffn_out':
            return self.d_ff, self.d_model
        return self.d_model, self.d_model

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> 'EncoderConfig':
        return cls(**data)


def projection_name(layer: int, target: str) -> str:
    return f"layers.{layer}.{PROJECTIONS[target]}"


class CoreModel:
    """Named weight tensors of the encoder plus its freeze flag."""

    def __init__(self, config: EncoderConfig, params: 'OrderedDict[str, Tensor]', frozen: bool = False):
        self.config = config
        self.params = params
        self.frozen = False
        if frozen:
            freeze_core(self)

    @classmethod
    def initialize(cls, config: EncoderConfig, rng: np.random.Generator) -> 'CoreModel':
        d = config.d_model
        params: 'OrderedDict[str, Tensor]' = OrderedDict()

        def add_param(name, tensor):
            tensor.name = name
            params[name] = tensor

        add_param('embeddings.tokens', normal((config.vocab_size, d), INIT_STD, rng))
        add_param('embeddings.positions', normal((config.max_positions, d), INIT_STD, rng))
        for layer in range(config.n_layers):
            for target in PROJECTIONS:
                add_param(projection_name(layer, target), normal(config.projection_shape(target), INIT_STD, rng))
            for ln in ('ln1', 'ln2'):
                add_param(f'layers.{layer}.{ln}.gain', ones((d,)))
                add_param(f'layers.{layer}.{ln}.bias', zeros((d,)))
        add_param('final_ln.gain', ones((d,)))
        add_param('final_ln.bias', zeros((d,)))
        return cls(config, params)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def trainable(self) -> List[Tensor]:
        return [t for t in self.params.values() if t.requires_grad]

    @property
    def num_params(self) -> int:
        return sum(t.size for t in self.params.values())

    @property
    def nbytes(self) -> int:
        return sum(t.nbytes for t in self.params.values())

    def copy(self, frozen: Optional[bool] = None) -> 'CoreModel':
        """Deep copy with independent tensors."""
        params = OrderedDict()
        for name, t in self.params.items():
            params[name] = Tensor(t.data, requires_grad=t.requires_grad, name=name)
        clone = CoreModel(self.config, params)
        target_frozen = self.frozen if frozen is None else frozen
        if target_frozen:
            freeze_core(clone)
        else:
            unfreeze_core(clone)
        return clone


def freeze_core(model: CoreModel):
    """Stop gradients on every core tensor (idempotent)."""
    for t in model.params.values():
        t.requires_grad = False
        t.grad = None
    model.frozen = True


def unfreeze_core(model: CoreModel):
    for t in model.params.values():
        t.requires_grad = True
    model.frozen = False


# ========== FORWARD ==========

def _project(model: CoreModel, x: Tensor, layer: int, target: str, lora) -> Tensor:
    out = matmul(x, model.params[projection_name(layer, target)])
    if lora is not None:
        pair = lora.pair(layer, target)
        if pair is not None:
            a, b = pair
            delta = matmul(matmul(x, transpose(a, (1, 0))), transpose(b, (1, 0)))
            out = add(out, scale(delta, lora.scaling))
    return out


def _split_heads(t: Tensor, batch: int, length: int, n_heads: int, head_dim: int) -> Tensor:
    return transpose(reshape(t, (batch, length, n_heads, head_dim)), (0, 2, 1, 3))


def _attention(model: CoreModel, x: Tensor, layer: int, key_mask: np.ndarray,
               lora, prefix, trace: Optional[Dict]) -> Tensor:
    cfg = model.config
    batch, length, d = x.shape
    n_heads, head_dim = cfg.n_heads, cfg.head_dim

    q = _split_heads(_project(model, x, layer, 'q', lora), batch, length, n_heads, head_dim)
    k = _split_heads(_project(model, x, layer, 'k', lora), batch, length, n_heads, head_dim)
    v = _split_heads(_project(model, x, layer, 'v', lora), batch, length, n_heads, head_dim)

    if prefix is not None and prefix.length > 0:
        p = prefix.length
        pk = transpose(reshape(prefix.keys[layer], (1, p, n_heads, head_dim)), (0, 2, 1, 3))
        pv = transpose(reshape(prefix.values[layer], (1, p, n_heads, head_dim)), (0, 2, 1, 3))
        k = concat([broadcast_to(pk, (batch, n_heads, p, head_dim)), k], axis=2)
        v = concat([broadcast_to(pv, (batch, n_heads, p, head_dim)), v], axis=2)

    scores = scale(matmul(q, swapaxes(k, -1, -2)), 1.0 / math.sqrt(head_dim))
    probs = softmax(scores, axis=-1, mask=key_mask)
    if trace is not None:
        trace.setdefault('attention', []).append(probs.data.copy())
    context = reshape(transpose(matmul(probs, v), (0, 2, 1, 3)), (batch, length, d))
    return _project(model, context, layer, 'o', lora)


def check_inputs(model: CoreModel, token_ids: np.ndarray):
    cfg = model.config
    length = token_ids.shape[-1]
    if length > cfg.max_positions:
        raise LengthError(
            f"input has {length} positions but the encoder accepts at most {cfg.max_positions} "
            f"([CLS] + max_seq_len={cfg.max_seq_len})"
        )
    if token_ids.size and (token_ids.min() < 0 or token_ids.max() >= cfg.vocab_size):
        bad = token_ids[(token_ids < 0) | (token_ids >= cfg.vocab_size)]
        raise VocabError(f"token id {int(bad[0])} outside vocabulary of size {cfg.vocab_size}")


def forward_batch(model: CoreModel, token_ids, pad_mask=None, adapter=None,
                  trace: Optional[Dict] = None) -> Tensor:
    """Hidden states [batch x seq x d_model] for a right-padded batch of id rows."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ShapeError(f"forward_batch expects [batch x seq] ids, got shape {ids.shape}")
    check_inputs(model, ids)
    batch, length = ids.shape
    mask = np.ones((batch, length), dtype=bool) if pad_mask is None else np.asarray(pad_mask, dtype=bool)
    if mask.shape != ids.shape:
        raise ShapeError(f"pad_mask shape {mask.shape} does not match ids shape {ids.shape}")

    lora = adapter.payload if adapter is not None and adapter.kind == 'lora' else None
    prefix = adapter.payload if adapter is not None and adapter.kind == 'prefix' else None

    key_mask = mask
    if prefix is not None and prefix.length > 0:
        key_mask = np.concatenate([np.ones((batch, prefix.length), dtype=bool), mask], axis=1)
    key_mask = key_mask[:, None, None, :]

    p = model.params
    x = add(gather_rows(p['embeddings.tokens'], ids), gather_rows(p['embeddings.positions'], np.arange(length)))
    eps = model.config.ln_eps
    for layer in range(model.config.n_layers):
        h = _attention(model, x, layer, key_mask, lora, prefix, trace)
        x = layer_norm(add(x, h), p[f'layers.{layer}.ln1.gain'], p[f'layers.{layer}.ln1.bias'], eps)
        f = _project(model, gelu(_project(model, x, layer, 'ffn_in', lora)), layer, 'ffn_out', lora)
        x = layer_norm(add(x, f), p[f'layers.{layer}.ln2.gain'], p[f'layers.{layer}.ln2.bias'], eps)
    return layer_norm(x, p['final_ln.gain'], p['final_ln.bias'], eps)


def forward(model: CoreModel, token_ids, adapter=None, pad_mask=None, trace: Optional[Dict] = None) -> Tensor:
    """Hidden states [seq x d_model] for one id sequence."""
    ids = np.asarray(token_ids, dtype=np.int64).reshape(1, -1)
    mask = None if pad_mask is None else np.asarray(pad_mask, dtype=bool).reshape(1, -1)
    hidden = forward_batch(model, ids, mask, adapter=adapter, trace=trace)
    return reshape(hidden, hidden.shape[1:])


# ========== CORE PRE-TRAINING ==========

def pretrain_core(model: CoreModel, corpus, cfg, tokenizer, schemes, heads=None):
    """
    Train the unfrozen core as a token classifier on the pooled training split.

    One head per label scheme present in the corpus is trained alongside the
    core; pass `heads` (scheme_id -> ClassifierHead) to keep them afterwards.
    Returns the TrainReport of the run.
    """
    from .training import fit_token_classifier

    if model.frozen:
        raise ContractError("pretrain_core needs an unfrozen core; it was frozen already")
    return fit_token_classifier(model, corpus, cfg, tokenizer, schemes, heads=heads, name='core')
