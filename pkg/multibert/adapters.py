"""
Per-domain parameter sets that plug into the frozen core.

Two kinds exist:
    lora   - low-rank deltas (alpha/r) * B A on targeted projections
    prefix - p learned key/value positions per encoder layer

An AdapterSet wraps either payload with an id and a provenance note.
"""
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .encoder import PROJECTIONS, CoreModel, EncoderConfig, projection_name
from .errors import IdError, ParameterError, ShapeError
from .tensor import Tensor, normal, zeros

INIT_STD = 0.02
DEFAULT_LORA_R = 3
DEFAULT_LORA_ALPHA = 1.0
DEFAULT_LORA_TARGETS = ('q', 'v')
DEFAULT_PREFIX_LENGTH = 18
KINDS = ('lora', 'prefix')


class LoraAdapter:
    """Low-rank factors A [r x d_in] and B [d_out x r] for each (layer, target)."""

    def __init__(self, r: int, alpha: float, targets: Iterable[str],
                 factors: 'OrderedDict[Tuple[int, str], Tuple[Tensor, Tensor]]'):
        if r < 1:
            raise ParameterError(f"LoRA rank r must be >= 1, got {r}")
        self.r = int(r)
        self.alpha = float(alpha)
        self.targets = tuple(t for t in PROJECTIONS if t in set(targets))
        self.factors = factors

    @property
    def scaling(self) -> float:
        return self.alpha / self.r

    def pair(self, layer: int, target: str) -> Optional[Tuple[Tensor, Tensor]]:
        return self.factors.get((layer, target))

    def tensors(self) -> 'OrderedDict[str, Tensor]':
        named = OrderedDict()
        for (layer, target), (a, b) in self.factors.items():
            named[f'layers.{layer}.{target}.lora_a'] = a
            named[f'layers.{layer}.{target}.lora_b'] = b
        return named

    def hyper(self) -> Dict:
        return {'r': self.r, 'alpha': self.alpha, 'targets': list(self.targets)}


class PrefixAdapter:
    """Prefix keys and values [p x d_model] for every encoder layer."""

    def __init__(self, keys: List[Tensor], values: List[Tensor]):
        if len(keys) != len(values):
            raise ShapeError(f"prefix needs keys and values per layer, got {len(keys)} and {len(values)}")
        self.keys = keys
        self.values = values

    @property
    def length(self) -> int:
        return self.keys[0].shape[0] if self.keys else 0

    def tensors(self) -> 'OrderedDict[str, Tensor]':
        named = OrderedDict()
        for layer, (k, v) in enumerate(zip(self.keys, self.values)):
            named[f'layers.{layer}.prefix_keys'] = k
            named[f'layers.{layer}.prefix_values'] = v
        return named

    def hyper(self) -> Dict:
        return {'prefix_length': self.length}


@dataclass
class AdapterSet:
    id: str
    kind: str
    payload: object
    trained_on: str = 'init'

    def __post_init__(self):
        expected = {'lora': LoraAdapter, 'prefix': PrefixAdapter}.get(self.kind)
        if expected is None:
            raise ParameterError(f"adapter kind must be one of {list(KINDS)}, got '{self.kind}'")
        if not isinstance(self.payload, expected):
            raise ParameterError(f"adapter kind '{self.kind}' does not match payload {type(self.payload).__name__}")

    def tensors(self) -> 'OrderedDict[str, Tensor]':
        return self.payload.tensors()

    def parameters(self) -> List[Tensor]:
        return list(self.tensors().values())

    def hyper(self) -> Dict:
        return self.payload.hyper()

    @property
    def num_params(self) -> int:
        return sum(t.size for t in self.parameters())

    @property
    def nbytes(self) -> int:
        return sum(t.nbytes for t in self.parameters())


def _hyper_value(hyper: Dict, key: str, default):
    value = hyper.get(key, default)
    if value is None:
        return default
    return value


def init_adapter(kind: str, cfg: EncoderConfig, hyper: Optional[Dict] = None,
                 rng: Optional[np.random.Generator] = None, adapter_id: str = 'adapter',
                 trained_on: str = 'init') -> AdapterSet:
    """
    Fresh adapter for an encoder config.

    LoRA: A ~ N(0, 0.02^2), B = 0, so the adapter starts as an exact no-op.
    Prefix: keys/values ~ N(0, 0.02^2).
    """
    hyper = hyper or {}
    rng = rng if rng is not None else np.random.default_rng(0)
    if kind == 'lora':
        r = int(_hyper_value(hyper, 'r', DEFAULT_LORA_R))
        alpha = float(_hyper_value(hyper, 'alpha', DEFAULT_LORA_ALPHA))
        targets = list(_hyper_value(hyper, 'targets', DEFAULT_LORA_TARGETS))
        if r < 1:
            raise ParameterError(f"LoRA rank r must be >= 1, got {r}")
        unknown = [t for t in targets if t not in PROJECTIONS]
        if unknown:
            raise ParameterError(f"unknown LoRA targets {unknown}; choose from {list(PROJECTIONS)}")
        factors = OrderedDict()
        ordered = [t for t in PROJECTIONS if t in targets]
        for layer in range(cfg.n_layers):
            for target in ordered:
                d_in, d_out = cfg.projection_shape(target)
                a = normal((r, d_in), INIT_STD, rng, name=f'layers.{layer}.{target}.lora_a')
                b = zeros((d_out, r), name=f'layers.{layer}.{target}.lora_b')
                factors[(layer, target)] = (a, b)
        payload = LoraAdapter(r, alpha, ordered, factors)
    elif kind == 'prefix':
        p = int(_hyper_value(hyper, 'prefix_length', DEFAULT_PREFIX_LENGTH))
        if p < 0:
            raise ParameterError(f"prefix length must be >= 0, got {p}")
        keys, values = [], []
        for layer in range(cfg.n_layers):
            keys.append(normal((p, cfg.d_model), INIT_STD, rng, name=f'layers.{layer}.prefix_keys'))
            values.append(normal((p, cfg.d_model), INIT_STD, rng, name=f'layers.{layer}.prefix_values'))
        payload = PrefixAdapter(keys, values)
    else:
        raise ParameterError(f"adapter kind must be one of {list(KINDS)}, got '{kind}'")
    return AdapterSet(id=adapter_id, kind=kind, payload=payload, trained_on=trained_on)


def _clone(t: Tensor) -> Tensor:
    return Tensor(t.data, requires_grad=t.requires_grad, name=t.name)


def replicate(adapter: AdapterSet, new_id: str, registry=None, trained_on: Optional[str] = None) -> AdapterSet:
    """Deep copy of an adapter under a new id; tensors are independent of the original."""
    if registry is not None and registry.has_adapter(new_id):
        raise IdError(f"adapter id '{new_id}' already exists in the registry")
    payload = adapter.payload
    if adapter.kind == 'lora':
        factors = OrderedDict((key, (_clone(a), _clone(b))) for key, (a, b) in payload.factors.items())
        copy = LoraAdapter(payload.r, payload.alpha, payload.targets, factors)
    else:
        copy = PrefixAdapter([_clone(k) for k in payload.keys], [_clone(v) for v in payload.values])
    return AdapterSet(id=new_id, kind=adapter.kind, payload=copy,
                      trained_on=adapter.trained_on if trained_on is None else trained_on)


def merge_lora(core: CoreModel, adapter) -> CoreModel:
    """
    New core with every targeted W replaced by W + (alpha/r) * (B A)^T.

    Weights are stored input-major (y = x W), hence the transpose. Merging is
    not idempotent: merging the same adapter twice adds the delta twice.
    """
    lora = adapter.payload if isinstance(adapter, AdapterSet) else adapter
    if not isinstance(lora, LoraAdapter):
        raise ParameterError("merge_lora needs a LoRA adapter")
    merged = core.copy()
    for (layer, target), (a, b) in lora.factors.items():
        if layer >= core.config.n_layers:
            raise ShapeError(f"adapter targets layer {layer} but the core has {core.config.n_layers} layers")
        weight = merged.params[projection_name(layer, target)]
        delta = (b.data @ a.data).T * lora.scaling
        if delta.shape != weight.shape:
            raise ShapeError(f"LoRA delta {delta.shape} does not match {projection_name(layer, target)} {weight.shape}")
        weight.data[...] = weight.data + delta
    return merged


def trainable_params(adapter: AdapterSet, head=None, phase: str = 'pretrain') -> List[Tensor]:
    """
    Tensors that receive gradients: the adapter's, plus the head's unless the
    head is frozen or phase == 'finetune'. Core tensors are never included.
    """
    params = adapter.parameters()
    if head is not None and phase != 'finetune' and not head.frozen:
        params.extend(head.parameters())
    return params


def hyper_from_config(section: Dict) -> Dict:
    """Adapter hyperparameters from config-style keys (lora_r, lora_alpha, lora_targets, prefix_length)."""
    hyper = {}
    if 'lora_r' in section:
        hyper['r'] = int(section['lora_r'])
    if 'lora_alpha' in section:
        hyper['alpha'] = float(section['lora_alpha'])
    if 'lora_targets' in section:
        hyper['targets'] = list(section['lora_targets'])
    if 'prefix_length' in section:
        hyper['prefix_length'] = int(section['prefix_length'])
    return hyper
