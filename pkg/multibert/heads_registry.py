"""
Label schemes, classifier heads, the domain registry and the bundle file.

Each domain owns exactly one adapter; domains whose label schemes are
identical (same tags, same order) share one head.

Bundle layout (single file, little-endian):
    b'MBNDL\\n' | uint64 manifest length | manifest (canonical JSON) | payload
The payload is the concatenation of every array as row-major float64; the
manifest indexes each array by name with shape, byte offset, byte length and
SHA-256 checksum.
"""
import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .adapters import AdapterSet, LoraAdapter, PrefixAdapter, init_adapter
from .encoder import CoreModel, EncoderConfig, freeze_core
from .errors import (
    BundleChecksumError, BundleFormatError, BundleTruncatedError, BundleVersionError, ContractError, IdError,
    ParameterError, RegistrationError, UnknownDomainError,
)
from .tensor import Tensor, add, make_rng, matmul, normal, zeros

MAGIC = b'MBNDL\n'
FORMAT_VERSION = 1
HEAD_INIT_STD = 0.02


# ========== LABEL SCHEMES ==========

@dataclass(frozen=True)
class LabelScheme:
    """Ordered BIO tag set; tag order is canonical (heads and bundles depend on it)."""
    id: str
    tags: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, 'tags', tuple(self.tags))
        if 'O' not in self.tags:
            raise ParameterError(f"scheme '{self.id}' must contain the O tag")
        if len(set(self.tags)) != len(self.tags):
            raise ParameterError(f"scheme '{self.id}' has duplicate tags")
        for tag in self.tags:
            if tag == 'O':
                continue
            if len(tag) < 3 or tag[:2] not in ('B-', 'I-'):
                raise ParameterError(f"scheme '{self.id}': tag '{tag}' is not O, B-X or I-X")
            if tag.startswith('I-') and f"B-{tag[2:]}" not in self.tags:
                raise ParameterError(f"scheme '{self.id}': '{tag}' has no matching B-{tag[2:]}")

    @property
    def entity_types(self) -> Tuple[str, ...]:
        seen = []
        for tag in self.tags:
            if tag != 'O' and tag[2:] not in seen:
                seen.append(tag[2:])
        return tuple(seen)

    @property
    def size(self) -> int:
        return len(self.tags)

    def index(self, tag: str) -> int:
        return self.tags.index(tag)

    def tag_to_id(self) -> Dict[str, int]:
        return {tag: i for i, tag in enumerate(self.tags)}

    def to_dict(self) -> Dict:
        return {'id': self.id, 'tags': list(self.tags)}

    @classmethod
    def from_dict(cls, data: Dict) -> 'LabelScheme':
        return cls(id=data['id'], tags=tuple(data['tags']))


def make_scheme(scheme_id: str, entity_types: Sequence[str]) -> LabelScheme:
    """O followed by B-X, I-X for every entity type, in the given order."""
    tags = ['O']
    for entity_type in entity_types:
        tags.extend([f'B-{entity_type}', f'I-{entity_type}'])
    return LabelScheme(scheme_id, tuple(tags))


# 21 BIO tags for the formal / informal pair
FORMAL21 = make_scheme('formal21', ['PER', 'ORG', 'LOC', 'FAC', 'EVE', 'PRO', 'DAT', 'TIM', 'MON', 'PCT'])
# nine tags plus a MISC catch-all for the ten topical domains
TWEETS9 = make_scheme('tweets9', ['PER', 'ORG', 'LOC', 'EVE', 'MISC'])
BUILTIN_SCHEMES = {FORMAL21.id: FORMAL21, TWEETS9.id: TWEETS9}


# ========== CLASSIFIER HEADS ==========

@dataclass
class ClassifierHead:
    id: str
    scheme_id: str
    weight: Tensor
    bias: Tensor
    frozen: bool = False

    @property
    def n_tags(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    @property
    def nbytes(self) -> int:
        return self.weight.nbytes + self.bias.nbytes

    def freeze(self):
        self.frozen = True
        for t in self.parameters():
            t.requires_grad = False
            t.grad = None

    def unfreeze(self):
        self.frozen = False
        for t in self.parameters():
            t.requires_grad = True

    def logits(self, hidden: Tensor) -> Tensor:
        return add(matmul(hidden, self.weight), self.bias)

    def copy(self, head_id: Optional[str] = None) -> 'ClassifierHead':
        head = ClassifierHead(
            id=head_id or self.id,
            scheme_id=self.scheme_id,
            weight=Tensor(self.weight.data, requires_grad=self.weight.requires_grad, name='weight'),
            bias=Tensor(self.bias.data, requires_grad=self.bias.requires_grad, name='bias'),
        )
        if self.frozen:
            head.freeze()
        return head


def init_head(head_id: str, scheme_id: str, d_model: int, n_outputs: int,
              rng: np.random.Generator) -> ClassifierHead:
    return ClassifierHead(
        id=head_id,
        scheme_id=scheme_id,
        weight=normal((d_model, n_outputs), HEAD_INIT_STD, rng, name='weight'),
        bias=zeros((n_outputs,), name='bias'),
    )


# ========== REGISTRY ==========

class DomainRegistry:
    """Domain -> (adapter id, head id) plus the adapter, head and scheme stores."""

    def __init__(self, config: EncoderConfig, adapter_kind: str = 'prefix',
                 adapter_hyper: Optional[Dict] = None, seed: int = 0):
        self.config = config
        self.adapter_kind = adapter_kind
        self.adapter_hyper = dict(adapter_hyper or {})
        self.seed = seed
        self.domains: 'OrderedDict[str, Tuple[str, str]]' = OrderedDict()
        self.adapters: 'OrderedDict[str, AdapterSet]' = OrderedDict()
        self.heads: 'OrderedDict[str, ClassifierHead]' = OrderedDict()
        self.schemes: 'OrderedDict[str, LabelScheme]' = OrderedDict()
        self.core: Optional[CoreModel] = None
        self.tokenizer = None
        self.router = None

    def has_adapter(self, adapter_id: str) -> bool:
        return adapter_id in self.adapters

    def scheme_for(self, domain: str) -> LabelScheme:
        _, head_id = self._entry(domain)
        return self.schemes[self.heads[head_id].scheme_id]

    def head_for_scheme(self, scheme_id: str) -> Optional[ClassifierHead]:
        for head in self.heads.values():
            if head.scheme_id == scheme_id:
                return head
        return None

    def domains_for_scheme(self, scheme_id: str) -> List[str]:
        return [d for d, (_, head_id) in self.domains.items() if self.heads[head_id].scheme_id == scheme_id]

    def replace_adapter(self, domain: str, adapter: AdapterSet):
        """Swap in a trained adapter; it must keep the id registered for the domain."""
        adapter_id, _ = self._entry(domain)
        if adapter.id != adapter_id:
            raise IdError(f"domain '{domain}' uses adapter id '{adapter_id}', got '{adapter.id}'")
        self.adapters[adapter_id] = adapter

    def _entry(self, domain: str) -> Tuple[str, str]:
        if domain not in self.domains:
            raise UnknownDomainError(domain, self.domains.keys())
        return self.domains[domain]


def register_domain(reg: DomainRegistry, domain: str, scheme: LabelScheme) -> Tuple[str, str]:
    """Create the domain's adapter; reuse the head of an identical scheme or create one."""
    if domain in reg.domains:
        raise RegistrationError(f"domain '{domain}' is already registered")
    known = reg.schemes.get(scheme.id)
    if known is not None and known.tags != scheme.tags:
        raise RegistrationError(f"scheme id '{scheme.id}' is already registered with different tags")

    head = None
    for candidate in reg.heads.values():
        if reg.schemes[candidate.scheme_id].tags == scheme.tags:
            head = candidate
            break
    if head is None:
        reg.schemes[scheme.id] = scheme
        head_id = f'head-{scheme.id}'
        if head_id in reg.heads:
            raise IdError(f"head id '{head_id}' already exists")
        head = init_head(head_id, scheme.id, reg.config.d_model, scheme.size,
                         make_rng(reg.seed, 'head', scheme.id))
        reg.heads[head_id] = head

    adapter_id = f'adapter-{domain}'
    if reg.has_adapter(adapter_id):
        raise IdError(f"adapter id '{adapter_id}' already exists")
    reg.adapters[adapter_id] = init_adapter(
        reg.adapter_kind, reg.config, reg.adapter_hyper,
        rng=make_rng(reg.seed, 'adapter', domain), adapter_id=adapter_id,
    )
    reg.domains[domain] = (adapter_id, head.id)
    return adapter_id, head.id


def resolve(reg: DomainRegistry, domain: str) -> Tuple[CoreModel, AdapterSet, ClassifierHead]:
    """(core, adapter, head) used to tag text of a domain; never mutates the registry."""
    adapter_id, head_id = reg._entry(domain)
    if reg.core is None:
        raise ContractError("registry has no core; attach one (reg.core = core) before resolving")
    return reg.core, reg.adapters[adapter_id], reg.heads[head_id]


# ========== TAGGER MODELS (baselines) ==========

@dataclass
class TaggerModel:
    """A full model: its own core plus one head per scheme (no adapters)."""
    name: str
    core: CoreModel
    heads: Dict[str, ClassifierHead] = field(default_factory=dict)
    schemes: Dict[str, LabelScheme] = field(default_factory=dict)
    tokenizer: object = None
    domains: List[str] = field(default_factory=list)
    # training reports of the run that produced the model; not serialized
    reports: List = field(default_factory=list, compare=False)

    @property
    def nbytes(self) -> int:
        return self.core.nbytes + sum(h.nbytes for h in self.heads.values())

    def copy(self, name: Optional[str] = None) -> 'TaggerModel':
        return TaggerModel(
            name=name or self.name,
            core=self.core.copy(),
            heads=OrderedDict((k, h.copy()) for k, h in self.heads.items()),
            schemes=OrderedDict(self.schemes),
            tokenizer=self.tokenizer,
            domains=list(self.domains),
        )


# ========== BUNDLE ENCODING ==========

def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(',', ':'), ensure_ascii=False).encode('utf-8')


class _PayloadWriter:
    def __init__(self):
        self.chunks: List[bytes] = []
        self.index: List[Dict] = []
        self.offset = 0

    def add(self, name: str, tensor: Tensor):
        raw = np.ascontiguousarray(tensor.data, dtype='<f8').tobytes(order='C')
        self.index.append({
            'name': name,
            'shape': list(tensor.shape),
            'offset': self.offset,
            'nbytes': len(raw),
            'sha256': hashlib.sha256(raw).hexdigest(),
        })
        self.chunks.append(raw)
        self.offset += len(raw)

    def add_adapter(self, prefix: str, adapter: AdapterSet) -> List[str]:
        names = []
        for name, tensor in adapter.tensors().items():
            self.add(f'{prefix}/{name}', tensor)
            names.append(name)
        return names

    def add_head(self, prefix: str, head: ClassifierHead):
        self.add(f'{prefix}/weight', head.weight)
        self.add(f'{prefix}/bias', head.bias)


def _adapter_entry(adapter: AdapterSet, tensor_names: List[str]) -> Dict:
    return {
        'id': adapter.id,
        'kind': adapter.kind,
        'hyper': adapter.hyper(),
        'trained_on': adapter.trained_on,
        'tensors': tensor_names,
    }


def _head_entry(head: ClassifierHead) -> Dict:
    return {'id': head.id, 'scheme_id': head.scheme_id, 'frozen': head.frozen}


def _frame(manifest: Dict, writer: _PayloadWriter) -> bytes:
    manifest['arrays'] = writer.index
    body = _canonical_json(manifest)
    return MAGIC + struct.pack('<Q', len(body)) + body + b''.join(writer.chunks)


def _core_section(core: CoreModel, writer: _PayloadWriter) -> Dict:
    for name, tensor in core.params.items():
        writer.add(f'core/{name}', tensor)
    return {'frozen': core.frozen, 'tensors': list(core.params.keys())}


def bundle_bytes(reg: DomainRegistry, core: CoreModel) -> bytes:
    """Serialized registry + core exactly as save_bundle writes them."""
    writer = _PayloadWriter()
    manifest = {
        'format_version': FORMAT_VERSION,
        'bundle_kind': 'registry',
        'encoder': reg.config.to_dict(),
        'adapter_kind': reg.adapter_kind,
        'adapter_hyper': reg.adapter_hyper,
        'seed': reg.seed,
        'core': _core_section(core, writer),
        'schemes': [s.to_dict() for s in reg.schemes.values()],
        'domains': [{'domain': d, 'adapter_id': a, 'head_id': h} for d, (a, h) in reg.domains.items()],
        'tokenizer': reg.tokenizer.to_dict() if reg.tokenizer is not None else None,
    }
    adapters = []
    for adapter in reg.adapters.values():
        names = writer.add_adapter(f'adapter/{adapter.id}', adapter)
        adapters.append(_adapter_entry(adapter, names))
    manifest['adapters'] = adapters
    heads = []
    for head in reg.heads.values():
        writer.add_head(f'head/{head.id}', head)
        heads.append(_head_entry(head))
    manifest['heads'] = heads

    router = reg.router
    if router is not None:
        names = writer.add_adapter('router/adapter', router.adapter)
        writer.add_head('router/head', router.head)
        manifest['router'] = {
            'adapter': _adapter_entry(router.adapter, names),
            'head': _head_entry(router.head),
            'config': router.config.to_dict(),
        }
    else:
        manifest['router'] = None
    return _frame(manifest, writer)


def save_bundle(reg: DomainRegistry, core: CoreModel, path: str):
    """Write one core, every adapter, every head (and the router, if any) to path."""
    data = bundle_bytes(reg, core)
    with open(path, 'wb') as f:
        f.write(data)


def tagger_bytes(model: TaggerModel) -> bytes:
    writer = _PayloadWriter()
    manifest = {
        'format_version': FORMAT_VERSION,
        'bundle_kind': 'tagger',
        'name': model.name,
        'encoder': model.core.config.to_dict(),
        'core': _core_section(model.core, writer),
        'schemes': [s.to_dict() for s in model.schemes.values()],
        'domains': list(model.domains),
        'tokenizer': model.tokenizer.to_dict() if model.tokenizer is not None else None,
    }
    heads = []
    for head in model.heads.values():
        writer.add_head(f'head/{head.id}', head)
        heads.append(_head_entry(head))
    manifest['heads'] = heads
    return _frame(manifest, writer)


def save_tagger(model: TaggerModel, path: str):
    with open(path, 'wb') as f:
        f.write(tagger_bytes(model))


# ========== BUNDLE DECODING ==========

def _read_frame(data: bytes) -> Tuple[Dict, Dict[str, np.ndarray]]:
    if not data.startswith(MAGIC):
        raise BundleFormatError("not a bundle file (bad magic header)")
    header_end = len(MAGIC) + 8
    if len(data) < header_end:
        raise BundleTruncatedError("bundle ends inside the header")
    (manifest_len,) = struct.unpack('<Q', data[len(MAGIC):header_end])
    if len(data) < header_end + manifest_len:
        raise BundleTruncatedError("bundle ends inside the manifest")
    try:
        manifest = json.loads(data[header_end:header_end + manifest_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise BundleFormatError(f"bundle manifest is not valid JSON: {e}")
    version = manifest.get('format_version')
    if version != FORMAT_VERSION:
        raise BundleVersionError(f"bundle format version {version!r} is not supported (expected {FORMAT_VERSION})")

    payload = memoryview(data)[header_end + manifest_len:]
    arrays = {}
    expected_end = 0
    for entry in manifest.get('arrays', []):
        start, length = entry['offset'], entry['nbytes']
        if start + length > len(payload):
            raise BundleTruncatedError(
                f"payload truncated: array '{entry['name']}' needs bytes {start}..{start + length}, "
                f"payload has {len(payload)}"
            )
        raw = bytes(payload[start:start + length])
        if hashlib.sha256(raw).hexdigest() != entry['sha256']:
            raise BundleChecksumError(f"checksum mismatch for array '{entry['name']}'")
        arrays[entry['name']] = np.frombuffer(raw, dtype='<f8').astype(np.float64).reshape(entry['shape'])
        expected_end = max(expected_end, start + length)
    if expected_end != len(payload):
        raise BundleFormatError(f"payload has {len(payload) - expected_end} unexpected trailing bytes")
    return manifest, arrays


def _load_core(manifest: Dict, arrays: Dict[str, np.ndarray]) -> CoreModel:
    config = EncoderConfig.from_dict(manifest['encoder'])
    params = OrderedDict()
    for name in manifest['core']['tensors']:
        params[name] = Tensor(arrays[f'core/{name}'], requires_grad=True, name=name, copy=False)
    core = CoreModel(config, params)
    if manifest['core']['frozen']:
        freeze_core(core)
    return core


def _load_adapter(entry: Dict, prefix: str, arrays: Dict[str, np.ndarray]) -> AdapterSet:
    tensors = OrderedDict(
        (name, Tensor(arrays[f'{prefix}/{name}'], requires_grad=True, name=name, copy=False))
        for name in entry['tensors']
    )
    hyper = entry['hyper']
    if entry['kind'] == 'lora':
        factors = OrderedDict()
        for name, tensor in tensors.items():
            _, layer, target, which = name.split('.')
            key = (int(layer), target)
            a, b = factors.get(key, (None, None))
            factors[key] = (tensor, b) if which == 'lora_a' else (a, tensor)
        payload = LoraAdapter(hyper['r'], hyper['alpha'], hyper['targets'], factors)
    else:
        layers = sorted({int(name.split('.')[1]) for name in tensors})
        payload = PrefixAdapter(
            [tensors[f'layers.{layer}.prefix_keys'] for layer in layers],
            [tensors[f'layers.{layer}.prefix_values'] for layer in layers],
        )
    return AdapterSet(id=entry['id'], kind=entry['kind'], payload=payload, trained_on=entry['trained_on'])


def _load_head(entry: Dict, prefix: str, arrays: Dict[str, np.ndarray]) -> ClassifierHead:
    head = ClassifierHead(
        id=entry['id'],
        scheme_id=entry['scheme_id'],
        weight=Tensor(arrays[f'{prefix}/weight'], requires_grad=True, name='weight', copy=False),
        bias=Tensor(arrays[f'{prefix}/bias'], requires_grad=True, name='bias', copy=False),
    )
    if entry['frozen']:
        head.freeze()
    return head


def _load_tokenizer(data: Optional[Dict]):
    if data is None:
        return None
    from .data import Tokenizer
    return Tokenizer.from_dict(data)


def _read_file(path: str) -> bytes:
    with open(path, 'rb') as f:
        return f.read()


def load_bundle(path: str) -> Tuple[DomainRegistry, CoreModel]:
    """Inverse of save_bundle; raises a BundleError subclass on any inconsistency."""
    manifest, arrays = _read_frame(_read_file(path))
    if manifest.get('bundle_kind') != 'registry':
        raise BundleFormatError(f"{path} holds a '{manifest.get('bundle_kind')}' bundle, not a registry")
    core = _load_core(manifest, arrays)
    reg = DomainRegistry(core.config, manifest['adapter_kind'], manifest['adapter_hyper'], manifest['seed'])
    for scheme in manifest['schemes']:
        reg.schemes[scheme['id']] = LabelScheme.from_dict(scheme)
    for entry in manifest['adapters']:
        reg.adapters[entry['id']] = _load_adapter(entry, f"adapter/{entry['id']}", arrays)
    for entry in manifest['heads']:
        reg.heads[entry['id']] = _load_head(entry, f"head/{entry['id']}", arrays)
    for entry in manifest['domains']:
        reg.domains[entry['domain']] = (entry['adapter_id'], entry['head_id'])
    reg.tokenizer = _load_tokenizer(manifest.get('tokenizer'))
    if manifest.get('router'):
        from .router import RouterConfig, RouterModel
        section = manifest['router']
        reg.router = RouterModel(
            adapter=_load_adapter(section['adapter'], 'router/adapter', arrays),
            head=_load_head(section['head'], 'router/head', arrays),
            config=RouterConfig.from_dict(section['config']),
        )
    reg.core = core
    return reg, core


def load_tagger(path: str) -> TaggerModel:
    manifest, arrays = _read_frame(_read_file(path))
    if manifest.get('bundle_kind') != 'tagger':
        raise BundleFormatError(f"{path} holds a '{manifest.get('bundle_kind')}' bundle, not a tagger model")
    heads = OrderedDict()
    for entry in manifest['heads']:
        head = _load_head(entry, f"head/{entry['id']}", arrays)
        heads[head.scheme_id] = head
    return TaggerModel(
        name=manifest['name'],
        core=_load_core(manifest, arrays),
        heads=heads,
        schemes=OrderedDict((s['id'], LabelScheme.from_dict(s)) for s in manifest['schemes']),
        tokenizer=_load_tokenizer(manifest.get('tokenizer')),
        domains=list(manifest['domains']),
    )


def bundle_size_report(reg: DomainRegistry, core: CoreModel) -> Dict:
    """Byte accounting: core, per adapter, per head, router and manifest overhead."""
    total = len(bundle_bytes(reg, core))
    adapters = {a.id: a.nbytes for a in reg.adapters.values()}
    heads = {h.id: h.nbytes for h in reg.heads.values()}
    router = 0
    if reg.router is not None:
        router = reg.router.adapter.nbytes + reg.router.head.nbytes
    arrays = core.nbytes + sum(adapters.values()) + sum(heads.values()) + router
    return {
        'total_bytes': total,
        'core_bytes': core.nbytes,
        'adapter_bytes': adapters,
        'head_bytes': heads,
        'router_bytes': router,
        'overhead_bytes': total - arrays,
    }
