"""Tests for label schemes, heads, the domain registry and the bundle format."""
import json
import struct

import pytest

from multibert.adapters import init_adapter
from multibert.data import CLS, PAD, UNK, Tokenizer
from multibert.encoder import CoreModel, EncoderConfig, freeze_core
from multibert.errors import (
    BundleChecksumError, BundleFormatError, BundleTruncatedError, BundleVersionError, ContractError, IdError,
    ParameterError, RegistrationError, UnknownDomainError,
)
from multibert.heads_registry import (
    FORMAL21, MAGIC, TWEETS9, DomainRegistry, LabelScheme, TaggerModel, bundle_bytes, bundle_size_report,
    init_head, load_bundle, load_tagger, make_scheme, register_domain, resolve, save_bundle, save_tagger,
)
from multibert.router import RouterConfig, RouterModel
from multibert.tensor import make_rng
from multibert.training import predict_tags

TWEET_DOMAINS = ['news', 'it', 'sport', 'econ', 'game', 'travel', 'med', 'fun', 'acad', 'art']


def _registry(config, kind='prefix', domains=TWEET_DOMAINS, formal=('formal', 'informal'), hyper=None):
    if hyper is None:
        hyper = {'prefix_length': 2} if kind == 'prefix' else {'r': 2}
    reg = DomainRegistry(config, adapter_kind=kind, adapter_hyper=hyper)
    for d in formal:
        register_domain(reg, d, FORMAL21)
    for d in domains:
        register_domain(reg, d, TWEETS9)
    return reg


@pytest.fixture
def frozen_core(tiny_core):
    freeze_core(tiny_core)
    return tiny_core


def test_builtin_schemes():
    assert FORMAL21.size == 21
    assert TWEETS9.size == 11
    assert TWEETS9.entity_types == ('PER', 'ORG', 'LOC', 'EVE', 'MISC')
    assert TWEETS9.tag_to_id()['O'] == 0


@pytest.mark.parametrize('tags', [
    ('B-PER', 'I-PER'),
    ('O', 'I-PER'),
    ('O', 'O'),
    ('O', 'X-PER'),
])
def test_invalid_schemes(tags):
    with pytest.raises(ParameterError):
        LabelScheme('bad', tags)


def test_register_shares_heads_within_a_scheme(tiny_config):
    reg = DomainRegistry(tiny_config)
    a1, h1 = register_domain(reg, 'news', TWEETS9)
    a2, h2 = register_domain(reg, 'sport', TWEETS9)
    a3, h3 = register_domain(reg, 'formal', FORMAL21)
    assert h1 == h2 != h3
    assert len({a1, a2, a3}) == 3
    assert reg.domains_for_scheme(TWEETS9.id) == ['news', 'sport']
    assert reg.head_for_scheme(FORMAL21.id).id == h3


def test_register_rejects_duplicates_and_conflicting_schemes(tiny_config):
    reg = DomainRegistry(tiny_config)
    register_domain(reg, 'news', TWEETS9)
    with pytest.raises(RegistrationError):
        register_domain(reg, 'news', TWEETS9)
    with pytest.raises(RegistrationError):
        register_domain(reg, 'sport', make_scheme(TWEETS9.id, ['PER']))


def test_resolve_is_pure_and_unknown_domains_list_known(tiny_config, frozen_core):
    reg = _registry(tiny_config)
    reg.core = frozen_core
    before = bundle_bytes(reg, frozen_core)
    core, adapter, head = resolve(reg, 'news')
    for _ in range(1000):
        again = resolve(reg, 'news')
        assert again[0] is core and again[1] is adapter and again[2] is head
    assert bundle_bytes(reg, frozen_core) == before
    with pytest.raises(UnknownDomainError) as err:
        resolve(reg, 'poetry')
    assert isinstance(err.value, KeyError)
    assert 'news' in str(err.value) and 'formal' in str(err.value)


def test_replace_adapter_keeps_id(tiny_config, frozen_core):
    reg = _registry(tiny_config, domains=['news'], formal=())
    reg.core = frozen_core
    with pytest.raises(IdError):
        reg.replace_adapter('news', init_adapter('prefix', tiny_config, adapter_id='other'))
    fresh = init_adapter('prefix', tiny_config, adapter_id='adapter-news')
    reg.replace_adapter('news', fresh)
    assert resolve(reg, 'news')[1] is fresh


def test_resolve_needs_a_core(tiny_config, frozen_core):
    reg = _registry(tiny_config, domains=['news'], formal=())
    with pytest.raises(ContractError, match='no core'):
        resolve(reg, 'news')
    reg.core = frozen_core
    assert resolve(reg, 'news')[0] is frozen_core


@pytest.mark.parametrize('kind', ['prefix', 'lora'])
def test_bundle_round_trip_is_byte_identical(tmp_path, tiny_config, frozen_core, kind):
    reg = _registry(tiny_config, kind=kind)
    path = tmp_path / 'registry.mbundle'
    save_bundle(reg, frozen_core, str(path))
    loaded, core = load_bundle(str(path))
    assert loaded.core is core and core.frozen
    assert list(loaded.domains) == list(reg.domains)
    assert len(loaded.heads) == 2 and len(loaded.adapters) == 12
    second = tmp_path / 'again.mbundle'
    save_bundle(loaded, core, str(second))
    assert path.read_bytes() == second.read_bytes()


def test_bundle_preserves_tagging(tmp_path, tiny_corpus, tiny_tokenizer, corpus_config, corpus_core):
    freeze_core(corpus_core)
    reg = DomainRegistry(corpus_config, adapter_hyper={'prefix_length': 3})
    for d in tiny_corpus.domains:
        register_domain(reg, d, tiny_corpus.scheme_for(d))
    reg.tokenizer, reg.core = tiny_tokenizer, corpus_core
    tokens = [s.tokens for s in tiny_corpus.sentences('test', ['alpha'])]
    _, adapter, head = resolve(reg, 'alpha')
    before = predict_tags(corpus_core, adapter, head, TWEETS9, tiny_tokenizer, tokens, 32)
    path = tmp_path / 'r.mbundle'
    save_bundle(reg, corpus_core, str(path))
    loaded, core = load_bundle(str(path))
    _, adapter, head = resolve(loaded, 'alpha')
    assert predict_tags(core, adapter, head, TWEETS9, loaded.tokenizer, tokens, 32) == before


def test_adding_a_domain_costs_one_adapter(tiny_config, frozen_core):
    reg = _registry(tiny_config, domains=TWEET_DOMAINS[:3])
    size = len(bundle_bytes(reg, frozen_core))
    register_domain(reg, 'extra', TWEETS9)
    grown = len(bundle_bytes(reg, frozen_core))
    adapter_bytes = reg.adapters['adapter-extra'].nbytes
    assert adapter_bytes <= grown - size <= adapter_bytes + 2048


def test_storage_is_sublinear_at_default_size():
    config = EncoderConfig(vocab_size=1000)
    core = CoreModel.initialize(config, make_rng(0, 'core'))
    freeze_core(core)
    reg = _registry(config, hyper={'prefix_length': 18})
    register_domain(reg, 'extra', TWEETS9)
    report = bundle_size_report(reg, core)
    assert reg.adapters['adapter-extra'].nbytes < 0.05 * report['core_bytes']
    parts = report['core_bytes'] + sum(report['adapter_bytes'].values()) + sum(report['head_bytes'].values())
    assert report['total_bytes'] == parts + report['overhead_bytes']
    assert report['overhead_bytes'] > 0


def test_router_travels_with_the_bundle(tmp_path, tiny_config, frozen_core):
    reg = _registry(tiny_config, domains=['news', 'sport'], formal=())
    reg.router = RouterModel(
        adapter=init_adapter('prefix', tiny_config, {'prefix_length': 2}, rng=make_rng(0, 'r'), adapter_id='router'),
        head=init_head('router-head', 'router', tiny_config.d_model, 2, make_rng(0, 'rh')),
        config=RouterConfig(group_size=4, max_tokens=16, domains=('news', 'sport')),
    )
    path = tmp_path / 'r.mbundle'
    save_bundle(reg, frozen_core, str(path))
    loaded, core = load_bundle(str(path))
    assert loaded.router.domains == ('news', 'sport')
    assert loaded.router.config.group_size == 4
    assert bundle_bytes(loaded, core) == path.read_bytes()


def test_tagger_round_trip(tmp_path, tiny_core):
    head = init_head('head-tweets9', TWEETS9.id, 8, TWEETS9.size, make_rng(0, 'h'))
    model = TaggerModel('general-tweets9', tiny_core, {TWEETS9.id: head}, {TWEETS9.id: TWEETS9},
                        Tokenizer([PAD, UNK, CLS, 'a', 'b']), ['news', 'sport'])
    path = tmp_path / 'general.mbt'
    save_tagger(model, str(path))
    loaded = load_tagger(str(path))
    assert loaded.name == model.name
    assert loaded.domains == ['news', 'sport']
    assert loaded.tokenizer.to_dict() == model.tokenizer.to_dict()
    assert loaded.nbytes == model.nbytes
    save_tagger(loaded, str(tmp_path / 'again.mbt'))
    assert path.read_bytes() == (tmp_path / 'again.mbt').read_bytes()
    with pytest.raises(BundleFormatError):
        load_bundle(str(path))


def _manifest_span(data):
    (length,) = struct.unpack('<Q', data[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    return start, start + length


def test_corrupt_bundles_raise_distinct_errors(tmp_path, tiny_config, frozen_core):
    reg = _registry(tiny_config, domains=['news'], formal=())
    data = bundle_bytes(reg, frozen_core)
    start, end = _manifest_span(data)
    manifest = json.loads(data[start:end])
    assert manifest['format_version'] == 1

    def load(blob):
        path = tmp_path / 'bad.mbundle'
        path.write_bytes(blob)
        return load_bundle(str(path))

    flipped = bytearray(data)
    flipped[end + 5] ^= 0xFF
    with pytest.raises(BundleChecksumError):
        load(bytes(flipped))
    with pytest.raises(BundleTruncatedError):
        load(data[:-1])
    with pytest.raises(BundleVersionError):
        load(data.replace(b'"format_version":1', b'"format_version":9', 1))
    with pytest.raises(BundleFormatError):
        load(b'NOTABUNDLE' + data[10:])
    with pytest.raises(BundleFormatError):
        load(data + b'\x00' * 8)
