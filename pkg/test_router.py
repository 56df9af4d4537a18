"""Tests for document grouping, the domain router and routed tagging."""
import json

import numpy as np
import pytest

from multibert.adapters import init_adapter
from multibert.data import is_valid_bio
from multibert.encoder import freeze_core
from multibert.errors import ContractError, InputError, ParameterError, RoutingError
from multibert.heads_registry import DomainRegistry, init_head, register_domain, resolve
from multibert.router import (
    RoutedBatch, RouterConfig, RouterModel, build_groups, classify_group, group_accuracy, labeled_groups,
    records_to_jsonl, route_and_tag, train_router,
)
from multibert.tensor import make_rng
from multibert.training import TrainConfig, predict_tags


def _words(n, prefix='w'):
    return [f'{prefix}{i}' for i in range(n)]


def test_groups_of_k_sentences():
    sentences = [_words(2) for _ in range(20)]
    groups = build_groups(sentences, RouterConfig(group_size=8, max_tokens=512))
    assert [g.members for g in groups] == [list(range(8)), list(range(8, 16)), list(range(16, 20))]
    assert [g.group_id for g in groups] == [0, 1, 2]
    assert len(groups[0].tokens) == 16


def test_token_budget_closes_a_group_and_truncates():
    sentences = [_words(5), _words(5), _words(5), _words(1)]
    groups = build_groups(sentences, RouterConfig(group_size=8, max_tokens=8))
    assert [g.members for g in groups] == [[0, 1], [2, 3]]
    assert len(groups[0].tokens) == 8
    assert len(groups[1].tokens) == 6


def test_group_size_one_and_start_id():
    groups = build_groups([['a'], ['b'], ['c']], RouterConfig(group_size=1), start_id=5)
    assert [g.members for g in groups] == [[0], [1], [2]]
    assert [g.group_id for g in groups] == [5, 6, 7]
    assert build_groups([], RouterConfig()) == []


@pytest.mark.parametrize('kwargs', [{'group_size': 0}, {'max_tokens': 0}])
def test_router_config_validation(kwargs):
    with pytest.raises(ParameterError):
        RouterConfig(**kwargs)


def test_router_config_must_fit_the_encoder():
    RouterConfig(max_tokens=32).check_encoder(32)
    with pytest.raises(ParameterError):
        RouterConfig(max_tokens=64).check_encoder(32)
    cfg = RouterConfig.from_dict(RouterConfig(4, 16, ('a', 'b')).to_dict())
    assert cfg == RouterConfig(4, 16, ('a', 'b'))


def _router(config, domains, max_tokens=16, seed=0):
    return RouterModel(
        adapter=init_adapter('prefix', config, {'prefix_length': 2}, rng=make_rng(seed, 'ra'), adapter_id='router'),
        head=init_head('router-head', 'router', config.d_model, len(domains), make_rng(seed, 'rh')),
        config=RouterConfig(group_size=4, max_tokens=max_tokens, domains=tuple(domains)),
    )


def _registry(corpus, config, core, tokenizer):
    freeze_core(core)
    reg = DomainRegistry(config, adapter_hyper={'prefix_length': 2})
    for d in corpus.domains:
        register_domain(reg, d, corpus.scheme_for(d))
    reg.core, reg.tokenizer = core, tokenizer
    return reg


def test_classify_group_scores(tiny_corpus, tiny_tokenizer, corpus_config, corpus_core):
    router = _router(corpus_config, ['alpha', 'beta', 'gamma'])
    tokens = list(tiny_corpus.sentences('train', ['alpha'])[0].tokens)[:8]
    domain, scores = classify_group(router, tokens, corpus_core, tiny_tokenizer)
    assert domain in router.domains
    assert scores.shape == (3,)
    assert abs(scores.sum() - 1.0) < 1e-12
    assert domain == router.domains[int(np.argmax(scores))]
    with pytest.raises(InputError):
        classify_group(router, [], corpus_core, tiny_tokenizer)
    with pytest.raises(InputError):
        classify_group(router, _words(17), corpus_core, tiny_tokenizer)


def test_train_router_leaves_core_untouched_and_learns(tiny_corpus, tiny_tokenizer, corpus_core):
    freeze_core(corpus_core)
    before = [t.data.copy() for t in corpus_core.parameters()]
    cfg = RouterConfig(group_size=4, max_tokens=32)
    train_cfg = TrainConfig(batch_size=4, lr=5e-2, max_epochs=20, patience=20, seed=0, max_len=32)
    router, report = train_router(corpus_core, tiny_corpus, cfg, train_cfg, tiny_tokenizer)
    assert router.domains == ('alpha', 'beta', 'gamma')
    assert report.metric == 'accuracy'
    assert all(np.array_equal(b, t.data) for b, t in zip(before, corpus_core.parameters()))
    # domains use disjoint context words, so the train groups are separable
    assert group_accuracy(corpus_core, router, tiny_tokenizer, tiny_corpus, 'train') > 0.6


def test_train_router_leaves_registered_adapters_and_heads_untouched(tiny_corpus, tiny_tokenizer, corpus_config,
                                                                     corpus_core):
    reg = _registry(tiny_corpus, corpus_config, corpus_core, tiny_tokenizer)
    rng = make_rng(0, 'perturb')
    tagging = [t for a in reg.adapters.values() for t in a.parameters()]
    tagging += [t for h in reg.heads.values() for t in h.parameters()]
    for t in tagging:
        t.data += rng.normal(0.0, 0.1, size=t.shape)
    before = [t.data.tobytes() for t in tagging]
    train_cfg = TrainConfig(batch_size=4, lr=5e-2, max_epochs=3, patience=3, seed=0, max_len=32)
    reg.router, _ = train_router(corpus_core, tiny_corpus, RouterConfig(4, 32), train_cfg, tiny_tokenizer)
    assert [t.data.tobytes() for t in tagging] == before
    assert all(t.grad is None for t in tagging)
    assert reg.router.adapter.id not in reg.adapters


def test_train_router_needs_frozen_core(tiny_corpus, tiny_tokenizer, corpus_core):
    with pytest.raises(ContractError):
        train_router(corpus_core, tiny_corpus, RouterConfig(4, 32), TrainConfig(max_len=32), tiny_tokenizer)


def test_small_domains_warn(tiny_corpus, capsys):
    groups, labels = labeled_groups(tiny_corpus, 'train', RouterConfig(group_size=40, max_tokens=10000))
    assert "fewer than one group" in capsys.readouterr().err
    assert len(groups) == len(labels)
    assert [g.domain for g in groups] == [tiny_corpus.domains[i] for i in labels]


def test_single_domain_router_matches_direct_tagging(tiny_corpus, tiny_tokenizer, corpus_config, corpus_core):
    reg = _registry(tiny_corpus, corpus_config, corpus_core, tiny_tokenizer)
    router = _router(corpus_config, ['alpha'], max_tokens=32)
    sentences = [list(s.tokens) for s in tiny_corpus.sentences('test', ['alpha'])]
    tags, records = route_and_tag(reg, router, sentences, max_len=32)
    _, adapter, head = resolve(reg, 'alpha')
    assert tags == predict_tags(corpus_core, adapter, head, reg.scheme_for('alpha'), tiny_tokenizer, sentences, 32)
    assert [len(t) for t in tags] == [len(s) for s in sentences]
    assert all(is_valid_bio(t) for t in tags)
    assert sorted(i for r in records for i in r['members']) == list(range(len(sentences)))
    assert all(r['domain'] == 'alpha' and r['scores'] == {'alpha': 1.0} for r in records)


def test_routing_to_an_unregistered_domain_fails(tiny_corpus, tiny_tokenizer, corpus_config, corpus_core):
    reg = _registry(tiny_corpus, corpus_config, corpus_core, tiny_tokenizer)
    with pytest.raises(RoutingError):
        route_and_tag(reg, _router(corpus_config, ['zzz'], max_tokens=32), [['a', 'b']], max_len=32)
    with pytest.raises(RoutingError):
        route_and_tag(reg, None, [['a', 'b']], max_len=32)


def test_records_to_jsonl():
    batch = RoutedBatch(3, [0, 1], ['a'], domain='news', scores=np.array([0.25, 0.75]))
    text = records_to_jsonl([batch.record(['it', 'news'])])
    assert text.endswith('\n')
    assert json.loads(text) == {'group': 3, 'members': [0, 1], 'domain': 'news',
                                'scores': {'it': 0.25, 'news': 0.75}}
    assert records_to_jsonl([]) == ''
