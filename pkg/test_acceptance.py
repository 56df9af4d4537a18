"""
Acceptance checks on the desk-scale synthetic setup.

The property checks run always. The full pipeline reproductions (three seeded
train runs with baselines, router accuracy over seeds) take long and only run
with MULTIBERT_SLOW_TESTS=1.
"""
import json
import os

import numpy as np
import pytest

from conftest import numeric_grad, relative_error
from multibert.adapters import init_adapter, merge_lora
from multibert.cli import cmd_eval, cmd_synth, cmd_train
from multibert.config import SLOW_TESTS, bundle_path, load_config
from multibert.data import CONTEXT_FLIP_SENTENCE, Tokenizer, generate_synthetic, load_corpus, spec_from_config
from multibert.encoder import CoreModel, EncoderConfig, forward, forward_batch, freeze_core, pretrain_core
from multibert.heads_registry import TWEETS9, init_head, load_bundle, load_tagger, resolve
from multibert.router import RouterConfig, group_accuracy, train_router
from multibert.tensor import IGNORE_INDEX, Tape, backward, cross_entropy, make_rng, reshape, snapshot
from multibert.training import TrainConfig, predict_tags

slow = pytest.mark.skipif(not SLOW_TESTS, reason='set MULTIBERT_SLOW_TESTS=1 for the long acceptance runs')

SEEDS = (13, 14, 15)
TWEET_DOMAINS = ['news', 'it', 'sport', 'econ', 'game', 'travel', 'med', 'fun', 'acad', 'art']


def _random_inputs(config, n, seed):
    rng = make_rng(seed, 'inputs')
    return [rng.integers(0, config.vocab_size, size=int(rng.integers(1, config.max_seq_len + 1)))
            for _ in range(n)]


def test_fresh_adapters_reproduce_base_outputs():
    config = EncoderConfig(vocab_size=50, n_layers=2, d_model=16, n_heads=2, d_ff=32, max_seq_len=24)
    core = CoreModel.initialize(config, make_rng(0, 'core'))
    lora = init_adapter('lora', config, {'r': 3}, rng=make_rng(0, 'lora'))
    prefix = init_adapter('prefix', config, {'prefix_length': 0})
    for ids in _random_inputs(config, 100, 1):
        base = forward(core, ids).data
        assert np.max(np.abs(forward(core, ids, adapter=lora).data - base)) <= 1e-12
        assert np.max(np.abs(forward(core, ids, adapter=prefix).data - base)) <= 1e-12


def test_merged_lora_matches_adapter_path():
    config = EncoderConfig(vocab_size=50, n_layers=2, d_model=16, n_heads=2, d_ff=32, max_seq_len=24)
    core = CoreModel.initialize(config, make_rng(0, 'core'))
    adapter = init_adapter('lora', config, {'r': 3, 'alpha': 2.0, 'targets': ['q', 'k', 'v', 'o']},
                           rng=make_rng(0, 'lora'))
    rng = make_rng(0, 'b')
    for _, b in adapter.payload.factors.values():
        b.data[...] = rng.normal(0.0, 0.3, size=b.shape)
    merged = merge_lora(core, adapter)
    for ids in _random_inputs(config, 100, 2):
        assert np.max(np.abs(forward(merged, ids).data - forward(core, ids, adapter=adapter).data)) <= 1e-10


@slow
@pytest.mark.parametrize('kind,hyper', [('lora', {'r': 2, 'targets': ['q', 'v']}), ('prefix', {'prefix_length': 3})])
def test_gradient_check_at_d16(kind, hyper):
    config = EncoderConfig(vocab_size=9, n_layers=2, d_model=16, n_heads=2, d_ff=32, max_seq_len=6)
    core = CoreModel.initialize(config, make_rng(3, 'core'))
    adapter = init_adapter(kind, config, hyper, rng=make_rng(3, kind))
    rng = make_rng(3, 'perturb')
    for t in adapter.parameters():
        t.data += rng.normal(0.0, 0.3, size=t.shape)
    freeze_core(core)
    head = init_head('h', TWEETS9.id, config.d_model, TWEETS9.size, make_rng(3, 'head'))
    ids = np.array([[2, 4, 6, 3, 8], [2, 5, 1, 7, 0]])
    mask = np.array([[True] * 5, [True] * 4 + [False]])
    targets = np.array([IGNORE_INDEX, 1, 2, 0, 5, IGNORE_INDEX, 3, 4, 0, IGNORE_INDEX])

    def loss_tensor():
        logits = head.logits(forward_batch(core, ids, mask, adapter=adapter))
        return cross_entropy(reshape(logits, (10, TWEETS9.size)), targets)

    with Tape() as tape:
        backward(loss_tensor(), tape)
    for t in adapter.parameters() + head.parameters():
        assert relative_error(t.grad, numeric_grad(lambda: loss_tensor().item(), t)) < 1e-4, t.name


# ========== FULL DESK RUNS ==========

@pytest.fixture(scope='module')
def desk_runs(tmp_path_factory):
    """seed -> (config, eval table) after synth + train --baseline specialized + eval."""
    runs = {}
    for seed in SEEDS:
        directory = tmp_path_factory.mktemp(f'desk{seed}')
        path = directory / 'experiment.json'
        path.write_text(json.dumps({'seed': seed}))
        cfg = load_config(str(path))
        cmd_synth(cfg)
        cmd_train(cfg, baseline='specialized')
        runs[seed] = (cfg, cmd_eval(cfg))
    return runs


def _mean_row(runs, row):
    return {d: float(np.mean([table['rows'][row][d] for _, table in runs.values()])) for d in TWEET_DOMAINS}


@slow
def test_frozen_core_and_heads_after_training(desk_runs):
    for cfg, _ in desk_runs.values():
        with open(os.path.join(cfg['paths']['reports_dir'], 'STATUS.json')) as f:
            assert json.load(f)['status'] == 'ok'
        cores = []
        for kind in cfg['adapter']['kinds']:
            reg, core = load_bundle(bundle_path(cfg, kind))
            assert core.frozen and all(h.frozen for h in reg.heads.values())
            cores.append([a.tobytes() for a in snapshot(core.parameters())])
        # router and both adapter kinds trained against the same frozen core
        assert all(c == cores[0] for c in cores)


@slow
def test_multi_domain_beats_general_and_tracks_specialized(desk_runs):
    general = _mean_row(desk_runs, 'general')
    multi = _mean_row(desk_runs, 'multi-prefix')
    specialized = _mean_row(desk_runs, 'specialized')
    for d in TWEET_DOMAINS:
        assert general[d] < multi[d], d
    assert np.mean([abs(multi[d] - specialized[d]) for d in TWEET_DOMAINS]) <= 0.05


def _ranks(values):
    order = np.argsort(values, kind='stable')
    ranks = np.empty(len(values))
    ranks[order] = np.arange(len(values))
    return ranks


@slow
def test_small_domains_gain_most_from_specialization(desk_runs):
    cfg, _ = desk_runs[SEEDS[0]]
    sizes = load_corpus(cfg['paths']['corpus_dir']).counts('train')
    general = _mean_row(desk_runs, 'general')
    specialized = _mean_row(desk_runs, 'specialized')
    size_ranks = _ranks([sizes[d] for d in TWEET_DOMAINS])
    gain_ranks = _ranks([specialized[d] - general[d] for d in TWEET_DOMAINS])
    assert np.corrcoef(size_ranks, gain_ranks)[0, 1] < 0


@slow
def test_context_flip(desk_runs):
    cfg, _ = desk_runs[SEEDS[0]]
    reg, core = load_bundle(bundle_path(cfg, 'prefix'))
    corpus = load_corpus(cfg['paths']['corpus_dir'])
    tokens = [list(CONTEXT_FLIP_SENTENCE)]
    gold = {'news': ('B-ORG', 'I-ORG'), 'econ': ('B-ORG', 'I-ORG'), 'it': ('B-ORG', 'I-ORG'),
            'travel': ('B-LOC', 'I-LOC')}

    def entity_tags(domain):
        _, adapter, head = resolve(reg, domain)
        return tuple(predict_tags(core, adapter, head, TWEETS9, reg.tokenizer, tokens, 512)[0][-2:])

    assert sum(entity_tags(d) == gold[d] for d in ('news', 'econ', 'it')) >= 2
    assert entity_tags('travel') == gold['travel']

    general = load_tagger(os.path.join(cfg['paths']['baselines_dir'], 'general-tweets9.mbt'))

    def general_tags(domain):
        context = list(corpus.sentences('train', [domain])[0].tokens)
        tagged = predict_tags(general.core, None, general.heads[TWEETS9.id], TWEETS9, general.tokenizer,
                              [context] + tokens, 512)
        return tuple(tagged[1][-2:])

    # one reading whatever domain text surrounds it
    readings = {general_tags(d) for d in gold}
    assert len(readings) == 1
    general_span = readings.pop()
    misread = [d for d in gold if general_span != gold[d]]
    assert misread
    assert any(entity_tags(d) == gold[d] for d in misread)


@slow
def test_domain_fine_tunes_stop_within_ten_epochs(desk_runs):
    for cfg, _ in desk_runs.values():
        with open(os.path.join(cfg['paths']['reports_dir'], 'train_reports.json')) as f:
            reports = json.load(f)
        finetunes = [r for key, r in reports.items() if '/finetune/' in key]
        assert len(finetunes) == 12 * len(cfg['adapter']['kinds'])
        assert all(r['stopped_epoch'] <= 10 for r in finetunes)


# ========== ROUTER ==========

def _router_setup(domains, seed, scale=1.0):
    corpus = generate_synthetic(spec_from_config({'preset': 'desk', 'scale': scale, 'only': domains}, seed))
    tokenizer = Tokenizer.build(corpus.sentences('train'))
    core = CoreModel.initialize(EncoderConfig(vocab_size=tokenizer.size, d_model=32, n_heads=2, d_ff=64),
                                make_rng(seed, 'core'))
    pretrain_core(core, corpus, TrainConfig(lr=3e-3, max_epochs=3, seed=seed), tokenizer, None)
    freeze_core(core)
    router, _ = train_router(core, corpus, RouterConfig(group_size=8, max_tokens=512),
                             TrainConfig(lr=1e-2, max_epochs=6, seed=seed), tokenizer)
    return core, router, tokenizer, corpus


@slow
@pytest.mark.parametrize('domains,threshold', [
    (['news', 'sport'], 0.99),
    (TWEET_DOMAINS[:8], 0.90),
])
def test_router_group_accuracy(domains, threshold):
    core, router, tokenizer, corpus = _router_setup(domains, 13)
    assert group_accuracy(core, router, tokenizer, corpus, 'dev') >= threshold


@slow
def test_larger_groups_route_better():
    by_k = {1: [], 8: []}
    for seed in range(5):
        core, router, tokenizer, corpus = _router_setup(TWEET_DOMAINS[:8], seed, scale=0.25)
        for k in by_k:
            by_k[k].append(group_accuracy(core, router, tokenizer, corpus, 'dev', group_size=k))
    assert np.mean(by_k[8]) >= np.mean(by_k[1])
