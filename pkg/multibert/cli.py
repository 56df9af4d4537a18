"""
Command-line surface: synth, train, tag, eval, gridsearch.

Standard output carries only command payloads (tagged CoNLL, F1 tables);
status lines, warnings and progress bars go to standard error.
"""
import argparse
import json
import os
import sys
from collections import OrderedDict
from typing import Dict, List, Optional, Sequence, Tuple

from .adapters import hyper_from_config, init_adapter
from .config import bundle_path, fail, info, load_config, status, warn
from .data import Tokenizer, format_conll, generate_synthetic, load_corpus, parse_tokens, spec_from_config, write_corpus
from .encoder import CoreModel, EncoderConfig, freeze_core, pretrain_core
from .errors import ContractError, DataError, MultibertError
from .heads_registry import (
    DomainRegistry, load_bundle, load_tagger, register_domain, resolve, save_bundle, save_tagger,
)
from .router import RouterConfig, records_to_jsonl, route_and_tag, train_router
from .tensor import make_rng, snapshot
from .training import (
    GridSpec, TrainConfig, evaluate_registry, evaluate_tagger, finetune_domain, grid_search, pooled_domains,
    pooled_objective, predict_tags, pretrain_pooled, train_general_baseline, train_specialized_baseline,
)

COMMANDS = ('synth', 'train', 'tag', 'eval', 'gridsearch')
BASELINES = ('general', 'specialized')
TAGGER_EXT = '.mbt'


# ========== HELPERS ==========

def write_json(path: str, data) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def _train_cfg(cfg: Dict, section: str) -> TrainConfig:
    block = cfg['router']['training'] if section == 'router' else cfg[section]
    return TrainConfig.from_section(block, cfg['seed'], cfg['encoder']['max_seq_len'])


def _router_cfg(cfg: Dict) -> RouterConfig:
    return RouterConfig.from_dict(cfg['router'])


def _baseline_path(cfg: Dict, name: str) -> str:
    return os.path.join(cfg['paths']['baselines_dir'], f'{name}{TAGGER_EXT}')


def _bundle_for(cfg: Dict, kind: Optional[str], bundle: Optional[str]) -> str:
    if bundle:
        return bundle
    return bundle_path(cfg, kind or cfg['adapter']['kinds'][0])


def _bytes_of(tensors) -> List[bytes]:
    return [arr.tobytes() for arr in snapshot(tensors)]


def _tagging_bytes(registries) -> List[bytes]:
    """Bytes of every adapter and head across the registries, in registry order."""
    out: List[bytes] = []
    for reg in registries.values():
        for adapter in reg.adapters.values():
            out.extend(_bytes_of(adapter.parameters()))
        for head in reg.heads.values():
            out.extend(_bytes_of(head.parameters()))
    return out


# ========== SYNTH ==========

def cmd_synth(cfg: Dict) -> List[str]:
    """Generate the synthetic corpus and write one CoNLL file per domain plus a manifest."""
    spec = spec_from_config(cfg['synthetic'], cfg['seed'])
    corpus = generate_synthetic(spec)
    paths = write_corpus(corpus, cfg['paths']['corpus_dir'], spec)
    info(f"Corpus sizes: {corpus.counts()}")
    return paths


# ========== TRAIN ==========

class _TrainRun:
    """Phase bookkeeping for cmd_train so a failure can be reported and marked."""

    def __init__(self, cfg: Dict):
        self.cfg = cfg
        self.phase = 'setup'
        self.reports: 'OrderedDict[str, Dict]' = OrderedDict()
        self.written: List[str] = []

    def record(self, key: str, report):
        self.reports[key] = report.to_dict()

    def mark_failed(self, message: str):
        for path in self.written:
            if os.path.exists(path):
                os.replace(path, path + '.partial')
                warn(f"partial output kept as {path}.partial")
        write_json(os.path.join(self.cfg['paths']['reports_dir'], 'STATUS.json'),
                   {'status': 'failed', 'phase': self.phase, 'message': message, 'written': self.written})


def _train_registry(run: _TrainRun, kind: str, core: CoreModel, corpus, tokenizer: Tokenizer) -> DomainRegistry:
    cfg = run.cfg
    hyper = hyper_from_config(cfg['adapter'])
    reg = DomainRegistry(core.config, kind, hyper, cfg['seed'])
    reg.core, reg.tokenizer = core, tokenizer
    for domain in corpus.domains:
        register_domain(reg, domain, corpus.scheme_for(domain))

    pooled_cfg, finetune_cfg = _train_cfg(cfg, 'pooled_training'), _train_cfg(cfg, 'finetune')
    mode = cfg['pooling_mode']
    for scheme_id in list(reg.schemes):
        domains = reg.domains_for_scheme(scheme_id)
        head = reg.head_for_scheme(scheme_id)
        if mode == 'exclude-target' and len(domains) < 2:
            warn(f"scheme '{scheme_id}' has a single domain; pooling over it instead of excluding it")
        shared = None
        for domain in domains:
            if shared is None or mode == 'exclude-target':
                run.phase = f'{kind}/pooled/{scheme_id}' + (f'/{domain}' if mode == 'exclude-target' else '')
                rng = make_rng(cfg['seed'], 'pooled', kind, scheme_id, domain)
                shared = init_adapter(kind, core.config, hyper, rng=rng, adapter_id=f'pooled-{scheme_id}')
                use_mode = mode if len(domains) > 1 else 'all'
                run.record(run.phase, pretrain_pooled(core, shared, head, corpus, domains, pooled_cfg, tokenizer,
                                                      use_mode, target=domain))
                head.freeze()
            run.phase = f'{kind}/finetune/{domain}'
            head_bytes = _bytes_of(head.parameters())
            adapter_id, _ = reg.domains[domain]
            adapter, report = finetune_domain(core, shared, head, corpus, domain, finetune_cfg, tokenizer,
                                              new_id=adapter_id)
            if _bytes_of(head.parameters()) != head_bytes:
                raise ContractError(f"head '{head.id}' changed while fine-tuning '{domain}'")
            reg.replace_adapter(domain, adapter)
            run.record(run.phase, report)
    return reg


def _train_baselines(run: _TrainRun, baseline: str, pretrained: CoreModel, core_heads: Dict, corpus,
                     tokenizer: Tokenizer) -> List[str]:
    cfg = run.cfg
    baseline_cfg = _train_cfg(cfg, 'baseline_training')
    written = []
    os.makedirs(cfg['paths']['baselines_dir'], exist_ok=True)
    schemes = OrderedDict((corpus.scheme_for(d).id, None) for d in corpus.domains)
    for scheme_id in schemes:
        domains = corpus.domains_for_scheme(scheme_id)
        run.phase = f'baseline/general/{scheme_id}'
        general = train_general_baseline(pretrained.copy(frozen=False), corpus, baseline_cfg, tokenizer,
                                         domains, heads=core_heads)
        for report in general.reports:
            run.record(run.phase, report)
        path = _baseline_path(cfg, general.name)
        save_tagger(general, path)
        written.append(path)
        if baseline != 'specialized':
            continue
        for domain in domains:
            run.phase = f'baseline/specialized/{domain}'
            model = train_specialized_baseline(None, corpus, domain, baseline_cfg, tokenizer, domains, general=general)
            run.record(run.phase, model.reports[-1])
            path = _baseline_path(cfg, model.name)
            save_tagger(model, path)
            written.append(path)
    return written


def cmd_train(cfg: Dict, baseline: Optional[str] = None) -> List[str]:
    """
    End-to-end training: core pre-training and freeze, per adapter kind the
    pooled phase and every domain fine-tune, then the router; one bundle per
    kind, written once the router is in place.
    """
    run = _TrainRun(cfg)
    try:
        return _run_train(run, baseline)
    except (MultibertError, OSError) as e:
        run.mark_failed(str(e))
        raise


def _run_train(run: _TrainRun, baseline: Optional[str]) -> List[str]:
    cfg = run.cfg
    if baseline is not None and baseline not in BASELINES:
        raise ContractError(f"--baseline must be one of {list(BASELINES)}, got '{baseline}'")
    run.phase = 'load-corpus'
    corpus = load_corpus(cfg['paths']['corpus_dir'])
    tokenizer = Tokenizer.build(corpus.sentences('train'))
    config = EncoderConfig(vocab_size=tokenizer.size, **cfg['encoder'])
    info(f"Vocabulary: {tokenizer.size} words, domains: {len(corpus.domains)}")

    run.phase = 'core'
    core = CoreModel.initialize(config, make_rng(cfg['seed'], 'core'))
    core_heads: Dict = {}
    run.record('core', pretrain_core(core, corpus, _train_cfg(cfg, 'core_training'), tokenizer, None, core_heads))
    pretrained = core.copy(frozen=False)
    freeze_core(core)
    core_bytes = _bytes_of(core.parameters())
    status(f"Core pre-trained and frozen ({core.num_params} parameters)")

    registries = OrderedDict()
    for kind in cfg['adapter']['kinds']:
        registries[kind] = _train_registry(run, kind, core, corpus, tokenizer)
        if _bytes_of(core.parameters()) != core_bytes:
            raise ContractError("core weights changed during adapter training")

    run.phase = 'router'
    tagging_bytes = _tagging_bytes(registries)
    router, report = train_router(core, corpus, _router_cfg(cfg), _train_cfg(cfg, 'router'), tokenizer)
    run.record('router', report)
    if _tagging_bytes(registries) != tagging_bytes:
        raise ContractError("router training changed tagging parameters")

    for kind, reg in registries.items():
        run.phase = f'{kind}/save'
        if _bytes_of(core.parameters()) != core_bytes:
            raise ContractError("core weights changed during router training")
        reg.router = router
        path = bundle_path(cfg, kind)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        save_bundle(reg, core, path)
        run.written.append(path)
        status(f"Saved {kind} bundle: {len(reg.domains)} domains, {len(reg.heads)} heads -> {path}")

    if baseline is not None:
        run.written.extend(_train_baselines(run, baseline, pretrained, core_heads, corpus, tokenizer))

    run.phase = 'reports'
    reports_dir = cfg['paths']['reports_dir']
    write_json(os.path.join(reports_dir, 'train_reports.json'), run.reports)
    write_json(os.path.join(reports_dir, 'STATUS.json'), {'status': 'ok', 'written': run.written})
    return run.written


# ========== TAG ==========

def cmd_tag(cfg: Dict, text: str, domain: Optional[str] = None, route: bool = False,
            kind: Optional[str] = None, bundle: Optional[str] = None) -> Tuple[str, List[Dict]]:
    """Tag CoNLL-style input (tag column optional); returns (tagged CoNLL, routing records)."""
    if bool(domain) == bool(route):
        raise ContractError("tag needs exactly one of --domain D or --route")
    reg, _ = load_bundle(_bundle_for(cfg, kind, bundle))
    sentences = parse_tokens(text)
    max_len = reg.config.max_seq_len
    records: List[Dict] = []
    if route:
        tags, records = route_and_tag(reg, None, sentences, max_len=max_len)
    else:
        core, adapter, head = resolve(reg, domain)
        tags = predict_tags(core, adapter, head, reg.scheme_for(domain), reg.tokenizer, sentences, max_len)
    return format_conll(zip(sentences, tags)), records


# ========== EVAL ==========

def _percent(value: Optional[float]) -> str:
    return '-' if value is None else f'{100 * value:.2f}'


def render_table(table: Dict) -> str:
    """Aligned text rendering: rows = models, columns = domains (F1 in %)."""
    columns = table['columns']
    header = ['model'] + columns
    lines = [header] + [[name] + [_percent(row.get(d)) for d in columns] for name, row in table['rows'].items()]
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    return ''.join('  '.join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() + '\n' for line in lines)


def cmd_eval(cfg: Dict, split: str = 'test', bundle: Optional[str] = None) -> Dict:
    """Per-domain entity F1 for every model found: general, specialized, multi-<kind>."""
    corpus = load_corpus(cfg['paths']['corpus_dir'])
    domains = corpus.domains
    max_len = cfg['encoder']['max_seq_len']
    rows: 'OrderedDict[str, Dict[str, float]]' = OrderedDict()

    general_row = {}
    for scheme_id in OrderedDict((corpus.scheme_for(d).id, None) for d in domains):
        path = _baseline_path(cfg, f'general-{scheme_id}')
        if os.path.exists(path):
            model = load_tagger(path)
            scores = evaluate_tagger(model, corpus, split, max_len=max_len)
            general_row.update({d: s['f1'] for d, s in scores['domains'].items()})
    if general_row:
        rows['general'] = general_row

    specialized_row = {}
    for domain in domains:
        path = _baseline_path(cfg, f'specialized-{domain}')
        if os.path.exists(path):
            scores = evaluate_tagger(load_tagger(path), corpus, split, [domain], max_len)
            specialized_row[domain] = scores['domains'][domain]['f1']
    if specialized_row:
        rows['specialized'] = specialized_row

    paths = [(None, bundle)] if bundle else [(k, bundle_path(cfg, k)) for k in cfg['adapter']['kinds']]
    for kind, path in paths:
        if not os.path.exists(path):
            warn(f"no bundle at {path}; skipping")
            continue
        reg, _ = load_bundle(path)
        scores = evaluate_registry(reg, corpus, split, max_len=max_len)
        rows[f'multi-{kind or reg.adapter_kind}'] = {d: s['f1'] for d, s in scores['domains'].items()}
    if not rows:
        raise DataError("nothing to evaluate: no bundle or baseline model found (run train first)")

    table = {'split': split, 'columns': domains, 'rows': rows}
    write_json(os.path.join(cfg['paths']['reports_dir'], f'eval_{split}.json'), table)
    return table


# ========== GRID SEARCH ==========

def cmd_gridsearch(cfg: Dict, kind: Optional[str] = None, bundle: Optional[str] = None) -> Dict:
    """Coarse-to-fine search of adapter hyperparameters against pooled-phase dev F1."""
    corpus = load_corpus(cfg['paths']['corpus_dir'])
    results = OrderedDict()
    for k in ([kind] if kind else cfg['adapter']['kinds']):
        reg, core = load_bundle(_bundle_for(cfg, k, bundle))
        schemes = OrderedDict((corpus.scheme_for(d).id, corpus.domains_for_scheme(corpus.scheme_for(d).id))
                              for d in corpus.domains)
        scheme_id = cfg['grid'].get('scheme') or max(schemes, key=lambda s: len(schemes[s]))
        domains = pooled_domains(schemes[scheme_id])
        spec = GridSpec.from_dict(cfg['grid'][k])
        objective = pooled_objective(core, corpus, reg.tokenizer, k, domains, _train_cfg(cfg, 'pooled_training'),
                                     hyper_from_config(cfg['adapter']))
        result = grid_search(objective, spec)
        results[k] = dict(result.to_dict(), scheme=scheme_id)
        write_json(os.path.join(cfg['paths']['reports_dir'], f'grid_{k}.json'), results[k])
        status(f"{k}: best {result.best} (dev F1 {result.best_score:.4f})")
    return results


# ========== ENTRY POINT ==========

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='multibert',
        description='Multi-domain tagging with one frozen core and per-domain adapters',
    )
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', help='Experiment config (JSON); defaults apply when omitted')
    parser.add_argument('--seed', type=int, help='Override the config seed')
    parser.add_argument('--domain', help='tag: domain whose adapter and head to use')
    parser.add_argument('--route', action='store_true', help='tag: detect the domain of each group of inputs')
    parser.add_argument('--baseline', choices=BASELINES, help='train: also train baseline models')
    parser.add_argument('--input', default='-', help="tag: input file ('-' for standard input)")
    parser.add_argument('--bundle', help='Bundle path (overrides the config)')
    parser.add_argument('--kind', choices=('lora', 'prefix'), help='Adapter kind of the bundle to use')
    parser.add_argument('--split', default='test', choices=('train', 'dev', 'test'), help='eval: split to score')
    return parser


def _read_input(path: str) -> str:
    if path == '-':
        return sys.stdin.read()
    with open(path, 'r', encoding='utf-8') as f:
        return f.read()


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed)
        if args.command == 'synth':
            cmd_synth(cfg)
        elif args.command == 'train':
            cmd_train(cfg, args.baseline)
        elif args.command == 'tag':
            text, records = cmd_tag(cfg, _read_input(args.input), args.domain, args.route, args.kind, args.bundle)
            sys.stdout.write(text)
            if records:
                path = os.path.join(cfg['paths']['reports_dir'], 'routing.jsonl')
                os.makedirs(os.path.dirname(path), exist_ok=True)
                with open(path, 'w', encoding='utf-8', newline='\n') as f:
                    f.write(records_to_jsonl(records))
                status(f"Routing records written to {path}")
        elif args.command == 'eval':
            sys.stdout.write(render_table(cmd_eval(cfg, args.split, args.bundle)))
        elif args.command == 'gridsearch':
            cmd_gridsearch(cfg, args.kind, args.bundle)
    except (MultibertError, OSError) as e:
        fail(str(e))
        return 1
    return 0
