"""
Training procedures, baselines, decoding, entity-level F1 and grid search.

Multi-adapter training has two phases per label scheme:
    1. pretrain_pooled  - one adapter + the scheme's head on pooled domain data
    2. finetune_domain  - a replica of that adapter per domain, head frozen
The core is frozen throughout. Baselines fine-tune full copies of the core.
"""
import itertools
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .adapters import AdapterSet, init_adapter, replicate, trainable_params
from .config import POOLING_MODES, debug, info, progress
from .data import Corpus, Sentence, Tokenizer, encode, encode_tokens, pad_batch, repair_bio, spans
from .encoder import CoreModel, forward_batch
from .errors import ContractError, DataError, ParameterError
from .heads_registry import ClassifierHead, DomainRegistry, LabelScheme, TaggerModel, init_head, resolve
from .tensor import (
    IGNORE_INDEX, Adam, Tape, backward, cross_entropy, make_rng, no_grad, reshape, restore, snapshot,
)


# ========== CONFIG & REPORTS ==========

@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-4
    max_epochs: int = 10
    patience: int = 2
    seed: int = 0
    eval_every: int = 1
    max_len: int = 512

    def __post_init__(self):
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        # lr == 0 is a dry run (weights stay put)
        if self.lr < 0:
            raise ParameterError(f"lr must be >= 0, got {self.lr}")
        if self.max_epochs < 1:
            raise ParameterError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ParameterError(f"patience must be >= 1, got {self.patience}")
        if self.eval_every < 1:
            raise ParameterError(f"eval_every must be >= 1, got {self.eval_every}")

    @classmethod
    def from_section(cls, section: Mapping, seed: int, max_len: int = 512) -> 'TrainConfig':
        return cls(
            batch_size=int(section.get('batch_size', 16)),
            lr=float(section.get('lr', 1e-4)),
            max_epochs=int(section.get('max_epochs', 10)),
            patience=int(section.get('patience', 2)),
            seed=seed,
            eval_every=int(section.get('eval_every', 1)),
            max_len=max_len,
        )


@dataclass
class TrainReport:
    name: str
    max_epochs: int
    epochs: List[Dict] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    best_dev_f1: Optional[float] = None
    elapsed: float = 0.0
    # what dev_f1 holds: entity F1 for taggers, group accuracy for the router
    metric: str = 'entity_f1'

    @property
    def train_losses(self) -> List[float]:
        return [e['train_loss'] for e in self.epochs]

    @property
    def dev_f1(self) -> List[Optional[float]]:
        return [e['dev_f1'] for e in self.epochs]

    def to_dict(self) -> Dict:
        # wall-clock time stays out of artifacts so reruns are byte-identical
        return {
            'name': self.name,
            'max_epochs': self.max_epochs,
            'epochs': self.epochs,
            'stopped_epoch': self.stopped_epoch,
            'best_epoch': self.best_epoch,
            'best_dev_f1': self.best_dev_f1,
            'metric': self.metric,
        }


# ========== BATCHING & THE EPOCH LOOP ==========

def _epoch_batches(groups: Mapping[str, int], batch_size: int, rng: np.random.Generator):
    """Shuffled batches of row indices, each drawn from a single group (label scheme)."""
    batches = []
    for key, n in groups.items():
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batches.append((key, order[start:start + batch_size]))
    return [batches[i] for i in rng.permutation(len(batches))]


def _batch_logits(core: CoreModel, adapter, head: ClassifierHead, rows) -> Tuple:
    ids, mask = pad_batch([r[0] for r in rows])
    labels, _ = pad_batch([r[1] for r in rows], fill=IGNORE_INDEX)
    logits = head.logits(forward_batch(core, ids, mask, adapter=adapter))
    batch, length, n_tags = logits.shape
    return reshape(logits, (batch * length, n_tags)), labels.reshape(-1)


def run_epochs(name: str, params: Sequence, groups: Mapping[str, int], loss_fn: Callable,
               evaluate: Callable, cfg: TrainConfig, rng: np.random.Generator,
               metric: str = 'entity_f1') -> TrainReport:
    """
    Adam over params with early stopping on dev F1.

    The best checkpoint (by dev F1) is restored at the end; without a dev split
    the last epoch is kept.
    """
    params = [p for p in params if p.requires_grad and p.size > 0]
    optimizer = Adam(params, cfg.lr)
    report = TrainReport(name=name, max_epochs=cfg.max_epochs, metric=metric)
    best_state, bad_epochs = None, 0
    started = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for key, idx in progress(_epoch_batches(groups, cfg.batch_size, rng), desc=f'{name} epoch {epoch}'):
            with Tape() as tape:
                loss = loss_fn(key, idx)
                backward(loss, tape)
            losses.append(loss.item())
            active = [p for p in params if p.grad is not None]
            if active:
                optimizer.params = active
                optimizer.step()
        entry = {'epoch': epoch, 'train_loss': float(np.mean(losses)) if losses else None, 'dev_f1': None}
        report.stopped_epoch = epoch

        if epoch % cfg.eval_every == 0 or epoch == cfg.max_epochs:
            f1 = evaluate()
            entry['dev_f1'] = f1
            if f1 is not None:
                if report.best_dev_f1 is None or f1 > report.best_dev_f1:
                    report.best_dev_f1, report.best_epoch, bad_epochs = f1, epoch, 0
                    best_state = snapshot(params)
                else:
                    bad_epochs += 1
        report.epochs.append(entry)
        debug('train', f"{name} epoch {epoch}: loss={entry['train_loss']} dev_f1={entry['dev_f1']}")
        if bad_epochs >= cfg.patience:
            break

    if best_state is not None:
        restore(params, best_state)
    else:
        report.best_epoch = report.stopped_epoch
    report.elapsed = time.perf_counter() - started
    best = f"{report.best_dev_f1:.4f}" if report.best_dev_f1 is not None else 'n/a'
    info(f"{name}: stopped at epoch {report.stopped_epoch}, best epoch {report.best_epoch} "
         f"(dev {metric} {best}) [{report.elapsed:.1f}s]")
    return report


# ========== DECODING & EVALUATION ==========

def predict_tags(core: CoreModel, adapter, head: ClassifierHead, scheme: LabelScheme, tokenizer: Tokenizer,
                 token_lists: Sequence[Sequence[str]], max_len: int = 512, batch_size: int = 64) -> List[List[str]]:
    """
    Argmax tag per token followed by BIO repair.

    Tokens past max_len are not seen by the encoder and are tagged O so every
    input token still gets exactly one tag.
    """
    if head.n_tags != scheme.size:
        raise ContractError(f"head '{head.id}' has {head.n_tags} outputs, scheme '{scheme.id}' has {scheme.size} tags")
    out = []
    with no_grad():
        for start in range(0, len(token_lists), batch_size):
            chunk = token_lists[start:start + batch_size]
            ids, mask = pad_batch([encode_tokens(tokenizer, tokens, max_len)[0] for tokens in chunk])
            best = head.logits(forward_batch(core, ids, mask, adapter=adapter)).data.argmax(axis=-1)
            for row, tokens in enumerate(chunk):
                n = min(len(tokens), max_len)
                tags, _ = repair_bio([scheme.tags[i] for i in best[row, 1:n + 1]])
                out.append(tags + ['O'] * (len(tokens) - n))
    return out


def prf(correct: int, n_pred: int, n_gold: int) -> Dict:
    """Precision / recall / F1; a domain with no gold and no predicted entities scores 1."""
    if n_pred == 0 and n_gold == 0:
        precision = recall = f1 = 1.0
    else:
        precision = correct / n_pred if n_pred else 0.0
        recall = correct / n_gold if n_gold else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {'precision': precision, 'recall': recall, 'f1': f1,
            'correct': correct, 'predicted': n_pred, 'gold': n_gold}


def entity_f1(gold: Sequence[Sentence], pred: Sequence[Sequence[str]]) -> Dict:
    """Exact-span entity scores per domain plus the micro average over all sentences."""
    if len(gold) != len(pred):
        raise ContractError(f"entity_f1: {len(gold)} gold sentences but {len(pred)} predictions")
    counts: 'OrderedDict[str, List[int]]' = OrderedDict()
    for i, (sentence, tags) in enumerate(zip(gold, pred)):
        if len(tags) != len(sentence.labels):
            raise ContractError(
                f"entity_f1: sentence {i} has {len(sentence.labels)} gold tags but {len(tags)} predicted"
            )
        gold_spans, pred_spans = set(spans(sentence.labels)), set(spans(tags))
        c = counts.setdefault(sentence.domain, [0, 0, 0])
        c[0] += len(gold_spans & pred_spans)
        c[1] += len(pred_spans)
        c[2] += len(gold_spans)
    totals = [sum(c[k] for c in counts.values()) for k in range(3)]
    return {'domains': OrderedDict((d, prf(*c)) for d, c in counts.items()), 'micro': prf(*totals)}


def _predict_sentences(core: CoreModel, adapter, heads: Mapping[str, ClassifierHead],
                       schemes: Mapping[str, LabelScheme], tokenizer: Tokenizer,
                       sentences: Sequence[Sentence], max_len: int) -> List[List[str]]:
    """Predictions aligned with `sentences`; the head is picked by each sentence's scheme."""
    out: List[Optional[List[str]]] = [None] * len(sentences)
    for scheme_id, head in heads.items():
        idx = [i for i, s in enumerate(sentences) if s.scheme_id == scheme_id]
        if not idx:
            continue
        tags = predict_tags(core, adapter, head, schemes[scheme_id], tokenizer,
                            [sentences[i].tokens for i in idx], max_len)
        for i, t in zip(idx, tags):
            out[i] = t
    missing = [sentences[i].scheme_id for i, t in enumerate(out) if t is None]
    if missing:
        raise ContractError(f"no head for scheme(s) {sorted(set(missing))}")
    return out


def evaluate_tagger(model: TaggerModel, corpus: Corpus, split: str = 'test',
                    domains: Optional[Sequence[str]] = None, max_len: int = 512) -> Dict:
    domains = list(domains or model.domains)
    sentences = corpus.sentences(split, domains)
    for d in domains:
        if corpus.scheme_for(d).id not in model.heads:
            raise ContractError(f"model '{model.name}' has no head for the scheme of domain '{d}'")
    pred = _predict_sentences(model.core, None, model.heads, model.schemes, model.tokenizer, sentences, max_len)
    return entity_f1(sentences, pred)


def evaluate_registry(reg: DomainRegistry, corpus: Corpus, split: str = 'test',
                      domains: Optional[Sequence[str]] = None, max_len: int = 512) -> Dict:
    """Every domain tagged with its own adapter and head."""
    domains = list(domains or [d for d in reg.domains if d in corpus.schemes])
    gold, pred = [], []
    for domain in domains:
        core, adapter, head = resolve(reg, domain)
        scheme = reg.scheme_for(domain)
        if corpus.scheme_for(domain).tags != scheme.tags:
            raise ContractError(f"domain '{domain}': corpus scheme differs from the registered scheme '{scheme.id}'")
        sentences = corpus.sentences(split, [domain])
        gold.extend(sentences)
        pred.extend(predict_tags(core, adapter, head, scheme, reg.tokenizer, [s.tokens for s in sentences], max_len))
    return entity_f1(gold, pred)


def _dev_f1(core, adapter, heads, schemes, tokenizer, sentences, max_len) -> Optional[float]:
    if not sentences:
        return None
    pred = _predict_sentences(core, adapter, heads, schemes, tokenizer, sentences, max_len)
    return entity_f1(sentences, pred)['micro']['f1']


# ========== FULL-MODEL TRAINING (core pre-training, baselines) ==========

def _scheme_map(corpus: Corpus, domains: Sequence[str], schemes=None) -> 'OrderedDict[str, LabelScheme]':
    found = OrderedDict()
    for d in domains:
        scheme = corpus.scheme_for(d)
        found.setdefault(scheme.id, scheme)
    if schemes:
        given = schemes.values() if isinstance(schemes, Mapping) else schemes
        by_id = {s.id: s for s in given}
        for sid, scheme in found.items():
            if sid in by_id and by_id[sid].tags != scheme.tags:
                raise ContractError(f"scheme '{sid}' differs between the corpus and the given schemes")
    return found


def fit_token_classifier(model: CoreModel, corpus: Corpus, cfg: TrainConfig, tokenizer: Tokenizer,
                         schemes=None, heads: Optional[Dict[str, ClassifierHead]] = None,
                         name: str = 'core', domains: Optional[Sequence[str]] = None) -> TrainReport:
    """
    Train an unfrozen core plus one head per label scheme on the pooled training split.

    `heads` (scheme id -> head) is filled with fresh heads for schemes it lacks
    and trained in place.
    """
    if model.frozen:
        raise ContractError(f"{name}: the core is frozen; full-model training needs an unfrozen copy")
    domains = list(domains or corpus.domains)
    train = corpus.sentences('train', domains)
    if not train:
        raise DataError(f"{name}: empty corpus (no training sentences for {domains})")
    scheme_map = _scheme_map(corpus, domains, schemes)
    heads = {} if heads is None else heads
    for sid, scheme in scheme_map.items():
        if sid not in heads:
            heads[sid] = init_head(f'head-{sid}', sid, model.config.d_model, scheme.size,
                                   make_rng(cfg.seed, 'head', name, sid))
        elif heads[sid].frozen:
            raise ContractError(f"{name}: head for scheme '{sid}' is frozen")

    encoded = {sid: [] for sid in scheme_map}
    for s in train:
        encoded[s.scheme_id].append(encode(tokenizer, s, cfg.max_len, scheme_map[s.scheme_id]))

    def loss_fn(sid, idx):
        logits, targets = _batch_logits(model, None, heads[sid], [encoded[sid][i] for i in idx])
        return cross_entropy(logits, targets)

    dev = corpus.sentences('dev', domains)
    active_heads = {sid: heads[sid] for sid in scheme_map}
    params = model.trainable() + [p for h in active_heads.values() for p in h.parameters()]
    return run_epochs(
        name, params, {sid: len(rows) for sid, rows in encoded.items() if rows}, loss_fn,
        lambda: _dev_f1(model, None, active_heads, scheme_map, tokenizer, dev, cfg.max_len),
        cfg, make_rng(cfg.seed, 'train', name),
    )


def single_scheme(corpus: Corpus, domains: Sequence[str]) -> LabelScheme:
    """The one scheme shared by all domains; ContractError on a mix."""
    if not domains:
        raise DataError("no domains given")
    schemes = _scheme_map(corpus, domains)
    if len(schemes) != 1:
        raise ContractError(f"domains {list(domains)} mix label schemes {list(schemes)}; "
                            "one model cannot emit two output formats")
    return next(iter(schemes.values()))


def train_general_baseline(core_copy: CoreModel, corpus: Corpus, cfg: TrainConfig, tokenizer: Tokenizer,
                           domains: Optional[Sequence[str]] = None,
                           heads: Optional[Dict[str, ClassifierHead]] = None,
                           name: Optional[str] = None) -> TaggerModel:
    """One fully fine-tuned model over the concatenation of all domains of one scheme."""
    domains = list(domains or corpus.domains)
    scheme = single_scheme(corpus, domains)
    start = {scheme.id: heads[scheme.id].copy()} if heads and scheme.id in heads else {}
    for head in start.values():
        head.unfreeze()
    name = name or f'general-{scheme.id}'
    report = fit_token_classifier(core_copy, corpus, cfg, tokenizer, [scheme], start, name, domains)
    return TaggerModel(name, core_copy, start, OrderedDict([(scheme.id, scheme)]), tokenizer, domains, [report])


def train_specialized_baseline(core_copy: Optional[CoreModel], corpus: Corpus, target_domain: str,
                               cfg: TrainConfig, tokenizer: Tokenizer,
                               domains: Optional[Sequence[str]] = None,
                               general: Optional[TaggerModel] = None,
                               heads: Optional[Dict[str, ClassifierHead]] = None) -> TaggerModel:
    """
    Two-stage full fine-tune: pooled over the scheme's domains, then the target only.

    Pass an already trained `general` model to share the pooled stage between
    targets; it is copied, never modified.
    """
    scheme = corpus.scheme_for(target_domain)
    domains = list(domains or corpus.domains_for_scheme(scheme.id))
    if target_domain not in domains:
        raise ContractError(f"target domain '{target_domain}' is not among the pooled domains {domains}")
    single_scheme(corpus, domains)
    name = f'specialized-{target_domain}'
    if general is None:
        if core_copy is None:
            raise ContractError("train_specialized_baseline needs a core copy or a trained general model")
        model = train_general_baseline(core_copy, corpus, cfg, tokenizer, domains, heads, name=f'{name}/pooled')
    else:
        if scheme.id not in general.heads:
            raise ContractError(f"general model '{general.name}' has no head for scheme '{scheme.id}'")
        model = general.copy()
        model.reports = list(general.reports)
    model.name = name
    report = fit_token_classifier(model.core, corpus, cfg, tokenizer, [scheme], model.heads, name, [target_domain])
    model.domains = [target_domain]
    model.reports.append(report)
    return model


# ========== ADAPTER TRAINING (two phases) ==========

def _adapter_run(name: str, core: CoreModel, adapter: AdapterSet, head: ClassifierHead, scheme: LabelScheme,
                 corpus: Corpus, domains: Sequence[str], cfg: TrainConfig, tokenizer: Tokenizer,
                 phase: str, on_batch: Optional[Callable] = None) -> TrainReport:
    train = corpus.sentences('train', domains)
    if not train:
        raise DataError(f"{name}: no training sentences for {list(domains)}")
    rows = [encode(tokenizer, s, cfg.max_len, scheme) for s in train]

    def loss_fn(_, idx):
        if on_batch is not None:
            on_batch([train[i] for i in idx])
        logits, targets = _batch_logits(core, adapter, head, [rows[i] for i in idx])
        return cross_entropy(logits, targets)

    dev = corpus.sentences('dev', domains)
    return run_epochs(
        name, trainable_params(adapter, head, phase=phase), {scheme.id: len(rows)}, loss_fn,
        lambda: _dev_f1(core, adapter, {scheme.id: head}, {scheme.id: scheme}, tokenizer, dev, cfg.max_len),
        cfg, make_rng(cfg.seed, 'train', name),
    )


def pooled_domains(domains: Sequence[str], pooling_mode: str = 'all', target: Optional[str] = None) -> List[str]:
    if pooling_mode not in POOLING_MODES:
        raise ParameterError(f"pooling_mode must be one of {list(POOLING_MODES)}, got '{pooling_mode}'")
    if pooling_mode == 'all':
        return list(domains)
    if target is None:
        raise ParameterError("pooling_mode 'exclude-target' needs a target domain")
    return [d for d in domains if d != target]


def pretrain_pooled(core: CoreModel, adapter: AdapterSet, head: ClassifierHead, corpus: Corpus,
                    domains: Sequence[str], cfg: TrainConfig, tokenizer: Tokenizer,
                    pooling_mode: str = 'all', target: Optional[str] = None,
                    on_batch: Optional[Callable[[List[Sentence]], None]] = None) -> TrainReport:
    """
    Phase 1: train one adapter and the scheme's head on shuffled pooled data.

    A head that is already frozen stays untouched (adapter-only pre-training,
    used when each target domain gets its own pooled run). `on_batch` receives
    the sentences of every training batch (sampling checks).
    """
    if not core.frozen:
        raise ContractError("pretrain_pooled needs a frozen core; call freeze_core first")
    pooled = pooled_domains(domains, pooling_mode, target)
    scheme = single_scheme(corpus, pooled)
    if scheme.id != head.scheme_id or head.n_tags != scheme.size:
        raise ContractError(f"head '{head.id}' (scheme '{head.scheme_id}') does not match scheme '{scheme.id}'")
    report = _adapter_run(f'pooled:{scheme.id}', core, adapter, head, scheme, corpus, pooled, cfg, tokenizer,
                          'pretrain', on_batch)
    adapter.trained_on = f'pooled:{scheme.id}'
    return report


def finetune_domain(core: CoreModel, pooled_adapter: AdapterSet, head: ClassifierHead, corpus: Corpus,
                    domain: str, cfg: TrainConfig, tokenizer: Tokenizer, new_id: Optional[str] = None,
                    registry: Optional[DomainRegistry] = None) -> Tuple[AdapterSet, TrainReport]:
    """Phase 2: replicate the pooled adapter and fine-tune it on one domain; the head is frozen."""
    if not core.frozen:
        raise ContractError("finetune_domain needs a frozen core; call freeze_core first")
    if domain not in corpus.schemes:
        raise DataError(f"domain '{domain}' is not in the corpus (domains: {', '.join(corpus.domains)})")
    scheme = corpus.scheme_for(domain)
    if scheme.id != head.scheme_id or head.n_tags != scheme.size:
        raise ContractError(f"head '{head.id}' (scheme '{head.scheme_id}') does not match domain '{domain}'")
    head.freeze()
    replica = replicate(pooled_adapter, new_id or f'adapter-{domain}', registry, trained_on=f'domain:{domain}')
    report = _adapter_run(f'finetune:{domain}', core, replica, head, scheme, corpus, [domain], cfg, tokenizer,
                          'finetune')
    return replica, report


# ========== GRID SEARCH ==========

@dataclass
class GridSpec:
    """Inclusive integer ranges per hyperparameter, searched jointly."""
    params: Dict[str, Tuple[int, int]]
    step: int = 8
    radius: int = 7

    def validate(self) -> 'GridSpec':
        if not self.params:
            raise ParameterError("grid search needs at least one parameter range")
        for name, (lo, hi) in self.params.items():
            if lo > hi:
                raise ParameterError(f"grid range for '{name}' is empty: [{lo}, {hi}]")
        if self.step < 1:
            raise ParameterError(f"grid step must be >= 1, got {self.step}")
        if self.radius < 0:
            raise ParameterError(f"grid radius must be >= 0, got {self.radius}")
        return self

    def coarse_values(self, name: str) -> List[int]:
        lo, hi = self.params[name]
        return list(range(lo, hi + 1, self.step))

    def fine_values(self, name: str, center: int) -> List[int]:
        lo, hi = self.params[name]
        return list(range(max(lo, center - self.radius), min(hi, center + self.radius) + 1))

    @classmethod
    def from_dict(cls, data: Mapping) -> 'GridSpec':
        params = OrderedDict((k, (int(v[0]), int(v[1]))) for k, v in data['params'].items())
        return cls(params, int(data.get('step', 8)), int(data.get('radius', 7))).validate()


@dataclass
class GridResult:
    best: Dict[str, int]
    best_score: float
    table: List[Dict]

    def to_dict(self) -> Dict:
        return {'best': self.best, 'best_score': self.best_score, 'table': self.table}


def grid_search(objective: Callable[[Dict[str, int]], float], spec: GridSpec) -> GridResult:
    """
    Coarse pass at `step` over the joint grid, then every point within
    `radius` of the coarse argmax. Ties go to the smallest values (in
    parameter order). Each point is evaluated once.
    """
    spec.validate()
    names = list(spec.params)
    scores: Dict[Tuple[int, ...], float] = {}
    table: List[Dict] = []

    def run(points: Iterable[Tuple[int, ...]], stage: str):
        for point in points:
            if point in scores:
                continue
            hyper = dict(zip(names, point))
            scores[point] = float(objective(hyper))
            table.append({'hyper': hyper, 'score': scores[point], 'stage': stage})
            debug('grid_search', f"{stage} {hyper} -> {scores[point]:.4f}")

    def argmax(points):
        return min(points, key=lambda p: (-scores[p], p))

    coarse = list(itertools.product(*(spec.coarse_values(n) for n in names)))
    run(coarse, 'coarse')
    center = argmax(coarse)
    run(itertools.product(*(spec.fine_values(n, c) for n, c in zip(names, center))), 'fine')
    best = argmax(list(scores))
    return GridResult(dict(zip(names, best)), scores[best], table)


# config key -> adapter hyper key
_GRID_KEYS = {'prefix_length': 'prefix_length', 'lora_r': 'r', 'lora_alpha': 'alpha'}


def pooled_objective(core: CoreModel, corpus: Corpus, tokenizer: Tokenizer, kind: str,
                     domains: Sequence[str], cfg: TrainConfig,
                     base_hyper: Optional[Dict] = None) -> Callable[[Dict[str, int]], float]:
    """hyper -> best pooled-phase dev F1 of a fresh adapter and head (seeded per point)."""
    scheme = single_scheme(corpus, domains)

    def objective(hyper: Dict[str, int]) -> float:
        merged = dict(base_hyper or {})
        for key, value in hyper.items():
            if key not in _GRID_KEYS:
                raise ParameterError(f"unknown grid parameter '{key}'; choose from {list(_GRID_KEYS)}")
            merged[_GRID_KEYS[key]] = value
        point = tuple(f'{k}={v}' for k, v in sorted(hyper.items()))
        adapter = init_adapter(kind, core.config, merged, rng=make_rng(cfg.seed, 'grid', kind, *point),
                               adapter_id=f'grid-{kind}')
        head = init_head(f'grid-head-{scheme.id}', scheme.id, core.config.d_model, scheme.size,
                         make_rng(cfg.seed, 'grid-head', scheme.id))
        report = pretrain_pooled(core, adapter, head, corpus, domains, cfg, tokenizer)
        return report.best_dev_f1 if report.best_dev_f1 is not None else 0.0
    return objective
