"""
Document-based domain routing.

Consecutive inputs are concatenated into groups (at most k sentences, at
most max_tokens tokens), a dedicated adapter + linear head on the frozen
core classifies each group's domain from the [CLS] state, and every member
sentence is then tagged with that domain's adapter and head.
"""
import json
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .adapters import AdapterSet, init_adapter
from .config import debug, warn
from .data import Corpus, Sentence, Tokenizer, encode_tokens, pad_batch
from .encoder import CoreModel, forward_batch
from .errors import ContractError, DataError, InputError, ParameterError, RoutingError
from .heads_registry import ClassifierHead, DomainRegistry, init_head, resolve
from .tensor import cross_entropy, getitem, make_rng, no_grad, softmax
from .training import TrainConfig, TrainReport, predict_tags, run_epochs

ROUTER_SCHEME_ID = 'router'


@dataclass(frozen=True)
class RouterConfig:
    group_size: int = 8
    max_tokens: int = 512
    domains: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'domains', tuple(self.domains))
        if self.group_size < 1:
            raise ParameterError(f"group_size must be >= 1, got {self.group_size}")
        if self.max_tokens < 1:
            raise ParameterError(f"max_tokens must be >= 1, got {self.max_tokens}")

    def check_encoder(self, max_seq_len: int):
        if self.max_tokens > max_seq_len:
            raise ParameterError(f"router max_tokens ({self.max_tokens}) exceeds encoder max_seq_len ({max_seq_len})")

    def to_dict(self) -> Dict:
        return {'group_size': self.group_size, 'max_tokens': self.max_tokens, 'domains': list(self.domains)}

    @classmethod
    def from_dict(cls, data: Dict) -> 'RouterConfig':
        return cls(int(data.get('group_size', 8)), int(data.get('max_tokens', 512)), tuple(data.get('domains') or ()))


@dataclass
class RouterModel:
    adapter: AdapterSet
    head: ClassifierHead
    config: RouterConfig

    @property
    def domains(self) -> Tuple[str, ...]:
        return self.config.domains


@dataclass
class RoutedBatch:
    """One group: member indices into the input stream and the (truncated) concatenated tokens."""
    group_id: int
    members: List[int]
    tokens: List[str]
    domain: Optional[str] = None
    scores: Optional[np.ndarray] = field(default=None, repr=False)

    def record(self, domains: Sequence[str]) -> Dict:
        scores = None if self.scores is None else {d: float(p) for d, p in zip(domains, self.scores)}
        return {'group': self.group_id, 'members': list(self.members), 'domain': self.domain, 'scores': scores}


def _tokens_of(item) -> Sequence[str]:
    return item.tokens if isinstance(item, Sentence) else item


def build_groups(sentences: Sequence, cfg: RouterConfig, start_id: int = 0) -> List[RoutedBatch]:
    """
    Greedy grouping in stream order.

    A group takes up to group_size consecutive sentences; the sentence that
    brings the running total to max_tokens or beyond closes the group, and the
    concatenation keeps only its first max_tokens tokens.
    """
    groups: List[RoutedBatch] = []
    members: List[int] = []
    tokens: List[str] = []

    def close():
        nonlocal members, tokens
        if members:
            groups.append(RoutedBatch(start_id + len(groups), members, tokens[:cfg.max_tokens]))
        members, tokens = [], []

    for i, item in enumerate(sentences):
        members.append(i)
        tokens.extend(_tokens_of(item))
        if len(members) >= cfg.group_size or len(tokens) >= cfg.max_tokens:
            close()
    close()
    return groups


def _group_ids(tokenizer: Tokenizer, groups: Sequence[RoutedBatch], max_tokens: int):
    return pad_batch([encode_tokens(tokenizer, g.tokens, max_tokens)[0] for g in groups])


def _group_logits(core: CoreModel, router: RouterModel, tokenizer: Tokenizer, groups: Sequence[RoutedBatch]):
    ids, mask = _group_ids(tokenizer, groups, router.config.max_tokens)
    hidden = forward_batch(core, ids, mask, adapter=router.adapter)
    cls_state = getitem(hidden, (slice(None), 0))
    return router.head.logits(cls_state)


def labeled_groups(corpus: Corpus, split: str, cfg: RouterConfig,
                   domains: Optional[Sequence[str]] = None) -> Tuple[List[RoutedBatch], List[int]]:
    """Groups built per domain in stream order, with the domain index as label."""
    domains = list(domains or cfg.domains or corpus.domains)
    groups, labels = [], []
    for label, domain in enumerate(domains):
        sentences = corpus.sentences(split, [domain])
        if split == 'train' and len(sentences) < cfg.group_size:
            warn(f"router: domain '{domain}' has {len(sentences)} training sentence(s), "
                 f"fewer than one group of {cfg.group_size}")
        for group in build_groups(sentences, cfg, start_id=len(groups)):
            group.domain = domain
            groups.append(group)
            labels.append(label)
    return groups, labels


def train_router(core: CoreModel, corpus: Corpus, cfg: RouterConfig, train_cfg: TrainConfig,
                 tokenizer: Tokenizer, kind: str = 'prefix',
                 hyper: Optional[Dict] = None) -> Tuple[RouterModel, TrainReport]:
    """Pool and shuffle labeled groups of all domains; train the router's adapter + head on the frozen core."""
    if not core.frozen:
        raise ContractError("train_router needs a frozen core; call freeze_core first")
    cfg.check_encoder(core.config.max_seq_len)
    domains = tuple(cfg.domains or corpus.domains)
    cfg = replace(cfg, domains=domains)
    train_groups, train_labels = labeled_groups(corpus, 'train', cfg)
    if not train_groups:
        raise DataError("router: no training groups")
    dev_groups, dev_labels = labeled_groups(corpus, 'dev', cfg)

    adapter = init_adapter(kind, core.config, hyper, rng=make_rng(train_cfg.seed, 'router', 'adapter'),
                           adapter_id='router', trained_on='router')
    head = init_head('router-head', ROUTER_SCHEME_ID, core.config.d_model, len(domains),
                     make_rng(train_cfg.seed, 'router', 'head'))
    router = RouterModel(adapter, head, cfg)
    targets = np.array(train_labels, dtype=np.int64)

    def loss_fn(_, idx):
        logits = _group_logits(core, router, tokenizer, [train_groups[i] for i in idx])
        return cross_entropy(logits, targets[idx])

    def evaluate():
        if not dev_groups:
            return None
        return _accuracy(core, router, tokenizer, dev_groups, dev_labels)

    report = run_epochs('router', adapter.parameters() + head.parameters(), {'router': len(train_groups)},
                        loss_fn, evaluate, train_cfg, make_rng(train_cfg.seed, 'train', 'router'),
                        metric='accuracy')
    return router, report


def _predict_groups(core: CoreModel, router: RouterModel, tokenizer: Tokenizer,
                    groups: Sequence[RoutedBatch], batch_size: int = 32) -> np.ndarray:
    probs = []
    with no_grad():
        for start in range(0, len(groups), batch_size):
            logits = _group_logits(core, router, tokenizer, groups[start:start + batch_size])
            probs.append(softmax(logits, axis=-1).data)
    return np.concatenate(probs, axis=0) if probs else np.zeros((0, len(router.domains)))


def _accuracy(core, router, tokenizer, groups, labels) -> float:
    predicted = _predict_groups(core, router, tokenizer, groups).argmax(axis=1)
    return float(np.mean(predicted == np.asarray(labels)))


def group_accuracy(core: CoreModel, router: RouterModel, tokenizer: Tokenizer, corpus: Corpus,
                   split: str = 'test', group_size: Optional[int] = None) -> float:
    """Group-level accuracy on labeled groups of a split (optionally re-grouped with another k)."""
    cfg = router.config if group_size is None else replace(router.config, group_size=group_size)
    groups, labels = labeled_groups(corpus, split, cfg, router.domains)
    if not groups:
        raise DataError(f"router: no {split} groups to score")
    return _accuracy(core, router, tokenizer, groups, labels)


def classify_group(router: RouterModel, group, core: CoreModel, tokenizer: Tokenizer) -> Tuple[str, np.ndarray]:
    """(predicted domain, softmax scores over router.domains) for one group of tokens."""
    tokens = group.tokens if isinstance(group, RoutedBatch) else list(group)
    if not tokens:
        raise InputError("cannot classify an empty group")
    if len(tokens) > router.config.max_tokens:
        raise InputError(f"group has {len(tokens)} tokens; the router accepts at most {router.config.max_tokens}")
    batch = group if isinstance(group, RoutedBatch) else RoutedBatch(0, [], tokens)
    scores = _predict_groups(core, router, tokenizer, [batch])[0]
    return router.domains[int(np.argmax(scores))], scores


def route_and_tag(reg: DomainRegistry, router: Optional[RouterModel], sentences: Sequence,
                  cfg: Optional[RouterConfig] = None, max_len: int = 512) -> Tuple[List[List[str]], List[Dict]]:
    """
    Classify each group once, then tag its members with the predicted domain's
    adapter and head. Tags come back in input order, one record per group.
    """
    router = router if router is not None else reg.router
    if router is None:
        raise RoutingError("no router in the registry; train one or tag with an explicit domain")
    cfg = cfg or router.config
    core = reg.core
    tags: List[Optional[List[str]]] = [None] * len(sentences)
    records = []
    for group in build_groups(sentences, cfg):
        if not group.tokens:
            # nothing to classify; empty sentences get empty tag lists
            for i in group.members:
                tags[i] = []
            records.append(group.record(router.domains))
            continue
        domain, scores = classify_group(router, group, core, reg.tokenizer)
        if domain not in reg.domains:
            raise RoutingError(f"router predicted domain '{domain}', which is not registered "
                               f"(registered: {', '.join(reg.domains)})")
        group.domain, group.scores = domain, scores
        _, adapter, head = resolve(reg, domain)
        member_tokens = [list(_tokens_of(sentences[i])) for i in group.members]
        for i, t in zip(group.members, predict_tags(core, adapter, head, reg.scheme_for(domain),
                                                    reg.tokenizer, member_tokens, max_len)):
            tags[i] = t
        records.append(group.record(router.domains))
        debug('route_and_tag', f"group {group.group_id}: {len(group.members)} sentence(s) -> {domain}")
    return tags, records


def records_to_jsonl(records: Sequence[Dict]) -> str:
    return ''.join(json.dumps(r, sort_keys=True) + '\n' for r in records)
