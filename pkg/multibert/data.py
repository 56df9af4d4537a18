"""
Corpora: CoNLL ingestion, the whole-word tokenizer and the synthetic generator.

The generator produces imbalanced, domain-tagged BIO corpora in which a few
ambiguous entities ("united states", "tesla", ...) carry different gold types
in different domains while appearing in identical, domain-neutral sentences.
Only knowing the domain resolves them.
"""
import json
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import debug, status
from .errors import DataError, ParameterError, ParseError
from .heads_registry import BUILTIN_SCHEMES, FORMAL21, TWEETS9, LabelScheme
from .tensor import IGNORE_INDEX, make_rng

PAD, UNK, CLS = '[PAD]', '[UNK]', '[CLS]'
PAD_ID, UNK_ID, CLS_ID = 0, 1, 2
SPLITS = ('train', 'dev', 'test')
MANIFEST_NAME = 'manifest.json'


# ========== SENTENCES & CORPUS ==========

@dataclass(frozen=True)
class Sentence:
    tokens: Tuple[str, ...]
    labels: Tuple[str, ...]
    domain: str
    scheme_id: str

    def __post_init__(self):
        object.__setattr__(self, 'tokens', tuple(self.tokens))
        object.__setattr__(self, 'labels', tuple(self.labels))
        if len(self.tokens) != len(self.labels):
            raise DataError(f"sentence has {len(self.tokens)} tokens but {len(self.labels)} labels")

    def __len__(self):
        return len(self.tokens)


def split_sizes(n: int) -> Tuple[int, int, int]:
    """Per-domain 80/10/10 split; every split gets at least one sentence once n >= 3."""
    if n < 3:
        return n, 0, 0
    dev = max(1, int(n * 0.1))
    test = max(1, int(n * 0.1))
    return n - dev - test, dev, test


class Corpus:
    """Domain-tagged sentences with disjoint train/dev/test splits per domain."""

    def __init__(self, splits: Dict[str, 'OrderedDict[str, List[Sentence]]'], schemes: Dict[str, LabelScheme]):
        self.splits = splits
        self.schemes = OrderedDict(schemes)
        for split in SPLITS:
            for domain, sentences in splits.get(split, {}).items():
                scheme = self.schemes.get(domain)
                if scheme is None:
                    raise DataError(f"domain '{domain}' has no label scheme")
                for s in sentences:
                    if s.domain != domain or s.scheme_id != scheme.id:
                        raise DataError(
                            f"sentence of domain '{s.domain}' / scheme '{s.scheme_id}' filed under "
                            f"'{domain}' / '{scheme.id}'"
                        )

    @classmethod
    def from_sentences(cls, sentences: Iterable[Sentence], schemes: Dict[str, LabelScheme]) -> 'Corpus':
        """Group by domain (stream order kept) and split each domain 80/10/10 in order."""
        by_domain: 'OrderedDict[str, List[Sentence]]' = OrderedDict()
        for s in sentences:
            by_domain.setdefault(s.domain, []).append(s)
        splits = {split: OrderedDict() for split in SPLITS}
        for domain, items in by_domain.items():
            n_train, n_dev, _ = split_sizes(len(items))
            splits['train'][domain] = items[:n_train]
            splits['dev'][domain] = items[n_train:n_train + n_dev]
            splits['test'][domain] = items[n_train + n_dev:]
        return cls(splits, schemes)

    @property
    def domains(self) -> List[str]:
        return list(self.schemes.keys())

    def scheme_for(self, domain: str) -> LabelScheme:
        if domain not in self.schemes:
            raise DataError(f"domain '{domain}' is not in the corpus (domains: {', '.join(self.domains)})")
        return self.schemes[domain]

    def sentences(self, split: str = 'train', domains: Optional[Sequence[str]] = None) -> List[Sentence]:
        if split not in SPLITS:
            raise DataError(f"unknown split '{split}'")
        wanted = self.domains if domains is None else list(domains)
        out = []
        for domain in wanted:
            self.scheme_for(domain)
            out.extend(self.splits[split].get(domain, []))
        return out

    def all_sentences(self, domain: str) -> List[Sentence]:
        return [s for split in SPLITS for s in self.splits[split].get(domain, [])]

    def counts(self, split: Optional[str] = None) -> Dict[str, int]:
        if split is None:
            return {d: len(self.all_sentences(d)) for d in self.domains}
        return {d: len(self.splits[split].get(d, [])) for d in self.domains}

    def domains_for_scheme(self, scheme_id: str) -> List[str]:
        return [d for d, s in self.schemes.items() if s.id == scheme_id]

    def subset(self, domains: Sequence[str]) -> 'Corpus':
        for d in domains:
            self.scheme_for(d)
        splits = {split: OrderedDict((d, list(self.splits[split].get(d, []))) for d in domains) for split in SPLITS}
        return Corpus(splits, OrderedDict((d, self.schemes[d]) for d in domains))


# ========== TOKENIZER ==========

class Tokenizer:
    """Whole-word vocabulary; ids 0..2 are [PAD], [UNK], [CLS]."""

    def __init__(self, vocab: Sequence[str]):
        vocab = list(vocab)
        if vocab[:3] != [PAD, UNK, CLS]:
            raise DataError("tokenizer vocab must start with [PAD], [UNK], [CLS]")
        if len(set(vocab)) != len(vocab):
            raise DataError("tokenizer vocab has duplicate entries")
        self.vocab = vocab
        self.ids = {word: i for i, word in enumerate(vocab)}

    @classmethod
    def build(cls, sentences: Iterable[Sentence]) -> 'Tokenizer':
        words = sorted({token for s in sentences for token in s.tokens} - {PAD, UNK, CLS})
        return cls([PAD, UNK, CLS] + words)

    @property
    def size(self) -> int:
        return len(self.vocab)

    def __len__(self):
        return len(self.vocab)

    def token_id(self, token: str) -> int:
        return self.ids.get(token, UNK_ID)

    def encode_tokens(self, tokens: Sequence[str]) -> List[int]:
        return [self.ids.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.vocab[int(i)] for i in ids]

    def to_dict(self) -> Dict:
        return {'vocab': list(self.vocab)}

    @classmethod
    def from_dict(cls, data: Dict) -> 'Tokenizer':
        return cls(data['vocab'])


def encode_tokens(tok: Tokenizer, tokens: Sequence[str], max_len: int = 512) -> Tuple[np.ndarray, np.ndarray]:
    """([CLS] + ids of the first max_len tokens, all-true mask)."""
    ids = np.array([CLS_ID] + tok.encode_tokens(list(tokens)[:max_len]), dtype=np.int64)
    return ids, np.ones(ids.shape[0], dtype=bool)


def encode(tok: Tokenizer, s: Sentence, max_len: int = 512,
           scheme: Optional[LabelScheme] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    (ids, label ids, pad mask) for one sentence.

    The content is truncated to max_len tokens, then [CLS] is prepended; the
    [CLS] position is labeled IGNORE_INDEX. Unknown words map to [UNK].
    """
    if scheme is None:
        scheme = BUILTIN_SCHEMES.get(s.scheme_id)
        if scheme is None:
            raise DataError(f"scheme '{s.scheme_id}' is not built in; pass it explicitly")
    ids, mask = encode_tokens(tok, s.tokens, max_len)
    index = scheme.tag_to_id()
    try:
        labels = [IGNORE_INDEX] + [index[tag] for tag in s.labels[:max_len]]
    except KeyError as e:
        raise DataError(f"tag {e.args[0]!r} is not part of scheme '{scheme.id}'")
    return ids, np.array(labels, dtype=np.int64), mask


def pad_batch(rows: Sequence[np.ndarray], fill: int = PAD_ID) -> Tuple[np.ndarray, np.ndarray]:
    """Right-pad 1-D int rows to a [batch x longest] matrix; returns (matrix, mask)."""
    width = max((len(r) for r in rows), default=0)
    out = np.full((len(rows), width), fill, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, row in enumerate(rows):
        out[i, :len(row)] = row
        mask[i, :len(row)] = True
    return out, mask


# ========== BIO ==========

def repair_bio(labels: Sequence[str]) -> Tuple[List[str], int]:
    """Turn every dangling I-X (not after B-X / I-X) into B-X; returns (labels, repairs)."""
    fixed, repairs, previous = [], 0, 'O'
    for tag in labels:
        if tag.startswith('I-') and previous[2:] != tag[2:]:
            tag = 'B-' + tag[2:]
            repairs += 1
        fixed.append(tag)
        previous = tag
    return fixed, repairs


def is_valid_bio(labels: Sequence[str]) -> bool:
    return repair_bio(labels)[1] == 0


def spans(labels: Sequence[str]) -> List[Tuple[str, int, int]]:
    """Entity spans (type, start, end-exclusive) of a BIO sequence; dangling I-X opens a span."""
    found = []
    current = None
    for i, tag in enumerate(list(labels) + ['O']):
        if current is not None and not (tag.startswith('I-') and tag[2:] == current[0]):
            found.append((current[0], current[1], i))
            current = None
        if tag.startswith('B-') or (tag.startswith('I-') and current is None):
            current = (tag[2:], i)
    return found


# ========== CONLL ==========

def parse_conll(text: str, scheme: LabelScheme, domain: str = 'default',
                stats: Optional[Dict] = None) -> List[Sentence]:
    """
    Parse token<TAB>tag lines, blank line between sentences.

    Dangling I-X tags are repaired to B-X; the number of repairs and sentences
    is written into `stats` when a dict is passed.
    """
    known = set(scheme.tags)
    sentences: List[Sentence] = []
    tokens, tags = [], []
    repairs = 0

    def flush():
        nonlocal tokens, tags, repairs
        if tokens:
            fixed, n = repair_bio(tags)
            repairs += n
            sentences.append(Sentence(tuple(tokens), tuple(fixed), domain, scheme.id))
        tokens, tags = [], []

    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip('\r\n')
        if not line.strip():
            flush()
            continue
        if line.startswith('-DOCSTART-'):
            continue
        parts = line.split('\t') if '\t' in line else line.split()
        if len(parts) < 2:
            raise ParseError(f"expected 'token<TAB>tag', got {line!r}", line_number)
        token, tag = parts[0].strip(), parts[-1].strip()
        if tag not in known:
            raise ParseError(f"tag '{tag}' is not part of scheme '{scheme.id}'", line_number)
        tokens.append(token)
        tags.append(tag)
    flush()

    if stats is not None:
        stats['sentences'] = len(sentences)
        stats['repairs'] = repairs
    if repairs:
        debug('parse_conll', f"{domain}: repaired {repairs} dangling I- tag(s)")
    return sentences


def parse_tokens(text: str) -> List[List[str]]:
    """Token lists from CoNLL-style input whose tag column is optional."""
    sentences, current = [], []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            if current:
                sentences.append(current)
            current = []
            continue
        if line.startswith('-DOCSTART-'):
            continue
        current.append(line.split('\t')[0].split()[0])
    if current:
        sentences.append(current)
    return sentences


def format_conll(sentences: Iterable[Tuple[Sequence[str], Sequence[str]]]) -> str:
    blocks = []
    for tokens, tags in sentences:
        blocks.append(''.join(f'{tok}\t{tag}\n' for tok, tag in zip(tokens, tags)))
    return '\n'.join(blocks)


# ========== SYNTHETIC CORPORA ==========

NEUTRAL_WORDS = (
    'the', 'a', 'of', 'to', 'and', 'in', 'on', 'for', 'with', 'about', 'today', 'again',
    'really', 'just', 'new', 'more', 'this', 'that', 'was', 'is', 'said', 'says', 'people',
)

# domain-neutral templates; {E} is the ambiguous entity slot
NEUTRAL_TEMPLATES = (
    'the saudi prince proved loyal to the {E}',
    'people keep talking about {E} today',
    '{E} was mentioned again in the report',
    'we heard a lot about {E} this week',
    'nobody expected {E} to show up like that',
    'everyone has an opinion on {E}',
)
CONTEXT_FLIP_SENTENCE = ('the', 'saudi', 'prince', 'proved', 'loyal', 'to', 'the', 'united', 'states')
ENTITY_NAMES_PER_TYPE = 8


@dataclass
class DomainSpec:
    name: str
    scheme_id: str
    budget: int


@dataclass
class SyntheticSpec:
    domains: List[DomainSpec]
    # surface form -> {domain: entity type}
    ambiguous_entities: Dict[str, Dict[str, str]] = field(default_factory=dict)
    ambiguity_rate: float = 0.3
    vocab_size: int = 40
    seed: int = 13
    schemes: Dict[str, LabelScheme] = field(default_factory=lambda: dict(BUILTIN_SCHEMES))

    def validate(self):
        if not isinstance(self.ambiguity_rate, (int, float)) or not 0.0 <= self.ambiguity_rate <= 1.0:
            raise ParameterError(f"ambiguity_rate must be within [0, 1], got {self.ambiguity_rate!r}")
        if self.vocab_size < 1:
            raise ParameterError(f"vocab_size must be >= 1, got {self.vocab_size}")
        names = [d.name for d in self.domains]
        if not names or len(set(names)) != len(names):
            raise ParameterError("synthetic spec needs at least one domain and unique domain names")
        for d in self.domains:
            if d.budget < 1:
                raise ParameterError(f"domain '{d.name}' budget must be > 0, got {d.budget}")
            if d.scheme_id not in self.schemes:
                raise ParameterError(f"domain '{d.name}' uses unknown scheme '{d.scheme_id}'")
        for surface, mapping in self.ambiguous_entities.items():
            types = {_entity_type(t) for t in mapping.values()}
            if len(types) < 2:
                raise ParameterError(f"ambiguous entity '{surface}' needs >= 2 distinct labels across domains")
            for domain, entity_type in mapping.items():
                spec = self.domain(domain)
                if spec is None:
                    continue
                if _entity_type(entity_type) not in self.schemes[spec.scheme_id].entity_types:
                    raise ParameterError(
                        f"ambiguous entity '{surface}': type '{entity_type}' not in scheme '{spec.scheme_id}'"
                    )
        return self

    def domain(self, name: str) -> Optional[DomainSpec]:
        for d in self.domains:
            if d.name == name:
                return d
        return None

    def restrict(self, names: Sequence[str]) -> 'SyntheticSpec':
        """Same spec limited to some domains (ambiguous maps keep only those domains)."""
        missing = [n for n in names if self.domain(n) is None]
        if missing:
            raise ParameterError(f"unknown synthetic domains {missing}")
        keep = set(names)
        entities = {}
        for surface, mapping in self.ambiguous_entities.items():
            sub = {d: t for d, t in mapping.items() if d in keep}
            if len({_entity_type(t) for t in sub.values()}) >= 2:
                entities[surface] = sub
        return SyntheticSpec(
            domains=[self.domain(n) for n in names],
            ambiguous_entities=entities,
            ambiguity_rate=self.ambiguity_rate,
            vocab_size=self.vocab_size,
            seed=self.seed,
            schemes=dict(self.schemes),
        )

    def to_dict(self) -> Dict:
        return {
            'domains': [{'name': d.name, 'scheme_id': d.scheme_id, 'budget': d.budget} for d in self.domains],
            'ambiguous_entities': self.ambiguous_entities,
            'ambiguity_rate': self.ambiguity_rate,
            'vocab_size': self.vocab_size,
            'seed': self.seed,
            'schemes': [s.to_dict() for s in self.schemes.values()],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'SyntheticSpec':
        schemes = dict(BUILTIN_SCHEMES)
        for s in data.get('schemes', []):
            schemes[s['id']] = LabelScheme.from_dict(s)
        return cls(
            domains=[DomainSpec(d['name'], d['scheme_id'], int(d['budget'])) for d in data['domains']],
            ambiguous_entities={k: dict(v) for k, v in data.get('ambiguous_entities', {}).items()},
            ambiguity_rate=data.get('ambiguity_rate', 0.3),
            vocab_size=int(data.get('vocab_size', 40)),
            seed=int(data.get('seed', 13)),
            schemes=schemes,
        )


def _entity_type(value: str) -> str:
    return value[2:] if value[:2] in ('B-', 'I-') else value


DESK_DOMAINS = (
    ('formal', FORMAL21.id, 1200),
    ('informal', FORMAL21.id, 600),
    ('news', TWEETS9.id, 2000),
    ('it', TWEETS9.id, 1500),
    ('sport', TWEETS9.id, 1200),
    ('econ', TWEETS9.id, 900),
    ('game', TWEETS9.id, 700),
    ('travel', TWEETS9.id, 500),
    ('med', TWEETS9.id, 350),
    ('fun', TWEETS9.id, 250),
    ('acad', TWEETS9.id, 150),
    ('art', TWEETS9.id, 100),
)

# Large domains hold the majority reading, small domains the minority one.
DESK_AMBIGUOUS = {
    'united states': {
        'news': 'ORG', 'econ': 'ORG', 'it': 'ORG', 'formal': 'ORG', 'informal': 'LOC',
        'sport': 'LOC', 'game': 'LOC', 'travel': 'LOC', 'med': 'LOC', 'fun': 'LOC', 'acad': 'LOC', 'art': 'LOC',
    },
    'tesla': {
        'it': 'ORG', 'econ': 'ORG', 'news': 'ORG', 'formal': 'ORG', 'informal': 'PER',
        'acad': 'PER', 'art': 'PER', 'fun': 'PER',
    },
    'jordan': {
        'news': 'LOC', 'travel': 'LOC', 'econ': 'LOC', 'formal': 'LOC', 'informal': 'PER',
        'sport': 'PER', 'game': 'PER', 'fun': 'PER',
    },
    'apple': {
        'it': 'ORG', 'econ': 'ORG', 'formal': 'ORG', 'informal': 'PRO',
        'med': 'MISC', 'fun': 'MISC', 'travel': 'MISC',
    },
    'olympia': {
        'sport': 'EVE', 'news': 'EVE', 'travel': 'LOC', 'acad': 'LOC', 'art': 'PER',
    },
    'amazon': {
        'it': 'ORG', 'econ': 'ORG', 'news': 'ORG', 'game': 'ORG', 'formal': 'ORG', 'informal': 'LOC',
        'travel': 'LOC', 'acad': 'LOC', 'med': 'LOC',
    },
}


def desk_spec(seed: int = 13, ambiguity_rate: float = 0.3, scale: float = 1.0) -> SyntheticSpec:
    """2 formal-scheme + 10 tweet-scheme domains with budgets from 100 to 2000 (scaled)."""
    domains = [DomainSpec(name, scheme_id, max(1, int(round(budget * scale))))
               for name, scheme_id, budget in DESK_DOMAINS]
    return SyntheticSpec(
        domains=domains,
        ambiguous_entities={k: dict(v) for k, v in DESK_AMBIGUOUS.items()},
        ambiguity_rate=ambiguity_rate,
        seed=seed,
    ).validate()


def spec_from_config(section: Dict, seed: int) -> SyntheticSpec:
    """SyntheticSpec from the `synthetic` config section: a preset or explicit domains."""
    rate = section.get('ambiguity_rate', 0.3)
    if 'domains' in section:
        data = dict(section)
        data['seed'] = seed
        spec = SyntheticSpec.from_dict(data)
    elif section.get('preset', 'desk') == 'desk':
        spec = desk_spec(seed, rate, float(section.get('scale', 1.0)))
    else:
        raise ParameterError(f"unknown synthetic preset {section.get('preset')!r}")
    if section.get('only'):
        spec = spec.restrict(section['only'])
    return spec.validate()


def _lexicon(domain: str, entity_type: str) -> List[str]:
    return [f'{domain}_{entity_type.lower()}{i}' for i in range(ENTITY_NAMES_PER_TYPE)]


def _entity_tokens(rng: np.random.Generator, domain: str, entity_type: str) -> List[str]:
    tokens = [_lexicon(domain, entity_type)[int(rng.integers(ENTITY_NAMES_PER_TYPE))]]
    if rng.random() < 0.3:
        tokens.append(f'{entity_type.lower()}_tail{int(rng.integers(4))}')
    return tokens


def _bio(entity_type: str, n: int) -> List[str]:
    return [f'B-{entity_type}'] + [f'I-{entity_type}'] * (n - 1)


def _plain_sentence(rng: np.random.Generator, spec: SyntheticSpec, domain: DomainSpec,
                    scheme: LabelScheme) -> Tuple[List[str], List[str]]:
    context = [f'{domain.name}_w{i}' for i in range(spec.vocab_size)]
    n_words = int(rng.integers(5, 12))
    tokens, labels = [], []
    for _ in range(n_words):
        if rng.random() < 0.35:
            tokens.append(NEUTRAL_WORDS[int(rng.integers(len(NEUTRAL_WORDS)))])
        else:
            tokens.append(context[int(rng.integers(len(context)))])
        labels.append('O')
    types = scheme.entity_types
    for _ in range(int(rng.integers(1, 3))):
        entity_type = types[int(rng.integers(len(types)))]
        entity = _entity_tokens(rng, domain.name, entity_type)
        at = int(rng.integers(len(tokens) + 1))
        # keep entities from splitting one another
        while at < len(labels) and labels[at].startswith('I-'):
            at += 1
        tokens[at:at] = entity
        labels[at:at] = _bio(entity_type, len(entity))
    return tokens, labels


def _ambiguous_sentence(rng: np.random.Generator, surface: str, entity_type: str) -> Tuple[List[str], List[str]]:
    template = NEUTRAL_TEMPLATES[int(rng.integers(len(NEUTRAL_TEMPLATES)))]
    tokens, labels = [], []
    for word in template.split():
        if word == '{E}':
            entity = surface.split()
            tokens.extend(entity)
            labels.extend(_bio(entity_type, len(entity)))
        else:
            tokens.append(word)
            labels.append('O')
    return tokens, labels


def generate_synthetic(spec: SyntheticSpec) -> Corpus:
    """Exactly `budget` sentences per domain, fully determined by spec.seed."""
    spec.validate()
    sentences = []
    schemes = OrderedDict()
    for domain in spec.domains:
        scheme = spec.schemes[domain.scheme_id]
        schemes[domain.name] = scheme
        rng = make_rng(spec.seed, 'synthetic', domain.name)
        ambiguous = [(surface, _entity_type(mapping[domain.name]))
                     for surface, mapping in spec.ambiguous_entities.items() if domain.name in mapping]
        for _ in range(domain.budget):
            if ambiguous and rng.random() < spec.ambiguity_rate:
                surface, entity_type = ambiguous[int(rng.integers(len(ambiguous)))]
                tokens, labels = _ambiguous_sentence(rng, surface, entity_type)
            else:
                tokens, labels = _plain_sentence(rng, spec, domain, scheme)
            sentences.append(Sentence(tuple(tokens), tuple(labels), domain.name, scheme.id))
    corpus = Corpus.from_sentences(sentences, schemes)
    debug('generate_synthetic', f"counts={corpus.counts()}")
    return corpus


def majority_labels(corpus: Corpus, surface: str) -> Dict[str, str]:
    """Per-domain majority gold type of an ambiguous surface form (all splits)."""
    words = surface.split()
    out = {}
    for domain in corpus.domains:
        votes: Dict[str, int] = {}
        for s in corpus.all_sentences(domain):
            for i in range(len(s.tokens) - len(words) + 1):
                if list(s.tokens[i:i + len(words)]) == words and s.labels[i].startswith('B-'):
                    votes[s.labels[i][2:]] = votes.get(s.labels[i][2:], 0) + 1
        if votes:
            out[domain] = sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
    return out


# ========== CORPUS CACHE ==========

def write_corpus(corpus: Corpus, directory: str, spec: Optional[SyntheticSpec] = None) -> List[str]:
    """Write `<domain>.conll` (train, dev, test in order) plus manifest.json; returns file paths."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for domain in corpus.domains:
        path = os.path.join(directory, f'{domain}.conll')
        text = format_conll((s.tokens, s.labels) for s in corpus.all_sentences(domain))
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
        written.append(path)
    manifest = {
        'domains': [
            {'name': d, 'scheme_id': corpus.schemes[d].id,
             **{split: len(corpus.splits[split].get(d, [])) for split in SPLITS}}
            for d in corpus.domains
        ],
        'schemes': [s.to_dict() for s in {s.id: s for s in corpus.schemes.values()}.values()],
        'spec': spec.to_dict() if spec is not None else None,
    }
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write('\n')
    written.append(path)
    status(f"Wrote {len(corpus.domains)} domain file(s) to {directory}")
    return written


def load_corpus(directory: str) -> Corpus:
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DataError(f"no corpus manifest at {path}; run the synth command first")
    with open(path, 'r', encoding='utf-8') as f:
        manifest = json.load(f)
    schemes = {s['id']: LabelScheme.from_dict(s) for s in manifest['schemes']}
    splits = {split: OrderedDict() for split in SPLITS}
    domain_schemes = OrderedDict()
    for entry in manifest['domains']:
        domain = entry['name']
        scheme = schemes[entry['scheme_id']]
        domain_schemes[domain] = scheme
        with open(os.path.join(directory, f'{domain}.conll'), 'r', encoding='utf-8') as f:
            sentences = parse_conll(f.read(), scheme, domain)
        expected = sum(entry[split] for split in SPLITS)
        if len(sentences) != expected:
            raise DataError(f"{domain}.conll holds {len(sentences)} sentences, manifest says {expected}")
        start = 0
        for split in SPLITS:
            splits[split][domain] = sentences[start:start + entry[split]]
            start += entry[split]
    return Corpus(splits, domain_schemes)
