"""Tests for CoNLL parsing, BIO helpers, the tokenizer, the synthetic generator and the corpus cache."""
import pytest

from multibert.data import (
    CLS_ID, CONTEXT_FLIP_SENTENCE, PAD_ID, UNK_ID, Corpus, DomainSpec, Sentence, SyntheticSpec, Tokenizer,
    desk_spec, encode, format_conll, generate_synthetic, is_valid_bio, load_corpus, majority_labels,
    parse_conll, parse_tokens, repair_bio, spans, spec_from_config, split_sizes, write_corpus,
)
from multibert.errors import DataError, ParameterError, ParseError
from multibert.heads_registry import FORMAL21, TWEETS9
from multibert.tensor import IGNORE_INDEX

THREE_SENTENCES = """Tesla\tB-ORG
rocks\tO

visit\tO
new\tI-LOC
york\tI-LOC

-DOCSTART-\tO

hello\tO
"""


def test_parse_single_token_and_empty_input():
    assert parse_conll('Tesla\tB-ORG\n\n', TWEETS9) == [Sentence(('Tesla',), ('B-ORG',), 'default', TWEETS9.id)]
    assert parse_conll('', TWEETS9) == []


def test_parse_repairs_dangling_inside_tags():
    stats = {}
    sentences = parse_conll(THREE_SENTENCES, TWEETS9, domain='news', stats=stats)
    assert len(sentences) == 3
    assert sentences[1].labels == ('O', 'B-LOC', 'I-LOC')
    assert stats == {'sentences': 3, 'repairs': 1}
    assert all(s.domain == 'news' for s in sentences)


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ParseError) as err:
        parse_conll('fine\tO\nbad\tB-NOPE\n', TWEETS9)
    assert err.value.line_number == 2
    assert 'line 2' in str(err.value)
    with pytest.raises(ParseError):
        parse_conll('lonely\n', TWEETS9)


def test_parse_tokens_ignores_tag_column():
    assert parse_tokens('a\tO\nb\n\nc\tB-PER\n') == [['a', 'b'], ['c']]


def test_format_then_parse_keeps_sentences():
    pairs = [(('a', 'b'), ('B-PER', 'O')), (('c',), ('O',))]
    parsed = parse_conll(format_conll(pairs), TWEETS9)
    assert [(s.tokens, s.labels) for s in parsed] == pairs


def test_bio_helpers():
    assert repair_bio(['I-PER', 'I-PER', 'O', 'I-LOC']) == (['B-PER', 'I-PER', 'O', 'B-LOC'], 2)
    assert is_valid_bio(['B-PER', 'I-PER', 'O'])
    assert not is_valid_bio(['O', 'I-ORG'])
    assert spans(['B-PER', 'I-PER', 'O', 'B-LOC', 'B-LOC', 'I-ORG']) == [
        ('PER', 0, 2), ('LOC', 3, 4), ('LOC', 4, 5), ('ORG', 5, 6)]
    assert spans([]) == []


def test_sentence_rejects_length_mismatch():
    with pytest.raises(DataError):
        Sentence(('a', 'b'), ('O',), 'news', TWEETS9.id)


def test_tokenizer_reserved_ids_and_decode():
    tok = Tokenizer.build([Sentence(('b', 'a', 'b'), ('O', 'O', 'O'), 'd', TWEETS9.id)])
    assert len({PAD_ID, UNK_ID, CLS_ID}) == 3
    assert tok.size == 5
    ids = tok.encode_tokens(['a', 'b'])
    assert tok.decode(ids) == ['a', 'b']
    assert tok.token_id('zzz') == UNK_ID
    assert Tokenizer.from_dict(tok.to_dict()).vocab == tok.vocab


def test_encode_prepends_cls_and_ignores_its_label():
    tok = Tokenizer.build([Sentence(('x', 'y', 'z'), ('O', 'O', 'O'), 'd', TWEETS9.id)])
    s = Sentence(('x', 'y', 'z'), ('B-PER', 'I-PER', 'O'), 'd', TWEETS9.id)
    ids, labels, mask = encode(tok, s)
    assert len(ids) == 4 and ids[0] == CLS_ID
    assert labels[0] == IGNORE_INDEX
    assert list(labels[1:]) == [TWEETS9.index('B-PER'), TWEETS9.index('I-PER'), 0]
    assert mask.all()


def test_encode_truncates_and_maps_unknowns():
    tok = Tokenizer.build([])
    long = Sentence(tuple(f'w{i}' for i in range(600)), ('O',) * 600, 'd', TWEETS9.id)
    ids, labels, _ = encode(tok, long, max_len=512)
    assert len(ids) == 513 and len(labels) == 513
    assert set(ids[1:]) == {UNK_ID}


def test_split_sizes():
    assert split_sizes(100) == (80, 10, 10)
    assert split_sizes(3) == (1, 1, 1)
    assert split_sizes(2) == (2, 0, 0)
    assert sum(split_sizes(251)) == 251


def test_generator_labels_ambiguous_entity_by_domain():
    spec = SyntheticSpec(
        domains=[DomainSpec('tech', TWEETS9.id, 50), DomainSpec('history', TWEETS9.id, 50)],
        ambiguous_entities={'tesla': {'tech': 'ORG', 'history': 'PER'}},
        ambiguity_rate=1.0, seed=5,
    )
    corpus = generate_synthetic(spec)
    for domain, expected in (('tech', 'B-ORG'), ('history', 'B-PER')):
        sentences = corpus.all_sentences(domain)
        assert len(sentences) == 50
        for s in sentences:
            assert 'tesla' in s.tokens
            assert s.labels[s.tokens.index('tesla')] == expected
    assert majority_labels(corpus, 'tesla') == {'tech': 'ORG', 'history': 'PER'}


def test_generator_is_deterministic(tmp_path, tiny_spec):
    first = write_corpus(generate_synthetic(tiny_spec), str(tmp_path / 'a'), tiny_spec)
    second = write_corpus(generate_synthetic(tiny_spec), str(tmp_path / 'b'), tiny_spec)
    for a, b in zip(first, second):
        with open(a, 'rb') as fa, open(b, 'rb') as fb:
            assert fa.read() == fb.read()


def test_desk_corpus_shape_and_ambiguity():
    spec = desk_spec()
    corpus = generate_synthetic(spec)
    counts = corpus.counts()
    assert counts == {d.name: d.budget for d in spec.domains}
    tweet_budgets = [counts[d] for d in corpus.domains_for_scheme(TWEETS9.id)]
    assert len(tweet_budgets) == 10 and min(tweet_budgets) == 100 and max(tweet_budgets) == 2000
    assert corpus.domains_for_scheme(FORMAL21.id) == ['formal', 'informal']
    for d in corpus.domains:
        assert all(is_valid_bio(s.labels) for s in corpus.all_sentences(d))
    for surface in spec.ambiguous_entities:
        assert len(set(majority_labels(corpus, surface).values())) >= 2
    flips = [s for s in corpus.all_sentences('news') if s.tokens == CONTEXT_FLIP_SENTENCE]
    assert all(s.labels[-2:] == ('B-ORG', 'I-ORG') for s in flips)


@pytest.mark.parametrize('rate', [-0.1, 1.5, 'high'])
def test_invalid_ambiguity_rate(tiny_spec, rate):
    tiny_spec.ambiguity_rate = rate
    with pytest.raises(ParameterError):
        generate_synthetic(tiny_spec)


def test_spec_from_config_scales_and_restricts():
    spec = spec_from_config({'preset': 'desk', 'scale': 0.1, 'only': ['news', 'art']}, seed=4)
    assert [(d.name, d.budget) for d in spec.domains] == [('news', 200), ('art', 10)]
    assert spec.seed == 4
    assert 'united states' in spec.ambiguous_entities
    with pytest.raises(ParameterError):
        spec_from_config({'preset': 'nope'}, seed=1)


def test_corpus_cache_round_trip(tmp_path, tiny_corpus, tiny_spec):
    write_corpus(tiny_corpus, str(tmp_path), tiny_spec)
    loaded = load_corpus(str(tmp_path))
    assert loaded.domains == tiny_corpus.domains
    for split in ('train', 'dev', 'test'):
        assert loaded.sentences(split) == tiny_corpus.sentences(split)
    with pytest.raises(DataError):
        load_corpus(str(tmp_path / 'missing'))


def test_corpus_accessors(tiny_corpus):
    assert tiny_corpus.counts('train')['alpha'] == 48
    assert tiny_corpus.domains_for_scheme(TWEETS9.id) == ['alpha', 'beta']
    with pytest.raises(DataError):
        tiny_corpus.scheme_for('omega')
    sub = tiny_corpus.subset(['beta'])
    assert sub.domains == ['beta'] and len(sub.sentences('train')) == 32
    with pytest.raises(DataError):
        Corpus.from_sentences([Sentence(('a',), ('O',), 'x', TWEETS9.id)], {'x': FORMAL21})
