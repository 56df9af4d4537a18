"""Shared pytest fixtures: tiny seeded encoders, schemes, corpora and a finite-difference helper."""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from multibert.data import DomainSpec, SyntheticSpec, Tokenizer, generate_synthetic
from multibert.encoder import CoreModel, EncoderConfig
from multibert.heads_registry import FORMAL21, TWEETS9
from multibert.tensor import make_rng, no_grad
from multibert.training import TrainConfig


def numeric_grad(loss_of, tensor, step=1e-5):
    """Central finite differences of a scalar loss (float) w.r.t. every entry of tensor."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            plus = loss_of()
            flat[i] = saved - step
            minus = loss_of()
            flat[i] = saved
            out[i] = (plus - minus) / (2 * step)
    return grad


def relative_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-8))


@pytest.fixture
def tiny_config():
    return EncoderConfig(vocab_size=12, n_layers=2, d_model=8, n_heads=2, d_ff=16, max_seq_len=16)


@pytest.fixture
def tiny_core(tiny_config):
    return CoreModel.initialize(tiny_config, make_rng(0, 'core'))


@pytest.fixture
def tiny_spec():
    return SyntheticSpec(
        domains=[
            DomainSpec('alpha', TWEETS9.id, 60),
            DomainSpec('beta', TWEETS9.id, 40),
            DomainSpec('gamma', FORMAL21.id, 30),
        ],
        ambiguous_entities={'united states': {'alpha': 'ORG', 'beta': 'LOC', 'gamma': 'LOC'}},
        ambiguity_rate=0.3,
        vocab_size=8,
        seed=3,
    )


@pytest.fixture
def tiny_corpus(tiny_spec):
    return generate_synthetic(tiny_spec)


@pytest.fixture
def tiny_tokenizer(tiny_corpus):
    return Tokenizer.build(tiny_corpus.sentences('train'))


@pytest.fixture
def corpus_config(tiny_tokenizer):
    """Encoder sized for the tiny corpus (every synthetic sentence fits)."""
    return EncoderConfig(vocab_size=tiny_tokenizer.size, n_layers=1, d_model=8, n_heads=2, d_ff=16,
                         max_seq_len=32)


@pytest.fixture
def corpus_core(corpus_config):
    return CoreModel.initialize(corpus_config, make_rng(1, 'core'))


@pytest.fixture
def fast_cfg():
    return TrainConfig(batch_size=8, lr=1e-2, max_epochs=2, patience=1, seed=0, max_len=32)
