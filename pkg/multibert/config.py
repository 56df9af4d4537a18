"""
Configuration and console output for the multi-domain tagging engine.

Environment variables (read once at import):
    MULTIBERT_DEBUG=1       - print DEBUG diagnostics
    MULTIBERT_QUIET=1       - silence status lines and progress bars
    MULTIBERT_SLOW_TESTS=1  - run the long acceptance tests

Experiment configuration is a JSON document; see default_config() for every key.
"""
import copy
import json
import os
import sys
from typing import Any, Dict, Iterable, Optional

from tqdm import tqdm

from .errors import ConfigError

DEBUG = os.environ.get('MULTIBERT_DEBUG') == '1'
QUIET = os.environ.get('MULTIBERT_QUIET') == '1'
SLOW_TESTS = os.environ.get('MULTIBERT_SLOW_TESTS') == '1'

ADAPTER_KINDS = ('lora', 'prefix')
POOLING_MODES = ('all', 'exclude-target')


# ========== CONSOLE ==========

def status(message):
    """Print a success/status line to standard error."""
    if not QUIET:
        print(f"✅ {message}", file=sys.stderr)


def info(message):
    """Print a summary line to standard error."""
    if not QUIET:
        print(f"📊 {message}", file=sys.stderr)


def warn(message):
    """Print a warning to standard error (never silenced)."""
    print(f"⚠️  {message}", file=sys.stderr)


def fail(message):
    """Print an error line to standard error (never silenced)."""
    print(f"❌ Error: {message}", file=sys.stderr)


def debug(where, message):
    if DEBUG:
        print(f"DEBUG {where}: {message}", file=sys.stderr)


def progress(iterable: Iterable, desc: str, total: Optional[int] = None):
    """Wrap an iterable in a tqdm bar on standard error."""
    disable = True if QUIET else None
    return tqdm(iterable, desc=desc, total=total, file=sys.stderr, leave=False, disable=disable)


# ========== EXPERIMENT CONFIG ==========

def default_training(**overrides) -> Dict[str, Any]:
    cfg = {
        'batch_size': 16,
        'lr': 1e-4,
        'max_epochs': 10,
        'patience': 2,
        'eval_every': 1,
    }
    cfg.update(overrides)
    return cfg


def default_config() -> Dict[str, Any]:
    """The desk-scale setup: 2 formal-scheme domains + 10 tweet-scheme domains."""
    return {
        'seed': 13,
        'paths': {
            'corpus_dir': 'data/corpus',
            'bundle': 'artifacts/multibert_{kind}.mbb',
            'baselines_dir': 'artifacts/baselines',
            'reports_dir': 'artifacts/reports',
        },
        'synthetic': {'preset': 'desk', 'ambiguity_rate': 0.3},
        'encoder': {
            'n_layers': 2,
            'd_model': 32,
            'n_heads': 2,
            'd_ff': 64,
            'max_seq_len': 512,
            'ln_eps': 1e-5,
        },
        'adapter': {
            'kinds': ['prefix', 'lora'],
            'prefix_length': 18,
            'lora_r': 3,
            'lora_alpha': 1.0,
            'lora_targets': ['q', 'v'],
        },
        # 1e-4 (the TrainConfig default) suits a pre-trained core; a
        # from-scratch toy core needs larger steps to move within 10 epochs.
        'core_training': default_training(lr=3e-3, max_epochs=6),
        'pooled_training': default_training(lr=1e-2, max_epochs=2),
        'finetune': default_training(lr=1e-2, max_epochs=10),
        'baseline_training': default_training(lr=3e-3, max_epochs=4),
        'pooling_mode': 'all',
        'router': {
            'group_size': 8,
            'max_tokens': 512,
            'domains': None,
            'training': default_training(lr=1e-2, max_epochs=6),
        },
        'grid': {
            'prefix': {'params': {'prefix_length': [2, 34]}, 'step': 8, 'radius': 7},
            'lora': {'params': {'lora_alpha': [1, 17], 'lora_r': [1, 17]}, 'step': 8, 'radius': 3},
        },
    }


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _require_positive(section, key, value, allow_zero=False):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(f"{section}.{key} must be {'>= 0' if allow_zero else '> 0'}, got {value!r}")


def validate_config(cfg: Dict[str, Any]) -> Dict[str, Any]:
    """Check every section of an experiment config; raise ConfigError on the first problem."""
    if cfg.get('seed') is None:
        raise ConfigError("seed is mandatory (set it in the config or pass --seed)")
    if not isinstance(cfg['seed'], int) or isinstance(cfg['seed'], bool):
        raise ConfigError(f"seed must be an integer, got {cfg['seed']!r}")

    for key in ('corpus_dir', 'bundle', 'baselines_dir', 'reports_dir'):
        if not cfg.get('paths', {}).get(key):
            raise ConfigError(f"paths.{key} is required")

    for key in ('n_layers', 'd_model', 'n_heads', 'd_ff', 'max_seq_len', 'ln_eps'):
        _require_positive('encoder', key, cfg['encoder'].get(key))
    if cfg['encoder']['d_model'] % cfg['encoder']['n_heads'] != 0:
        raise ConfigError("encoder.d_model must be divisible by encoder.n_heads")

    adapter = cfg['adapter']
    kinds = adapter.get('kinds') or []
    if not kinds or any(k not in ADAPTER_KINDS for k in kinds):
        raise ConfigError(f"adapter.kinds must be a non-empty subset of {list(ADAPTER_KINDS)}, got {kinds!r}")
    _require_positive('adapter', 'prefix_length', adapter.get('prefix_length'), allow_zero=True)
    _require_positive('adapter', 'lora_r', adapter.get('lora_r'))
    _require_positive('adapter', 'lora_alpha', adapter.get('lora_alpha'))

    for section in ('core_training', 'pooled_training', 'finetune', 'baseline_training'):
        _validate_training(section, cfg[section])
    _validate_training('router.training', cfg['router']['training'])

    if cfg.get('pooling_mode') not in POOLING_MODES:
        raise ConfigError(f"pooling_mode must be one of {list(POOLING_MODES)}, got {cfg.get('pooling_mode')!r}")

    router = cfg['router']
    _require_positive('router', 'group_size', router.get('group_size'))
    _require_positive('router', 'max_tokens', router.get('max_tokens'))
    if router['max_tokens'] > cfg['encoder']['max_seq_len']:
        raise ConfigError("router.max_tokens cannot exceed encoder.max_seq_len")

    rate = cfg.get('synthetic', {}).get('ambiguity_rate', 0.0)
    if not isinstance(rate, (int, float)) or not 0.0 <= rate <= 1.0:
        raise ConfigError(f"synthetic.ambiguity_rate must be within [0, 1], got {rate!r}")
    return cfg


def _validate_training(section, training):
    _require_positive(section, 'batch_size', training.get('batch_size'))
    _require_positive(section, 'lr', training.get('lr'))
    _require_positive(section, 'max_epochs', training.get('max_epochs'))
    _require_positive(section, 'patience', training.get('patience'))


def load_config(path: Optional[str] = None, seed: Optional[int] = None) -> Dict[str, Any]:
    """
    Load an experiment config, layering the file over default_config().

    Relative paths are resolved against the directory holding the config file.
    An explicit seed argument overrides the file's seed.
    """
    cfg = default_config()
    base_dir = os.getcwd()
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, 'r', encoding='utf-8') as f:
                user_cfg = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}")
        if 'seed' not in user_cfg and seed is None:
            raise ConfigError(f"seed is mandatory: add \"seed\" to {path} or pass --seed")
        cfg = _merge(cfg, user_cfg)
        base_dir = os.path.dirname(os.path.abspath(path))
    if seed is not None:
        cfg['seed'] = seed

    cfg['paths'] = {
        key: value if os.path.isabs(value) else os.path.join(base_dir, value)
        for key, value in cfg['paths'].items()
    }
    debug('load_config', f"seed={cfg['seed']} paths={cfg['paths']}")
    return validate_config(cfg)


def bundle_path(cfg: Dict[str, Any], kind: str) -> str:
    """Bundle path for one adapter kind ('{kind}' placeholder is optional)."""
    template = cfg['paths']['bundle']
    if '{kind}' in template:
        return template.format(kind=kind)
    if len(cfg['adapter']['kinds']) > 1:
        root, ext = os.path.splitext(template)
        return f"{root}_{kind}{ext}"
    return template
