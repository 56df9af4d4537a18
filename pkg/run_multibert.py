#!/usr/bin/env python3
"""
Command-line entry point for the multi-domain tagging engine.

Usage:
    # Generate the synthetic corpus (12 domains, 2 label schemes)
    python run_multibert.py synth --config experiment.json

    # Pre-train and freeze the core, train the router, then one bundle per adapter kind
    python run_multibert.py train --config experiment.json

    # Same, plus the general and specialized baseline models
    python run_multibert.py train --config experiment.json --baseline specialized

    # Tag CoNLL input with one domain's adapter, or let the router pick the domain
    python run_multibert.py tag --config experiment.json --domain news --input sentences.conll
    cat sentences.conll | python run_multibert.py tag --config experiment.json --route

    # Per-domain F1 table (rows: general, specialized, multi-prefix, multi-lora)
    python run_multibert.py eval --config experiment.json

    # Coarse-to-fine adapter hyperparameter search
    python run_multibert.py gridsearch --config experiment.json --kind prefix

Environment:
    MULTIBERT_DEBUG=1   verbose diagnostics on standard error
    MULTIBERT_QUIET=1   no status lines or progress bars
"""

import os
import sys

# Add the package directory to the Python path
package_root = os.path.dirname(os.path.abspath(__file__))
if package_root not in sys.path:
    sys.path.insert(0, package_root)

from multibert.cli import main


if __name__ == '__main__':
    sys.exit(main())
