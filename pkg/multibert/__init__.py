# Multi-domain tagging package
