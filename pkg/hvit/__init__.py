"""Hierarchical sequence/study transformers."""
