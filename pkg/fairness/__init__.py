"""Bias and algorithmic-fairness audit."""
