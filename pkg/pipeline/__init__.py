"""Experiment stages and their artifacts."""
