"""Frozen-encoder transfer heads."""
