"""LLM providers package."""
