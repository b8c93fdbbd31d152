"""Token-level LIME explanations."""
