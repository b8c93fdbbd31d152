"""Human-readable run summaries."""
