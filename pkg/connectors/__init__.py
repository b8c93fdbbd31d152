"""Storage connectors package."""
