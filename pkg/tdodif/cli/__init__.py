"""Command line interface for tdodif."""
