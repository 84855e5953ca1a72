"""Command-line entry point: ``python -m tcinn.cli.main``."""
