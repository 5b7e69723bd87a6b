"""Satisfaction-aware multi-task rank fusion trained with dual-relative
policy optimization, plus a deterministic synthetic search environment for
verifying it end to end."""

__version__ = "0.1.0"
