"""Cross-lingual retrieve-then-generate question answering engine."""

__version__ = "0.1.0"
