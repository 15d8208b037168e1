"""HTTP sidecar serving encoder and generator models for the QA engine."""

__version__ = "0.1.0"
