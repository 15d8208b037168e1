"""Sidecar configuration. The listen address can be overridden with the
XLINGQA_SIDECAR_ADDRESS environment variable (host:port)."""

from __future__ import annotations

import os
from dataclasses import dataclass

ADDRESS_ENV = "XLINGQA_SIDECAR_ADDRESS"


@dataclass(frozen=True)
class SidecarConfig:
    encoder_model: str = "stub:768"
    generator_model: str = "stub"
    host: str = "127.0.0.1"
    port: int = 8901
    max_batch_size: int = 128
    max_answer_tokens: int = 25

    def __post_init__(self):
        if self.max_batch_size < 1:
            raise ValueError("max_batch_size must be >= 1")
        if not self.host or not (0 < self.port < 65536):
            raise ValueError(f"malformed listen address {self.host}:{self.port}")

    @classmethod
    def from_env(cls, **kwargs) -> "SidecarConfig":
        address = os.environ.get(ADDRESS_ENV)
        if address:
            host, _, port = address.rpartition(":")
            kwargs["host"] = host or kwargs.get("host", "127.0.0.1")
            kwargs["port"] = int(port)
        return cls(**kwargs)
