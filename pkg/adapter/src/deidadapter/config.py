"""Adapter configuration.

Loaded from a JSON file; secrets are named by environment variable and read
at call time, never stored or logged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

ENGINES = ("ner_library", "phi_cloud_api", "llm_api")


class AdapterConfigError(ValueError):
    pass


@dataclass
class AdapterConfig:
    engine: str
    model: str = ""  # model name, import target, or endpoint URL
    label_filter: tuple[str, ...] = ()
    credential_env: dict[str, str] = field(default_factory=dict)
    rate_limit: float | None = None  # requests per second to the engine
    offset_unit: str = "codepoint"  # unit the engine reports, when fixed
    workers: int = 4
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise AdapterConfigError(
                f"engine must be one of {ENGINES}, got {self.engine!r}"
            )
        if self.engine != "llm_api" and not self.label_filter:
            raise AdapterConfigError("label_filter must not be empty")
        if self.rate_limit is not None and self.rate_limit <= 0:
            raise AdapterConfigError("rate_limit must be positive")
        if self.workers < 1:
            raise AdapterConfigError("workers must be >= 1")
        self.label_filter = tuple(self.label_filter)

    @classmethod
    def from_file(cls, path) -> "AdapterConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise AdapterConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**raw)
