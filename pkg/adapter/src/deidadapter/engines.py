"""Engine bindings: NER libraries, PHI cloud APIs, LLM endpoints.

An engine takes note text and returns either labeled entities (converted to
name spans by the adapter) or, for LLM endpoints, a raw text reply that the
harness grounds itself.
"""

from __future__ import annotations

import importlib
import json
import os
import urllib.request
from dataclasses import dataclass

from .config import AdapterConfig, AdapterConfigError
from .offsets import to_codepoint_span


@dataclass(frozen=True)
class Entity:
    label: str
    start: int
    end: int
    offset_unit: str = "codepoint"


@dataclass(frozen=True)
class EngineReply:
    entities: list[Entity] | None = None
    output: str | None = None  # raw LLM text for harness-side grounding


def label_map(
    entities: list[Entity], label_filter: tuple[str, ...], text: str
) -> list[tuple[int, int]]:
    """Keep configured labels, convert offsets, merge overlapping spans."""
    kept = []
    wanted = set(label_filter)
    for entity in entities:
        if entity.label not in wanted:
            continue
        kept.append(
            to_codepoint_span(entity.start, entity.end, text, entity.offset_unit)
        )
    merged: list[list[int]] = []
    for start, end in sorted(kept):
        if merged and start < merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(s, e) for s, e in merged]


def _credential(config: AdapterConfig, key: str) -> str | None:
    env_name = config.credential_env.get(key)
    return os.environ.get(env_name) if env_name else None


class NerLibraryEngine:
    """Wraps an importable NER callable.

    ``model`` is ``"module.path:factory"``; the factory receives the
    settings dict and returns a callable ``analyze(text) -> iterable``.
    Items may be (label, start, end) triples, dicts with those keys, or
    spaCy-style spans (``label_``, ``start_char``, ``end_char``).
    """

    def __init__(self, config: AdapterConfig):
        self.config = config
        module_name, _, attribute = config.model.partition(":")
        if not module_name or not attribute:
            raise AdapterConfigError(
                "ner_library model must look like 'module.path:factory'"
            )
        try:
            module = importlib.import_module(module_name)
        except ImportError as exc:
            raise AdapterConfigError(f"cannot import engine {module_name!r}: {exc}")
        factory = getattr(module, attribute)
        self.analyze = factory(dict(config.settings))

    def __call__(self, text: str) -> EngineReply:
        entities = []
        for item in self.analyze(text):
            if isinstance(item, dict):
                entities.append(
                    Entity(
                        label=str(item["label"]),
                        start=int(item["start"]),
                        end=int(item["end"]),
                        offset_unit=item.get("offset_unit", self.config.offset_unit),
                    )
                )
            elif hasattr(item, "label_"):
                entities.append(
                    Entity(
                        label=item.label_,
                        start=item.start_char,
                        end=item.end_char,
                        offset_unit="codepoint",
                    )
                )
            else:
                label, start, end = item
                entities.append(
                    Entity(str(label), int(start), int(end), self.config.offset_unit)
                )
        return EngineReply(entities=entities)


class PhiCloudEngine:
    """Generic PHI-detection HTTP API.

    ``model`` is the endpoint URL. The response field names and the offset
    unit differ per provider, so they live in settings:
    ``entities_key``, ``label_key``, ``start_key``, ``end_key``.
    """

    def __init__(self, config: AdapterConfig):
        self.config = config
        if not config.model:
            raise AdapterConfigError("phi_cloud_api requires an endpoint URL in model")
        s = config.settings
        self.entities_key = s.get("entities_key", "entities")
        self.label_key = s.get("label_key", "label")
        self.start_key = s.get("start_key", "start")
        self.end_key = s.get("end_key", "end")
        self.timeout = float(s.get("timeout_s", 30.0))

    def __call__(self, text: str) -> EngineReply:
        headers = {"Content-Type": "application/json"}
        token = _credential(self.config, "api_key")
        if token:
            headers[self.config.settings.get("auth_header", "Authorization")] = token
        request = urllib.request.Request(
            self.config.model,
            data=json.dumps({"text": text}, ensure_ascii=False).encode("utf-8"),
            headers=headers,
        )
        with urllib.request.urlopen(request, timeout=self.timeout) as response:
            payload = json.loads(response.read().decode("utf-8"))
        entities = [
            Entity(
                label=str(e[self.label_key]),
                start=int(e[self.start_key]),
                end=int(e[self.end_key]),
                offset_unit=self.config.offset_unit,
            )
            for e in payload.get(self.entities_key, [])
        ]
        return EngineReply(entities=entities)


class LlmEngine:
    """Chat-style LLM endpoint; replies with raw text for the harness to ground."""

    PROMPT = (
        "Identify the names in the following clinical note. "
        "Output names only separated by commas."
    )

    def __init__(self, config: AdapterConfig):
        self.config = config
        if not config.model:
            raise AdapterConfigError("llm_api requires an endpoint URL in model")
        self.timeout = float(config.settings.get("timeout_s", 60.0))
        self.output_key = config.settings.get("output_key", "output")

    def __call__(self, text: str) -> EngineReply:
        headers = {"Content-Type": "application/json"}
        token = _credential(self.config, "api_key")
        if token:
            headers[self.config.settings.get("auth_header", "Authorization")] = token
        body = {"prompt": f"{self.PROMPT}\n\n{text}"}
        request = urllib.request.Request(
            self.config.model,
            data=json.dumps(body, ensure_ascii=False).encode("utf-8"),
            headers=headers,
        )
        with urllib.request.urlopen(request, timeout=self.timeout) as response:
            payload = json.loads(response.read().decode("utf-8"))
        return EngineReply(output=str(payload.get(self.output_key, "")))


def build_engine(config: AdapterConfig):
    if config.engine == "ner_library":
        return NerLibraryEngine(config)
    if config.engine == "phi_cloud_api":
        return PhiCloudEngine(config)
    return LlmEngine(config)
