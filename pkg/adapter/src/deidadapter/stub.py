"""Stub engine for protocol and offset-conversion testing.

Looks up entities for each note in a side-channel JSON file keyed by the
request text's first line (the harness note id is not visible to engines,
so fixtures key on a text prefix) or, simpler, on the exact text. The
fixture file maps ``key -> [[label, start, end], ...]`` with offsets in the
configured unit.

Wire it as a ner_library engine::

    {"engine": "ner_library",
     "model": "deidadapter.stub:build_engine",
     "offset_unit": "byte",
     "label_filter": ["PATIENT", "DOCTOR"],
     "settings": {"gold_file": "gold.json", "key": "first_line"}}
"""

from __future__ import annotations

import json


def build_engine(settings: dict):
    with open(settings["gold_file"], encoding="utf-8") as fh:
        gold = json.load(fh)
    key_mode = settings.get("key", "first_line")
    fail_key = settings.get("fail_key")

    def analyze(text: str):
        key = text.split("\n", 1)[0] if key_mode == "first_line" else text
        if fail_key is not None and key == fail_key:
            raise RuntimeError(f"stub engine configured to fail on {key!r}")
        return [tuple(item) for item in gold.get(key, [])]

    return analyze
