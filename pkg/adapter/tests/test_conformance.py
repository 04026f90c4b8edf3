"""Protocol conformance against the de-identification harness.

The harness drives this adapter as an external-process backend over the
line protocol (via the harness CLI only; no Python imports of harness
internals). With a stub engine that reports the gold entities in BYTE
offsets, the adapter must reproduce the harness's in-process oracle backend
scores exactly, on a corpus full of multibyte characters.
"""

import json
import subprocess
import sys
from pathlib import Path

import pytest


def _harness(*args):
    result = subprocess.run(
        [sys.executable, "-m", "deidaudit.cli", *args],
        capture_output=True, text=True,
    )
    assert result.returncode == 0, result.stderr
    return result.stdout


MULTIBYTE_FIRST = ["José", "Ngô", "Zoë", "Müller", "Ağça", "Ñato", "Øyvind",
                   "Šimon", "Θεό", "Żak"]


def _write_catalog(path: Path) -> None:
    """A schema-valid catalog whose names are full of multibyte characters."""
    profiles = {
        1: ("male", "White", "top", "2000s"),
        2: ("female", "White", "top", "2000s"),
        3: ("male", "White", "medium", "2000s"),
        4: ("female", "White", "medium", "2000s"),
        5: ("male", "White", "bottom", "2000s"),
        6: ("female", "White", "bottom", "2000s"),
        7: ("male", "Black", "medium", "2000s"),
        8: ("female", "Black", "medium", "2000s"),
        9: ("male", "Asian", "medium", "2000s"),
        10: ("female", "Asian", "medium", "2000s"),
        11: ("male", "Hispanic", "medium", "2000s"),
        12: ("female", "Hispanic", "medium", "2000s"),
        13: ("male", "White", "top", "1970s"),
        14: ("female", "White", "top", "1970s"),
        15: ("male", "White", "top", "1940s"),
        16: ("female", "White", "top", "1940s"),
    }
    # sets in the same (race, popularity, decade) stratum share last names
    strata = {}
    catalog = []
    for set_id, (gender, race, pop, decade) in profiles.items():
        stratum = (race, pop, decade)
        if stratum not in strata:
            sigil = len(strata)
            strata[stratum] = [
                f"Läst{sigil}µ{j}" for j in range(20)
            ]
        catalog.append({
            "set_id": set_id,
            "gender": gender, "race": race, "popularity": pop, "decade": decade,
            "first_names": [
                f"{MULTIBYTE_FIRST[j % len(MULTIBYTE_FIRST)]}{set_id}ç{j}"
                for j in range(20)
            ],
            "last_names": strata[stratum],
        })
    path.write_text(json.dumps(catalog, ensure_ascii=False), encoding="utf-8")


TEMPLATES = {
    "t1.txt": (
        "#origin_gender: male\n#template_id: 1\n"
        "Ünïcode note — patient {{name:1:full}} admitted.\n"
        "Seen by Dr. {{name:2:last}} at 08:00 ✓.\n"
        "Mr. {{name:1:last:ctx=m}} was stable; 癌症 screening negative.\n"
    ),
    "t2.txt": (
        "#origin_gender: female\n#template_id: 2\n"
        "Résumé of care for {{name:1:full}} (MRN 12345).\n"
        "Nurse {{name:2:full}} gave the première dose.\n"
        "Follow-up with {{name:1:first}} naïvely scheduled ☎.\n"
    ),
    "t3.txt": (
        "#origin_gender: male\n#template_id: 3\n"
        "Transfer note ⇒ {{name:1:full}} moved to unit β.\n"
        "Contact: {{name:2:last}}, then {{name:3:first}} (garni écrit).\n"
    ),
}


def _byte_span(text: str, start: int, end: int) -> tuple[int, int]:
    prefix = len(text[:start].encode("utf-8"))
    return prefix, prefix + len(text[start:end].encode("utf-8"))


@pytest.fixture(scope="module")
def harness_run(tmp_path_factory):
    """Generate a multibyte corpus, run oracle + adapter, score both."""
    root = tmp_path_factory.mktemp("conformance")
    catalog_path = root / "catalog.json"
    _write_catalog(catalog_path)
    template_dir = root / "templates"
    template_dir.mkdir()
    for name, body in TEMPLATES.items():
        (template_dir / name).write_text(body, encoding="utf-8")

    out = root / "audit"
    adapter_config = root / "adapter.json"
    harness_config = root / "config.json"
    gold_file = root / "gold.json"

    adapter_config.write_text(json.dumps({
        "engine": "ner_library",
        "model": "deidadapter.stub:build_engine",
        "label_filter": ["PATIENT", "DOCTOR"],
        "offset_unit": "byte",
        "workers": 3,
        "settings": {"gold_file": str(gold_file), "key": "text"},
    }), encoding="utf-8")

    harness_config.write_text(json.dumps({
        "seed": 424242,
        "reps": 2,
        "catalog": str(catalog_path),
        "templates": str(template_dir),
        "bootstrap_resamples": 80,
        "permutation_rounds": 100,
        "analyses": {"polysemy": False},
        "backends": [
            {"name": "oracle", "kind": "oracle"},
            {"name": "adapter", "kind": "external_process",
             "settings": {"command": [
                 sys.executable, "-m", "deidadapter",
                 "--config", str(adapter_config),
             ]}},
        ],
    }), encoding="utf-8")

    _harness("generate", "--config", str(harness_config), "--out", str(out))

    # gold side channel for the stub: entities in BYTE offsets keyed by the
    # exact note text, with labels the adapter must keep and one it must drop
    gold = {}
    with (out / "corpus.ndjson").open(encoding="utf-8") as fh:
        for line in fh:
            note = json.loads(line)
            entities = []
            for i, m in enumerate(note["mentions"]):
                label = "PATIENT" if i % 2 == 0 else "DOCTOR"
                start, end = _byte_span(note["text"], m["start"], m["end"])
                entities.append([label, start, end])
            entities.append(["DATE", 0, len("Transfer".encode("utf-8"))])
            gold[note["text"]] = entities
    gold_file.write_text(json.dumps(gold, ensure_ascii=False), encoding="utf-8")

    for backend in ("oracle", "adapter"):
        _harness(
            "run", "--config", str(harness_config), "--backend", backend,
            "--corpus", str(out / "corpus.ndjson"),
            "--out", str(out / "predictions" / f"{backend}.ndjson"),
        )
    _harness("score", "--config", str(harness_config), "--dir", str(out))
    result = json.loads((out / "result.json").read_text(encoding="utf-8"))
    return result, out


def test_corpus_is_actually_multibyte(harness_run):
    _, out = harness_run
    blob = (out / "corpus.ndjson").read_text(encoding="utf-8")
    assert len(blob.encode("utf-8")) > len(blob)


def test_adapter_matches_oracle_exactly(harness_run):
    result, _ = harness_run
    oracle = result["backends"]["oracle"]
    adapter = result["backends"]["adapter"]
    assert adapter["overall"]["precision"] == 1.0
    assert adapter["overall"]["recall"] == 1.0
    assert adapter["overall"]["f1"] == 1.0
    assert adapter == oracle


def test_outcome_dumps_identical(harness_run):
    _, out = harness_run
    oracle = (out / "outcomes" / "oracle.ndjson").read_bytes()
    adapter = (out / "outcomes" / "adapter.ndjson").read_bytes()
    assert oracle == adapter


def test_prediction_spans_slice_to_names(harness_run):
    """Offset correctness: every returned span slices to a gold name."""
    _, out = harness_run
    notes = {}
    with (out / "corpus.ndjson").open(encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            notes[record["note_id"]] = record
    checked = 0
    with (out / "predictions" / "adapter.ndjson").open(encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            note = notes[record["note_id"]]
            gold_surfaces = {
                note["text"][m["start"]:m["end"]] for m in note["mentions"]
            }
            for span in record["spans"]:
                surface = note["text"][span["start"]:span["end"]]
                assert surface in gold_surfaces
                checked += 1
    assert checked > 0
