"""File formats: corpus, prediction, and outcome records as NDJSON.

All offsets are Unicode code points. Records are written with sorted keys
and no extra whitespace so equal inputs produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

from .templates import GroundTruthMention, NoteCorpus, PopulatedNote


def dumps_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def dumps_report(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=1) + "\n"


def note_record(note: PopulatedNote) -> dict:
    return {
        "note_id": note.note_id,
        "text": note.text,
        "template_id": note.template_id,
        "set_id": note.set_id,
        "rep": note.rep,
        "mentions": [
            {
                "start": m.start,
                "end": m.end,
                "part": m.part,
                "name_index": m.name_index,
                "ctx": m.context_gender,
                "set_gender": m.set_gender,
            }
            for m in note.mentions
        ],
    }


def note_from_record(record: dict) -> PopulatedNote:
    return PopulatedNote(
        note_id=record["note_id"],
        text=record["text"],
        template_id=record["template_id"],
        set_id=record["set_id"],
        rep=record["rep"],
        mentions=tuple(
            GroundTruthMention(
                start=m["start"],
                end=m["end"],
                name_index=m["name_index"],
                part=m["part"],
                context_gender=m.get("ctx"),
                set_gender=m.get("set_gender"),
            )
            for m in record["mentions"]
        ),
        assignment=None,
    )


def write_corpus(corpus: NoteCorpus, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for note in corpus.notes:
            fh.write(dumps_record(note_record(note)) + "\n")


def read_corpus(path) -> NoteCorpus:
    notes = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                notes.append(note_from_record(json.loads(line)))
    return NoteCorpus(notes=notes)


def write_predictions(
    spans_by_note: dict, errors: dict, path, ungroundable: dict | None = None
) -> None:
    """One record per note: {note_id, spans, error?, ungroundable?}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ungroundable = ungroundable or {}
    with path.open("w", encoding="utf-8") as fh:
        for note_id in sorted(spans_by_note):
            record = {
                "note_id": note_id,
                "spans": [{"start": s, "end": e} for s, e in spans_by_note[note_id]],
            }
            if note_id in errors:
                record["error"] = errors[note_id]
            if note_id in ungroundable:
                record["ungroundable"] = sorted(set(ungroundable[note_id]))
            fh.write(dumps_record(record) + "\n")


def read_predictions(path) -> tuple[dict, dict]:
    spans_by_note: dict[str, list[tuple[int, int]]] = {}
    errors: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            note_id = record["note_id"]
            spans_by_note[note_id] = [(s["start"], s["end"]) for s in record["spans"]]
            if "error" in record:
                errors[note_id] = record["error"]
    return spans_by_note, errors


def write_outcomes(outcomes, path) -> None:
    """Outcome dump: {note_id, mention_index, recalled, covered_parts}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(
                dumps_record(
                    {
                        "note_id": o.note_id,
                        "mention_index": o.mention_index,
                        "recalled": o.recalled,
                        "covered_parts": sorted(o.covered_parts),
                    }
                )
                + "\n"
            )
