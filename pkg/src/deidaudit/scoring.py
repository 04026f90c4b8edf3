"""Span matching and recall scoring.

A mention counts as recalled when every code point of its range lies inside
the union of the backend's predicted spans; the rule is insensitive to span
granularity, so token-level and phrase-level backends (and chunk-boundary
splits) score identically. For full-name mentions the first and last
components are also checked separately, which feeds the partial-credit
analysis for polysemy names.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .templates import NoteCorpus, PopulatedNote

log = logging.getLogger(__name__)


class SpanOutOfBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class MentionOutcome:
    note_id: str
    mention_index: int
    set_id: int
    template_id: int
    part: str
    context_gender: str | None
    set_gender: str | None
    recalled: bool
    covered_parts: frozenset[str]


@dataclass(frozen=True)
class ScoreTriple:
    precision: float | None
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    precision_defined: bool


@dataclass(frozen=True)
class GroupRecall:
    label: str
    recalled_count: int
    mention_count: int

    @property
    def recall(self) -> float:
        return self.recalled_count / self.mention_count


@dataclass(frozen=True)
class ContextDiff:
    defined: bool
    difference: float | None
    consistent: GroupRecall | None
    inconsistent: GroupRecall | None


def merge_spans(spans) -> list[tuple[int, int]]:
    """Union adjacent/overlapping spans into maximal disjoint intervals."""
    merged: list[list[int]] = []
    for start, end in sorted(spans):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(s, e) for s, e in merged]


def _covers(merged: list[tuple[int, int]], start: int, end: int) -> bool:
    """True when [start, end) is fully inside one merged interval."""
    for s, e in merged:
        if s <= start and end <= e:
            return True
        if s > start:
            break
    return False


def _component_ranges(note: PopulatedNote, mention) -> dict[str, tuple[int, int]]:
    if mention.part != "full":
        return {mention.part: (mention.start, mention.end)}
    surface = note.text[mention.start : mention.end]
    sep = surface.find(" ")
    if sep == -1:  # populate() always inserts "first last"
        raise ValueError(f"full mention without separator in note {note.note_id}")
    return {
        "first": (mention.start, mention.start + sep),
        "last": (mention.start + sep + 1, mention.end),
    }


def match_spans(note: PopulatedNote, predicted_spans) -> list[MentionOutcome]:
    """Match one note's gold mentions against its predicted spans."""
    n = len(note.text)
    for start, end in predicted_spans:
        if not (0 <= start < end <= n):
            raise SpanOutOfBoundsError(
                f"span ({start}, {end}) outside note {note.note_id} of length {n}"
            )
    merged = merge_spans(predicted_spans)
    outcomes = []
    for idx, mention in enumerate(note.mentions):
        components = _component_ranges(note, mention)
        covered = frozenset(
            part for part, (s, e) in components.items() if _covers(merged, s, e)
        )
        outcomes.append(
            MentionOutcome(
                note_id=note.note_id,
                mention_index=idx,
                set_id=note.set_id,
                template_id=note.template_id,
                part=mention.part,
                context_gender=mention.context_gender,
                set_gender=mention.set_gender,
                recalled=covered == frozenset(components),
                covered_parts=covered,
            )
        )
    return outcomes


def evaluate_corpus(corpus: NoteCorpus, spans_by_note: dict) -> list[MentionOutcome]:
    """Match every note, ordered by (note_id, mention_index)."""
    outcomes = []
    for note in sorted(corpus.notes, key=lambda n: n.note_id):
        outcomes.extend(match_spans(note, spans_by_note.get(note.note_id, [])))
    return outcomes


def _false_positives(note: PopulatedNote, predicted_spans) -> int:
    """Merged predicted spans overlapping no gold mention."""
    merged = merge_spans(predicted_spans)
    count = 0
    for s, e in merged:
        if not any(m.start < e and s < m.end for m in note.mentions):
            count += 1
    return count


def note_counts(
    corpus: NoteCorpus, spans_by_note: dict, outcomes: list[MentionOutcome]
) -> dict[str, tuple[int, int, int]]:
    """Per-note (tp, fn, fp) counts for scoring and bootstrap resampling."""
    recalled: dict[str, int] = {}
    total: dict[str, int] = {}
    for o in outcomes:
        total[o.note_id] = total.get(o.note_id, 0) + 1
        recalled[o.note_id] = recalled.get(o.note_id, 0) + int(o.recalled)
    counts = {}
    for note in corpus.notes:
        tp = recalled.get(note.note_id, 0)
        fn = total.get(note.note_id, 0) - tp
        fp = _false_positives(note, spans_by_note.get(note.note_id, []))
        counts[note.note_id] = (tp, fn, fp)
    return counts


def score_from_counts(tp: int, fn: int, fp: int, any_predictions: bool) -> ScoreTriple:
    recall = tp / (tp + fn) if tp + fn else 0.0
    if any_predictions and tp + fp > 0:
        precision = tp / (tp + fp)
        defined = True
    else:
        precision, defined = None, False
    if defined and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
    return ScoreTriple(
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp,
        fp=fp,
        fn=fn,
        precision_defined=defined,
    )


def score(
    outcomes: list[MentionOutcome], spans_by_note: dict, corpus: NoteCorpus
) -> ScoreTriple:
    """Corpus-level precision/recall/F1.

    tp and fn count gold mentions; fp counts merged predicted spans that
    overlap no gold mention. Precision is undefined (None, f1 = 0) when the
    backend produced nothing to be precise about.
    """
    counts = note_counts(corpus, spans_by_note, outcomes)
    tp = sum(c[0] for c in counts.values())
    fn = sum(c[1] for c in counts.values())
    fp = sum(c[2] for c in counts.values())
    any_predictions = any(spans_by_note.get(n.note_id) for n in corpus.notes)
    return score_from_counts(tp, fn, fp, any_predictions)


def group_recall(
    outcomes: list[MentionOutcome], pooling: dict[str, list[int]]
) -> tuple[list[GroupRecall], GroupRecall, list[str]]:
    """Micro recall per demographic group plus the pooled recall.

    Groups with zero mentions are excluded and reported; pooled recall runs
    over the union of the dimension's groups.
    """
    set_to_group = {
        set_id: group for group, set_ids in pooling.items() for set_id in set_ids
    }
    recalled: dict[str, int] = {g: 0 for g in pooling}
    totals: dict[str, int] = {g: 0 for g in pooling}
    for o in outcomes:
        group = set_to_group.get(o.set_id)
        if group is None:
            continue
        totals[group] += 1
        recalled[group] += int(o.recalled)
    groups = []
    skipped = []
    for label in pooling:
        if totals[label] == 0:
            skipped.append(label)
            log.warning("group %r has no mentions; excluded from gap metrics", label)
            continue
        groups.append(GroupRecall(label, recalled[label], totals[label]))
    pooled = GroupRecall(
        "pooled",
        sum(g.recalled_count for g in groups),
        sum(g.mention_count for g in groups),
    )
    return groups, pooled, skipped


def polysemy_partial_recall(outcomes: list[MentionOutcome]) -> tuple[float, float]:
    """(strict, augmented) recall for a polysemy corpus.

    Strict requires full coverage; augmented also credits a mention whose
    last-name component was covered even though the first name was missed.
    """
    if not outcomes:
        raise ValueError("no outcomes to score")
    strict = sum(o.recalled for o in outcomes)
    augmented = sum(o.recalled or "last" in o.covered_parts for o in outcomes)
    return strict / len(outcomes), augmented / len(outcomes)


def context_consistency_diff(outcomes: list[MentionOutcome]) -> ContextDiff:
    """Recall(context-consistent) - Recall(context-inconsistent).

    Only mentions annotated with a local context gender participate; a
    mention is consistent when that annotation matches its name set's
    gender. Undefined (flagged) when either side is empty.
    """
    cons_n = cons_r = incons_n = incons_r = 0
    for o in outcomes:
        if o.context_gender is None or o.set_gender is None:
            continue
        if o.context_gender == o.set_gender:
            cons_n += 1
            cons_r += int(o.recalled)
        else:
            incons_n += 1
            incons_r += int(o.recalled)
    if cons_n == 0 or incons_n == 0:
        log.warning("context consistency difference undefined (one side empty)")
        return ContextDiff(False, None, None, None)
    consistent = GroupRecall("consistent", cons_r, cons_n)
    inconsistent = GroupRecall("inconsistent", incons_r, incons_n)
    return ContextDiff(
        True, consistent.recall - inconsistent.recall, consistent, inconsistent
    )
