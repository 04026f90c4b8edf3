"""Annotated note templates: parsing, population, corpus generation.

Placeholders follow the grammar ``{{name:<k>:<part>}}`` or
``{{name:<k>:<part>:ctx=<m|f>}}`` where ``k`` is the index of a unique
person within the template and ``part`` is ``first``, ``last`` or ``full``.
Template files may start with front-matter lines ``#origin_gender: male``
and ``#template_id: 7``.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .names import (
    Catalog,
    FullName,
    PolysemySet,
    POLYSEMY_LAST_NAME_SETS,
    POLYSEMY_SET_IDS,
    SET_PROFILES,
    sample_full_name,
)
from .rng import bounded_index, derive_key

log = logging.getLogger(__name__)

PARTS = ("first", "last", "full")

_PLACEHOLDER = re.compile(
    r"\{\{name:(?P<index>\d+):(?P<part>first|last|full)(?::ctx=(?P<ctx>[mf]))?\}\}"
)
_CTX_GENDER = {"m": "male", "f": "female"}


class TemplateParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class PopulateError(ValueError):
    pass


@dataclass(frozen=True)
class NameSlot:
    name_index: int
    part: str
    context_gender: str | None
    char_range: tuple[int, int]  # placeholder location in raw_text


@dataclass(frozen=True)
class Template:
    template_id: int
    raw_text: str
    slots: tuple[NameSlot, ...]
    origin_gender: str | None = None

    @property
    def name_indexes(self) -> tuple[int, ...]:
        return tuple(sorted({slot.name_index for slot in self.slots}))


@dataclass(frozen=True)
class GroundTruthMention:
    start: int
    end: int
    name_index: int
    part: str
    context_gender: str | None
    set_gender: str | None


@dataclass(frozen=True)
class PopulatedNote:
    note_id: str
    text: str
    template_id: int
    set_id: int
    rep: int
    mentions: tuple[GroundTruthMention, ...]
    assignment: dict[int, FullName] | None = None


@dataclass
class NoteCorpus:
    notes: list[PopulatedNote]
    seed: int | None = None
    origin_gender: dict[int, str | None] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.notes)

    def mention_count(self) -> int:
        return sum(len(n.mentions) for n in self.notes)


@dataclass(frozen=True)
class TemplateStats:
    length_chars: int
    unique_names: int
    total_mentions: int


def parse_template(
    text: str, template_id: int = 0, origin_gender: str | None = None
) -> Template:
    """Parse placeholder slots out of template body text.

    Any ``{{`` must open a well-formed placeholder; the error offset points
    at the opening braces.
    """
    slots = []
    pos = 0
    while True:
        start = text.find("{{", pos)
        if start == -1:
            break
        match = _PLACEHOLDER.match(text, start)
        if match is None:
            snippet = text[start : start + 24].splitlines()[0]
            raise TemplateParseError(f"malformed placeholder {snippet!r}", start)
        slots.append(
            NameSlot(
                name_index=int(match.group("index")),
                part=match.group("part"),
                context_gender=_CTX_GENDER.get(match.group("ctx") or ""),
                char_range=(match.start(), match.end()),
            )
        )
        pos = match.end()
    return Template(
        template_id=template_id,
        raw_text=text,
        slots=tuple(slots),
        origin_gender=origin_gender,
    )


def load_template_file(path, default_id: int = 0) -> Template:
    """Read one template file, honoring its front-matter lines."""
    text = Path(path).read_text(encoding="utf-8")
    origin_gender = None
    template_id = default_id
    lines = text.split("\n")
    body_start = 0
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("#") and ":" in stripped:
            key, _, value = stripped[1:].partition(":")
            key, value = key.strip(), value.strip()
            if key == "origin_gender":
                if value not in ("male", "female"):
                    raise TemplateParseError(
                        f"origin_gender must be male or female, got {value!r}", 0
                    )
                origin_gender = value
            elif key == "template_id":
                template_id = int(value)
            body_start += 1
            continue
        break
    body = "\n".join(lines[body_start:])
    return parse_template(body, template_id=template_id, origin_gender=origin_gender)


def load_template_dir(path) -> list[Template]:
    """Load every ``*.txt`` template under a directory, sorted by filename."""
    files = sorted(Path(path).glob("*.txt"))
    if not files:
        raise FileNotFoundError(f"no *.txt templates in {path}")
    templates = [load_template_file(f, default_id=i) for i, f in enumerate(files)]
    ids = [t.template_id for t in templates]
    if len(set(ids)) != len(ids):
        raise TemplateParseError(f"duplicate template_id among {sorted(ids)}", 0)
    return templates


def make_note_id(template_id: int, set_id: int, rep: int) -> str:
    return f"t{template_id:03d}-s{set_id:03d}-r{rep:02d}"


def populate(
    template: Template,
    name_assignment: dict[int, FullName],
    set_id: int,
    rep: int,
    set_gender: str | None = None,
) -> PopulatedNote:
    """Replace every slot with its assigned name and record mention spans.

    Offsets are Unicode code points over the output text.
    """
    missing = [k for k in template.name_indexes if k not in name_assignment]
    if missing:
        raise PopulateError(f"assignment missing name indexes {missing}")
    pieces = []
    mentions = []
    cursor = 0  # in raw_text
    out_len = 0  # in output text
    for slot in template.slots:
        s, e = slot.char_range
        pieces.append(template.raw_text[cursor:s])
        out_len += s - cursor
        name = name_assignment[slot.name_index]
        if slot.part == "first":
            inserted = name.first
        elif slot.part == "last":
            inserted = name.last
        else:
            inserted = f"{name.first} {name.last}"
        pieces.append(inserted)
        mentions.append(
            GroundTruthMention(
                start=out_len,
                end=out_len + len(inserted),
                name_index=slot.name_index,
                part=slot.part,
                context_gender=slot.context_gender,
                set_gender=set_gender,
            )
        )
        out_len += len(inserted)
        cursor = e
    pieces.append(template.raw_text[cursor:])
    return PopulatedNote(
        note_id=make_note_id(template.template_id, set_id, rep),
        text="".join(pieces),
        template_id=template.template_id,
        set_id=set_id,
        rep=rep,
        mentions=tuple(mentions),
        assignment=dict(name_assignment),
    )


def generate_corpus(
    catalog: Catalog,
    templates: list[Template],
    reps: int,
    global_seed: int,
) -> NoteCorpus:
    """Populate every template x name set x repetition combination.

    Name draws are keyed by (seed, template, set, rep, name index), so the
    output is bit-identical for equal seeds regardless of iteration order.
    """
    if not templates:
        raise ValueError("template list is empty")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    notes = []
    for template in sorted(templates, key=lambda t: t.template_id):
        for set_id in sorted(catalog.sets):
            gender = catalog[set_id].gender
            for rep in range(reps):
                assignment = {
                    k: sample_full_name(
                        catalog,
                        set_id,
                        derive_key(global_seed, "corpus", template.template_id, set_id, rep, k),
                    )
                    for k in template.name_indexes
                }
                notes.append(populate(template, assignment, set_id, rep, set_gender=gender))
    return NoteCorpus(
        notes=notes,
        seed=global_seed,
        origin_gender={t.template_id: t.origin_gender for t in templates},
    )


def generate_polysemy_corpus(
    catalog: Catalog,
    polysemy_sets: list[PolysemySet],
    templates: list[Template],
    reps: int,
    global_seed: int,
) -> NoteCorpus:
    """Corpus over the polysemy first-name sets.

    First names come from the polysemy set; last names from the matching
    race's medium-popularity list. Pseudo set ids 101..103 mark the race;
    mentions carry no set gender.
    """
    if not templates:
        raise ValueError("template list is empty")
    notes = []
    for template in sorted(templates, key=lambda t: t.template_id):
        for pset in polysemy_sets:
            set_id = POLYSEMY_SET_IDS[pset.race]
            lasts = catalog[POLYSEMY_LAST_NAME_SETS[pset.race]].last_names
            n_pairs = len(pset.first_names) * len(lasts)
            for rep in range(reps):
                assignment = {}
                for k in template.name_indexes:
                    key = derive_key(
                        global_seed, "polysemy", template.template_id, set_id, rep, k
                    )
                    idx = bounded_index(key, n_pairs)
                    fi, li = divmod(idx, len(lasts))
                    assignment[k] = FullName(
                        first=pset.first_names[fi], last=lasts[li], source_set=set_id
                    )
                notes.append(populate(template, assignment, set_id, rep, set_gender=None))
    return NoteCorpus(
        notes=notes,
        seed=global_seed,
        origin_gender={t.template_id: t.origin_gender for t in templates},
    )


def template_stats(template: Template) -> TemplateStats:
    """Structural statistics; length is of the raw (unpopulated) text."""
    return TemplateStats(
        length_chars=len(template.raw_text),
        unique_names=len(template.name_indexes),
        total_mentions=len(template.slots),
    )


def gender_consistent_subset(
    corpus: NoteCorpus, templates: list[Template] | None = None
) -> tuple[NoteCorpus, list[dict]]:
    """Keep notes whose set gender matches the template's origin gender.

    Notes from templates without an origin annotation are dropped with a
    warning. Returns the subset and a manifest of dropped notes.
    """
    origin = dict(corpus.origin_gender)
    if templates is not None:
        origin.update({t.template_id: t.origin_gender for t in templates})
    kept = []
    dropped = []
    unannotated = set()
    for note in corpus.notes:
        note_origin = origin.get(note.template_id)
        if note_origin is None:
            unannotated.add(note.template_id)
            dropped.append({"note_id": note.note_id, "reason": "no_origin_annotation"})
            continue
        profile = SET_PROFILES.get(note.set_id)
        set_gender = profile[0] if profile else None
        if set_gender == note_origin:
            kept.append(note)
        else:
            dropped.append({"note_id": note.note_id, "reason": "gender_mismatch"})
    if unannotated:
        log.warning(
            "templates %s have no origin_gender annotation; their notes were excluded",
            sorted(unannotated),
        )
    subset = NoteCorpus(notes=kept, seed=corpus.seed, origin_gender=origin)
    return subset, dropped


@dataclass
class FinetuneCorpus:
    train: list[PopulatedNote]
    validation: list[PopulatedNote]
    name_mode: str
    sampled_names: dict[int, list[str]]  # set_id -> "First Last" drawn for training
    held_out_names: dict[int, list[str]]  # set_id -> names reserved for testing


DEFAULT_FINETUNE_SIZES = (1000, 100)


def _seeded_selection(n_items: int, count: int, key: int) -> list[int]:
    """Choose `count` distinct indices in [0, n_items) via keyed Fisher-Yates."""
    order = list(range(n_items))
    for i in range(count):
        j = i + bounded_index(derive_key(key, i), n_items - i)
        order[i], order[j] = order[j], order[i]
    return order[:count]


def build_finetune_corpus(
    context_docs: list[Template],
    name_mode: str,
    catalog: Catalog,
    popular_pool: list[FullName] | None = None,
    sizes: tuple[int, int] = DEFAULT_FINETUNE_SIZES,
    seed: int = 0,
) -> FinetuneCorpus:
    """Assemble annotated fine-tuning corpora from user context documents.

    ``diverse`` mode draws ten first and ten last names per set (paired one
    to one, 160 full names total) and records the complementary names as the
    held-out test pool. ``popular`` mode uses a caller-supplied pool that
    must be disjoint from the catalog. Documents are populated once each;
    records carry set_id 0.
    """
    if name_mode not in ("diverse", "popular"):
        raise ValueError(f"name_mode must be diverse or popular, got {name_mode!r}")
    train_n, val_n = sizes
    if train_n < 1 or val_n < 0:
        raise ValueError(f"bad corpus sizes {sizes}")
    if len(context_docs) < train_n + val_n:
        raise ValueError(
            f"{len(context_docs)} context documents cannot fill "
            f"{train_n} train + {val_n} validation"
        )

    sampled: dict[int, list[str]] = {}
    held_out: dict[int, list[str]] = {}
    if name_mode == "diverse":
        half = len(catalog[1].first_names) // 2
        pool: list[FullName] = []
        for set_id in sorted(catalog.sets):
            name_set = catalog[set_id]
            fidx = _seeded_selection(
                len(name_set.first_names), half, derive_key(seed, "ft-first", set_id)
            )
            lidx = _seeded_selection(
                len(name_set.last_names), half, derive_key(seed, "ft-last", set_id)
            )
            chosen = [
                FullName(name_set.first_names[f], name_set.last_names[l], set_id)
                for f, l in zip(fidx, lidx)
            ]
            pool.extend(chosen)
            sampled[set_id] = [str(n) for n in chosen]
            rest_f = [i for i in range(len(name_set.first_names)) if i not in set(fidx)]
            rest_l = [i for i in range(len(name_set.last_names)) if i not in set(lidx)]
            held_out[set_id] = [
                f"{name_set.first_names[f]} {name_set.last_names[l]}"
                for f, l in zip(rest_f, rest_l)
            ]
    else:
        if not popular_pool:
            raise ValueError("popular mode requires a popular_pool")
        catalog_firsts = {n for s in catalog.sets.values() for n in s.first_names}
        catalog_lasts = {n for s in catalog.sets.values() for n in s.last_names}
        clashes = [
            str(n)
            for n in popular_pool
            if n.first in catalog_firsts or n.last in catalog_lasts
        ]
        if clashes:
            raise ValueError(f"popular pool overlaps the catalog: {clashes[:5]}")
        pool = list(popular_pool)

    doc_order = _seeded_selection(
        len(context_docs), train_n + val_n, derive_key(seed, "ft-docs")
    )
    gender_by_set = {sid: prof[0] for sid, prof in SET_PROFILES.items()}

    def build_split(name: str, doc_indices: list[int]) -> list[PopulatedNote]:
        notes = []
        for i, doc_idx in enumerate(doc_indices):
            doc = context_docs[doc_idx]
            assignment = {}
            for k in doc.name_indexes:
                pick = bounded_index(derive_key(seed, "ft-name", name, i, k), len(pool))
                assignment[k] = pool[pick]
            note = populate(doc, assignment, set_id=0, rep=0, set_gender=None)
            mentions = tuple(
                GroundTruthMention(
                    start=m.start,
                    end=m.end,
                    name_index=m.name_index,
                    part=m.part,
                    context_gender=m.context_gender,
                    set_gender=gender_by_set.get(assignment[m.name_index].source_set),
                )
                for m in note.mentions
            )
            notes.append(
                PopulatedNote(
                    note_id=f"ft-{name}-{i:05d}",
                    text=note.text,
                    template_id=doc.template_id,
                    set_id=0,
                    rep=0,
                    mentions=mentions,
                    assignment=note.assignment,
                )
            )
        return notes

    return FinetuneCorpus(
        train=build_split("train", doc_order[:train_n]),
        validation=build_split("val", doc_order[train_n : train_n + val_n]),
        name_mode=name_mode,
        sampled_names=sampled,
        held_out_names=held_out,
    )
