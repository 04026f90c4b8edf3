"""De-identifier backends behind one uniform interface.

Built-in kinds:

* ``reference``        rule-based scrubber (lexicon + title heuristics)
* ``oracle``           returns the ground-truth spans; pins perfect scores
* ``external_process`` newline-delimited JSON over a child process
* ``http``             the same request/response shapes POSTed to a URL
* ``llm_grounded``     external/HTTP transport whose responses carry a
                       comma-separated name list instead of spans

Long notes are split with :func:`chunk_note` before being sent and the
returned spans shifted back with :func:`remap_spans`. When a length limit is
configured, request ids take the form ``<note_id>@<global_offset>``.
"""

from __future__ import annotations

import json
import logging
import queue
import re
import shlex
import subprocess
import threading
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .names import Catalog
from .templates import NoteCorpus

log = logging.getLogger(__name__)

BACKEND_KINDS = ("reference", "oracle", "external_process", "http", "llm_grounded")

DEFAULT_TITLES = ("Dr.", "Mr.", "Mrs.", "Ms.", "Prof.")


class BackendConfigError(ValueError):
    pass


class BackendSpawnError(RuntimeError):
    pass


class SpanBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionSpan:
    start: int
    end: int
    note_id: str


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    kind: str
    max_input_chars: int | None = None
    strip_titles: bool = False
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise BackendConfigError(f"unknown backend kind {self.kind!r}")
        if self.max_input_chars is not None and self.max_input_chars <= 0:
            raise BackendConfigError("max_input_chars must be positive")
        if not re.fullmatch(r"[A-Za-z0-9_-]+", self.name):
            raise BackendConfigError(
                f"backend name {self.name!r} must be alphanumeric/_/- "
                "(it is used in file names)"
            )

    @classmethod
    def from_dict(cls, raw: dict) -> "BackendDescriptor":
        return cls(
            name=raw["name"],
            kind=raw["kind"],
            max_input_chars=raw.get("max_input_chars"),
            strip_titles=bool(raw.get("strip_titles", False)),
            settings=dict(raw.get("settings", {})),
        )


@dataclass
class BackendRun:
    """Per-note predictions plus an error ledger; keys cover every note."""

    spans_by_note: dict[str, list[tuple[int, int]]]
    errors: dict[str, str] = field(default_factory=dict)
    ungroundable: dict[str, list[str]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# reference scrubber


@dataclass(frozen=True)
class RuleConfig:
    title_triggers: tuple[str, ...] = ("Dr.", "Mr.", "Mrs.", "Ms.")
    titled_capitalized: bool = True  # flag the capitalized token after a title


def _lexicon_pattern(lexicon) -> re.Pattern | None:
    names = sorted(set(lexicon), key=lambda n: (-len(n), n))
    if not names:
        return None
    alternation = "|".join(re.escape(n) for n in names)
    return re.compile(rf"(?<!\w)(?:{alternation})(?!\w)")


def _title_pattern(rules: RuleConfig) -> re.Pattern | None:
    if not rules.titled_capitalized or not rules.title_triggers:
        return None
    alternation = "|".join(re.escape(t) for t in rules.title_triggers)
    return re.compile(rf"(?<!\w)(?:{alternation})\s+([A-Z][A-Za-z]*)")


def reference_deid(
    note_text: str, lexicon, rules: RuleConfig = RuleConfig()
) -> list[tuple[int, int]]:
    """Philter-style stand-in: lexicon hits plus capitalized tokens after titles."""
    lex = _lexicon_pattern(lexicon)
    title = _title_pattern(rules)
    return _scan_reference(note_text, lex, title)


def _scan_reference(
    text: str, lex: re.Pattern | None, title: re.Pattern | None
) -> list[tuple[int, int]]:
    spans = set()
    if lex is not None:
        for m in lex.finditer(text):
            spans.add((m.start(), m.end()))
    if title is not None:
        for m in title.finditer(text):
            spans.add((m.start(1), m.end(1)))
    return sorted(spans)


# ---------------------------------------------------------------------------
# chunking and span bookkeeping


def chunk_note(text: str, max_input_chars: int) -> list[tuple[str, int]]:
    """Split text into chunks of at most max_input_chars code points.

    Split points prefer the last newline in the window, then the last
    period, then a hard cut. Chunks concatenate to the original text.
    """
    if max_input_chars < 1:
        raise ValueError("max_input_chars must be >= 1")
    if len(text) <= max_input_chars:
        return [(text, 0)]
    chunks = []
    pos = 0
    while len(text) - pos > max_input_chars:
        window = text[pos : pos + max_input_chars]
        cut = window.rfind("\n")
        if cut == -1:
            cut = window.rfind(".")
        split = cut + 1 if cut != -1 else max_input_chars
        chunks.append((text[pos : pos + split], pos))
        pos += split
    chunks.append((text[pos:], pos))
    return chunks


def remap_spans(
    chunk_spans: list[tuple[int, int]], global_offset: int, chunk_len: int
) -> list[tuple[int, int]]:
    """Shift chunk-local spans to note-global offsets."""
    out = []
    for start, end in chunk_spans:
        if not (0 <= start < end <= chunk_len):
            raise SpanBoundsError(
                f"span ({start}, {end}) exceeds chunk bounds [0, {chunk_len})"
            )
        out.append((start + global_offset, end + global_offset))
    return out


def strip_title(
    span: tuple[int, int], text: str, titles: tuple[str, ...] = DEFAULT_TITLES
) -> tuple[int, int]:
    """Drop a leading title token (plus whitespace) from a predicted span."""
    start, end = span
    surface = text[start:end]
    for title in sorted(titles, key=len, reverse=True):
        if surface.startswith(title):
            rest = surface[len(title) :]
            stripped = rest.lstrip()
            ws = len(rest) - len(stripped)
            if ws > 0 and stripped:
                return (start + len(title) + ws, end)
    return (start, end)


def ground_llm_names(note_text: str, llm_output: str) -> tuple[list[tuple[int, int]], list[str]]:
    """Locate every comma-separated name of an LLM reply in the note.

    Returns (spans at each word-boundary occurrence, names never found).
    """
    seen = set()
    names = []
    for raw in llm_output.split(","):
        name = raw.strip()
        if name and name not in seen:
            seen.add(name)
            names.append(name)
    spans = []
    ungroundable = []
    for name in names:
        pattern = re.compile(rf"(?<!\w){re.escape(name)}(?!\w)")
        found = [(m.start(), m.end()) for m in pattern.finditer(note_text)]
        if found:
            spans.extend(found)
        else:
            ungroundable.append(name)
    return sorted(set(spans)), ungroundable


# ---------------------------------------------------------------------------
# request planning shared by all kinds


def _chunk_id(note_id: str, offset: int) -> str:
    return f"{note_id}@{offset}"


def _split_chunk_id(request_id: str) -> tuple[str, int]:
    note_id, _, offset = request_id.rpartition("@")
    return note_id, int(offset)


def _plan_requests(
    corpus: NoteCorpus, max_input_chars: int | None
) -> list[tuple[str, str, str, int]]:
    """(request_id, note_id, chunk_text, offset) per chunk, note order."""
    plan = []
    for note in sorted(corpus.notes, key=lambda n: n.note_id):
        if max_input_chars is None:
            plan.append((note.note_id, note.note_id, note.text, 0))
        else:
            for chunk_text, offset in chunk_note(note.text, max_input_chars):
                plan.append(
                    (_chunk_id(note.note_id, offset), note.note_id, chunk_text, offset)
                )
    return plan


def _finalize_run(
    corpus: NoteCorpus,
    descriptor: BackendDescriptor,
    spans_acc: dict[str, list[tuple[int, int]]],
    errors: dict[str, str],
    ungroundable: dict[str, list[str]],
) -> BackendRun:
    """Apply title stripping, drop errored notes to empty span lists."""
    text_by_note = {n.note_id: n.text for n in corpus.notes}
    titles = tuple(descriptor.settings.get("title_list", DEFAULT_TITLES))
    result: dict[str, list[tuple[int, int]]] = {}
    for note in corpus.notes:
        if note.note_id in errors:
            result[note.note_id] = []
            continue
        spans = sorted(set(spans_acc.get(note.note_id, [])))
        if descriptor.strip_titles:
            spans = sorted(
                {strip_title(s, text_by_note[note.note_id], titles) for s in spans}
            )
        result[note.note_id] = spans
    return BackendRun(spans_by_note=result, errors=errors, ungroundable=ungroundable)


# ---------------------------------------------------------------------------
# in-process kinds


def _run_in_process(
    descriptor: BackendDescriptor, corpus: NoteCorpus, catalog: Catalog | None
) -> BackendRun:
    gold = {n.note_id: [(m.start, m.end) for m in n.mentions] for n in corpus.notes}
    if descriptor.kind == "reference":
        lex_names = _reference_lexicon(descriptor, catalog)
        rules = RuleConfig(
            title_triggers=tuple(
                descriptor.settings.get("title_triggers", RuleConfig.title_triggers)
            ),
            titled_capitalized=bool(descriptor.settings.get("title_rule", True)),
        )
        lex = _lexicon_pattern(lex_names)
        title = _title_pattern(rules)

        def predict(note_id: str, chunk: str, offset: int) -> list[tuple[int, int]]:
            return _scan_reference(chunk, lex, title)

    elif descriptor.kind == "oracle":

        def predict(note_id: str, chunk: str, offset: int) -> list[tuple[int, int]]:
            window_end = offset + len(chunk)
            out = []
            for s, e in gold[note_id]:
                lo, hi = max(s, offset), min(e, window_end)
                if lo < hi:
                    out.append((lo - offset, hi - offset))
            return out

    else:
        raise BackendConfigError(f"{descriptor.kind} is not an in-process kind")

    spans_acc: dict[str, list[tuple[int, int]]] = {}
    errors: dict[str, str] = {}
    for request_id, note_id, chunk, offset in _plan_requests(
        corpus, descriptor.max_input_chars
    ):
        try:
            local = predict(note_id, chunk, offset)
            spans_acc.setdefault(note_id, []).extend(
                remap_spans(local, offset, len(chunk))
            )
        except Exception as exc:  # per-note isolation
            errors[note_id] = f"{type(exc).__name__}: {exc}"
    return _finalize_run(corpus, descriptor, spans_acc, errors, {})


def _reference_lexicon(descriptor: BackendDescriptor, catalog: Catalog | None):
    settings = descriptor.settings
    if "lexicon" in settings:
        return set(settings["lexicon"])
    if settings.get("lexicon_from_catalog"):
        if catalog is None:
            raise BackendConfigError(
                "lexicon_from_catalog requires a catalog in the run context"
            )
        return catalog.all_names(exclude_sets=tuple(settings.get("exclude_sets", ())))
    return set()


# ---------------------------------------------------------------------------
# external process transport


def _parse_response_line(line: str) -> tuple[str, list[tuple[int, int]] | None, str | None]:
    """Returns (request_id, spans, llm_output); raises on malformed lines."""
    record = json.loads(line)
    request_id = record["id"]
    if "output" in record:
        return request_id, None, str(record["output"])
    spans = [(int(s["start"]), int(s["end"])) for s in record["spans"]]
    return request_id, spans, None


def run_external(
    command,
    corpus: NoteCorpus,
    descriptor: BackendDescriptor,
    timeout: float | None = 60.0,
) -> BackendRun:
    """Drive a child process over the line protocol.

    One request per (possibly chunked) note; responses are matched by id, so
    out-of-order replies are tolerated. A malformed or missing response marks
    that note as errored without stopping the run.
    """
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    plan = _plan_requests(corpus, descriptor.max_input_chars)
    try:
        proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=None,
            text=True,
            encoding="utf-8",
        )
    except OSError as exc:
        raise BackendSpawnError(f"cannot spawn {argv!r}: {exc}") from exc

    def write_requests():
        try:
            for request_id, _, chunk, _ in plan:
                proc.stdin.write(
                    json.dumps({"id": request_id, "text": chunk}, ensure_ascii=False)
                    + "\n"
                )
            proc.stdin.close()
        except (BrokenPipeError, OSError):
            pass

    lines: queue.Queue = queue.Queue()

    def read_responses():
        for line in proc.stdout:
            lines.put(line)
        lines.put(None)

    writer = threading.Thread(target=write_requests, daemon=True)
    reader = threading.Thread(target=read_responses, daemon=True)
    writer.start()
    reader.start()

    expected = {
        request_id: (note_id, chunk, offset)
        for request_id, note_id, chunk, offset in plan
    }
    spans_acc: dict[str, list[tuple[int, int]]] = {}
    errors: dict[str, str] = {}
    ungroundable: dict[str, list[str]] = {}
    pending = set(expected)
    while pending:
        try:
            line = lines.get(timeout=timeout)
        except queue.Empty:
            for request_id in pending:
                errors.setdefault(expected[request_id][0], "timeout waiting for response")
            proc.kill()
            break
        if line is None:  # EOF
            for request_id in pending:
                errors.setdefault(expected[request_id][0], "no response before EOF")
            break
        line = line.strip()
        if not line:
            continue
        try:
            request_id, spans, llm_output = _parse_response_line(line)
            note_id, chunk, offset = expected[request_id]
        except Exception as exc:
            log.warning("unparseable backend response %r: %s", line[:120], exc)
            continue
        pending.discard(request_id)
        try:
            _accumulate(
                descriptor, spans_acc, ungroundable, note_id, chunk, offset,
                spans, llm_output,
            )
        except Exception as exc:
            errors[note_id] = f"{type(exc).__name__}: {exc}"
    try:
        proc.wait(timeout=10)
    except subprocess.TimeoutExpired:
        log.warning("backend process did not exit after EOF; killing it")
        proc.kill()
    return _finalize_run(corpus, descriptor, spans_acc, errors, ungroundable)


def _accumulate(
    descriptor: BackendDescriptor,
    spans_acc: dict,
    ungroundable: dict,
    note_id: str,
    chunk: str,
    offset: int,
    spans: list[tuple[int, int]] | None,
    llm_output: str | None,
) -> None:
    """Fold one response into the per-note accumulators."""
    if llm_output is not None:
        grounded, missing = ground_llm_names(chunk, llm_output)
        spans_acc.setdefault(note_id, []).extend(
            remap_spans(grounded, offset, len(chunk))
        )
        if missing:
            ungroundable.setdefault(note_id, []).extend(missing)
        return
    if spans is None:
        raise ValueError("response carries neither spans nor output")
    if descriptor.kind == "llm_grounded":
        # adapter already grounded the names itself; accept its spans
        pass
    spans_acc.setdefault(note_id, []).extend(remap_spans(spans, offset, len(chunk)))


# ---------------------------------------------------------------------------
# HTTP transport


def _post_json(url: str, payload: dict, timeout: float | None) -> dict:
    data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
    request = urllib.request.Request(
        url, data=data, headers={"Content-Type": "application/json"}
    )
    with urllib.request.urlopen(request, timeout=timeout) as response:
        return json.loads(response.read().decode("utf-8"))


def run_http(
    corpus: NoteCorpus,
    descriptor: BackendDescriptor,
    workers: int = 1,
    timeout: float | None = 60.0,
) -> BackendRun:
    """POST one request per (possibly chunked) note to a configured URL."""
    url = descriptor.settings.get("url")
    if not url:
        raise BackendConfigError("http backend requires settings.url")
    plan = _plan_requests(corpus, descriptor.max_input_chars)
    spans_acc: dict[str, list[tuple[int, int]]] = {}
    errors: dict[str, str] = {}
    ungroundable: dict[str, list[str]] = {}

    def fetch(item):
        request_id, _, chunk, _ = item
        return _post_json(url, {"id": request_id, "text": chunk}, timeout)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [(item, pool.submit(fetch, item)) for item in plan]
        for (request_id, note_id, chunk, offset), future in futures:
            try:
                record = future.result()
                if record.get("id") != request_id:
                    raise ValueError(f"response id {record.get('id')!r} != {request_id!r}")
                if "output" in record:
                    spans, llm_output = None, str(record["output"])
                else:
                    spans = [(int(s["start"]), int(s["end"])) for s in record["spans"]]
                    llm_output = None
                _accumulate(
                    descriptor, spans_acc, ungroundable, note_id, chunk, offset,
                    spans, llm_output,
                )
            except Exception as exc:
                errors[note_id] = f"{type(exc).__name__}: {exc}"
    return _finalize_run(corpus, descriptor, spans_acc, errors, ungroundable)


# ---------------------------------------------------------------------------
# entry point


def run_backend(
    descriptor: BackendDescriptor,
    corpus: NoteCorpus,
    catalog: Catalog | None = None,
    workers: int = 1,
    timeout: float | None = 60.0,
) -> BackendRun:
    """Execute one backend over a corpus; never raises for per-note faults."""
    if descriptor.kind in ("reference", "oracle"):
        return _run_in_process(descriptor, corpus, catalog)
    if descriptor.kind == "http":
        return run_http(corpus, descriptor, workers=workers, timeout=timeout)
    if descriptor.kind in ("external_process", "llm_grounded"):
        command = descriptor.settings.get("command")
        if not command:
            raise BackendConfigError(f"{descriptor.kind} backend requires settings.command")
        if descriptor.settings.get("transport") == "http":
            return run_http(corpus, descriptor, workers=workers, timeout=timeout)
        return run_external(command, corpus, descriptor, timeout=timeout)
    raise BackendConfigError(f"unknown backend kind {descriptor.kind!r}")
