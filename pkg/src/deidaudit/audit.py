"""End-to-end audit orchestration and machine-readable reports.

An audit generates the evaluation corpora, drives every configured backend,
matches predictions against ground truth, and computes overall scores,
per-dimension gap metrics with hypothesis tests, per-set recalls, and the
optional polysemy / context / template-characteristic / hardest-subset /
gender-consistent analyses. All randomness flows from the single config
seed, so a finished audit is reproducible from one integer.

Report layout under the output directory:

    config.json                    config echo (excluded from determinism
                                   comparisons; holds paths/workers)
    corpus.ndjson                  evaluation notes with ground truth
    polysemy_corpus.ndjson         only when the polysemy analysis is on
    predictions/<backend>.ndjson   per-note predicted spans (+ errors)
    predictions/<backend>.polysemy.ndjson
    outcomes/<backend>.ndjson      per-mention outcome dump
    outcomes/<backend>.polysemy.ndjson
    result.json                    every computed number
    tables/*.csv                   fixed-schema tables mirroring result.json
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .backends import BackendDescriptor, BackendRun, run_backend
from .names import (
    Catalog,
    DIMENSIONS,
    POLYSEMY_SET_IDS,
    default_catalog,
    load_catalog,
    polysemy_catalog,
    pool_groups,
)
from .scoring import (
    MentionOutcome,
    context_consistency_diff,
    evaluate_corpus,
    group_recall,
    note_counts,
    polysemy_partial_recall,
    score_from_counts,
)
from .serialize import (
    dumps_report,
    read_corpus,
    read_predictions,
    write_corpus,
    write_outcomes,
    write_predictions,
)
from .stats import (
    bootstrap,
    bonferroni_level,
    correlate,
    dimension_test,
    gap_metrics,
    hypothesis_unit_recalls,
    stats_seed,
)
from .templates import (
    NoteCorpus,
    Template,
    gender_consistent_subset,
    generate_corpus,
    generate_polysemy_corpus,
    load_template_dir,
    template_stats,
)

log = logging.getLogger(__name__)

ANALYSES = (
    "dimensions",
    "per_set",
    "polysemy",
    "context",
    "template_correlation",
    "hardest_subset",
    "gender_consistent",
)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


class AuditError(RuntimeError):
    pass


@dataclass
class AuditConfig:
    seed: int
    backends: list[BackendDescriptor]
    catalog: str | None = None  # None -> bundled
    templates: str | None = None  # None -> bundled
    reps: int = 10
    bootstrap_resamples: int = 1000
    permutation_rounds: int = 10000
    base_alpha: float = 0.05
    analyses: dict[str, bool] = field(default_factory=dict)
    hardest_k: int = 20
    workers: int | None = None  # None -> available parallelism
    pooled_recall: str = "micro"
    hypothesis_unit: str = "template"
    timeout_s: float = 60.0
    polysemy_asian_five: bool = False
    template_length: str = "populated"  # or "raw"
    friedman_permutation: int = 0

    def __post_init__(self):
        if not isinstance(self.seed, int):
            raise AuditError("config.seed must be an explicit integer")
        if self.reps < 1:
            raise AuditError("config.reps must be >= 1")
        if not self.backends:
            raise AuditError("config.backends must list at least one backend")
        names = [b.name for b in self.backends]
        if len(set(names)) != len(names):
            raise AuditError(f"duplicate backend names in {names}")
        unknown = set(self.analyses) - set(ANALYSES)
        if unknown:
            raise AuditError(f"unknown analysis toggles {sorted(unknown)}")
        self.analyses = {a: self.analyses.get(a, True) for a in ANALYSES}

    def enabled(self, analysis: str) -> bool:
        return self.analyses[analysis]

    @property
    def effective_workers(self) -> int:
        import os

        return self.workers if self.workers else (os.cpu_count() or 1)

    @classmethod
    def from_dict(cls, raw: dict) -> "AuditConfig":
        raw = dict(raw)
        if "seed" not in raw:
            raise AuditError("config must set an explicit seed")
        backends = [BackendDescriptor.from_dict(b) for b in raw.pop("backends", [])]
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise AuditError(f"unknown config keys {sorted(unknown)}")
        return cls(backends=backends, **raw)

    @classmethod
    def from_file(cls, path) -> "AuditConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "catalog": self.catalog,
            "templates": self.templates,
            "reps": self.reps,
            "backends": [
                {
                    "name": b.name,
                    "kind": b.kind,
                    "max_input_chars": b.max_input_chars,
                    "strip_titles": b.strip_titles,
                    "settings": b.settings,
                }
                for b in self.backends
            ],
            "bootstrap_resamples": self.bootstrap_resamples,
            "permutation_rounds": self.permutation_rounds,
            "base_alpha": self.base_alpha,
            "analyses": self.analyses,
            "hardest_k": self.hardest_k,
            "workers": self.workers,
            "pooled_recall": self.pooled_recall,
            "hypothesis_unit": self.hypothesis_unit,
            "timeout_s": self.timeout_s,
            "polysemy_asian_five": self.polysemy_asian_five,
            "template_length": self.template_length,
            "friedman_permutation": self.friedman_permutation,
        }


def load_inputs(config: AuditConfig) -> tuple[Catalog, list[Template]]:
    catalog = load_catalog(config.catalog) if config.catalog else default_catalog()
    if config.templates:
        templates = load_template_dir(config.templates)
    else:
        from importlib import resources

        with resources.as_file(
            resources.files("deidaudit.data").joinpath("templates")
        ) as path:
            templates = load_template_dir(path)
    return catalog, templates


# ---------------------------------------------------------------------------
# per-backend statistics


def _group_by_note(outcomes: list[MentionOutcome]) -> dict[str, list[MentionOutcome]]:
    by_note: dict[str, list[MentionOutcome]] = {}
    for o in outcomes:
        by_note.setdefault(o.note_id, []).append(o)
    return by_note


def _recall_count_array(outcomes: list[MentionOutcome]) -> np.ndarray:
    """Per-note (recalled, mentions) counts, note_id order."""
    by_note: dict[str, list[int]] = {}
    for o in outcomes:
        entry = by_note.setdefault(o.note_id, [0, 0])
        entry[0] += int(o.recalled)
        entry[1] += 1
    return np.array([by_note[k] for k in sorted(by_note)], dtype=np.int64)


def _ratio_stat(arr) -> float:
    arr = np.asarray(arr)
    denom = arr[:, 1].sum()
    return arr[:, 0].sum() / denom if denom else float("nan")


def _bootstrap_recall(outcomes, config: AuditConfig, *labels) -> dict:
    """Bootstrap SE and CI of micro recall over a set of outcomes."""
    arr = _recall_count_array(outcomes)
    est = bootstrap(
        _ratio_stat, arr, config.bootstrap_resamples, stats_seed(config.seed, *labels)
    )
    return {
        "se": est.standard_error,
        "ci_low": est.ci_low,
        "ci_high": est.ci_high,
    }


def _overall_block(
    corpus: NoteCorpus, run: BackendRun, outcomes, config: AuditConfig, backend: str
) -> dict:
    counts = note_counts(corpus, run.spans_by_note, outcomes)
    arr = np.array([counts[k] for k in sorted(counts)], dtype=np.int64)  # tp, fn, fp
    tp, fn, fp = (int(x) for x in arr.sum(axis=0))
    any_predictions = any(run.spans_by_note.get(n.note_id) for n in corpus.notes)
    triple = score_from_counts(tp, fn, fp, any_predictions)

    def precision_stat(a) -> float:
        a = np.asarray(a)
        denom = a[:, 0].sum() + a[:, 2].sum()
        return a[:, 0].sum() / denom if denom else float("nan")

    def recall_stat(a) -> float:
        a = np.asarray(a)
        denom = a[:, 0].sum() + a[:, 1].sum()
        return a[:, 0].sum() / denom if denom else float("nan")

    def f1_stat(a) -> float:
        a = np.asarray(a)
        denom = 2 * a[:, 0].sum() + a[:, 1].sum() + a[:, 2].sum()
        return 2 * a[:, 0].sum() / denom if denom else float("nan")

    B = config.bootstrap_resamples
    ses = {}
    for label, stat in (("precision", precision_stat), ("recall", recall_stat), ("f1", f1_stat)):
        est = bootstrap(stat, arr, B, stats_seed(config.seed, backend, "overall", label))
        ses[label] = est.standard_error
    return {
        "precision": triple.precision,
        "precision_defined": triple.precision_defined,
        "recall": triple.recall,
        "f1": triple.f1,
        "tp": triple.tp,
        "fp": triple.fp,
        "fn": triple.fn,
        "precision_se": ses["precision"] if triple.precision_defined else None,
        "recall_se": ses["recall"],
        "f1_se": ses["f1"],
    }


def _dimension_block(
    outcomes,
    config: AuditConfig,
    backend: str,
    label_prefix: str = "",
    dims: tuple[str, ...] | None = None,
) -> dict:
    """Group recalls, gap metrics, and the hypothesis test per dimension."""
    block = {}
    for dim in dims if dims is not None else DIMENSIONS:
        pooling = pool_groups(None, dim)
        groups, pooled, skipped = group_recall(outcomes, pooling)
        entry: dict = {"skipped_groups": skipped}
        group_rows = []
        for g in groups:
            row = {
                "label": g.label,
                "recall": g.recall,
                "recalled": g.recalled_count,
                "mentions": g.mention_count,
            }
            row.update(
                _bootstrap_recall(
                    [o for o in outcomes if o.set_id in pooling[g.label]],
                    config,
                    backend,
                    label_prefix + "group",
                    dim,
                    g.label,
                )
            )
            group_rows.append(row)
        entry["groups"] = group_rows
        if len(groups) >= 2:
            gaps = gap_metrics(dim, groups, config.pooled_recall)
            entry.update(
                {
                    "defined": True,
                    "red": gaps.red,
                    "rmd": gaps.rmd,
                    "pooled_recall": gaps.pooled_recall,
                    "per_group_deviation": gaps.per_group_deviation,
                }
            )
        else:
            entry.update({"defined": False, "red": None, "rmd": None,
                          "pooled_recall": None, "per_group_deviation": {}})
        alpha = bonferroni_level(config.base_alpha, dim)
        try:
            table = hypothesis_unit_recalls(outcomes, pooling, config.hypothesis_unit)
            test = dimension_test(
                table,
                dim,
                alpha,
                permutation_rounds=config.friedman_permutation,
                seed=stats_seed(config.seed, backend, label_prefix + "friedman", dim),
            )
            entry["test"] = {
                "method": test.method,
                "statistic": test.statistic,
                "p_value": test.p_value,
                "n_units": test.n_units,
                "alpha_adjusted": test.alpha_adjusted,
                "significant": test.significant,
                "degenerate": test.degenerate,
                "dropped_units": test.dropped_units,
                "p_permutation": test.p_permutation,
            }
        except ValueError as exc:
            entry["test"] = {
                "method": None, "statistic": None, "p_value": None,
                "n_units": 0, "alpha_adjusted": alpha, "significant": False,
                "degenerate": True, "dropped_units": 0, "p_permutation": None,
                "error": str(exc),
            }
        block[dim] = entry
    return block


def _per_set_block(outcomes, config: AuditConfig, backend: str) -> list[dict]:
    by_set: dict[int, list[MentionOutcome]] = {}
    for o in outcomes:
        by_set.setdefault(o.set_id, []).append(o)
    rows = []
    for set_id in range(1, 17):
        set_outcomes = by_set.get(set_id, [])
        if not set_outcomes:
            log.warning("set %d has no mentions in this corpus", set_id)
            rows.append({"set_id": set_id, "recall": None, "se": None,
                         "recalled": 0, "mentions": 0, "missing": True})
            continue
        recalled = sum(o.recalled for o in set_outcomes)
        row = {
            "set_id": set_id,
            "recall": recalled / len(set_outcomes),
            "recalled": recalled,
            "mentions": len(set_outcomes),
            "missing": False,
        }
        row["se"] = _bootstrap_recall(
            set_outcomes, config, backend, "set", set_id
        )["se"]
        rows.append(row)
    rows.sort(key=lambda r: (-(r["recall"] if r["recall"] is not None else -1.0), r["set_id"]))
    for rank, row in enumerate(rows, start=1):
        row["rank"] = rank
    return rows


def _polysemy_block(poly_outcomes, config: AuditConfig, backend: str) -> dict:
    by_race: dict[str, list[MentionOutcome]] = {race: [] for race in POLYSEMY_SET_IDS}
    id_to_race = {set_id: race for race, set_id in POLYSEMY_SET_IDS.items()}
    for o in poly_outcomes:
        race = id_to_race.get(o.set_id)
        if race:
            by_race[race].append(o)
    block = {}
    for race, outs in by_race.items():
        if not outs:
            block[race] = {"strict": None, "augmented": None, "mentions": 0}
            continue
        strict, augmented = polysemy_partial_recall(outs)
        entry = {
            "strict": strict,
            "augmented": augmented,
            "mentions": len(outs),
        }

        arr_rows: dict[str, list[int]] = {}
        for o in outs:
            row = arr_rows.setdefault(o.note_id, [0, 0, 0])
            row[0] += int(o.recalled)
            row[1] += int(o.recalled or "last" in o.covered_parts)
            row[2] += 1
        arr = np.array([arr_rows[k] for k in sorted(arr_rows)], dtype=np.int64)

        def strict_stat(a) -> float:
            a = np.asarray(a)
            return a[:, 0].sum() / a[:, 2].sum() if a[:, 2].sum() else float("nan")

        def augmented_stat(a) -> float:
            a = np.asarray(a)
            return a[:, 1].sum() / a[:, 2].sum() if a[:, 2].sum() else float("nan")

        for label, stat in (("strict", strict_stat), ("augmented", augmented_stat)):
            est = bootstrap(
                stat, arr, config.bootstrap_resamples,
                stats_seed(config.seed, backend, "polysemy", race, label),
            )
            entry[f"{label}_se"] = est.standard_error
            entry[f"{label}_ci_low"] = est.ci_low
            entry[f"{label}_ci_high"] = est.ci_high
        block[race] = entry
    return block


def _context_block(outcomes, config: AuditConfig, backend: str) -> dict:
    diff = context_consistency_diff(outcomes)
    if not diff.defined:
        return {"defined": False, "difference": None}
    rows: dict[str, list[int]] = {}
    for o in outcomes:
        if o.context_gender is None or o.set_gender is None:
            continue
        row = rows.setdefault(o.note_id, [0, 0, 0, 0])
        if o.context_gender == o.set_gender:
            row[0] += int(o.recalled)
            row[1] += 1
        else:
            row[2] += int(o.recalled)
            row[3] += 1
    arr = np.array([rows[k] for k in sorted(rows)], dtype=np.int64)

    def diff_stat(a) -> float:
        a = np.asarray(a)
        cons_n, incons_n = a[:, 1].sum(), a[:, 3].sum()
        if cons_n == 0 or incons_n == 0:
            return float("nan")
        return a[:, 0].sum() / cons_n - a[:, 2].sum() / incons_n

    est = bootstrap(
        diff_stat, arr, config.bootstrap_resamples,
        stats_seed(config.seed, backend, "context"),
    )
    return {
        "defined": True,
        "difference": diff.difference,
        "consistent": {
            "recall": diff.consistent.recall,
            "recalled": diff.consistent.recalled_count,
            "mentions": diff.consistent.mention_count,
        },
        "inconsistent": {
            "recall": diff.inconsistent.recall,
            "recalled": diff.inconsistent.recalled_count,
            "mentions": diff.inconsistent.mention_count,
        },
        "se": est.standard_error,
        "ci_low": est.ci_low,
        "ci_high": est.ci_high,
        "degenerate_resamples": est.n_degenerate,
    }


def _template_recalls(outcomes) -> dict[int, float]:
    recalled: dict[int, int] = {}
    totals: dict[int, int] = {}
    for o in outcomes:
        totals[o.template_id] = totals.get(o.template_id, 0) + 1
        recalled[o.template_id] = recalled.get(o.template_id, 0) + int(o.recalled)
    return {tid: recalled[tid] / totals[tid] for tid in totals}


def _correlation_block(
    templates: list[Template],
    corpus: NoteCorpus,
    avg_template_recall: dict[int, float],
    config: AuditConfig,
) -> dict:
    lengths: dict[int, float] = {}
    if config.template_length == "populated":
        sums: dict[int, int] = {}
        counts: dict[int, int] = {}
        for note in corpus.notes:
            sums[note.template_id] = sums.get(note.template_id, 0) + len(note.text)
            counts[note.template_id] = counts.get(note.template_id, 0) + 1
        lengths = {tid: sums[tid] / counts[tid] for tid in sums}
    else:
        lengths = {t.template_id: float(len(t.raw_text)) for t in templates}
    stats_by_template = {t.template_id: template_stats(t) for t in templates}
    tids = sorted(avg_template_recall)
    recalls = [avg_template_recall[tid] for tid in tids]
    features = {
        "length": [lengths[tid] for tid in tids],
        "unique_names": [stats_by_template[tid].unique_names for tid in tids],
        "total_mentions": [stats_by_template[tid].total_mentions for tid in tids],
    }
    out: dict = {"per_template": [
        {
            "template_id": tid,
            "avg_recall": avg_template_recall[tid],
            "length": lengths[tid],
            "unique_names": stats_by_template[tid].unique_names,
            "total_mentions": stats_by_template[tid].total_mentions,
        }
        for tid in tids
    ], "features": {}}
    for name, values in features.items():
        result = correlate(
            values, recalls,
            permutation_rounds=config.permutation_rounds,
            seed=stats_seed(config.seed, "correlate", name),
        )
        out["features"][name] = {
            "r": result.r,
            "p_value": result.p_value,
            "n_rounds": result.n_rounds,
            "at_floor": result.at_floor,
            "defined": result.defined,
        }
    return out


def hardest_templates(per_template_recalls: dict[int, float], k: int) -> list[int]:
    """The k templates with the lowest recall (ties by template id)."""
    ranked = sorted(per_template_recalls.items(), key=lambda kv: (kv[1], kv[0]))
    return [tid for tid, _ in ranked[: min(k, len(ranked))]]


def _hardest_block(
    corpus: NoteCorpus,
    run: BackendRun,
    outcomes,
    selected: list[int],
    config: AuditConfig,
    backend: str,
) -> dict:
    chosen = set(selected)
    sub_outcomes = [o for o in outcomes if o.template_id in chosen]
    sub_notes = [n for n in corpus.notes if n.template_id in chosen]
    sub_corpus = NoteCorpus(notes=sub_notes, seed=corpus.seed,
                            origin_gender=corpus.origin_gender)
    block = {
        "k": len(selected),
        "template_ids": selected,
        "overall": _overall_block(sub_corpus, run, sub_outcomes, config,
                                  backend + "-hardest"),
        "dimensions": _dimension_block(sub_outcomes, config, backend, "hardest."),
    }
    return block


def _gender_consistent_block(
    corpus: NoteCorpus,
    templates: list[Template],
    outcomes,
    config: AuditConfig,
    backend: str,
) -> dict:
    subset, dropped = gender_consistent_subset(corpus, templates)
    kept_ids = {n.note_id for n in subset.notes}
    sub_outcomes = [o for o in outcomes if o.note_id in kept_ids]
    block: dict = {
        "kept_notes": len(subset.notes),
        "dropped_notes": len(dropped),
        "dimensions": {},
    }
    if not sub_outcomes:
        log.warning("gender-consistent subset is empty")
        return block
    # The gender gap is not assessed here: male- and female-origin notes
    # no longer overlap, so only the controlled dimensions remain.
    block["dimensions"] = _dimension_block(
        sub_outcomes, config, backend, "consistent.",
        dims=("race", "popularity", "decade"),
    )
    return block


# ---------------------------------------------------------------------------
# result assembly


def compute_result(
    config: AuditConfig,
    catalog: Catalog,
    templates: list[Template],
    corpus: NoteCorpus,
    runs: dict[str, BackendRun],
    poly_corpus: NoteCorpus | None,
    poly_runs: dict[str, BackendRun],
) -> dict:
    """Every reported number, derived from corpora + predictions + config."""
    outcomes_by_backend = {
        name: evaluate_corpus(corpus, run.spans_by_note) for name, run in runs.items()
    }
    poly_outcomes_by_backend = {
        name: evaluate_corpus(poly_corpus, run.spans_by_note)
        for name, run in poly_runs.items()
    } if poly_corpus is not None else {}

    total_mentions = corpus.mention_count()
    stats_rows = [template_stats(t) for t in templates]
    result: dict = {
        "schema": "deidaudit-result-v1",
        "version": __version__,
        "seed": config.seed,
        "corpus": {
            "notes": len(corpus.notes),
            "mentions": total_mentions,
            "templates": len(templates),
            "reps": config.reps,
            "sets": len(catalog.sets),
            "mean_unique_names": sum(s.unique_names for s in stats_rows) / len(stats_rows),
            "mean_mentions_per_unique": (
                sum(s.total_mentions for s in stats_rows)
                / sum(s.unique_names for s in stats_rows)
            ),
        },
        "backends": {},
    }

    per_backend_template_recalls = {
        name: _template_recalls(outs) for name, outs in outcomes_by_backend.items()
    }

    for name in sorted(runs):
        run = runs[name]
        outcomes = outcomes_by_backend[name]
        backend_block: dict = {
            "errors": len(run.errors),
            "overall": _overall_block(corpus, run, outcomes, config, name),
        }
        if config.enabled("dimensions"):
            backend_block["dimensions"] = _dimension_block(outcomes, config, name)
        if config.enabled("per_set"):
            backend_block["per_set"] = _per_set_block(outcomes, config, name)
        if config.enabled("polysemy") and name in poly_outcomes_by_backend:
            backend_block["polysemy"] = _polysemy_block(
                poly_outcomes_by_backend[name], config, name
            )
        if config.enabled("context"):
            backend_block["context"] = _context_block(outcomes, config, name)
        if config.enabled("gender_consistent"):
            backend_block["gender_consistent"] = _gender_consistent_block(
                corpus, templates, outcomes, config, name
            )
        result["backends"][name] = backend_block

    avg_recall: dict[int, float] = {}
    for tid in sorted({t.template_id for t in templates}):
        values = [
            recalls[tid]
            for recalls in per_backend_template_recalls.values()
            if tid in recalls
        ]
        if values:
            avg_recall[tid] = sum(values) / len(values)

    if config.enabled("template_correlation"):
        result["template_correlation"] = _correlation_block(
            templates, corpus, avg_recall, config
        )

    if config.enabled("hardest_subset"):
        selected = hardest_templates(avg_recall, config.hardest_k)
        result["hardest_templates"] = selected
        for name in sorted(runs):
            result["backends"][name]["hardest_subset"] = _hardest_block(
                corpus, runs[name], outcomes_by_backend[name], selected, config, name
            )

    return result


# ---------------------------------------------------------------------------
# audit driver


def _run_degrading(
    descriptor: BackendDescriptor, corpus: NoteCorpus, catalog: Catalog,
    config: AuditConfig,
) -> BackendRun:
    """Run one backend; a spawn-level failure degrades to all-notes errors."""
    try:
        return run_backend(
            descriptor, corpus, catalog=catalog,
            workers=config.effective_workers, timeout=config.timeout_s,
        )
    except Exception as exc:
        log.error("backend %s failed to run: %s", descriptor.name, exc)
        message = f"{type(exc).__name__}: {exc}"
        return BackendRun(
            spans_by_note={n.note_id: [] for n in corpus.notes},
            errors={n.note_id: message for n in corpus.notes},
        )


def run_audit(config: AuditConfig, out_dir) -> tuple[dict, int]:
    """Generate, run, score, and report; returns (result, exit_code)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    catalog, templates = load_inputs(config)

    corpus = generate_corpus(catalog, templates, config.reps, config.seed)
    if not corpus.notes or corpus.mention_count() == 0:
        raise AuditError("zero usable notes in the generated corpus")
    write_corpus(corpus, out / "corpus.ndjson")

    poly_corpus = None
    if config.enabled("polysemy"):
        poly_corpus = generate_polysemy_corpus(
            catalog,
            polysemy_catalog(config.polysemy_asian_five),
            templates,
            config.reps,
            config.seed,
        )
        write_corpus(poly_corpus, out / "polysemy_corpus.ndjson")

    runs: dict[str, BackendRun] = {}
    poly_runs: dict[str, BackendRun] = {}
    exit_code = EXIT_OK
    for descriptor in config.backends:
        run = _run_degrading(descriptor, corpus, catalog, config)
        runs[descriptor.name] = run
        write_predictions(
            run.spans_by_note, run.errors,
            out / "predictions" / f"{descriptor.name}.ndjson",
            ungroundable=run.ungroundable,
        )
        if run.errors:
            exit_code = EXIT_PARTIAL
            log.warning("backend %s had %d per-note errors", descriptor.name, len(run.errors))
        if poly_corpus is not None:
            poly_run = _run_degrading(descriptor, poly_corpus, catalog, config)
            poly_runs[descriptor.name] = poly_run
            write_predictions(
                poly_run.spans_by_note, poly_run.errors,
                out / "predictions" / f"{descriptor.name}.polysemy.ndjson",
                ungroundable=poly_run.ungroundable,
            )
            if poly_run.errors:
                exit_code = EXIT_PARTIAL
    if all(len(run.errors) == len(corpus.notes) for run in runs.values()):
        raise AuditError("every backend failed on every note")

    result = compute_result(
        config, catalog, templates, corpus, runs, poly_corpus, poly_runs
    )

    for name, run in runs.items():
        outcomes = evaluate_corpus(corpus, run.spans_by_note)
        write_outcomes(outcomes, out / "outcomes" / f"{name}.ndjson")
    for name, run in poly_runs.items():
        outcomes = evaluate_corpus(poly_corpus, run.spans_by_note)
        write_outcomes(outcomes, out / "outcomes" / f"{name}.polysemy.ndjson")

    (out / "result.json").write_text(dumps_report(result), encoding="utf-8")
    emit_report(result, out)
    (out / "config.json").write_text(dumps_report(config.to_dict()), encoding="utf-8")
    return result, exit_code


# ---------------------------------------------------------------------------
# report emission


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def emit_report(result: dict, out_dir, formats: tuple[str, ...] = ("csv",)) -> list[Path]:
    """Write the fixed-schema CSV tables (and optionally re-dump the JSON)."""
    out = Path(out_dir)
    tables = out / "tables"
    written: list[Path] = []

    if "json" in formats:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "result.json"
        path.write_text(dumps_report(result), encoding="utf-8")
        written.append(path)
    if "csv" not in formats:
        return written

    backends = result.get("backends", {})

    rows = []
    for name in sorted(backends):
        o = backends[name]["overall"]
        rows.append([
            name, o["precision"], o["precision_se"], o["recall"], o["recall_se"],
            o["f1"], o["f1_se"], o["tp"], o["fp"], o["fn"], o["precision_defined"],
        ])
    path = tables / "overall_performance.csv"
    _write_csv(path, ["backend", "precision", "precision_se", "recall", "recall_se",
                      "f1", "f1_se", "tp", "fp", "fn", "precision_defined"], rows)
    written.append(path)

    bias_rows = []
    group_rows = []
    for name in sorted(backends):
        dims = backends[name].get("dimensions", {})
        for dim in DIMENSIONS:
            if dim not in dims:
                continue
            entry = dims[dim]
            test = entry.get("test", {})
            bias_rows.append([
                name, dim, entry["red"], entry["rmd"], test.get("method"),
                test.get("statistic"), test.get("p_value"), test.get("alpha_adjusted"),
                test.get("significant"), "*" if test.get("significant") else "",
            ])
            for g in entry.get("groups", []):
                group_rows.append([
                    name, dim, g["label"], g["recall"], g["recalled"], g["mentions"],
                    g["ci_low"], g["ci_high"], g["se"],
                ])
    path = tables / "bias_by_dimension.csv"
    _write_csv(path, ["backend", "dimension", "red", "rmd", "test_method", "statistic",
                      "p_value", "alpha_adjusted", "significant", "marker"], bias_rows)
    written.append(path)
    path = tables / "group_recall.csv"
    _write_csv(path, ["backend", "dimension", "group", "recall", "recalled", "mentions",
                      "ci_low", "ci_high", "se"], group_rows)
    written.append(path)

    set_rows = []
    for name in sorted(backends):
        for row in backends[name].get("per_set", []):
            set_rows.append([
                name, row["set_id"], row["recall"], row["se"], row["rank"],
                row["recalled"], row["mentions"],
            ])
    path = tables / "set_recall.csv"
    _write_csv(path, ["backend", "set_id", "recall", "se", "rank", "recalled",
                      "mentions"], set_rows)
    written.append(path)

    poly_rows = []
    for name in sorted(backends):
        poly = backends[name].get("polysemy", {})
        for race in sorted(poly):
            entry = poly[race]
            poly_rows.append([
                name, race, entry["strict"], entry.get("strict_se"),
                entry["augmented"], entry.get("augmented_se"), entry["mentions"],
            ])
    path = tables / "polysemy.csv"
    _write_csv(path, ["backend", "race", "strict_recall", "strict_se",
                      "augmented_recall", "augmented_se", "mentions"], poly_rows)
    written.append(path)

    ctx_rows = []
    for name in sorted(backends):
        ctx = backends[name].get("context")
        if ctx is None:
            continue
        if ctx["defined"]:
            ctx_rows.append([
                name, ctx["difference"], ctx["consistent"]["recall"],
                ctx["consistent"]["mentions"], ctx["inconsistent"]["recall"],
                ctx["inconsistent"]["mentions"], True, ctx["ci_low"], ctx["ci_high"],
            ])
        else:
            ctx_rows.append([name, None, None, None, None, None, False, None, None])
    path = tables / "context_diff.csv"
    _write_csv(path, ["backend", "difference", "consistent_recall",
                      "consistent_mentions", "inconsistent_recall",
                      "inconsistent_mentions", "defined", "ci_low", "ci_high"], ctx_rows)
    written.append(path)

    corr_rows = []
    corr = result.get("template_correlation", {})
    for feature in sorted(corr.get("features", {})):
        entry = corr["features"][feature]
        corr_rows.append([
            feature, entry["r"], entry["p_value"], entry["n_rounds"],
            entry["at_floor"], entry["defined"],
        ])
    path = tables / "template_correlation.csv"
    _write_csv(path, ["feature", "r", "p_value", "n_rounds", "at_floor", "defined"],
               corr_rows)
    written.append(path)
    return written


# ---------------------------------------------------------------------------
# verification


def _compare(path: str, a, b, mismatches: list[str]) -> None:
    if isinstance(a, dict) and isinstance(b, dict):
        if set(a) != set(b):
            mismatches.append(f"{path}: keys {sorted(set(a) ^ set(b))} differ")
            return
        for key in a:
            _compare(f"{path}.{key}", a[key], b[key], mismatches)
    elif isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            mismatches.append(f"{path}: length {len(a)} != {len(b)}")
            return
        for i, (x, y) in enumerate(zip(a, b)):
            _compare(f"{path}[{i}]", x, y, mismatches)
    elif isinstance(a, bool) or isinstance(b, bool):
        if a is not b:
            mismatches.append(f"{path}: {a!r} != {b!r}")
    elif isinstance(a, (int, float)) and isinstance(b, (int, float)):
        if not (a == b or abs(a - b) <= 1e-12):
            mismatches.append(f"{path}: {a!r} != {b!r}")
    elif a != b:
        mismatches.append(f"{path}: {a!r} != {b!r}")


def verify_audit(out_dir) -> list[str]:
    """Re-derive result.json from the persisted artifacts; list mismatches."""
    out = Path(out_dir)
    config = AuditConfig.from_dict(
        json.loads((out / "config.json").read_text(encoding="utf-8"))
    )
    catalog, templates = load_inputs(config)
    corpus = read_corpus(out / "corpus.ndjson")
    corpus.origin_gender = {t.template_id: t.origin_gender for t in templates}

    regenerated = generate_corpus(catalog, templates, config.reps, config.seed)
    stored_texts = {n.note_id: n.text for n in corpus.notes}
    for note in regenerated.notes:
        if stored_texts.get(note.note_id) != note.text:
            return [f"corpus.ndjson: note {note.note_id} does not regenerate from the seed"]

    runs: dict[str, BackendRun] = {}
    poly_runs: dict[str, BackendRun] = {}
    poly_corpus = None
    if (out / "polysemy_corpus.ndjson").exists():
        poly_corpus = read_corpus(out / "polysemy_corpus.ndjson")
    for descriptor in config.backends:
        spans, errors = read_predictions(out / "predictions" / f"{descriptor.name}.ndjson")
        runs[descriptor.name] = BackendRun(spans_by_note=spans, errors=errors)
        poly_path = out / "predictions" / f"{descriptor.name}.polysemy.ndjson"
        if poly_path.exists():
            spans, errors = read_predictions(poly_path)
            poly_runs[descriptor.name] = BackendRun(spans_by_note=spans, errors=errors)

    recomputed = compute_result(
        config, catalog, templates, corpus, runs, poly_corpus, poly_runs
    )
    stored = json.loads((out / "result.json").read_text(encoding="utf-8"))
    mismatches: list[str] = []
    _compare("result", stored, recomputed, mismatches)
    return mismatches
