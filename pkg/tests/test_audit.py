import json

import pytest

from deidaudit.audit import (
    AuditConfig,
    AuditError,
    EXIT_OK,
    EXIT_PARTIAL,
    emit_report,
    hardest_templates,
    run_audit,
    verify_audit,
)
from deidaudit.backends import BackendDescriptor


def _oracle_config(**overrides):
    base = dict(
        seed=77,
        reps=1,
        bootstrap_resamples=100,
        permutation_rounds=200,
        backends=[BackendDescriptor(name="oracle", kind="oracle")],
    )
    base.update(overrides)
    return AuditConfig(**base)


@pytest.fixture(scope="module")
def oracle_audit(tmp_path_factory):
    out = tmp_path_factory.mktemp("oracle_audit")
    result, code = run_audit(_oracle_config(), out)
    return result, code, out


def test_oracle_audit_exit_and_files(oracle_audit):
    result, code, out = oracle_audit
    assert code == EXIT_OK
    for name in ("config.json", "corpus.ndjson", "polysemy_corpus.ndjson",
                 "result.json"):
        assert (out / name).exists()
    assert (out / "predictions" / "oracle.ndjson").exists()
    assert (out / "outcomes" / "oracle.ndjson").exists()
    assert (out / "tables" / "overall_performance.csv").exists()


def test_oracle_audit_perfect_scores(oracle_audit):
    result, _, _ = oracle_audit
    overall = result["backends"]["oracle"]["overall"]
    assert overall["precision"] == 1.0
    assert overall["recall"] == 1.0
    assert overall["f1"] == 1.0
    for dim, entry in result["backends"]["oracle"]["dimensions"].items():
        assert entry["red"] == 0.0
        assert entry["rmd"] == 0.0
        assert entry["test"]["p_value"] == 1.0
        assert not entry["test"]["significant"]


def test_oracle_per_set_partition(oracle_audit):
    result, _, _ = oracle_audit
    rows = result["backends"]["oracle"]["per_set"]
    assert len(rows) == 16
    assert all(r["recall"] == 1.0 for r in rows)
    assert sum(r["recalled"] for r in rows) == result["corpus"]["mentions"]
    assert [r["rank"] for r in rows] == list(range(1, 17))


def test_oracle_polysemy_block(oracle_audit):
    result, _, _ = oracle_audit
    poly = result["backends"]["oracle"]["polysemy"]
    assert set(poly) == {"White", "Black", "Asian"}
    for entry in poly.values():
        assert entry["strict"] == 1.0
        assert entry["augmented"] == 1.0
        assert entry["augmented"] >= entry["strict"]


def test_oracle_context_block(oracle_audit):
    result, _, _ = oracle_audit
    ctx = result["backends"]["oracle"]["context"]
    assert ctx["defined"]
    assert ctx["difference"] == 0.0


def test_result_json_roundtrip(oracle_audit):
    result, _, out = oracle_audit
    parsed = json.loads((out / "result.json").read_text(encoding="utf-8"))
    assert parsed == result


def test_csv_schemas(oracle_audit):
    _, _, out = oracle_audit
    expected_columns = {
        "overall_performance.csv": 11,
        "bias_by_dimension.csv": 10,
        "group_recall.csv": 9,
        "set_recall.csv": 7,
        "polysemy.csv": 7,
        "context_diff.csv": 9,
        "template_correlation.csv": 6,
    }
    for name, width in expected_columns.items():
        lines = (out / "tables" / name).read_text(encoding="utf-8").strip().splitlines()
        assert len(lines) >= 2, name
        for line in lines:
            assert line.count(",") == width - 1, (name, line)


def test_significance_marker_column(tmp_path):
    config = AuditConfig(
        seed=13,
        reps=1,
        bootstrap_resamples=50,
        permutation_rounds=100,
        backends=[
            BackendDescriptor(
                name="biased", kind="reference",
                settings={"lexicon_from_catalog": True, "exclude_sets": [9, 10]},
            )
        ],
        analyses={"polysemy": False, "gender_consistent": False,
                  "hardest_subset": False, "template_correlation": False},
    )
    result, _ = run_audit(config, tmp_path)
    table = (tmp_path / "tables" / "bias_by_dimension.csv").read_text("utf-8")
    race_row = next(l for l in table.splitlines() if l.startswith("biased,race"))
    assert race_row.rstrip().endswith("*")


def test_biased_backend_per_set_ranking(tmp_path):
    """Sets 9 and 10 rank last when their names are cut from the lexicon."""
    config = AuditConfig(
        seed=23, reps=1, bootstrap_resamples=50, permutation_rounds=100,
        backends=[BackendDescriptor(
            name="biased", kind="reference",
            settings={"lexicon_from_catalog": True, "exclude_sets": [9, 10]},
        )],
        analyses={"polysemy": False, "gender_consistent": False,
                  "hardest_subset": False, "template_correlation": False,
                  "context": False},
    )
    result, _ = run_audit(config, tmp_path)
    rows = result["backends"]["biased"]["per_set"]
    assert {rows[-1]["set_id"], rows[-2]["set_id"]} == {9, 10}
    assert sum(r["recalled"] for r in rows) == result["backends"]["biased"]["overall"]["tp"]


def test_verify_ok(oracle_audit):
    _, _, out = oracle_audit
    assert verify_audit(out) == []


def test_verify_detects_tampering(oracle_audit, tmp_path):
    _, _, out = oracle_audit
    import shutil

    copy = tmp_path / "tampered"
    shutil.copytree(out, copy)
    result = json.loads((copy / "result.json").read_text("utf-8"))
    result["backends"]["oracle"]["overall"]["recall"] = 0.5
    (copy / "result.json").write_text(json.dumps(result), encoding="utf-8")
    mismatches = verify_audit(copy)
    assert mismatches
    assert any("recall" in m for m in mismatches)


def test_toggle_isolation(tmp_path):
    """Disabling one analysis leaves every other number unchanged."""
    kwargs = dict(seed=5, reps=1, bootstrap_resamples=60, permutation_rounds=100)
    full, _ = run_audit(_oracle_config(**kwargs), tmp_path / "full")
    trimmed, _ = run_audit(
        _oracle_config(**kwargs, analyses={"polysemy": False, "context": False}),
        tmp_path / "trimmed",
    )
    tb = trimmed["backends"]["oracle"]
    fb = full["backends"]["oracle"]
    assert "polysemy" not in tb and "context" not in tb
    for key in ("overall", "dimensions", "per_set", "gender_consistent",
                "hardest_subset"):
        assert tb[key] == fb[key], key
    assert trimmed["template_correlation"] == full["template_correlation"]


def test_hardest_selection_identity_and_order():
    recalls = {1: 0.9, 2: 0.5, 3: 0.7}
    assert hardest_templates(recalls, 3) == [2, 3, 1]
    assert hardest_templates(recalls, 99) == [2, 3, 1]
    assert hardest_templates(recalls, 1) == [2]
    # zero-recall template selected first
    recalls = {7: 0.0, 1: 0.4, 2: 0.4}
    assert hardest_templates(recalls, 2) == [7, 1]


def test_hardest_subset_recall_bound(tmp_path):
    """Subset recall never exceeds full-corpus recall (selection by minimum)."""
    config = AuditConfig(
        seed=31,
        reps=1,
        bootstrap_resamples=50,
        permutation_rounds=100,
        hardest_k=3,
        backends=[
            BackendDescriptor(
                name="biased", kind="reference",
                settings={"lexicon_from_catalog": True, "exclude_sets": [9, 10]},
            ),
            BackendDescriptor(name="oracle", kind="oracle"),
        ],
        analyses={"polysemy": False, "gender_consistent": False},
    )
    result, _ = run_audit(config, tmp_path)
    selected = result["hardest_templates"]
    assert len(selected) == 3
    # brute-force check of the selection rule
    per_template = {
        row["template_id"]: row["avg_recall"]
        for row in result["template_correlation"]["per_template"]
    }
    expected = sorted(per_template, key=lambda t: (per_template[t], t))[:3]
    assert selected == expected
    for backend in result["backends"].values():
        sub = backend["hardest_subset"]["overall"]["recall"]
        full = backend["overall"]["recall"]
        assert sub <= full + 1e-12


def test_emit_report_json_format(oracle_audit, tmp_path):
    result, _, _ = oracle_audit
    written = emit_report(result, tmp_path, formats=("json", "csv"))
    parsed = json.loads((tmp_path / "result.json").read_text("utf-8"))
    assert parsed == result
    assert any(p.name == "overall_performance.csv" for p in written)


def test_config_validation():
    with pytest.raises(AuditError, match="seed"):
        AuditConfig.from_dict({"backends": [{"name": "o", "kind": "oracle"}]})
    with pytest.raises(AuditError, match="reps"):
        _oracle_config(reps=0)
    with pytest.raises(AuditError, match="backend"):
        AuditConfig(seed=1, backends=[])
    with pytest.raises(AuditError, match="toggles"):
        _oracle_config(analyses={"nonsense": True})
    with pytest.raises(AuditError, match="unknown config keys"):
        AuditConfig.from_dict({"seed": 1, "backends": [
            {"name": "o", "kind": "oracle"}], "bogus": 1})


def test_dead_backend_degrades(tmp_path):
    config = AuditConfig(
        seed=3,
        reps=1,
        bootstrap_resamples=40,
        permutation_rounds=50,
        backends=[
            BackendDescriptor(name="oracle", kind="oracle"),
            BackendDescriptor(
                name="dead", kind="external_process",
                settings={"command": ["/nonexistent/deid"]},
            ),
        ],
        analyses={"polysemy": False, "gender_consistent": False,
                  "hardest_subset": False},
    )
    result, code = run_audit(config, tmp_path)
    assert code == EXIT_PARTIAL
    dead = result["backends"]["dead"]
    assert dead["errors"] == result["corpus"]["notes"]
    assert dead["overall"]["recall"] == 0.0
    assert result["backends"]["oracle"]["overall"]["recall"] == 1.0
    preds = (tmp_path / "predictions" / "dead.ndjson").read_text("utf-8")
    assert '"error"' in preds.splitlines()[0]


def test_all_backends_dead_is_fatal(tmp_path):
    config = AuditConfig(
        seed=3, reps=1,
        backends=[BackendDescriptor(
            name="dead", kind="external_process",
            settings={"command": ["/nonexistent/deid"]},
        )],
    )
    with pytest.raises(AuditError, match="every backend"):
        run_audit(config, tmp_path)
