import csv
import json
import shutil

import pytest

from crossshot import pipeline
from crossshot.cli import EXIT_INVALID, EXIT_OK, main
from crossshot.registry import METRIC_NAMES
from crossshot.report import NotComparable, ReportError, compare_results, emit_report, regenerate
from crossshot.synthetic import write_dataset


def _evaluate(e2e, out, *extra):
    return main(["evaluate", "--dataset", str(e2e.dataset), "--videos", str(e2e.videos), "--out", str(out),
                 "--fake-backends", "42", *extra])


def _results(out):
    return json.loads((out / "results.json").read_text("utf-8"))


# validate / stats

def test_validate_ok(e2e, capsys):
    assert main(["validate", "--dataset", str(e2e.dataset)]) == EXIT_OK
    assert "3 valid episode(s), 0 problem(s)" in capsys.readouterr().out


def test_validate_reports_the_bad_episode(e2e, tmp_path, capsys):
    ds = tmp_path / "ds"
    shutil.copytree(e2e.dataset, ds)
    doc = json.loads((ds / "ep002.json").read_text("utf-8"))
    doc["shots"][0]["entity_schedule"]["characters"].append("Nobody")
    (ds / "ep002.json").write_text(json.dumps(doc), encoding="utf-8")
    assert main(["validate", "--dataset", str(ds)]) == EXIT_INVALID
    out = capsys.readouterr().out
    assert "INVALID ep002.json" in out and "Nobody" in out and "ep001" not in out


def test_validate_empty_dir(tmp_path, capsys):
    assert main(["validate", "--dataset", str(tmp_path)]) == EXIT_INVALID
    assert "no episodes found" in capsys.readouterr().out


def test_stats_writes_file_and_checks_identity(e2e, tmp_path, capsys):
    assert main(["stats", "--dataset", str(e2e.dataset), "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "dataset_stats.json").read_text("utf-8"))
    assert rep["all.appearances.total"] - rep["all.first_appearances.total"] == rep["all.reappearances.total"]
    assert "(holds)" in capsys.readouterr().err
    assert main(["stats", "--dataset", str(e2e.dataset), "--tier", "hard"]) == EXIT_OK


# evaluate

def test_evaluate_outputs(e2e_run):
    for name in ("manifest.json", "results.json", "results.csv", "gap_decay.csv", "report.md", "completed.jsonl"):
        assert (e2e_run / name).exists(), name
    doc = _results(e2e_run)
    assert sorted(doc["episodes"]) == ["ep001", "ep002", "ep003"] and doc["failed_episodes"] == {}
    assert sorted(p.name for p in (e2e_run / "episodes").iterdir()) == ["ep001.json", "ep002.json", "ep003.json"]
    assert list((e2e_run / "audit" / "crops").iterdir())
    with open(e2e_run / "results.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["metric"] for r in rows} == set(METRIC_NAMES)
    assert {"scope", "corrected", "rawmean", "coverage", "n_eval"} <= set(rows[0])


def test_evaluate_filters(e2e, tmp_path):
    out = tmp_path / "out"
    assert _evaluate(e2e, out, "--episodes", "ep001", "ep002", "--tier", "easy") == EXIT_OK
    assert list(_results(out)["episodes"]) == ["ep001"]


def test_evaluate_no_match_is_invalid(e2e, tmp_path):
    assert _evaluate(e2e, tmp_path / "out", "--episodes", "nope") == EXIT_INVALID


def test_resume_skips_completed(e2e, tmp_path, caplog):
    out = tmp_path / "out"
    assert _evaluate(e2e, out, "--episodes", "ep001") == EXIT_OK
    first = (out / "episodes" / "ep001.json").read_text("utf-8")
    with caplog.at_level("INFO", logger="crossshot"):
        assert _evaluate(e2e, out) == EXIT_OK
    assert (out / "episodes" / "ep001.json").read_text("utf-8") == first
    assert sorted(_results(out)["episodes"]) == ["ep001", "ep002", "ep003"]
    assert any("already complete" in r.getMessage() for r in caplog.records)


def test_resume_refuses_changed_config(e2e, tmp_path, capsys):
    out = tmp_path / "out"
    assert _evaluate(e2e, out, "--episodes", "ep001") == EXIT_OK
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"eval": {"tau_fid": 0.6}}), encoding="utf-8")
    assert _evaluate(e2e, out, "--config", str(cfg)) == EXIT_INVALID
    assert "config.tau_fid" in capsys.readouterr().err


def test_missing_shot_fails_only_that_shot(e2e, tmp_path):
    videos = tmp_path / "videos"
    shutil.copytree(e2e.videos, videos)
    shutil.rmtree(videos / "ep002" / "shot_1")
    out = tmp_path / "out"
    assert main(["evaluate", "--dataset", str(e2e.dataset), "--videos", str(videos), "--out", str(out),
                 "--fake-backends", "42", "--episodes", "ep002"]) == EXIT_OK
    ep = _results(out)["episodes"]["ep002"]
    assert 1 in ep["meta"]["failed_shots"]
    assert ep["metrics"]["temporal_flickering"]["n_failed"] >= 1


def test_failing_episode_is_isolated(e2e, tmp_path, monkeypatch, capsys):
    real = pipeline.evaluate_episode

    def flaky(script, *a, **kw):
        if script.episode_id == "ep002":
            raise RuntimeError("boom")
        return real(script, *a, **kw)

    monkeypatch.setattr(pipeline, "evaluate_episode", flaky)
    out = tmp_path / "out"
    assert _evaluate(e2e, out, "--parallel", "2") == EXIT_OK
    doc = _results(out)
    assert doc["failed_episodes"] == {"ep002": "RuntimeError: boom"}
    assert sorted(doc["episodes"]) == ["ep001", "ep003"]
    assert "episode ep002 failed" in capsys.readouterr().err
    assert "ep002" in (out / "report.md").read_text("utf-8")


# report / compare

def test_report_regeneration_is_idempotent(e2e_run, tmp_path):
    before = {n: (e2e_run / n).read_text("utf-8") for n in ("results.json", "results.csv", "report.md")}
    assert main(["report", "--results", str(e2e_run), "--out", str(tmp_path)]) == EXIT_OK
    for n, text in before.items():
        assert (tmp_path / n).read_text("utf-8") == text
    regenerate(tmp_path / "results.json")
    assert (tmp_path / "results.json").read_text("utf-8") == before["results.json"]


def test_report_requires_episodes(e2e_run, tmp_path):
    doc = _results(e2e_run)
    doc["episodes"] = {}
    with pytest.raises(ReportError, match="no episodes"):
        emit_report(doc, tmp_path)


def test_compare_with_itself(e2e_run):
    doc = _results(e2e_run)
    cmp = compare_results(doc, doc)
    assert cmp["comparable"] and cmp["manifest_diff"] == []
    for m, row in cmp["effects"].items():
        if row["n_paired"]:
            assert row["delta"] == 0
            assert row["d"] in (0, None)


def test_compare_cli_refuses_different_tau(e2e_run, tmp_path, capsys):
    b = _results(e2e_run)
    b["manifest"]["config"]["tau_fid"] = 0.6
    path_b = tmp_path / "b.json"
    path_b.write_text(json.dumps(b), encoding="utf-8")
    with pytest.raises(NotComparable):
        compare_results(_results(e2e_run), b)
    assert main(["compare", str(e2e_run), str(path_b)]) == EXIT_INVALID
    assert "config.tau_fid" in capsys.readouterr().err
    assert main(["compare", str(e2e_run), str(path_b), "--force", "--out", str(tmp_path / "cmp")]) == EXIT_OK
    cmp = json.loads((tmp_path / "cmp" / "comparison.json").read_text("utf-8"))
    assert cmp["forced"] and cmp["manifest_diff"] == ["config.tau_fid"]
    assert "Forced comparison" in (tmp_path / "cmp" / "comparison.md").read_text("utf-8")


def test_duplicate_episode_ids_are_invalid(tmp_path, e2e, capsys):
    doc = json.loads((e2e.dataset / "ep001.json").read_text("utf-8"))
    write_dataset([doc], tmp_path)
    (tmp_path / "copy.json").write_text(json.dumps(doc), encoding="utf-8")
    assert main(["validate", "--dataset", str(tmp_path)]) == EXIT_INVALID
    assert "duplicate episode_id ep001" in capsys.readouterr().out
