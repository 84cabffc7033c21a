"""
Tests for the fincards command line, run in-process on a small synthetic filing.
"""

import json

import pytest

import app
from fincards_backend.exceptions import EXIT_IO, EXIT_JUDGE, EXIT_OK, EXIT_VALIDATION, StageError
from fincards_backend.services.audit.service import AuditTrace
from fincards_backend.services.tournament.service import TournamentService


@pytest.fixture
def workspace(tmp_path):
    """Synthetic filing with chunks, cards and intents on disk."""
    data = tmp_path / "data"
    assert app.main(["synth", "--seed", "3", "--queries", "3", "--length", "120", "--out", str(data)]) == EXIT_OK
    assert app.main(["extract", "--chunks", str(data / "chunks.jsonl"), "--cards-out", str(data / "cards.jsonl")]) == EXIT_OK
    assert app.main(
        ["intent", "--questions", str(data / "questions.jsonl"), "--intents-out", str(data / "intents.jsonl")]
    ) == EXIT_OK
    return data


def rerank_args(data, out, *extra):
    return [
        "rerank",
        "--chunks", str(data / "chunks.jsonl"),
        "--cards", str(data / "cards.jsonl"),
        "--intents", str(data / "intents.jsonl"),
        "--qrels", str(data / "qrels.txt"),
        "--out", str(out),
        *extra,
    ]


def first_gold(data):
    for line in (data / "qrels.txt").read_text().splitlines():
        query_id, _, chunk_id, grade = line.split()
        if int(grade) > 0:
            return query_id, chunk_id
    raise AssertionError("no gold chunk in qrels")


def test_synth_writes_inputs(workspace):
    assert sorted(p.name for p in workspace.iterdir()) == [
        "cards.jsonl",
        "chunks.jsonl",
        "filing.txt",
        "intents.jsonl",
        "qrels.txt",
        "questions.jsonl",
    ]
    assert len((workspace / "chunks.jsonl").read_text().splitlines()) == 120
    assert len((workspace / "intents.jsonl").read_text().splitlines()) == 3


def test_split_command(tmp_path):
    filing = tmp_path / "acme.txt"
    filing.write_text("ITEM 7\n\nRevenue grew 12% in fiscal 2023.\n\nMargins held.\n", encoding="utf-8")
    out = tmp_path / "chunks.jsonl"
    assert app.main(["split", str(filing), "--out", str(out)]) == EXIT_OK
    records = [json.loads(line) for line in out.read_text().splitlines()]
    assert [r["chunk_id"] for r in records] == ["acme#0", "acme#1", "acme#2"]


def test_rerank_eval_and_trace(workspace, tmp_path, capsys):
    """Test the full command chain from reranking to trace inspection."""
    out = tmp_path / "out"
    assert app.main(rerank_args(workspace, out)) == EXIT_OK
    run_file = out / "full.run"
    assert run_file.exists()
    traces = sorted((out / "traces").glob("*.json"))
    assert len(traces) == 3

    report = tmp_path / "report.json"
    code = app.main(["eval", str(run_file), "--qrels", str(workspace / "qrels.txt"), "--traces", str(out / "traces"), "--report", str(report)])
    assert code == EXIT_OK
    assert json.loads(report.read_text())[0]["run_name"] == "full"

    assert app.main(["trace", "validate", *map(str, traces)]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out

    query_id, gold = first_gold(workspace)
    trace_path = out / "traces" / f"{query_id}.json"
    code = app.main(["trace", "explain", str(trace_path), gold, "--chunks", str(workspace / "chunks.jsonl")])
    assert code == EXIT_OK
    rendered = capsys.readouterr().out
    assert f"chunk {gold}: final rank" in rendered
    assert "survival path:" in rendered


def test_reruns_are_byte_identical(workspace, tmp_path):
    for name in ("a", "b"):
        assert app.main(rerank_args(workspace, tmp_path / name, "--seed", "5")) == EXIT_OK
    assert (tmp_path / "a" / "full.run").read_bytes() == (tmp_path / "b" / "full.run").read_bytes()
    for trace in (tmp_path / "a" / "traces").iterdir():
        assert trace.read_bytes() == (tmp_path / "b" / "traces" / trace.name).read_bytes()


def test_stage1_variant_run_file(workspace, tmp_path):
    out = tmp_path / "out"
    assert app.main(rerank_args(workspace, out, "--variant", "stage1")) == EXIT_OK
    assert (out / "stage1.run").exists()


def test_corrupted_trace_fails_validation(workspace, tmp_path):
    out = tmp_path / "out"
    app.main(rerank_args(workspace, out))
    path = sorted((out / "traces").glob("*.json"))[0]
    data = json.loads(path.read_text())
    data["events"][1]["seq"] = 7
    path.write_text(json.dumps(data))
    assert app.main(["trace", "validate", str(path)]) == EXIT_VALIDATION


def test_explain_unknown_chunk(workspace, tmp_path):
    out = tmp_path / "out"
    app.main(rerank_args(workspace, out))
    path = sorted((out / "traces").glob("*.json"))[0]
    assert app.main(["trace", "explain", str(path), "missing#0"]) == EXIT_VALIDATION


def test_missing_chunk_file(tmp_path):
    code = app.main(["extract", "--chunks", str(tmp_path / "absent.jsonl"), "--cards-out", str(tmp_path / "cards.jsonl")])
    assert code == EXIT_IO


def test_missing_inputs_are_config_errors(tmp_path):
    assert app.main(["rerank", "--out", str(tmp_path)]) == EXIT_VALIDATION


def test_stage_failure_keeps_partial_trace(workspace, tmp_path, mocker):
    """Test that a failing stage exits with the judge code and leaves a partial trace."""
    partial = AuditTrace("q-failed")
    mocker.patch.object(
        TournamentService,
        "run_pipeline",
        side_effect=StageError("judge unavailable", stage="stage2", trace=partial),
    )
    out = tmp_path / "out"
    assert app.main(rerank_args(workspace, out)) == EXIT_JUDGE
    assert (out / "traces" / "q-failed.partial.json").exists()
    assert not (out / "full.run").exists()


def test_config_file_and_env(workspace, tmp_path, monkeypatch, mocker):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"variant": "s1_s2"}), encoding="utf-8")
    monkeypatch.setenv("FINCARDS_STAGE3__BASE_SEED", "4")
    spy = mocker.spy(app, "load_pipeline_config")
    out = tmp_path / "out"
    assert app.main(rerank_args(workspace, out, "--config", str(config))) == EXIT_OK
    loaded = spy.spy_return
    assert loaded.variant.value == "s1_s2"
    assert loaded.stage3.base_seed == 4
    assert (out / "s1_s2.run").exists()


def test_rerank_rejects_stale_cards(workspace, tmp_path):
    """Test that a card whose numbers are not in its chunk stops the rerank with a validation error."""
    cards = workspace / "cards.jsonl"
    records = [json.loads(line) for line in cards.read_text().splitlines()]
    target = next(r for r in records if r["card"] is not None)
    target["card"]["numeric_spans"] = ["$9,999 trillion"]
    cards.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    out = tmp_path / "out"
    assert app.main(rerank_args(workspace, out)) == EXIT_VALIDATION
    assert not (out / "full.run").exists()


def test_stability_keeps_configured_seed(mocker):
    run = mocker.patch("app.run_stability", new=mocker.AsyncMock(return_value={}))
    spy = mocker.spy(app, "load_pipeline_config")
    assert app.main(["stability", "--filings", "2", "--replicates", "2"]) == EXIT_OK
    assert "stage3" not in spy.call_args.args[1]
    filings = run.call_args.args[0]
    assert [f.seed for f in filings] == [0, 1]
