from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest

from claimlens.cli import main

from conftest import write_embedding_file

DATA = Path(__file__).parent / "data"


@pytest.fixture()
def workdir(tmp_path, income):
    for name in ("income.csv", "income.schema.json", "income.task.json"):
        shutil.copy(DATA / name, tmp_path / name)
    write_embedding_file(income, 2, tmp_path / "emb.json")
    return tmp_path


def _args(workdir, *extra):
    return [
        "--data", str(workdir / "income.csv"),
        "--schema", str(workdir / "income.schema.json"),
        "--task", str(workdir / "income.task.json"),
        "--embeddings", str(workdir / "emb.json"),
        *extra,
    ]


def _read_records(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def test_precompute_writes_cache_and_is_reproducible(workdir):
    cache_a = workdir / "a.cache.json"
    cache_b = workdir / "b.cache.json"
    base = ["precompute", "--data", str(workdir / "income.csv"), "--schema", str(workdir / "income.schema.json"),
            "--m", "2", "--embeddings", str(workdir / "emb.json")]
    assert main(base + ["--out", str(cache_a)]) == 0
    assert main(base + ["--out", str(cache_b)]) == 0
    assert cache_a.read_bytes() == cache_b.read_bytes()
    doc = json.loads(cache_a.read_text())
    assert len(doc["combos"]) == 6


def test_endorse_streams_cs_math_refinement(workdir, capsys):
    out = workdir / "run.jsonl"
    cache = workdir / "cache.json"
    code = main(["endorse", *_args(workdir, "--cache", str(cache), "--strategy", "merged", "--out", str(out))])
    assert code == 0
    records = _read_records(out)
    assert records[0]["type"] == "header"
    assert records[-1]["type"] == "summary"
    results = [r for r in records if r["type"] == "result"]
    cs = [r for r in results if ["Occupation", "CS&Math"] in r["predicate"] and len(r["predicate"]) == 1]
    assert len(cs) == 1
    assert cs[0]["agg1"] == 92.5
    assert cs[0]["agg2"] == 76.0
    assert cs[0]["n1"] == 2 and cs[0]["n2"] == 2
    summary = records[-1]
    assert summary["baseline"] == {"v1": 72.5, "v2": 80.5, "already_holds": False}
    assert summary["stop_reason"] == "completed"


def test_endorse_deadline_zero(workdir):
    out = workdir / "run.jsonl"
    code = main(["endorse", *_args(workdir, "--deadline-ms", "0", "--out", str(out))])
    assert code == 0
    records = _read_records(out)
    assert [r["type"] for r in records] == ["header", "summary"]
    assert records[-1]["combos_searched"] == 0


def test_endorse_generality_flag(workdir):
    out = workdir / "run.jsonl"
    code = main(["endorse", *_args(workdir, "--generality", "--out", str(out))])
    assert code == 0
    summary = _read_records(out)[-1]
    listing = summary["final_topk_general"]
    for measure, entries in listing.items():
        atom_sets = [frozenset(map(tuple, e["predicate"])) for e in entries]
        for i, a in enumerate(atom_sets):
            assert not any(b < a for j, b in enumerate(atom_sets) if j != i)


def test_endorse_stale_cache_exits_2(workdir, capsys):
    cache = workdir / "cache.json"
    assert main(["endorse", *_args(workdir, "--cache", str(cache), "--out", str(workdir / "a.jsonl"))]) == 0
    # corrupt the dataset: change one income value
    csv_path = workdir / "income.csv"
    csv_path.write_text(csv_path.read_text().replace(",72\n", ",73\n"), encoding="utf-8")
    code = main(["endorse", *_args(workdir, "--cache", str(cache), "--out", str(workdir / "b.jsonl"))])
    assert code == 2
    err = capsys.readouterr().err
    assert "fingerprint" in err


def test_validation_error_json_exit_2(workdir, capsys):
    bad_task = workdir / "bad.task.json"
    bad_task.write_text(json.dumps({
        "query": {"agg_fn": "average"},
        "claim": {"g1": "Master's degree", "g2": "Master's degree"},
        "config": {"min_group": 1},
    }))
    code = main([
        "endorse",
        "--data", str(workdir / "income.csv"),
        "--schema", str(workdir / "income.schema.json"),
        "--task", str(bad_task),
    ])
    assert code == 2
    err = capsys.readouterr().err
    doc = json.loads(err.strip().splitlines()[-1])
    assert doc["error"] == "validation"
    assert any("identical" in d["message"] for d in doc["details"])


def test_missing_data_file_exits_3(workdir, capsys):
    code = main([
        "endorse",
        "--data", str(workdir / "nope.csv"),
        "--schema", str(workdir / "income.schema.json"),
        "--task", str(workdir / "income.task.json"),
    ])
    assert code == 3
    doc = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert doc["error"] == "io"


def test_oracle_and_eval_round_trip(workdir, capsys):
    oracle_path = workdir / "oracle.jsonl"
    assert main(["oracle", *_args(workdir, "--out", str(oracle_path))]) == 0
    records = _read_records(oracle_path)
    s_full = [r for r in records if r["type"] == "s_full"]
    assert len(s_full) == 1
    assert s_full[0]["sums"]["coverage"] > 0

    # a log identical to the oracle stream reaches recall 1.0 everywhere
    out_dir = workdir / "report"
    assert main(["eval", "--log", str(oracle_path), "--oracle", str(oracle_path), "--out", str(out_dir)]) == 0
    table = capsys.readouterr().out
    assert "coverage" in table
    report = json.loads((out_dir / "recall.json").read_text())
    for measure, entry in report["measures"].items():
        assert entry["final_recall"] == pytest.approx(1.0, rel=1e-9)
    assert (out_dir / "recall.png").exists()
    assert (out_dir / "recall.csv").exists()


def test_eval_truncated_log_partial_recall(workdir):
    oracle_path = workdir / "oracle.jsonl"
    assert main(["oracle", *_args(workdir, "--out", str(oracle_path))]) == 0
    records = _read_records(oracle_path)
    header = records[0]
    results = [r for r in records if r["type"] == "result"]
    log_path = workdir / "partial.jsonl"
    with open(log_path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        fh.write(json.dumps(results[0]) + "\n")
    out_dir = workdir / "partial-report"
    assert main(["eval", "--log", str(log_path), "--oracle", str(oracle_path), "--out", str(out_dir)]) == 0
    report = json.loads((out_dir / "recall.json").read_text())
    assert report["measures"]["coverage"]["final_recall"] < 1.0


def test_eval_fingerprint_mismatch_exits_2(workdir, capsys):
    oracle_path = workdir / "oracle.jsonl"
    assert main(["oracle", *_args(workdir, "--out", str(oracle_path))]) == 0
    tampered = workdir / "tampered.jsonl"
    records = _read_records(oracle_path)
    records[0]["task_fingerprint"] = "0" * 64
    tampered.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    code = main(["eval", "--log", str(tampered), "--oracle", str(oracle_path)])
    assert code == 2


def test_eval_compare_runs_and_writes_report(workdir, capsys):
    out_dir = workdir / "cmp"
    code = main([
        "eval", "--compare", "merged,random", "--seeds", "0,1",
        *_args(workdir), "--out", str(out_dir),
    ])
    assert code == 0
    table = capsys.readouterr().out
    assert "merged" in table and "random" in table
    assert (out_dir / "compare.csv").exists()
    assert (out_dir / "compare.png").exists()
    rows = json.loads((out_dir / "compare.json").read_text())
    assert {r["strategy"] for r in rows} == {"merged", "random"}
    assert rows[1]["runs"] == 2


def test_ingest_summary_and_labels_manifest(workdir, capsys):
    manifest = workdir / "labels.json"
    code = main([
        "ingest", "--data", str(workdir / "income.csv"),
        "--schema", str(workdir / "income.schema.json"),
        "--labels-out", str(manifest),
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "rows: 10" in out
    doc = json.loads(manifest.read_text())
    assert doc["aggregate"]["label"] == "Income"
    names = {entry["name"] for entry in doc["split"]}
    assert names == {"Sex", "Occupation", "QoB"}
    sex = next(e for e in doc["split"] if e["name"] == "Sex")
    assert set(sex["value_labels"]) == {"Female", "Male"}


def test_endorse_to_stdout(workdir, capsys):
    code = main(["endorse", *_args(workdir, "--strategy", "coverage")])
    assert code == 0
    out = capsys.readouterr().out
    records = [json.loads(line) for line in out.splitlines() if line.strip()]
    assert records[0]["type"] == "header"
    assert records[-1]["type"] == "summary"


def test_endorse_workers_flag_same_results(workdir):
    out1 = workdir / "w1.jsonl"
    out2 = workdir / "w2.jsonl"
    assert main(["endorse", *_args(workdir, "--workers", "1", "--out", str(out1))]) == 0
    assert main(["endorse", *_args(workdir, "--workers", "3", "--out", str(out2))]) == 0
    results1 = [(r["predicate"], r["agg1"], r["agg2"]) for r in _read_records(out1) if r["type"] == "result"]
    results2 = [(r["predicate"], r["agg1"], r["agg2"]) for r in _read_records(out2) if r["type"] == "result"]
    assert results1 == results2


def test_endorse_sampling_strategy(workdir):
    out = workdir / "s.jsonl"
    code = main(["endorse", *_args(workdir, "--strategy", "sample:0.5", "--seed", "1", "--out", str(out))])
    assert code == 0
    results = [r for r in _read_records(out) if r["type"] == "result"]
    assert results
