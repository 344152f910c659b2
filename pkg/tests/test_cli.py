"""Exit codes, flag precedence, and end-to-end command flows."""

import json

import pytest

from finegrain.cli import EXIT_BACKEND, EXIT_CONFIG, EXIT_CONTRACT, EXIT_OK, main
from finegrain.dataset import read_manifest

SIZE = "160"


def _synth(out, *extra):
    return main(
        [
            "synth",
            "--seed", "21",
            "--subset", "count",
            "--cases", "2",
            "--out", str(out),
            "--size", SIZE,
            *extra,
        ]
    )


def test_synth_validate_eval_happy_path(tmp_path, capsys):
    out = tmp_path / "ds"
    assert _synth(out) == EXIT_OK
    assert main(["validate", "--dataset", str(out)]) == EXIT_OK
    assert main(["eval", "--dataset", str(out), "--scorer", "oracle"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "100.00" in text
    report = json.loads((out / "eval_report.json").read_text(encoding="utf-8"))
    assert report["scorer"] == "oracle"
    assert (out / "eval_report.txt").exists()


def test_synth_is_bit_identical_across_runs(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert _synth(a) == EXIT_OK
    assert _synth(b) == EXIT_OK
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_synth_all_covers_six_subsets(tmp_path):
    out = tmp_path / "ds"
    code = main(
        ["synth", "--seed", "3", "--subset", "all", "--cases", "1",
         "--out", str(out), "--size", SIZE, "--jobs", "3"]
    )
    assert code == EXIT_OK
    manifest = read_manifest(out)
    assert manifest["case_count"] == 6


def test_missing_seed_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["synth", "--subset", "count", "--cases", "1", "--out", str(tmp_path / "x")])
    assert err.value.code == 2


def test_bad_config_file_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text("not json", encoding="utf-8")
    code = main(
        ["synth", "--seed", "1", "--out", str(tmp_path / "x"), "--config", str(cfg)]
    )
    assert code == EXIT_CONFIG


def test_config_file_supplies_defaults_and_flags_win(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"subset": "existence", "cases": 2, "size": int(SIZE)}))
    out = tmp_path / "from_config"
    assert main(["synth", "--seed", "4", "--out", str(out), "--config", str(cfg)]) == EXIT_OK
    assert read_manifest(out)["case_count"] == 2
    assert set(read_manifest(out)["cases"][0]["plan"]["case_id"].split("-")[:1]) == {"existence"}

    out2 = tmp_path / "flag_wins"
    code = main(
        ["synth", "--seed", "4", "--out", str(out2), "--config", str(cfg),
         "--subset", "count", "--cases", "1"]
    )
    assert code == EXIT_OK
    manifest = read_manifest(out2)
    assert manifest["case_count"] == 1
    assert manifest["cases"][0]["plan"]["case_id"].startswith("count-")


def test_config_type_errors_are_config_errors(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"cases": "plenty"}))
    code = main(["synth", "--seed", "1", "--out", str(tmp_path / "x"), "--config", str(cfg)])
    assert code == EXIT_CONFIG


def test_validate_tampered_dataset_fails(tmp_path):
    out = tmp_path / "ds"
    assert _synth(out) == EXIT_OK
    manifest = read_manifest(out)
    victim = out / manifest["cases"][0]["image_paths"][0]
    blob = bytearray(victim.read_bytes())
    blob[-1] ^= 0xFF
    victim.write_bytes(bytes(blob))
    assert main(["validate", "--dataset", str(out)]) == EXIT_CONTRACT


def test_eval_random_scorer_requires_seed(tmp_path):
    out = tmp_path / "ds"
    assert _synth(out) == EXIT_OK
    assert main(["eval", "--dataset", str(out), "--scorer", "random"]) == EXIT_CONFIG
    assert main(["eval", "--dataset", str(out), "--scorer", "random", "--seed", "9"]) == EXIT_OK


def test_eval_reports_are_deterministic(tmp_path):
    out = tmp_path / "ds"
    assert _synth(out) == EXIT_OK
    r1 = tmp_path / "r1.json"
    r2 = tmp_path / "r2.json"
    for path in (r1, r2):
        code = main(
            ["eval", "--dataset", str(out), "--scorer", "random", "--seed", "9",
             "--report", str(path)]
        )
        assert code == EXIT_OK
    assert r1.read_bytes() == r2.read_bytes()


def test_eval_table_scorer_missing_case_is_contract_failure(tmp_path, capsys):
    out = tmp_path / "ds"
    assert _synth(out) == EXIT_OK
    scores = tmp_path / "scores.json"
    scores.write_text(json.dumps({"match": {}, "cls": {}}), encoding="utf-8")
    code = main(
        ["eval", "--dataset", str(out), "--scorer", "table", "--scores", str(scores)]
    )
    assert code == EXIT_CONTRACT
    assert "count-000000" in capsys.readouterr().err


def test_eval_table_scorer_without_scores_flag(tmp_path):
    out = tmp_path / "ds"
    assert _synth(out) == EXIT_OK
    assert main(["eval", "--dataset", str(out), "--scorer", "table"]) == EXIT_CONFIG


def test_eval_embedding_scorer_procedural(tmp_path):
    out = tmp_path / "ds"
    assert _synth(out) == EXIT_OK
    assert main(["eval", "--dataset", str(out), "--scorer", "embedding"]) == EXIT_OK


def test_unreachable_backend_is_transport_error(tmp_path):
    out = tmp_path / "ds"
    assert _synth(out) == EXIT_OK
    code = main(
        ["eval", "--dataset", str(out), "--scorer", "embedding",
         "--backend", "http://127.0.0.1:9"]
    )
    assert code == EXIT_BACKEND


def test_backend_env_override(tmp_path, monkeypatch):
    out = tmp_path / "ds"
    assert _synth(out) == EXIT_OK
    monkeypatch.setenv("FINEGRAIN_BACKEND_URL", "http://127.0.0.1:9")
    code = main(["eval", "--dataset", str(out), "--scorer", "embedding"])
    assert code == EXIT_BACKEND
    # an explicit flag still beats the environment
    code = main(
        ["eval", "--dataset", str(out), "--scorer", "embedding", "--backend", "procedural"]
    )
    assert code == EXIT_OK


def test_gradcheck_pass_fail_and_self_test(capsys):
    assert main(["gradcheck", "--batches", "4", "--seed", "1"]) == EXIT_OK
    assert "max_rel_err" in capsys.readouterr().out
    assert main(["gradcheck", "--batches", "4", "--lam", "0"]) == EXIT_OK
    assert main(["gradcheck", "--batches", "2", "--inject-sign-flip"]) == EXIT_OK
    assert "caught" in capsys.readouterr().out


def test_unknown_backend_string_is_config_error(tmp_path):
    code = main(
        ["synth", "--seed", "1", "--subset", "count", "--cases", "1",
         "--out", str(tmp_path / "x"), "--backend", "carrier-pigeon"]
    )
    assert code == EXIT_CONFIG
