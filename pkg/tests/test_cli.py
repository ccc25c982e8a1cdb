import json
import shutil
import subprocess

import pytest

from biplan.cli import main


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["collect", "--samples", "3000", "--objects", "2,3", "--seed", "4", "--out", str(d / "data.jsonl")]) == 0
    assert main(["mine", "--dataset", str(d / "data.jsonl"), "--out", str(d / "ops.txt")]) == 0
    assert main(["fit", "--dataset", str(d / "data.jsonl"), "--out", str(d / "model.npz")]) == 0
    assert main(["generate", "--n", "2", "--k", "1", "--count", "3", "--out", str(d / "problems.jsonl")]) == 0
    return d


def test_manifest_and_config_copy(artifacts):
    manifest = json.loads((artifacts / "manifest.json").read_text())
    assert set(manifest["artifacts"]) == {"data.jsonl", "ops.txt", "model.npz", "problems.jsonl"}
    assert (artifacts / "collect.config.ini").exists()
    assert "timestamp" not in json.dumps(manifest)


def test_plan_bilevel_deterministic(artifacts, capsys):
    argv = ["plan", "--problem", str(artifacts / "problems.jsonl"), "--operators", str(artifacts / "ops.txt"),
            "--mode", "bilevel", "--seed", "7", "--n-domains", "20"]
    codes, outs = [], []
    for _ in range(2):
        codes.append(main(argv))
        outs.append(capsys.readouterr().out)
    assert codes[0] == codes[1] and outs[0] == outs[1]
    record = json.loads(outs[0])
    assert record["level"] in ("Symbolic", "Continuous", "Failed")


def test_plan_writes_outcome(artifacts, tmp_path, capsys):
    code = main(["plan", "--problem", str(artifacts / "problems.jsonl"), "--mode", "continuous",
                 "--out-dir", str(tmp_path)])
    assert code in (0, 1)
    assert json.loads((tmp_path / "outcome.json").read_text())["mode"] == "continuous"


def test_export_ppddl_to_stdout(artifacts, capsys):
    assert main(["export-ppddl", "--operators", str(artifacts / "ops.txt")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("(define (domain tabletop)") and ":probabilistic-effects" in out


def test_export_pddl_with_problem(artifacts, tmp_path, capsys):
    assert main(["export-pddl", "--operators", str(artifacts / "ops.txt"), "--problem",
                 str(artifacts / "problems.jsonl"), "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "domain.pddl").read_text().startswith("(define (domain")
    assert "(:goal" in (tmp_path / "problem.pddl").read_text()


def test_verify_and_search(artifacts, tmp_path, capsys):
    problems = str(artifacts / "problems.jsonl")
    assert main(["search", "--problem", problems]) == 0
    plan_text = capsys.readouterr().out
    (tmp_path / "plan.txt").write_text(plan_text)
    assert main(["verify", "--problem", problems, "--plan", str(tmp_path / "plan.txt")]) == 0
    assert json.loads(capsys.readouterr().out)["status"] == "Verified"
    assert main(["verify", "--problem", problems, "--plan", str(tmp_path / "plan.txt"),
                 "--model", str(artifacts / "model.npz")]) == 0


def test_predict(artifacts, tmp_path, capsys):
    (tmp_path / "s.json").write_text(json.dumps([0.4, 0.5, 0.015, 0, 1, 0.6, 0.5, 0.03, 1, 0]))
    assert main(["predict", "--model", "oracle", "--state", str(tmp_path / "s.json"), "--action", "0,0,1,0"]) == 0
    effect = json.loads(capsys.readouterr().out)["effect"]
    assert effect[0] == pytest.approx([0.2, 0.0, 0.06])
    assert main(["predict", "--model", "oracle", "--state", str(tmp_path / "s.json"), "--action", "0,0,1"]) == 2


def test_bench_outputs(tmp_path, capsys):
    cfg = tmp_path / "desk.cfg"
    cfg.write_text(
        "[dynamics]\npredictor = oracle\ntrain_size = 3000\n"
        "[bench]\nn = 2\nk = 1\ntrials = 3\n[planning]\nn_domains = 10\nexpansion_cap = 200\n"
    )
    for d in ("a", "b"):
        assert main(["bench", "--config", str(cfg), "--out-dir", str(tmp_path / d)]) == 0
    capsys.readouterr()
    assert (tmp_path / "a" / "cells.csv").read_text().startswith("n,k,method,successes")
    for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["plan", "--bogus-flag"])
    assert exc.value.code == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("[planning]\ntua = 0.1\n")
    assert main(["dump-config", "--config", str(bad)]) == 3
    assert "planning.tua" in capsys.readouterr().err
    assert main(["mine", "--dataset", str(tmp_path / "missing.jsonl")]) == 2


def test_dump_config_roundtrip(tmp_path, capsys):
    assert main(["dump-config", "--seed", "9"]) == 0
    text = capsys.readouterr().out
    (tmp_path / "c.ini").write_text(text)
    assert main(["dump-config", "--config", str(tmp_path / "c.ini")]) == 0
    assert capsys.readouterr().out == text


@pytest.mark.skipif(shutil.which("biplan") is None, reason="console script not on PATH")
def test_console_script():
    out = subprocess.run(["biplan", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "biplan" in out.stdout
