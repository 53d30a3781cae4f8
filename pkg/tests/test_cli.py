"""Command line interface: subcommands, exit codes, artifacts, env overrides."""

import json
import os

import pytest

from nmevo.cli import main

MICRO_INI = """\
[run]
master_seed = 11
[evolution]
population_size = 4
generations = 4
parent_pool = 2
elite_pool = 1
n_instances = 6
n_trials = 2
checkpoint_every = 2
[guided]
n_train = 4
max_epochs = 2
[baseline]
trials = 30
instances = 3
[analysis]
curve_window = 10
trajectory_instances = 2
"""


@pytest.fixture()
def micro_ini(tmp_path):
    path = tmp_path / "micro.ini"
    path.write_text(MICRO_INI)
    return str(path)


def read(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def test_version(capsys):
    with pytest.raises(SystemExit) as err:
        main(["--version"])
    assert err.value.code == 0
    assert "nmevo" in capsys.readouterr().out


def test_missing_out_is_config_error(micro_ini, capsys):
    rc = main(["evolve", "--config", micro_ini])
    assert rc == 2
    assert "output directory" in capsys.readouterr().err


def test_evolve_artifacts(micro_ini, tmp_path, capsys):
    out = str(tmp_path / "run")
    rc = main(["evolve", "--config", micro_ini, "--out", out])
    assert rc == 0
    assert "champion written" in capsys.readouterr().out
    assert os.path.exists(os.path.join(out, "config.ini"))
    assert os.path.exists(os.path.join(out, "champion.genotype.json"))
    focal = read(os.path.join(out, "focal.tsv"))
    assert focal.startswith("# config_hash=")
    assert "# master_seed=11" in focal
    header = focal.splitlines()[2]
    assert header.split("\t")[0] == "generation"
    assert len(focal.splitlines()) == 3 + 4
    profile = read(os.path.join(out, "focal_profile.tsv"))
    assert len(profile.splitlines()) == 3 + 4 * 2  # preamble + gens * trials
    events = [json.loads(line)["event"]
              for line in read(os.path.join(out, "run.manifest.jsonl")).splitlines()]
    assert events[0] == "start"
    assert events[-1] == "finish"
    assert events.count("generation") == 4
    assert "checkpoint" in events
    names = sorted(os.listdir(os.path.join(out, "checkpoints")))
    assert "checkpoint_000002.bin" in names
    assert "checkpoint_000004.bin" in names


def test_stop_after_resume_matches_straight_run(micro_ini, tmp_path, capsys):
    straight = str(tmp_path / "straight")
    assert main(["evolve", "--config", micro_ini, "--out", straight]) == 0
    split = str(tmp_path / "split")
    assert main(["evolve", "--config", micro_ini, "--out", split,
                 "--stop-after", "2"]) == 0
    assert "resume to continue" in capsys.readouterr().out
    assert not os.path.exists(os.path.join(split, "champion.genotype.json"))
    assert main(["resume", "--out", split]) == 0
    assert read(os.path.join(split, "focal.tsv")) == read(
        os.path.join(straight, "focal.tsv"))
    assert read(os.path.join(split, "focal_profile.tsv")) == read(
        os.path.join(straight, "focal_profile.tsv"))
    assert read(os.path.join(split, "champion.genotype.json")) == read(
        os.path.join(straight, "champion.genotype.json"))


def test_resume_rejects_seed_and_mode(micro_ini, tmp_path, capsys):
    out = str(tmp_path / "run")
    assert main(["evolve", "--config", micro_ini, "--out", out,
                 "--stop-after", "2"]) == 0
    assert main(["resume", "--out", out, "--seed", "99"]) == 2
    assert "cannot change seed" in capsys.readouterr().err


def test_resume_without_snapshot(tmp_path, capsys):
    out = str(tmp_path / "empty")
    os.makedirs(out)
    assert main(["resume", "--out", out]) == 2
    assert "config snapshot" in capsys.readouterr().err


def test_resume_mismatched_config(micro_ini, tmp_path, capsys):
    out = str(tmp_path / "run")
    assert main(["evolve", "--config", micro_ini, "--out", out,
                 "--stop-after", "2"]) == 0
    other = tmp_path / "other.ini"
    other.write_text(MICRO_INI.replace("master_seed = 11", "master_seed = 12"))
    rc = main(["resume", "--out", out, "--config", str(other)])
    assert rc == 3
    assert "error" in capsys.readouterr().err


def test_baseline_rl(micro_ini, tmp_path, capsys):
    out = str(tmp_path / "base")
    rc = main(["baseline-rl", "--config", micro_ini, "--out", out])
    assert rc == 0
    assert "final" in capsys.readouterr().out
    curve = read(os.path.join(out, "baseline_curve.tsv"))
    assert curve.startswith("# config_hash=")
    assert len(curve.splitlines()) == 3 + 30
    events = [json.loads(line)
              for line in read(os.path.join(out, "run.manifest.jsonl")).splitlines()]
    assert any("final_window_mean" in e for e in events)


def test_compare_missing_champion(micro_ini, tmp_path, capsys):
    out = str(tmp_path / "cmp")
    rc = main(["compare", "--config", micro_ini, "--out", out,
               "--trials", "3", "--instances", "2",
               str(tmp_path / "missing.json")])
    assert rc == 2
    captured = capsys.readouterr()
    assert "skipped" in captured.err
    assert "baseline-rl" in captured.out


def test_compare_champion(micro_ini, tmp_path, capsys):
    run = str(tmp_path / "run")
    assert main(["evolve", "--config", micro_ini, "--out", run]) == 0
    capsys.readouterr()
    out = str(tmp_path / "cmp")
    champ = os.path.join(run, "champion.genotype.json")
    rc = main(["compare", "--config", micro_ini, "--out", out,
               "--trials", "3", "--instances", "2", champ])
    assert rc == 0
    captured = capsys.readouterr().out
    assert "champion.genotype" in captured
    assert "baseline-rl" in captured
    curve = read(os.path.join(out, "compare_curve.tsv"))
    series = {line.split("\t")[0] for line in curve.splitlines()[3:]}
    assert series == {"champion.genotype", "baseline-rl"}


def test_inspect(micro_ini, tmp_path, capsys):
    run = str(tmp_path / "run")
    assert main(["evolve", "--config", micro_ini, "--out", run]) == 0
    capsys.readouterr()
    champ = os.path.join(run, "champion.genotype.json")
    assert main(["inspect", champ]) == 0
    text = capsys.readouterr().out
    assert "global_rl_rate" in text
    assert "activatory projections:" in text

    missing = str(tmp_path / "nope.json")
    assert main(["inspect", missing]) == 2
    assert "cannot read" in capsys.readouterr().err

    corrupt = tmp_path / "bad.json"
    corrupt.write_text("{not a genotype}")
    assert main(["inspect", str(corrupt)]) == 2
    assert "error" in capsys.readouterr().err


def test_inspect_vestigial_value(tmp_path, capsys):
    from conftest import make_genotype
    from nmevo.genome import to_text

    path = tmp_path / "g.json"
    path.write_text(to_text(make_genotype(seed=3, global_rate=0.0)))
    assert main(["inspect", str(path)]) == 0
    assert "vestigial" in capsys.readouterr().out


def test_env_seed_override(micro_ini, tmp_path, monkeypatch, capsys):
    out1 = str(tmp_path / "a")
    out2 = str(tmp_path / "b")
    monkeypatch.setenv("NMEVO_SEED", "11")
    ini = tmp_path / "noseed.ini"
    ini.write_text(MICRO_INI.replace("master_seed = 11", "master_seed = 99"))
    assert main(["evolve", "--config", str(ini), "--out", out1]) == 0
    monkeypatch.delenv("NMEVO_SEED")
    assert main(["evolve", "--config", micro_ini, "--out", out2]) == 0
    a = read(os.path.join(out1, "focal.tsv")).splitlines()[3:]
    b = read(os.path.join(out2, "focal.tsv")).splitlines()[3:]
    assert a == b
