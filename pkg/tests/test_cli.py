import json

import pytest

from petc_traffic import cli, serialization as ser
from petc_traffic.config import ConfigError, RunConfig, example_config_path


@pytest.fixture
def small_cfg(tmp_path):
    d = ser.read_json(example_config_path())
    d["partition"].update({"q1": 2, "q2": 2, "radii": [1.0], "W_trunc": 10.0})
    d["simulation"].update({"n_traces": 5, "T": 0.5, "r_max": 9.0})
    path = tmp_path / "small.json"
    ser.write_json(path, d)
    return path


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_missing_config_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, "pipeline", "--config", str(tmp_path / "nope.json"))
    assert code == 2 and "not found" in err


@pytest.mark.parametrize("argv", [["frobnicate", "--config", "x"],
                                  ["bounds", "--config", "x", "--bogus"],
                                  ["bounds"],
                                  ["bounds", "--config", "x", "--format", "xml"]])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


def test_help_exits_0(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    assert "pipeline" in capsys.readouterr().out


def test_bad_dimension_names_field(tmp_path, capsys):
    d = ser.read_json(example_config_path())
    d["system"]["E"] = [[1.0], [0.0], [0.0]]
    path = tmp_path / "bad.json"
    ser.write_json(path, d)
    code, _, err = run(capsys, "partition", "--config", str(path))
    assert code == 2
    assert "E" in err and "A_p" in err
    with pytest.raises(ConfigError) as exc:
        RunConfig.load(path)
    assert "E" in exc.value.field


@pytest.mark.parametrize("patch, field", [
    ({"sigma": "x"}, "sigma"),
    ({"partition": {"q1": 0}}, "partition.q1"),
    ({"simulation": {"T": 0.0123}}, "simulation.T"),
    ({"simulation": {"disturbances": [{"kind": "sinusoid", "amplitude": 3.0}]}},
     "simulation.disturbances[0].amplitude"),
])
def test_invalid_fields(patch, field):
    d = ser.read_json(example_config_path())
    for k, v in patch.items():
        if isinstance(v, dict):
            d[k].update(v)
        else:
            d[k] = v
    with pytest.raises(ConfigError) as exc:
        RunConfig.from_dict(d)
    assert exc.value.field == field


def test_invalid_json(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    code, _, err = run(capsys, "bounds", "--config", str(path))
    assert code == 2 and "invalid JSON" in err


def test_partition_stage_only(small_cfg, tmp_path, capsys):
    out = tmp_path / "o"
    code, stdout, _ = run(capsys, "partition", "--config", str(small_cfg), "--out", str(out))
    assert code == 0
    assert sorted(p.name for p in out.iterdir()) == ["partition.json"]
    summary = json.loads(stdout)
    part = ser.read_json(out / "partition.json")
    assert part["config_hash"] == summary["config_hash"]
    assert len(part["regions"]) == 4


def test_jobs_resolution(monkeypatch):
    monkeypatch.delenv("PETC_TRAFFIC_JOBS", raising=False)
    assert cli._jobs(None) == 1
    monkeypatch.setenv("PETC_TRAFFIC_JOBS", "3")
    assert cli._jobs(None) == 3
    assert cli._jobs(2) == 2
    monkeypatch.setenv("PETC_TRAFFIC_JOBS", "many")
    assert cli._jobs(None) == 1


def test_jobs_env_reaches_pipeline(small_cfg, tmp_path, capsys, monkeypatch):
    seen = []
    real = cli.run_pipeline

    def spy(cfg, stages, out, jobs, *a, **kw):
        seen.append(jobs)
        return real(cfg, ("partition",), out, jobs, *a, **kw)

    monkeypatch.setattr(cli, "run_pipeline", spy)
    monkeypatch.setenv("PETC_TRAFFIC_JOBS", "4")
    run(capsys, "bounds", "--config", str(small_cfg))
    run(capsys, "bounds", "--config", str(small_cfg), "--jobs", "2")
    assert seen == [4, 2]


def test_full_cli_and_stage_cache(small_cfg, tmp_path, capsys, monkeypatch):
    out = tmp_path / "o"
    code, stdout, _ = run(capsys, "pipeline", "--config", str(small_cfg), "--out", str(out),
                          "--format", "json", "--format", "dot", "--format", "csv")
    assert code == 0
    summary = json.loads(stdout)
    names = sorted(p.name for p in out.iterdir())
    assert names == ["abstraction.dot", "abstraction.json", "bounds.csv", "bounds.json",
                     "partition.json", "reach.json", "traces.json", "verify.json"]
    for name in names:
        if name.endswith(".json"):
            assert ser.read_json(out / name)["config_hash"] == summary["config_hash"]
    assert summary["verify"]["passed"]
    assert summary["reference_epsilon_s"] == 0.15

    # cached bounds are reused when the hash matches
    def boom(*a, **kw):
        raise AssertionError("bounds recomputed")

    monkeypatch.setattr(cli, "compute_bounds", boom)
    code, _, _ = run(capsys, "abstract", "--config", str(small_cfg), "--out", str(out),
                     "--stage-cache")
    assert code == 0
    # a different seed changes the hash, so the cache is stale
    with pytest.raises(AssertionError, match="recomputed"):
        cli.main(["bounds", "--config", str(small_cfg), "--out", str(out), "--stage-cache",
                  "--seed", "7"])


def test_seed_override_changes_hash(small_cfg):
    cfg = RunConfig.load(small_cfg)
    assert cfg.with_seed(7).hash != cfg.hash
    assert cfg.with_seed(cfg.simulation["seed"]).hash == cfg.hash
