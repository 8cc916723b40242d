import csv
import json
from pathlib import Path

import numpy as np
import pytest

from hiersue import cli
from hiersue import fixtures as F
from hiersue.hiernet import dump_network, load_network, network_to_dict

DATA = Path(__file__).resolve().parent.parent / "data"


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def net_file(tmp_path):
    def make(net, name="net.json"):
        path = tmp_path / name
        dump_network(net, path)
        return path
    return make


def test_solve_pigou(tmp_path):
    assert cli.main(["solve", str(DATA / "pigou.json"), "--eps", "1e-6", "--out", str(tmp_path)]) == 0
    flows = rows(tmp_path / "flows.csv")
    assert [r["edge"] for r in flows] == ["e1", "e2"]
    assert [r["level"] for r in flows] == ["1", "1"]
    cert = rows(tmp_path / "certificate.csv")[0]
    assert 0 <= float(cert["gap"]) <= 1e-6
    conv = rows(tmp_path / "convergence.csv")
    assert int(conv[-1]["iter"]) == int(cert["iters"])


def test_malformed_network_names_key(tmp_path, capsys):
    data = json.loads((DATA / "pigou.json").read_text())
    del data["levels"][0]["edges"][0]["head"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    assert cli.main(["solve", str(bad), "--out", str(tmp_path)]) == 1
    assert "head" in capsys.readouterr().err


def test_missing_file_and_invalid_network(tmp_path, capsys, net_file):
    assert cli.main(["solve", str(tmp_path / "nope.json")]) == 1
    net = F.pigou().with_demands([-1.0])
    assert cli.main(["validate", str(net_file(net))]) == 1
    assert capsys.readouterr().err
    assert cli.main(["validate", str(DATA / "three_level.json")]) == 0


def test_budget_exhaustion_writes_partial_certificate(tmp_path):
    code = cli.main(["solve", str(DATA / "braess.json"), "--max-iters", "2", "--out", str(tmp_path)])
    assert code == 2
    cert = rows(tmp_path / "certificate.csv")[0]
    assert float(cert["gap"]) > 1e-6 and cert["iters"] == "2"


def test_two_level_demands_echo_expansion_flows(tmp_path):
    assert cli.main(["solve", str(DATA / "two_level.json"), "--out", str(tmp_path)]) == 0
    dem = rows(tmp_path / "demands.csv")
    assert [(r["level"], r["od"]) for r in dem] == [("1", "s->t"), ("2", "p->r")]
    flows = {r["edge"]: float(r["flow"]) for r in rows(tmp_path / "flows.csv")}
    # the level-2 OD is reached only through expansion edge x, which carries
    # all flow not on the direct road a
    assert float(dem[1]["demand"]) == pytest.approx(2.0 - flows["a"], abs=1e-10)
    assert flows["b"] == pytest.approx(float(dem[1]["demand"]), abs=1e-10)


def test_zero_demand_gives_zero_flows(tmp_path, net_file):
    assert cli.main(["solve", str(net_file(F.zero_demand())), "--out", str(tmp_path)]) == 0
    assert all(float(r["flow"]) == 0.0 for r in rows(tmp_path / "flows.csv"))


def strip_elapsed(path):
    return [line.rsplit(",", 1)[0] for line in path.read_text().splitlines()]


@pytest.mark.parametrize("command, name, extra", [
    (["solve"], "two_od.json", []),
    (["simulate"], "two_level.json", ["--mode", "agents", "--horizon", "3", "--agents", "50"]),
    (["simulate"], "pigou.json", ["--horizon", "2"]),
    (["oracle"], "cyclic.json", []),
    (["softpath", "eval"], "braess.json", []),
])
def test_byte_identical_reruns(tmp_path, command, name, extra):
    argv = command + [str(DATA / name)] + extra
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli.main(argv + ["--seed", "5", "--out", str(out)]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == sorted(p.name for p in outs[1].iterdir())
    for name in names:
        a, b = outs[0] / name, outs[1] / name
        if name == "convergence.csv":
            # wall-clock column aside, the trace is deterministic
            assert strip_elapsed(a) == strip_elapsed(b)
        else:
            assert a.read_bytes() == b.read_bytes()


def test_seed_changes_agent_run(tmp_path):
    base = ["simulate", str(DATA / "pigou.json"), "--mode", "agents", "--horizon", "2", "--agents", "50"]
    for seed in ("1", "2"):
        assert cli.main(base + ["--seed", seed, "--out", str(tmp_path / seed)]) == 0
    assert (tmp_path / "1" / "trajectory.csv").read_bytes() != (tmp_path / "2" / "trajectory.csv").read_bytes()


def test_env_var_sets_output(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["solve", str(DATA / "pigou.json")]) == 0
    assert (tmp_path / "env" / "flows.csv").exists()


def test_config_overrides(tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"eps": "1e-9"}))
    assert cli.main(["solve", str(DATA / "symmetric.json"), "--config", str(good), "--out", str(tmp_path)]) == 0
    assert float(rows(tmp_path / "certificate.csv")[0]["gap"]) <= 1e-9
    for bad in ({"nope": 1}, {"max_iters": "many"}, [1, 2]):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(bad))
        assert cli.main(["solve", str(DATA / "symmetric.json"), "--config", str(path)]) == 1


def test_apply_overrides_types():
    from hiersue.dualsolve import SolverConfig
    cfg = cli.apply_overrides(SolverConfig(), {"max_iters": "7", "raise_on_fail": "false", "L0": 2})
    assert cfg.max_iters == 7 and cfg.raise_on_fail is False and cfg.L0 == 2.0
    with pytest.raises(cli.ConfigError):
        cli.apply_overrides(SolverConfig(), {"bogus": 1})


def test_trajectory_has_psi_only_for_equal_gamma(tmp_path):
    cli.main(["simulate", str(DATA / "pigou.json"), "--horizon", "1", "--out", str(tmp_path / "a")])
    cli.main(["simulate", str(DATA / "two_level.json"), "--horizon", "1", "--out", str(tmp_path / "b")])
    assert rows(tmp_path / "a" / "trajectory.csv")[0].keys() >= {"time", "e1", "e2", "psi"}
    assert "psi" not in rows(tmp_path / "b" / "trajectory.csv")[0]


def test_flatten_round_trip(tmp_path, capsys):
    out = tmp_path / "flat.json"
    assert cli.main(["flatten", str(DATA / "two_level_shared.json"), "-o", str(out)]) == 0
    flat = load_network(out)
    assert flat.m == 1
    assert cli.main(["flatten", str(DATA / "two_level_shared.json")]) == 0
    assert json.loads(capsys.readouterr().out) == network_to_dict(flat)


def test_softpath_eval_with_tolls(tmp_path):
    tolls = tmp_path / "t.json"
    tolls.write_text(json.dumps({"e1": 1.0, "e2": 1.0}))
    assert cli.main(["softpath", "eval", str(DATA / "pigou.json"), "--tolls", str(tolls),
                     "--out", str(tmp_path)]) == 0
    sv = rows(tmp_path / "soft_values.csv")[0]
    # two equal options: soft cost 1 - gamma ln 2
    assert float(sv["soft_cost"]) == pytest.approx(1.0 - 0.1 * np.log(2.0), abs=1e-11)
    assert [float(r["flow"]) for r in rows(tmp_path / "soft_flows.csv")] == [1.0, 1.0]


def test_oracle_paths(tmp_path):
    assert cli.main(["oracle", str(DATA / "two_level.json"), "--out", str(tmp_path)]) == 0
    paths = rows(tmp_path / "paths.csv")
    assert len(paths) == 3
    assert sum(float(r["flow"]) for r in paths) == pytest.approx(2.0)
    assert cli.main(["oracle", str(DATA / "capacity.json"), "--out", str(tmp_path)]) == 0
