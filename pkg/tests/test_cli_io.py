import json
from fractions import Fraction

import pytest
from click.testing import CliRunner

from clockauction import io
from clockauction.cli import main
from clockauction.errors import InputError
from clockauction.evaluation import lower_bound_instance

BINARY = {
    "name": "binary4",
    "distributions": [{"variant": "discrete", "values": [0, 1], "probs": ["1/2", "1/2"]}] * 4,
    "feasibility": {"kind": "maximal_sets", "sets": [[0, 1], [2, 3]]},
    "valuation": [1, 0, 1, 1],
}


@pytest.fixture
def runner():
    return CliRunner()


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


def test_instance_round_trip():
    inst = lower_bound_instance()
    again, v = io.instance_from_dict(io.instance_to_dict(inst))
    assert v is None
    assert again.distributions == inst.distributions
    assert again.feasibility.enumerate_maximal_sets() == inst.feasibility.enumerate_maximal_sets()


def test_rational_strings():
    inst, v = io.instance_from_dict(BINARY)
    assert inst.distributions[0].probs == (Fraction(1, 2), Fraction(1, 2))
    assert v == [1.0, 0.0, 1.0, 1.0]


@pytest.mark.parametrize(
    "doc, field",
    [
        ({**BINARY, "distributions": [{"variant": "gamma"}] * 4}, "distributions/0"),
        ({**BINARY, "feasibility": {"kind": "maximal_sets"}}, "feasibility"),
        ({**BINARY, "extra": 1}, "<root>"),
        ({**BINARY, "valuation": [1, 0]}, "valuation"),
    ],
)
def test_schema_errors_name_the_field(doc, field):
    with pytest.raises(InputError, match=field):
        io.instance_from_dict(doc)


def test_csv_round_trip(tmp_path):
    p = tmp_path / "t.csv"
    io.write_csv(p, [{"a": 0.1, "b": 2}], ["a", "b"], {"seed": 3})
    cfg, rows = io.read_csv(p)
    assert cfg == {"seed": 3} and rows == [{"a": "0.1", "b": "2"}]


def test_run_binary(runner, tmp_path):
    path = write(tmp_path, "i.json", BINARY)
    res = runner.invoke(main, ["run", "--instance", path, "--mechanism", "binary_optimal"])
    assert res.exit_code == 0, res.output
    out = json.loads(res.output)
    assert out["ratio"] == 1.0 and out["served"] == [2, 3] and out["violations"] == []


def test_run_is_deterministic(runner, tmp_path):
    outs = []
    for name in ("a.jsonl", "b.jsonl"):
        p = tmp_path / name
        res = runner.invoke(main, ["run", "--generator", "disjoint-iid-uniform", "--k", "2", "--mechanism", "hedging", "--seed", "4", "--out", str(p)])
        assert res.exit_code == 0, res.output
        outs.append(p.read_bytes().replace(b"a.jsonl", b"b.jsonl"))
    assert outs[0] == outs[1]


def test_seed_env_fallback(runner):
    args = ["run", "--generator", "disjoint-iid-uniform", "--k", "2", "--mechanism", "wfca"]
    a = runner.invoke(main, args, env={"CLOCKAUCT_SEED": "9"})
    b = runner.invoke(main, args + ["--seed", "9"])
    c = runner.invoke(main, args + ["--seed", "8"], env={"CLOCKAUCT_SEED": "9"})
    assert json.loads(a.output) == json.loads(b.output)
    assert json.loads(c.output)["seed"] == 8


def test_schema_violation_exit_2(runner, tmp_path):
    bad = write(tmp_path, "bad.json", {**BINARY, "feasibility": {"kind": "triangle"}})
    res = runner.invoke(main, ["run", "--instance", bad, "--mechanism", "wfca"])
    assert res.exit_code == 2 and "feasibility" in res.output


def test_malformed_json_exit_2(runner, tmp_path):
    bad = write(tmp_path, "bad.json", '{"distributions": [\n  1,,\n]}')
    res = runner.invoke(main, ["run", "--instance", bad, "--mechanism", "wfca"])
    assert res.exit_code == 2 and "line 2" in res.output


def test_config_file_and_flag_precedence(runner, tmp_path):
    cfg = write(tmp_path, "c.json", {"mechanism": "binary_optimal", "generator": "binary-random", "k": [3], "trials": 50, "seed": 1})
    res = runner.invoke(main, ["eval", "--config", cfg, "--trials", "60"])
    assert res.exit_code == 0, res.output
    lines = res.output.strip().splitlines()
    assert lines[0].startswith("mechanism,k") and lines[1].split(",")[2] == "60"
    bad = write(tmp_path, "bad.json", {"mechanism": "wfca", "nonsense": 1})
    assert runner.invoke(main, ["eval", "--config", bad]).exit_code == 2


def test_eval_lowerbound_exact(runner):
    res = runner.invoke(main, ["eval", "--generator", "lowerbound"])
    assert res.exit_code == 0
    rep = json.loads(res.output)["lowerbound"]
    assert rep["expected_opt"] == "58/45" and rep["ratio"] == "29/27"
    assert rep["over_45"]["serve_T_welfare"] == "54/45"


def test_eval_hedging_table(runner, tmp_path):
    out = tmp_path / "h.csv"
    res = runner.invoke(
        main, ["eval", "--mechanism", "hedging", "--generator", "disjoint-iid-uniform", "--k", "2,4", "--trials", "200", "--out", str(out)]
    )
    assert res.exit_code == 0, res.output
    cfg, rows = io.read_csv(out)
    assert [r["k"] for r in rows] == ["2", "4"] and cfg["mechanism"] == "hedging"
    assert all(int(r["violations"]) == 0 for r in rows)


def test_eval_theorem1_pointmass(runner):
    res = runner.invoke(main, ["eval", "--mechanism", "theorem1", "--generator", "pointmass", "--k", "3", "--trials", "100"])
    assert res.exit_code == 0
    assert float(res.output.strip().splitlines()[1].split(",")[8]) == 1.0


def test_eval_transcripts_file(runner, tmp_path):
    tx = tmp_path / "t.jsonl"
    res = runner.invoke(
        main, ["eval", "--mechanism", "wfca", "--generator", "pointmass", "--k", "2", "--trials", "5", "--transcripts", str(tx)]
    )
    assert res.exit_code == 0
    recs = [json.loads(x) for x in tx.read_text().splitlines()]
    assert [r["trial"] for r in recs] == [0, 1, 2, 3, 4]


def test_sweep_passes(runner):
    res = runner.invoke(main, ["sweep", "--mechanism", "mechanism2", "--k", "2,4", "--trials", "500"])
    assert res.exit_code == 0, res.output


def test_strict_violation_exit_3(runner, monkeypatch):
    import clockauction.cli as cli

    def broken(*a, **k):
        raise cli.ContractViolation("trial 0: individual rationality violated")

    monkeypatch.setattr(cli, "evaluate", broken)
    res = runner.invoke(main, ["eval", "--mechanism", "wfca", "--generator", "pointmass", "--strict"])
    assert res.exit_code == 3


def test_verify_commands(runner):
    res = runner.invoke(main, ["verify", "lemma3.2", "--k", "16", "--trials", "2000"])
    assert res.exit_code == 0 and json.loads(res.output)["passed"]
    res = runner.invoke(main, ["verify", "claims-appendix", "--count", "5"])
    assert res.exit_code == 0 and json.loads(res.output)["passed"]
    res = runner.invoke(main, ["verify", "cor5.3", "--k", "8", "--set-size", "10"])
    assert res.exit_code == 2


def test_lowerbound_command(runner):
    res = runner.invoke(main, ["lowerbound"])
    assert res.exit_code == 0
    assert json.loads(res.output)["lowerbound"]["raise_clock_welfare"] == "6/5"
