"""
Tests of the command-line entry point.

"""

import json

import pytest

from pac_causality.bench import GenSpec, generate
from pac_causality.cli import main
from pac_causality.data import example_path
from pac_causality.model import serialize_model

CART = str(example_path("cart"))
RELAY = str(example_path("relay"))
EFFECT = "pos < 0.6 && halt"
PREDS = "vel>=0.03;pos>=0.6;pos>=0.4;pos>=0.3"


def test_validate(capsys):
    assert main(["validate", "--model", CART]) == 0
    assert capsys.readouterr().out == (
        "valid: 11 states, 16 transitions, 1 initial, 5 absorbing\n"
    )


def test_validate_reports_position(tmp_path, capsys):
    path = tmp_path / "bad.dtmc"
    path.write_text("vars x\nfoo s0\n")
    assert main(["validate", "--model", str(path)]) == 2
    assert "line 2, column 1" in capsys.readouterr().err


def test_validate_reports_invariant(tmp_path, capsys):
    path = tmp_path / "cycle.dtmc"
    path.write_text(
        "vars x\nstate a 0 labels:\nstate b 1 labels:\ntrans a b 1\ntrans b a 1\ninit a\n"
    )
    assert main(["validate", "--model", str(path)]) == 2
    assert "invariant 'acyclic' violated" in capsys.readouterr().err


def test_discover(capsys):
    """
    Test that discovery prints the report and exits with 0.

    """
    assert main(["discover", "--model", CART, "--effect", EFFECT]) == 0
    out = capsys.readouterr().out
    assert out.startswith("cause: s1\n")
    assert "p_AW: 69/200 (0.345)\n" in out
    assert "p_CW: 3/20 (0.15) at s0\n" in out


def test_discover_records(capsys):
    assert main(["discover", "--model", CART, "--effect", EFFECT, "--format", "records"]) == 0
    record = json.loads(capsys.readouterr().out)
    assert record["cause"] == ["s1"]
    assert (record["p_aw"], record["p_cw"]) == ("69/200", "3/20")


def test_discover_without_effect(capsys):
    assert main(["discover", "--model", CART]) == 2
    assert "effect predicate is required" in capsys.readouterr().err


def test_check(capsys):
    assert main(["check", "--model", CART, "--effect", EFFECT, "--cause", "s4"]) == 0
    assert "p_AW: 63/200 (0.315)" in capsys.readouterr().out
    assert main(["check", "--model", CART, "--effect", EFFECT, "--cause", "s2"]) == 1
    assert capsys.readouterr().out == (
        "refuted: s2 (pc2)\n  root s0: p_AW = 3/20 <= p_CW = 69/200 at s0\n"
    )


def test_check_records(capsys):
    args = ["check", "--model", CART, "--effect", EFFECT, "--cause", "s6"]
    assert main(args + ["--format", "records"]) == 1
    record = json.loads(capsys.readouterr().out)
    assert record["refuted"] == "pc1"
    assert record["violations"][0]["condition"] == "pc1"


def test_check_unknown_state(capsys):
    assert main(["check", "--model", CART, "--effect", EFFECT, "--cause", "s99"]) == 2
    assert "Unknown state 's99'" in capsys.readouterr().err


def test_query_file(tmp_path, capsys):
    """
    Test that a query file sets the effect and the roots.

    """
    path = tmp_path / "query.json"
    path.write_text(
        json.dumps({"effect": EFFECT, "root_policy": "explicit", "roots": ["s1"]})
    )
    assert main(["discover", "--model", CART, "--query", str(path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("cause: s4\n")
    assert "root: s1\n" in out


def test_query_file_unknown_key(tmp_path, capsys):
    path = tmp_path / "query.json"
    path.write_text(json.dumps({"effect": EFFECT, "colour": "red"}))
    assert main(["discover", "--model", CART, "--query", str(path)]) == 2
    assert "unknown query keys" in capsys.readouterr().err


REFINE = ["refine", "--model", CART, "--effect", EFFECT, "--preds", PREDS]


def test_refine(capsys):
    """
    Test the refinement trace and report on the cart chain.

    """
    assert main(REFINE) == 0
    assert capsys.readouterr().out == "\n".join(
        [
            "round 1: 6 abstract states, split (widest ŝ1 [1/5, 9/10] -> ŝ1,1 ŝ1,3 ŝ1,4)",
            "round 2: 8 abstract states, cause",
            "cause: s1",
            "abstract cause: ŝ1,1",
            "predicate: pos = 0.3 && vel = 0.01 && act = 1",
            "root: ŝ0",
            "p_AW: 69/200 (0.345)",
            "p_CW: 3/20 (0.15) at ŝ0",
            "verified: p_AW 69/200 (0.345) > p_CW 3/20 (0.15)",
            "mode: abstract(round 2)",
            "",
        ]
    )


@pytest.mark.parametrize("fmt", ["text", "records"])
def test_refine_output_is_reproducible(capsys, fmt):
    """
    Test that two runs with default flags print byte-identical output.

    """
    assert main(REFINE + ["--format", fmt]) == 0
    first = capsys.readouterr().out
    assert main(REFINE + ["--format", fmt]) == 0
    assert capsys.readouterr().out.encode() == first.encode()
    assert " ms" not in first
    assert "millis" not in first


def test_refine_records(capsys):
    main(REFINE + ["--format", "records"])
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    assert json.loads(lines[0])["outcome"] == "split"
    assert json.loads(lines[2])["mode"] == "abstract(round 2)"


def test_refine_times(capsys):
    assert main(REFINE + ["--times"]) == 0
    rounds = capsys.readouterr().out.splitlines()[:2]
    assert all(line.endswith(" ms") for line in rounds)
    assert main(REFINE + ["--times", "--format", "records"]) == 0
    record = json.loads(capsys.readouterr().out.splitlines()[0])
    assert isinstance(record["millis"], int)


def test_refine_round_limit(capsys):
    assert main(REFINE + ["--max-rounds", "1"]) == 1
    assert capsys.readouterr().out == (
        "round 1: 6 abstract states, none (widest ŝ1 [1/5, 9/10])\nno cause found\n"
    )


def test_refine_bad_alpha(capsys):
    assert main(REFINE + ["--alpha", "1.5"]) == 2
    assert "Split ratio" in capsys.readouterr().err


def test_abs_discover_writes_abstraction(tmp_path, capsys):
    prefix = tmp_path / "coarse"
    args = ["abs-discover", "--model", CART, "--effect", EFFECT, "--preds", PREDS]
    assert main(args + ["--write-abstraction", str(prefix)]) == 1
    assert capsys.readouterr().out == "no cause found\n"
    assert (tmp_path / "coarse.abs-map").read_text().startswith("ŝ0: s0\nŝ1: s1 s3 s4\n")
    assert (tmp_path / "coarse.mdp").read_text().startswith("# psi1: vel >= 0.03\n")


def test_refine_subgraphs(capsys):
    """
    Test that refinement per subgraph stops at the first one holding a cause.

    """
    args = [
        "refine",
        "--model",
        RELAY,
        "--effect",
        "halt && w",
        "--preds",
        "halt",
        "--w",
        "w",
        "--w-strategy",
        "subgraphs",
    ]
    assert main(args) == 0
    out = capsys.readouterr().out
    assert out.startswith("subgraph (w)\nround 1: ")
    assert "cause: s4\n" in out


def test_subgraphs(tmp_path, capsys):
    """
    Test the subgraph listing of the relay chain.

    """
    out_dir = tmp_path / "subgraphs"
    assert main(["subgraphs", "--model", RELAY, "--w", "w", "--output-dir", str(out_dir)]) == 0
    assert capsys.readouterr().out == "\n".join(
        [
            "subgraph 1 (w): 2 paths, states s0 s2 s4 s7",
            "subgraph 2 (w,¬w): 5 paths, states s0 s2 s3 s4 s5 s6 s8 s10",
            "subgraph 3 (w,¬w,w): 2 paths, states s0 s2 s3 s9",
            "subgraph 4 (w,¬w,w,¬w): 1 paths, states s0 s1 s5 s10",
            "",
        ]
    )
    assert sorted(p.name for p in out_dir.iterdir()) == [
        f"subgraph_{k}.dtmc" for k in range(1, 5)
    ]
    assert "substochastic" in (out_dir / "subgraph_1.dtmc").read_text()


def test_export_smt(capsys):
    assert main(["export-smt", "--model", CART, "--effect", EFFECT]) == 0
    out = capsys.readouterr().out
    assert out.startswith("; probabilistic actual cause instance (concrete)\n")
    assert out.endswith("(check-sat)\n(get-model)\n")


def test_export_smt_abs(tmp_path, capsys):
    path = tmp_path / "coarse.smt2"
    args = ["export-smt-abs", "--model", CART, "--effect", EFFECT, "--preds", PREDS]
    assert main(args + ["--output", str(path)]) == 0
    assert capsys.readouterr().out == ""
    assert path.read_text().startswith("; probabilistic actual cause instance (abstract)\n")


@pytest.mark.parametrize("fmt", ["text", "json"])
def test_gen(capsys, fmt):
    assert main(["gen", "--seed", "3", "--model-format", fmt]) == 0
    assert capsys.readouterr().out == serialize_model(generate(GenSpec(seed=3)), fmt)


def test_gen_config(tmp_path, capsys):
    path = tmp_path / "small.gen"
    path.write_text("seed = 4\nstate_budget = 10\n")
    assert main(["gen", "--config", str(path)]) == 0
    expected = serialize_model(generate(GenSpec(seed=4, state_budget=10)))
    assert capsys.readouterr().out == expected


def test_bench(capsys):
    args = ["bench", "--seeds", "2", "--budget", "15", "--timeout", "0"]
    assert main(args + ["--format", "records"]) == 0
    records = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [r["seed"] for r in records] == [1, 2]
    assert all("concrete_s" not in r for r in records)
    assert main(args + ["--times", "--format", "records"]) == 0
    records = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert all("concrete_s" in r and "improvement_pct" in r for r in records)


def test_bench_needs_models(capsys):
    assert main(["bench"]) == 2
    assert "--config or --seeds" in capsys.readouterr().err


def test_usage_errors():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["discover", "--model", CART, "--candidates", "pairs"])
    assert e.value.code == 2
