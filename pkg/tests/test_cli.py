import csv
import math

import pytest

from levymoments import catalog
from levymoments.cli import ENV_OUT, SUMMARY_FIELDS, RunPlan, main, run
from levymoments.specdoc import SpecError, emit_process

POWER_LAW = "nu:\n  densities:\n    - {family: power_law, params: {alpha: 1.5}}\n"


def write_spec(tmp_path, name, triplet):
    p = tmp_path / f"{name}.yaml"
    p.write_text(emit_process(triplet))
    return str(p)


def summary(out):
    with open(out / "summary.csv") as fh:
        return list(csv.DictReader(fh))


def test_psi_table_for_bm(tmp_path, capsys):
    spec = write_spec(tmp_path, "bm", catalog.brownian())
    out = tmp_path / "o"
    assert main(["psi", "--spec", spec, "--out", str(out), "--count", "5", "--xi-min", "-2", "--xi-max", "2"]) == 0
    with open(out / "psi.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["xi", "re_psi", "im_psi"] and len(rows) == 6
    # ψ(ξ) = ξ²/2 for standard BM
    assert [float(r[1]) for r in rows[1:]] == pytest.approx([2.0, 0.5, 0.0, 0.5, 2.0], abs=1e-14)
    assert rows[1][0] == "-2.00000000000000000e+00"
    assert capsys.readouterr().out.splitlines()[0] == ",".join(SUMMARY_FIELDS)


def test_divergent_moments_with_expected_fail_annotation(tmp_path):
    spec = tmp_path / "pl.yaml"
    spec.write_text(POWER_LAW)
    out = tmp_path / "o"
    args = ["check", "--spec", str(spec), "--checks", "moments", "--paths", "20000", "--dt", "0.0625",
            "--out", str(out)]
    assert main(args + ["--expect-fail", "moments"]) == 0
    row = summary(out)[0]
    assert (row["verdict"], row["flag"], row["status"]) == ("fail", "diverging", "expected-fail")
    assert main(args) == 1
    assert summary(out)[0]["status"] == "failed"


def test_lattice_report_for_poisson(tmp_path):
    spec = write_spec(tmp_path, "poisson", catalog.poisson())
    out = tmp_path / "o"
    code = main(["lattice", "--spec", spec, "--beta", repr(2 * math.pi), "--paths", "2000", "--out", str(out)])
    assert code == 0
    text = (out / "lattice.txt").read_text()
    assert "verdict: pass" in text
    assert "threshold.span: 1.00000000000000000e+00" in text


def test_transience_subcommand(tmp_path):
    spec = write_spec(tmp_path, "dbm", catalog.brownian(-1.0, 1.0))
    out = tmp_path / "o"
    assert main(["transience", "--spec", spec, "--lo", "0.5", "--hi", "10", "--paths", "20000",
                 "--out", str(out)]) == 0
    assert float(summary(out)[0]["value"]) == pytest.approx(2.0, abs=1e-9)


def test_simulate_dump(tmp_path, capsys):
    spec = write_spec(tmp_path, "poisson", catalog.poisson())
    out = tmp_path / "o"
    assert main(["simulate", "--spec", spec, "--paths", "3", "--dt", "0.25", "--seed", "5", "--out", str(out)]) == 0
    text = (out / "ensemble.csv").read_text()
    assert text.startswith("# seed=5 ")
    assert "sha256=" in capsys.readouterr().out


def test_bad_spec_exits_two_with_line(tmp_path, capsys):
    spec = tmp_path / "bad.yaml"
    spec.write_text("b: [0.0]\nQ: [[-1.0]]\n")
    assert main(["psi", "--spec", str(spec), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "line 2" in err and "'Q'" in err


def test_unknown_check_is_rejected():
    with pytest.raises(SpecError, match="unknown check"):
        RunPlan(spec=None, checks=["moments", "spectra"])


def test_unknown_check_on_command_line(tmp_path):
    spec = write_spec(tmp_path, "bm", catalog.brownian())
    assert main(["check", "--spec", spec, "--checks", "psi,spectra", "--out", str(tmp_path / "o")]) == 2


def test_output_dir_from_environment(tmp_path, monkeypatch):
    spec = write_spec(tmp_path, "bm", catalog.brownian())
    monkeypatch.setenv(ENV_OUT, str(tmp_path / "env"))
    assert main(["psi", "--spec", spec, "--count", "3"]) == 0
    assert (tmp_path / "env" / "summary.csv").exists()


def test_plan_file_and_reproducible_summary(tmp_path):
    write_spec(tmp_path, "poisson", catalog.poisson())
    plan = tmp_path / "plan.yaml"
    plan.write_text(
        "process: poisson.yaml\n"
        "seed: 17\n"
        "weight: exp:1\n"
        "sim: {N: 5000, dt: 0.03125}\n"
        "checks:\n"
        "  - psi\n"
        "  - moments\n"
        "  - {check: dynkin, u: bump, rule: {kind: exit_ball, radius: 2.0}}\n"
        "  - {check: lattice, beta: 6.283185307179586}\n"
        "  - ui\n"
    )
    outs = []
    for i, jobs in enumerate((1, 4)):
        out = tmp_path / f"run{i}"
        assert main(["check", str(plan), "--out", str(out), "--jobs", str(jobs)]) == 0
        outs.append((out / "summary.csv").read_bytes())
    assert outs[0] == outs[1]
    rows = summary(tmp_path / "run0")
    assert [r["id"] for r in rows] == ["psi", "moments", "dynkin", "lattice", "ui"]
    assert all(r["seed"] == "17" and r["status"] == "ok" for r in rows)
    for r in rows:
        assert f"seed: 17" in (tmp_path / "run0" / f"{r['id']}.txt").read_text()


def test_seed_override_changes_results(tmp_path):
    spec = write_spec(tmp_path, "cp", catalog.compound_gaussian())
    vals = []
    for seed in (1, 2):
        out = tmp_path / f"s{seed}"
        plan = RunPlan(spec=spec, checks=["moments"], sim={"N": 2000, "dt": 0.125}, out=str(out), seed=seed)
        assert run(plan) == 0
        vals.append(summary(out)[0]["value"])
    assert vals[0] != vals[1]


def test_error_in_a_check_is_reported_not_raised(tmp_path):
    spec = tmp_path / "pl.yaml"
    spec.write_text(POWER_LAW)
    out = tmp_path / "o"
    plan = RunPlan(spec=str(spec), checks=[{"check": "gronwall", "expect": "fail"}], sim={"N": 100}, out=str(out))
    assert run(plan) == 0
    row = summary(out)[0]
    assert row["flag"] == "error" and row["status"] == "expected-fail"
    assert "MomentCriterionError" in (out / "gronwall.txt").read_text()
