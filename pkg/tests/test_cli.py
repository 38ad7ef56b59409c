import csv
import json
import subprocess
import sys

import pytest

from dampde.cli import main


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write(tmp_path, cfg):
    p = tmp_path / "case.json"
    p.write_text(json.dumps(cfg))
    return p


def test_simulate_manufactured(tmp_path, capsys):
    assert main(["simulate", "--n", "8", "--M", "8", "--out", str(tmp_path)]) == 0
    (row,) = _rows(tmp_path / "simulate.csv")
    assert row["mode"] == "simulate" and row["n"] == "8" and row["M"] == "8"
    assert 0 < float(row["err_phi"]) < 0.1 and 0 < float(row["err_d"]) < 0.1
    assert "err_phi" in capsys.readouterr().out


def test_simulate_zero_custom_case(tmp_path):
    cfg = {"case": "custom", "custom": {"l": "0", "d0": "0", "exact_phi": "0*x", "exact_d": "0"},
           "discretization": {"n": 4, "M": 3}}
    assert main(["simulate", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path), "--dump-fields"]) == 0
    (row,) = _rows(tmp_path / "simulate.csv")
    assert float(row["err_phi"]) == 0.0 and float(row["err_d"]) == 0.0
    fields = _rows(tmp_path / "fields.csv")
    assert len(fields) == 3 * 25
    assert all(float(f["phi"]) == 0 and float(f["d"]) == 0 for f in fields)


def test_custom_case_without_exact_solution(tmp_path):
    cfg = {"case": "custom", "custom": {"l": "sin(pi*x)*sin(pi*y)*exp(t)"}, "discretization": {"n": 4, "M": 2}}
    assert main(["simulate", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path)]) == 0
    (row,) = _rows(tmp_path / "simulate.csv")
    assert row["err_phi"] == "" and row["err_d"] == ""


def test_out_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("DAMPDE_OUT", str(tmp_path / "env"))
    assert main(["simulate", "--n", "2", "--M", "2"]) == 0
    assert (tmp_path / "env" / "simulate.csv").exists()


def test_bad_config_names_key(tmp_path, capsys):
    cfg = {"solver": {"fp_tol": 1e-10, "bogus_key": 1}}
    assert main(["simulate", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path)]) == 2
    assert "bogus_key" in capsys.readouterr().err


def test_bad_expression_exit_2(tmp_path, capsys):
    cfg = {"case": "custom", "custom": {"l": "log(x)"}}
    assert main(["simulate", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path)]) == 2
    assert "log" in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_numerical_failure_exit_1(tmp_path, capsys):
    cfg = {"discretization": {"n": 4, "M": 4}, "solver": {"cg_rel_tol": 1e-15, "max_cg_iter": 1}}
    assert main(["optimize", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "numerical failure" in err and "r_vd" in err


def test_optimize(tmp_path):
    assert main(["optimize", "--n", "8", "--M", "8", "--out", str(tmp_path)]) == 0
    (row,) = _rows(tmp_path / "optimize.csv")
    assert float(row["err_l"]) > 0 and int(row["cg_iters"]) >= 1
    hist = _rows(tmp_path / "optimize_history.csv")
    assert len(hist) == int(row["cg_iters"]) + 1


def test_convergence_time_with_svg(tmp_path):
    assert main(["convergence-time", "--n", "8", "--m-list", "2,4,8", "--out", str(tmp_path), "--svg",
                 "--threads", "2"]) == 0
    rows = _rows(tmp_path / "convergence_time.csv")
    assert [r["M"] for r in rows] == ["2", "4", "8"]
    # spatial error dominates at n=8, so only check that the EOC cells are filled
    assert rows[0]["eoc_phi"] == "" and all(r["eoc_d"] != "" for r in rows[1:])
    assert (tmp_path / "convergence_time.svg").read_text().rstrip().endswith("</svg>")


def test_convergence_space(tmp_path):
    assert main(["convergence-space", "--M", "16", "--n-list", "2,4,8", "--out", str(tmp_path)]) == 0
    assert len(_rows(tmp_path / "convergence_space.csv")) == 3


@pytest.mark.parametrize("refine,flag,values", [("time", "--m-list", "2,4"), ("space", "--n-list", "2,4")])
def test_optimize_convergence(tmp_path, refine, flag, values):
    assert main(["optimize-convergence", "--refine", refine, "--n", "4", "--M", "4", flag, values,
                 "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / f"optimize_convergence_{refine}.csv")
    assert len(rows) == 2 and all(float(r["err_l"]) > 0 and r["r_vd"] != "" for r in rows)


def test_bad_list_rejected(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["convergence-time", "--m-list", "4,x", "--out", str(tmp_path)])
    assert info.value.code == 2


def test_deterministic_single_thread(tmp_path):
    texts = []
    for k in range(2):
        out = tmp_path / str(k)
        assert main(["optimize-convergence", "--refine", "space", "--M", "4", "--n-list", "2,4",
                     "--threads", "1", "--out", str(out)]) == 0
        lines = (out / "optimize_convergence_space.csv").read_text().splitlines()
        texts.append([line.rsplit(",", 1)[0] for line in lines])  # drop wall-clock column
    assert texts[0] == texts[1]


def test_verify_quick(capsys):
    assert main(["verify", "--quick"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dampde", "simulate", "--n", "2", "--M", "1", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
