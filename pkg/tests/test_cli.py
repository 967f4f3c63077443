import csv
import subprocess
import sys

import numpy as np
import pytest
import yaml

from istab.cli import (
    CSV_COLUMNS,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_SOLVE,
    FOUR_K_SQUARED,
    INFO_FAIL,
    PASS,
    main,
    parse_config,
    resolve_threads,
    run_preset,
    run_verify,
)
from istab.errors import ConfigError

SMALL = {"preset": "elliptic_sine", "alpha_rule": FOUR_K_SQUARED, "k_list": [1, 2], "n_list": [2, 4, 8]}


def _write(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def _run(tmp_path, command, doc, *extra):
    cfg = _write(tmp_path, doc)
    out = tmp_path / "out"
    return main([command, "--config", str(cfg), "--out", str(out), *extra]), out


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# configuration


@pytest.mark.parametrize("doc, field", [
    ({"preset": "elliptic"}, "preset"),
    ({"preset": "elliptic_sine", "alpha_rule": FOUR_K_SQUARED, "colour": 1}, "colour"),
    ({"preset": "elliptic_sine"}, "alpha_rule"),
    ({"preset": "elliptic_sine", "alpha_rule": "eight"}, "alpha_rule"),
    ({"preset": "elliptic_sine", "alpha_rule": {"const": -1}}, "alpha_rule.const"),
    ({"preset": "elliptic_sine", "alpha_rule": {"value": 1}}, "alpha_rule"),
    ({"preset": "elliptic_sine", "alpha_rule": FOUR_K_SQUARED, "kappa": 2.0}, "kappa"),
    ({"preset": "hyperbolic_bey", "mu": 0.5}, "mu"),
    ({"preset": "advdiff_exp", "alpha_rule": FOUR_K_SQUARED}, "kappa"),
    ({"preset": "advdiff_exp", "kappa": "small", "alpha_rule": FOUR_K_SQUARED}, "kappa"),
    ({"preset": "hyperbolic_bey", "k_list": [0]}, "k_list"),
    ({"preset": "hyperbolic_bey", "n_list": []}, "n_list"),
    ({"preset": "hyperbolic_bey", "n_list": [4, 4]}, "n_list"),
    ({"preset": "hyperbolic_bey", "l": 2}, "l"),
    ({"preset": "hyperbolic_bey", "diagonal": "up"}, "diagonal"),
    ({"preset": "hyperbolic_bey", "outputs": {"plot": "x.png"}}, "outputs"),
    ({"preset": "hyperbolic_bey", "verify": {"dg_l": 3}}, "verify.dg_l"),
    ({"preset": "hyperbolic_bey", "custom": {"u": "x"}}, "custom"),
    ({"preset": "custom", "mu": 1.0, "kappa": 0.0}, "custom"),
    ({"preset": "custom", "mu": 1.0, "kappa": 0.0, "custom": {"u": "x", "advection": ["1"], "boundary": "neumann"}},
     "custom.advection"),
    ({"preset": "custom", "mu": 1.0, "kappa": 0.0, "custom": {"u": "x", "advection": ["1", "0"], "boundary": "robin"}},
     "custom.boundary"),
    ({"preset": "custom", "mu": 1.0, "kappa": 0.0, "custom": {"u": "x", "advection": ["1", "0"], "boundary": "dirichlet"}},
     "problem definition"),
    ({"preset": "custom", "mu": 1.0, "kappa": 0.0, "custom": {"u": "x +* y", "advection": ["1", "0"], "boundary": "neumann"}},
     "custom"),
])
def test_config_errors_name_the_field(doc, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        parse_config(doc)


def test_config_defaults_and_presets():
    cfg = parse_config({"preset": "hyperbolic_bey"})
    assert (cfg.mu, cfg.kappa, cfg.l, cfg.k_list, cfg.n_list) == (1.0, 0.0, 1, [1, 2, 3], [4, 8, 16, 32])
    assert cfg.outputs.csv == "convergence.csv"
    cfg = parse_config({"preset": "advdiff_exp", "kappa": 1e-3, "alpha_rule": {"const": 6}})
    assert cfg.problem().kappa == 1e-3 and cfg.problem().penalty(2) == 6.0
    cfg = parse_config({"preset": "custom", "mu": 1.0, "kappa": 0.0,
                        "custom": {"u": "x*y", "advection": ["1", "0"], "boundary": "neumann"}})
    assert cfg.problem().exact(np.array(2.0), np.array(3.0)) == 6.0


def test_config_exit_codes(tmp_path):
    assert _run(tmp_path, "converge", {"preset": "nope"})[0] == EXIT_CONFIG
    assert main(["converge", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("preset: [unclosed\n")
    assert main(["converge", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG


def test_threads_resolution(monkeypatch):
    monkeypatch.delenv("ISTAB_THREADS", raising=False)
    assert resolve_threads(3) == 3
    monkeypatch.setenv("ISTAB_THREADS", "2")
    assert resolve_threads(5) == 2
    monkeypatch.setenv("ISTAB_THREADS", "two")
    with pytest.raises(ConfigError):
        resolve_threads(1)
    monkeypatch.setenv("ISTAB_THREADS", "0")
    with pytest.raises(ConfigError):
        resolve_threads(1)


# ---------------------------------------------------------------------------
# converge


def test_converge_writes_csv(tmp_path):
    code, out = _run(tmp_path, "converge", SMALL)
    assert code == EXIT_OK
    text = (out / "convergence.csv").read_text()
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    rows = _read_csv(out / "convergence.csv")
    assert [(r["k"], r["n"]) for r in rows] == [("1", "2"), ("1", "4"), ("1", "8"), ("2", "2"), ("2", "4"), ("2", "8")]
    for r in rows:
        assert r["preset"] == "elliptic_sine" and r["l"] == "1"
        assert float(r["alpha"]) == 4.0 * int(r["k"]) ** 2
        # 16 significant digits
        assert len(r["err_L2"].split("e")[0].replace(".", "").lstrip("-")) == 16
        if r["n"] == "2":
            assert r["rate_L2"] == r["rate_A"] == r["rate_combined"] == ""
        else:
            assert float(r["rate_L2"]) > 1.0
        assert float(r["conservation_defect"]) < 1e-10
    # global facet dofs V + (k - 1) E for n = 8
    assert rows[2]["dofs_facet_global"] == str(81)
    assert rows[5]["dofs_facet_global"] == str(81 + 208)
    slopes = _read_csv(out / "slopes.csv")
    assert {(s["k"], s["norm"]) for s in slopes} >= {("1", "err_L2"), ("2", "err_combined")}


def test_converge_is_deterministic_across_threads(tmp_path, monkeypatch):
    monkeypatch.delenv("ISTAB_THREADS", raising=False)
    a = tmp_path / "a"
    b = tmp_path / "b"
    c = tmp_path / "c"
    a.mkdir(), b.mkdir(), c.mkdir()
    code_a, out_a = _run(a, "converge", SMALL)
    code_b, out_b = _run(b, "converge", SMALL, "--threads", "3")
    monkeypatch.setenv("ISTAB_THREADS", "2")
    code_c, out_c = _run(c, "converge", SMALL)
    assert code_a == code_b == code_c == EXIT_OK
    ref = (out_a / "convergence.csv").read_bytes()
    assert (out_b / "convergence.csv").read_bytes() == ref
    assert (out_c / "convergence.csv").read_bytes() == ref


def test_failed_solve_exit_code_and_rows(tmp_path):
    doc = {"preset": "custom", "mu": 0.0, "kappa": 1.0, "alpha_rule": {"const": 5.0},
           "k_list": [1], "n_list": [2, 4],
           "custom": {"u": "x", "advection": ["0", "0"], "boundary": "neumann"}}
    code, out = _run(tmp_path, "converge", doc)
    assert code == EXIT_SOLVE
    rows = _read_csv(out / "convergence.csv")
    # the failed coarsest mesh is recorded and finer meshes are skipped
    assert len(rows) == 1 and rows[0]["n"] == "2" and rows[0]["err_L2"] == ""


def test_sweep_result_table():
    cfg = parse_config({"preset": "hyperbolic_bey", "k_list": [1], "n_list": [2, 4]})
    res = run_preset(cfg)
    assert not res.failures and len(res.table.rows) == 2
    assert res.rows[1]["rate_A"] == pytest.approx(res.table.rates(1, "err_A")[0])


# ---------------------------------------------------------------------------
# verify and solve


def test_verify_passes_on_default_penalty(tmp_path):
    code, out = _run(tmp_path, "verify", {**SMALL, "n_list": [2, 4]})
    assert code == EXIT_OK
    lines = (out / "verify.txt").read_text().splitlines()
    assert lines and all(line.startswith(PASS) for line in lines)


def test_verify_reports_subthreshold_penalty_as_info(tmp_path):
    doc = {"preset": "elliptic_sine", "alpha_rule": {"const": 0.1}, "k_list": [1], "n_list": [2]}
    results = run_verify(parse_config(doc))
    statuses = {name: status for name, status, _ in results}
    assert statuses["configured_penalty[k=1, alpha=0.1]"] == INFO_FAIL
    code, _ = _run(tmp_path, "verify", doc)
    assert code == EXIT_OK


def test_verify_rejects_l1_dg_reduction(tmp_path):
    code, _ = _run(tmp_path, "verify", {**SMALL, "verify": {"dg_l": 1}})
    assert code == EXIT_CONFIG


def test_solve_dumps(tmp_path, capsys):
    doc = {**SMALL, "solve": {"k": 2, "n": 2}, "outputs": {"field_dump": "u.txt", "mesh_dump": "mesh.txt"}}
    code, out = _run(tmp_path, "solve", doc)
    assert code == EXIT_OK
    assert "k=2 n=2" in capsys.readouterr().out
    lines = (out / "u.txt").read_text().splitlines()
    assert lines[0] == "# cell_dofs 48"
    assert lines[49] == "# facet_dofs 25"
    assert len(lines) == 2 + 48 + 25
    assert (out / "mesh.txt").stat().st_size > 0
    code, _ = _run(tmp_path, "solve", SMALL, "--n", "3", "--k", "1")
    assert code == EXIT_OK
    assert "k=1 n=3" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, {"preset": "hyperbolic_bey", "k_list": [1], "n_list": [2]})
    proc = subprocess.run([sys.executable, "-m", "istab", "solve", "--config", str(cfg), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "conservation_defect" in proc.stdout
