import json

import pytest

from isoheat.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_basis_free_case(capsys):
    code, out, _ = run(capsys, "basis", "--C", "0", "--D", "0", "--gamma", "1")
    rep = json.loads(out)
    assert code == 0
    assert rep["dim"] == 6 and "H3" in rep["structure"]["structure"]


def test_basis_with_inverse_square_term(capsys):
    code, out, _ = run(capsys, "basis", "--C", "1", "--D", "0.5", "--gamma", "1")
    rep = json.loads(out)
    assert code == 0 and rep["dim"] == 4 and "direct" in rep["structure"]["structure"]


def test_negative_gamma_is_usage_error(capsys):
    code, _, err = run(capsys, "basis", "--gamma", "-1")
    assert code == 2 and "gamma" in err


def test_unknown_command_and_missing_args(capsys):
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "simulate")[0] == 2


def test_brackets_and_structure(capsys):
    code, out, _ = run(capsys, "brackets", "--D", "-0.5", "--gamma", "1.5")
    rows = json.loads(out)["brackets"]
    assert code == 0 and any(r["result"] == "-V4" for r in rows)
    assert run(capsys, "structure", "--D", "0.2")[0] == 0


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[potential]\nC = 1\nD = 0.5\ngamma = 1\n")
    code, out, _ = run(capsys, "basis", "--config", str(cfg))
    assert json.loads(out)["dim"] == 4
    code, out, _ = run(capsys, "basis", "--config", str(cfg), "--C", "0")
    assert json.loads(out)["dim"] == 6


def test_config_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[potential]\nC = 1\nkappa = 2\n")
    code, _, err = run(capsys, "basis", "--config", str(cfg))
    assert code == 2 and "kappa" in err
    cfg.write_text("[weather]\nC = 1\n")
    assert run(capsys, "basis", "--config", str(cfg))[0] == 2


def _sim(capsys, tmp_path, name, *extra):
    prefix = str(tmp_path / name)
    code, _, _ = run(capsys, "simulate", "--model", "affine", "--alpha", "2", "--lambda", "2", "--delta", "3",
                     "--paths", "3000", "--steps", "100", "--seed", "7", "--out", prefix, *extra)
    assert code == 0
    return prefix


def test_simulate_is_bit_reproducible(tmp_path, capsys):
    a = _sim(capsys, tmp_path, "a")
    b = _sim(capsys, tmp_path, "b")
    c = _sim(capsys, tmp_path, "c", "--threads", "3")
    for ext in (".bin", ".csv"):
        data = open(a + ext, "rb").read()
        assert data == open(b + ext, "rb").read() == open(c + ext, "rb").read()
    man = json.loads(open(a + ".json").read())
    assert man["seed"] == 7 and "build" in man and man["params"]["alpha"] == 2.0


def test_simulate_other_models(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", "--model", "besq", "--delta", "3", "--scheme", "besq-sum-of-squares",
                       "--paths", "500", "--steps", "10", "--out", str(tmp_path / "b"))
    assert code == 0 and json.loads(out)["n_paths"] == 500
    code, _, _ = run(capsys, "simulate", "--model", "bernstein", "--eta", "affine:2,2,1", "--paths", "500",
                     "--steps", "20", "--out", str(tmp_path / "c"))
    assert code == 0
    assert run(capsys, "simulate", "--model", "bernstein", "--eta", "affine:2,2", "--out", str(tmp_path / "d"))[0] == 2


def test_verify_brackets_and_residual(capsys):
    assert run(capsys, "verify", "--suite", "brackets")[0] == 0
    assert run(capsys, "verify", "--suite", "residual")[0] == 0


def test_verify_density(capsys):
    code, out, _ = run(capsys, "verify", "--suite", "density", "--delta", "3", "--paths", "4000", "--steps", "50")
    rep = json.loads(out)
    assert code == 0 and rep["fit"]["ks_ok"]


def test_verify_omega_small(capsys):
    code, out, err = run(capsys, "verify", "--suite", "omega", "--C", "0", "--D", "0",
                         "--paths", "3000", "--steps", "50", "--record-every", "10")
    assert code == 0 and json.loads(out)["ok"]
    assert "Omega(M5,M6)" in err and "trivial" in err


def test_transform_and_density_commands(tmp_path, capsys):
    csv = tmp_path / "g.csv"
    code, out, _ = run(capsys, "transform", "--eta", "heat:2,0", "--generator", "1", "--mu", "0.3", "--csv", str(csv))
    assert code == 0 and json.loads(out)["ok"]
    assert csv.read_text().startswith("t,q,value")
    assert run(capsys, "transform", "--eta", "constant", "--generator", "1", "--mu", "-1", "--tmax", "2")[0] == 2
    code, out, _ = run(capsys, "density", "--delta", "3", "--alpha", "2", "--lambda", "2")
    assert code == 0 and abs(json.loads(out)["mass"] - 1) < 1e-10
    assert run(capsys, "density", "--delta", "2")[0] == 2
