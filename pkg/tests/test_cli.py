import json
import subprocess
import sys

import numpy as np
import pytest

from abreu_lab.cli import ConfigError, load_config, main

SQUARE = "1 0 0\n-1 0 -1\n0 1 0\n0 -1 -1\n"


def write_case(tmp_path, body, name="run.toml"):
    (tmp_path / "square.txt").write_text(SQUARE)
    cfg = tmp_path / name
    cfg.write_text(body)
    return cfg


def read_csv(path):
    lines = path.read_text().splitlines()
    rows = [l.split(",") for l in lines[2:]]
    return lines[0], lines[1], np.array(rows, dtype=float)


def test_solve_exact_guillemin(tmp_path, capsys):
    cfg = write_case(tmp_path, '[problem]\npolytope = "square.txt"\nA = "4"\nh = [0.0625]\n')
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["runs"][0]["converged"] and summary["runs"][0]["iterations"] <= 2
    head, cols, _ = read_csv(tmp_path / "o" / "psi_h0.0625.csv")
    assert head.startswith("# config=") and "h=0.0625" in head and "band=" in head
    assert cols == "xi1,xi2,value"
    eq = (tmp_path / "o" / "equivalence.csv").read_text().splitlines()
    assert eq[0].startswith("# config=")


def test_solve_nonconvergence_exit_2(tmp_path):
    cfg = write_case(tmp_path, '[problem]\npolytope = "square.txt"\nh = [0.0625]\n'
                     '[solver]\nmax_iter = 1\ntol = 1e-14\n'
                     'manufactured = "0.2*xi1*xi2*(1-xi1)*(1-xi2)"\n')
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_domain_error_exit_1(tmp_path, capsys):
    cfg = write_case(tmp_path, '[problem]\npolytope = "square.txt"\nA = "log(xi1-2)"\nh = 0.0625\n')
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "log" in capsys.readouterr().err


def test_missing_polytope_exit_1(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text('[problem]\npolytope = "nowhere.txt"\nA = "4"\n')
    assert main(["solve", "--config", str(cfg)]) == 1
    assert "nowhere.txt" in capsys.readouterr().err


def test_missing_config_exit_1(tmp_path):
    assert main(["verify", "--config", str(tmp_path / "absent.toml")]) == 1


def test_h_list_must_decrease(tmp_path):
    cfg = write_case(tmp_path, '[problem]\npolytope = "square.txt"\nh = [0.03125, 0.0625]\n')
    with pytest.raises(ConfigError, match="decreasing"):
        load_config(cfg)
    assert main(["verify", "--config", str(cfg)]) == 1


def test_unknown_harness_item(tmp_path):
    cfg = write_case(tmp_path, '[problem]\npolytope = "square.txt"\n[verify]\nitems = ["thm99"]\n')
    with pytest.raises(ConfigError, match="thm99"):
        load_config(cfg)


def test_empty_harness_exit_1(tmp_path):
    cfg = write_case(tmp_path, '[problem]\npolytope = "square.txt"\n[verify]\nitems = []\n')
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_invariants_quadratic_theta_zero(tmp_path):
    cfg = write_case(tmp_path, '[problem]\npolytope = "square.txt"\nbase = "(xi1^2 + xi2^2)/2"\n'
                     'h = 0.0625\n')
    assert main(["invariants", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    _, _, data = read_csv(tmp_path / "o" / "theta_h0.0625.csv")
    assert np.max(np.abs(data[:, 2])) <= 1e-10


def test_invariants_guillemin_outputs(tmp_path, capsys):
    cfg = write_case(tmp_path, '[problem]\npolytope = "square.txt"\nh = 0.0625\n'
                     '[invariants]\nkappa_full = true\nreference_psi = "0"\n')
    assert main(["invariants", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert "warning" in capsys.readouterr().err
    names = {p.name for p in (tmp_path / "o").iterdir()}
    for stem in ("phi", "j", "theta", "ric", "kappa", "du", "theta_du2", "H", "HD"):
        assert f"{stem}_h0.0625.csv" in names
    head = (tmp_path / "o" / "kappa_h0.0625.csv").read_text().splitlines()[0]
    assert "kappa=partial" in head
    _, _, H = read_csv(tmp_path / "o" / "H_h0.0625.csv")
    np.testing.assert_array_equal(H[:, 2], 1.0)


def test_verify_byte_identical(tmp_path, capsys):
    cfg = write_case(tmp_path, '[problem]\npolytope = "square.txt"\nh = [0.0625, 0.03125]\n'
                     '[verify]\nitems = ["lem41", "lem43", "lemma26"]\n')
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "3"]) == 0
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "lem41: stable" in out
    for name in ("ledger.csv", "lem41.json", "lem43.json", "lemma26.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_changes_digest(tmp_path):
    cfg = write_case(tmp_path, '[problem]\npolytope = "square.txt"\n')
    assert load_config(cfg, seed=1).digest() != load_config(cfg, seed=2).digest()
    assert load_config(cfg, out_dir="x").digest() == load_config(cfg, out_dir="y").digest()


def test_thread_env_and_entry_point(tmp_path):
    cfg = write_case(tmp_path, '[problem]\npolytope = "square.txt"\nh = 0.0625\n'
                     '[verify]\nitems = ["lem41"]\n')
    env = {"ABREU_LAB_THREADS": "1", "PATH": "/usr/bin:/bin"}
    proc = subprocess.run([sys.executable, "-m", "abreu_lab.cli", "verify", "--config", str(cfg),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip() == "lem41: stable"
