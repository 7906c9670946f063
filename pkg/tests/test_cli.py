import json
import subprocess
import sys

import numpy as np
import pytest

from fisherkin.cli import KernelSpecError, main, parse_kernel_spec
from fisherkin.collision_kernels import CollisionKernel
from fisherkin.spectral import AngularKernel, sphere_area


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _json(capsys, *argv):
    code, out, err = _run(capsys, *argv, "--format", "json")
    assert code == 0, err
    return json.loads(out)


def test_parse_power_law():
    k = parse_kernel_spec("powerlaw(s=2,d=3)")
    assert isinstance(k, CollisionKernel)
    assert (k.gamma, k.nu) == pytest.approx((-3.0, 2.0))
    k5 = parse_kernel_spec("powerlaw(s=5)", dim=3)
    assert (k5.gamma, k5.nu) == pytest.approx((0.0, 0.5))


def test_parse_angular_kernels():
    c = parse_kernel_spec("const()", dim=4)
    assert isinstance(c, AngularKernel) and c.dim == 4
    a = parse_kernel_spec("atomic(N=2,b1=1)")
    assert a.dim == 2
    assert np.allclose(a.angles, [0, np.pi / 2, np.pi])
    assert np.allclose(a.masses, [0, 1, 0])


@pytest.mark.parametrize("text", ["powerlaw(s=1)", "nosuch(a=1)", "powerlaw(q=3)", "powerlaw s=3",
                                  "frac(nu=2.5)", "powerlaw(s=3,s=4)"])
def test_bad_kernel_specs(text):
    with pytest.raises(KernelSpecError) as e:
        parse_kernel_spec(text)
    # the message lists every family
    for fam in ("powerlaw", "rutherford", "hardsphere", "const", "heat", "frac", "atomic"):
        assert fam in str(e.value)


def test_bad_spec_exit_code(capsys):
    code, out, err = _run(capsys, "spectrum", "--kernel", "powerlaw(s=0.5)")
    assert code == 2
    assert "powerlaw" in err and out == ""


def test_spectrum_constant_kernel(capsys):
    env = _json(capsys, "spectrum", "--dim", "3", "--lmax", "6")
    cols = env["result"]["columns"]
    assert cols == ["l", "lambda_l", "nu_l", "N(d,l)"]
    rows = np.array(env["result"]["rows"], dtype=float)
    assert rows[1:, 2] == pytest.approx(sphere_area(3), rel=1e-8)
    assert rows[:, 3].tolist() == [2 * l + 1 for l in range(7)]
    assert env["tool"] == "fisherkin" and env["status"] == "ok"


def test_json_is_reproducible(capsys):
    args = ("criterion", "--dim", "2", "--grid", "64", "--samples", "3", "--seed", "5")
    a = _run(capsys, *args, "--format", "json")[1]
    b = _run(capsys, *args, "--format", "json")[1]
    c = _run(capsys, *args[:-1], "6", "--format", "json")[1]
    assert a == b
    assert a != c
    env = json.loads(a)
    assert env["seed"] == 5
    assert all(r[3] >= 8 - 0.1 for r in env["result"]["rows"])


def test_csv_header(capsys):
    code, out, _ = _run(capsys, "kernels", "table", "--s", "3", "--grid", "8")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("# fisherkin")
    assert any(l.startswith("# config_hash") for l in lines)
    header = next(l for l in lines if not l.startswith("#"))
    assert header.split(",") == ["theta", "b", "B_at_z1", "gamma", "nu"]


def test_ratio_summary(capsys):
    env = _json(capsys, "ratio", "--dim", "3", "--s", "3", "--grid", "201")
    s = env["result"]["summary"]
    assert s["M/m"] == pytest.approx(s["M"] / s["m"])
    assert 1.4 <= s["M/m"] <= 1.75


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[spectrum]\nlmax = 3\ndim = 2\n")
    env = _json(capsys, "spectrum", "--config", str(cfg))
    assert len(env["result"]["rows"]) == 4
    assert env["config"]["dim"] == 2
    env = _json(capsys, "spectrum", "--config", str(cfg), "--lmax", "5")
    assert len(env["result"]["rows"]) == 6


def test_threads_env(monkeypatch, capsys):
    monkeypatch.setenv("FISHERKIN_THREADS", "3")
    env = _json(capsys, "spectrum", "--lmax", "2")
    assert env["config"]["threads"] == 3
    monkeypatch.setenv("FISHERKIN_THREADS", "x")
    assert _run(capsys, "spectrum", "--lmax", "2")[0] == 2


def test_unwritable_output(capsys):
    code, _, err = _run(capsys, "spectrum", "--out", "/nonexistent/dir/x.csv")
    assert code == 4


def test_simulate_needs_kernel(capsys):
    assert _run(capsys, "simulate", "landau-radial")[0] == 2


def test_verify_identities(capsys):
    env = _json(capsys, "verify", "identities", "--n-geometry", "200", "--seed", "2")
    rows = env["result"]["rows"]
    assert rows and all(r[-1] for r in rows)
    suites = {r[0] for r in rows}
    assert {"geometry", "legendre", "mckean", "bochner"} <= suites


def test_simulate_landau_radial(tmp_path, capsys):
    out = tmp_path / "series.csv"
    code, text, err = _run(capsys, "simulate", "landau-radial", "--kernel", "powerlaw(s=2,d=3)",
                           "--n", "48", "--T", "0.2", "--out", str(out))
    assert code == 0, err
    assert text.startswith("# ")
    lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    cols = lines[0].split(",")
    data = np.array([[float(x) for x in l.split(",")] for l in lines[1:]])
    H, I = data[:, cols.index("H")], data[:, cols.index("I")]
    assert np.all(np.diff(H) <= 1e-8)
    assert np.all(np.diff(I) <= data[1:, cols.index("err_budget")] + 1e-12)


def test_simulate_sphere(capsys):
    env = _json(capsys, "simulate", "sphere", "--kernel", "heat(t=0.2,d=2)", "--n", "32", "--steps", "5")
    cols = env["result"]["columns"]
    I = [r[cols.index("I")] for r in env["result"]["rows"]]
    assert all(b <= a for a, b in zip(I, I[1:]))


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fisherkin", "spectrum", "--lmax", "2"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert "lambda_l" in proc.stdout
