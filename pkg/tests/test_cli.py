import json

import numpy as np
import pytest

from elastrtm import cli
from elastrtm.forward import read_dataset
from elastrtm.imaging import read_grid_csv
from elastrtm.io_utils import sha256_file
from elastrtm.quadrature import QuadratureError

BASE = """
[medium]
lam = 0.5
mu = 0.25
omega = {omega}

[obstacle]
kind = circle
radius = 1.0
center = {center}
bc = dirichlet

[survey]
d = 20
n_src = 5
n_rcv = 5

[imaging]
window = -1, 1, 9, 11
n1 = 5
n2 = 4

[noise]
sigma = 0.1
seed = 3

[psf]
window = -0.5, 0.5, 9.5, 10.5
n1 = 3
n2 = 3
d = 10
"""


def _config(tmp_path, name="exp.ini", omega="2pi", center="0, 10", extra=""):
    p = tmp_path / name
    p.write_text(BASE.format(omega=omega, center=center) + extra)
    return p


def test_load_config(tmp_path):
    cfg = cli.load_config(_config(tmp_path, omega="2pi, 2.5*pi, 9.5"))
    assert cfg.omegas == pytest.approx([2 * np.pi, 2.5 * np.pi, 9.5])
    assert cfg.obstacles[0].params == {"radius": 1.0} and cfg.obstacles[0].center == (0.0, 10.0)
    assert (cfg.n_src, cfg.n1, cfg.n2, cfg.seed) == (5, 5, 4, 3)
    assert cli.load_config(_config(tmp_path), seed_override=11).seed == 11
    assert cli.load_config(_config(tmp_path)).digest != cli.load_config(_config(tmp_path), 11).digest


@pytest.mark.parametrize("extra,omega,center", [
    ("\n[extra]\nx = 1\n", "2pi", "0, 10"),
    ("\n[noise2]\n", "2pi", "0, 10"),
    ("", "", "0, 10"),
    ("", "abc", "0, 10"),
    ("", "2pi", "0, 0.5"),
])
def test_bad_configs(tmp_path, extra, omega, center):
    with pytest.raises(cli.ConfigError):
        cli.load_config(_config(tmp_path, omega=omega, center=center, extra=extra))


def test_unknown_key_and_wrong_kind_key(tmp_path):
    p = _config(tmp_path)
    p.write_text(p.read_text().replace("radius = 1.0", "radius = 1.0\nscale = 2"))
    with pytest.raises(cli.ConfigError, match="do not apply"):
        cli.load_config(p)
    p.write_text(p.read_text().replace("scale = 2", "colour = red"))
    with pytest.raises(cli.ConfigError, match="unknown keys"):
        cli.load_config(p)


def test_exit_codes(tmp_path, monkeypatch, capsys):
    assert cli.main(["synthesize", "--config", str(tmp_path / "missing.ini")]) == cli.EXIT_CONFIG
    assert cli.main(["synthesize", "--config", str(_config(tmp_path, omega=""))]) == cli.EXIT_CONFIG
    bad_curve = _config(tmp_path, center="0, 0.5")
    assert cli.main(["synthesize", "--config", str(bad_curve), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert not (tmp_path / "o").exists()
    assert cli.main(["frobnicate"]) == cli.EXIT_CONFIG
    assert cli.main(["image", "--config", str(_config(tmp_path)), "--out", str(tmp_path / "none")]) == cli.EXIT_CONFIG

    def boom(*a, **k):
        raise QuadratureError("panel budget exhausted")

    monkeypatch.setattr(cli, "cmd_synthesize", boom)
    assert cli.main(["synthesize", "--config", str(_config(tmp_path)), "--out", str(tmp_path)]) == cli.EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


def test_synthesize_and_image(tmp_path):
    cfg = _config(tmp_path, omega="2pi, 2.5pi")
    out = tmp_path / "run"
    assert cli.main(["synthesize", "--config", str(cfg), "--out", str(out), "--threads", "1"]) == 0
    ds = read_dataset(out / "dataset_00.txt")
    assert ds.data.shape == (5, 5, 2, 2) and ds.seed == 3 and ds.sigma == pytest.approx(0.1)
    assert cli.main(["image", "--config", str(cfg), "--out", str(out)]) == 0
    for name in ("image_00.csv", "image_01.csv", "image_stacked.csv", "image_stacked.pgm", "image_00.csv.json"):
        assert (out / name).exists()
    stacked = read_grid_csv(out / "image_stacked.csv", (5, 4))
    parts = read_grid_csv(out / "image_00.csv", (5, 4)) + read_grid_csv(out / "image_01.csv", (5, 4))
    np.testing.assert_allclose(stacked, parts, rtol=1e-13)

    for cmd in ("synthesize", "image"):
        man = json.loads((out / f"manifest_{cmd}.json").read_text())
        assert man["config_sha256"] == cli.load_config(cfg).digest
        assert man["stage_seconds"]
        for entry in man["outputs"]:
            assert sha256_file(out / entry["path"]) == entry["sha256"]


def test_stacking_order_invariant(tmp_path):
    cfg = _config(tmp_path, omega="2pi, 2.5pi, 3pi")
    out = tmp_path / "run"
    assert cli.main(["synthesize", "--config", str(cfg), "--out", str(out)]) == 0
    names = [str(out / f"dataset_{k:02d}.txt") for k in range(3)]
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["image", "--config", str(cfg), "--out", str(a), *names]) == 0
    assert cli.main(["image", "--config", str(cfg), "--out", str(b), *names[::-1]]) == 0
    np.testing.assert_array_equal(read_grid_csv(a / "image_stacked.csv", (5, 4)),
                                  read_grid_csv(b / "image_stacked.csv", (5, 4)))


def test_seed_override_and_determinism(tmp_path):
    cfg = _config(tmp_path)
    runs = {}
    for name, seed in (("a", None), ("b", None), ("c", 99)):
        args = ["synthesize", "--config", str(cfg), "--out", str(tmp_path / name)]
        if seed is not None:
            args += ["--seed", str(seed)]
        assert cli.main(args) == 0
        runs[name] = (tmp_path / name / "dataset_00.txt").read_bytes()
    assert runs["a"] == runs["b"] and runs["a"] != runs["c"]


def test_geometry_mismatch_rejected(tmp_path):
    cfg = _config(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["synthesize", "--config", str(cfg), "--out", str(out)]) == 0
    other = _config(tmp_path, name="other.ini")
    other.write_text(other.read_text().replace("n_rcv = 5", "n_rcv = 6"))
    assert cli.main(["image", "--config", str(other), "--out", str(out)]) == cli.EXIT_CONFIG


def test_psf_command(tmp_path):
    out = tmp_path / "psf"
    assert cli.main(["psf", "--config", str(_config(tmp_path)), "--out", str(out)]) == 0
    summary = (out / "psf_summary.txt").read_text()
    assert "peak_value" in summary and "half_width_z1" in summary
    assert (out / "psf_abs_Jd_minus_F.csv").exists() and (out / "manifest_psf.json").exists()


def test_validate(capsys):
    assert cli.main(["validate"]) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    names = [ln.split()[1].rstrip(":") for ln in lines if ln.startswith(("PASS", "FAIL"))]
    assert len(names) == len(set(names)) >= 6
    expected = {"rayleigh_residual", "sokhotski_limit", "reciprocity", "traction_free",
                "limiting_absorption", "psf_lower_bound"}
    assert expected <= set(names)


def test_validate_detects_corrupted_rayleigh_root():
    from elastrtm.medium import ElasticMedium

    k_r = ElasticMedium(0.5, 0.25, 2 * np.pi).wavenumbers.k_R
    ok, res = cli.cmd_validate(k_r_override=1.01 * k_r)
    assert not ok
    failed = {r.name for r in res if not r.passed}
    assert "rayleigh_residual" in failed
    line = next(r.line() for r in res if r.name == "rayleigh_residual")
    assert line.startswith("FAIL") and "measured" in line and "threshold" in line
