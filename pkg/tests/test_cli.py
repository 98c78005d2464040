import json

import numpy as np
import pytest

from waveguide_ip.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, main
from waveguide_ip.experiments import emit_plotdata
from waveguide_ip.fourier import StabilityRecord, bound_value
from waveguide_ip.io import read_array

SMALL = ["--override", "grid.n_prime=8", "--override", "grid.n3=24", "--override", "grid.L=2.0"]


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


@pytest.mark.parametrize("sub", ["carleman", "forward", "cgo"])
def test_subcommand_is_deterministic(tmp_path, sub):
    extra = ["--override", "cgo.rho=[1.0]", "--override", "cgo.xi=[[1.0, 0.5, 0.5]]"]
    for run in ("a", "b"):
        assert main([sub, "--out-dir", str(tmp_path / run), "--seed", "5"] + SMALL + extra) == EXIT_OK
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a == b and "config.yaml" in a
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["stages"][sub]["status"] == "ok"
    assert man["seed"] == 5
    assert set(man["files"]) == set(a)


def test_forward_output_is_readable(tmp_path):
    assert main(["forward", "--out-dir", str(tmp_path)] + SMALL) == EXIT_OK
    u, meta = read_array(tmp_path / "forward_u.bin")
    assert list(u.shape) == meta["shape"]
    assert json.loads((tmp_path / "forward.json").read_text())["residual"] < 1e-10


def test_config_errors_exit_with_code_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("grid:\n  n_prime: 3\n")
    assert main(["forward", "--config", str(bad), "--out-dir", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "grid.n_prime" in capsys.readouterr().err
    assert main(["forward", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    assert main(["forward", "--override", "grid.bogus=1"]) == EXIT_CONFIG


def test_stage_failure_exits_with_code_1(tmp_path):
    # the grid cannot resolve this rho, so the stage fails and the manifest records it
    code = main(["cgo", "--out-dir", str(tmp_path), "--override", "cgo.rho=[40.0]"] + SMALL)
    assert code == EXIT_FAILURE
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["stages"]["cgo"]["status"] == "failed"
    assert "ResolutionError" in man["stages"]["cgo"]["error"]


def test_plotdata_matches_independent_regression(tmp_path):
    rng = np.random.default_rng(0)
    gam = 10.0 ** rng.uniform(-8, 0, 12)
    err = rng.uniform(0.1, 1.0, 12)
    recs = [StabilityRecord(0, g, 1, 1, e, 0, 0, 0) for g, e in zip(gam, err)]
    fit = emit_plotdata(recs, tmp_path, "p")
    x = np.array([bound_value(g) for g in gam])
    A = np.stack([x, np.ones_like(x)], 1)
    slope, icpt = np.linalg.lstsq(A, err, rcond=None)[0]
    assert fit["slope"] == pytest.approx(slope, rel=1e-9)
    assert fit["intercept"] == pytest.approx(icpt, rel=1e-9)
    assert fit["C"] == pytest.approx(np.max(err / x))
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "x,y" and len(rows) == 13
    with pytest.raises(ValueError):
        emit_plotdata([], tmp_path)


def test_partial_run_on_edges_skips_the_chain(tmp_path):
    args = ["partial", "--out-dir", str(tmp_path), "--override", "grid.gamma0=[y-, x+]",
            "--override", "partial.rho=1.0", "--override", "partial.xi=[[1.0, 0.5, 0.5]]"]
    assert main(args + SMALL) == EXIT_OK
    summary = json.loads((tmp_path / "partial_chain.json").read_text())
    assert "Gamma_0" in summary["chain_skipped"] and summary["gamma1_le_gamma"]
    assert not (tmp_path / "partial_chain.csv").exists()
