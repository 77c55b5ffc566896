import csv
import json

import numpy as np
import pytest

from wgnet.cli import main
from wgnet.config import ConfigError, defaults, dump_config, parse_config


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_defaults_roundtrip():
    cfg = defaults()
    again = parse_config(dump_config(cfg))
    assert again.echo() == cfg.echo()


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="tollerance"):
        parse_config("[enrichment]\ntollerance = 1e-3\n")


def test_unknown_section_and_bad_value():
    with pytest.raises(ConfigError, match="section"):
        parse_config("[meshes]\nn = 3\n")
    with pytest.raises(ConfigError, match="discretization.k"):
        parse_config("[discretization]\nk = 3\n")
    with pytest.raises(ConfigError, match="mesh.n"):
        parse_config("[mesh]\nn = many\n")


def test_config_values_parsed():
    cfg = parse_config("[network]\nwidths = 2, 16, 1\nseed = 5\n[enrichment]\ntol = auto\nmode = projected\n")
    assert cfg["network.widths"] == [2, 16, 1]
    ec = cfg.enrichment_config()
    assert ec.seed == 5 and ec.tol is None and ec.mode == "projected"


def test_solve_smoke(tmp_path, capsys):
    cfg = write(tmp_path, "[mesh]\nn = 8\n[discretization]\nk = 1\n")
    out = tmp_path / "out"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    assert "energy error" in capsys.readouterr().out
    rows = list(csv.reader(open(out / "solution.csv")))
    assert rows[0][:3] == ["cell", "x", "y"] and len(rows) == 65
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["mesh"]["n"] == 8 and "numpy" in man["versions"]


def test_unknown_key_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "[enrichment]\ntollerance = 1\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "tollerance" in capsys.readouterr().err


def test_convergence_rows(tmp_path):
    cfg = write(tmp_path, "[mesh]\nn = 2\n[convergence]\nlevels = 4\n")
    out = tmp_path / "conv"
    assert main(["convergence", "--config", cfg, "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "rates.csv")))
    assert rows[0] == ["h", "dofs", "err_aw", "err_l2", "eoc_aw", "eoc_l2"]
    assert len(rows) == 5
    assert sum(1 for r in rows[1:] if r[4]) == 3
    # full precision output
    assert len(rows[1][2].replace(".", "").lstrip("0")) >= 15
    assert len((out / "rates.gp.dat").read_text().splitlines()) == 5


def test_enrich_reproducible(tmp_path):
    text = ("[problem]\nname = lshape_singular\n[mesh]\ngenerator = lshape\nn = 2\n"
            "[enrichment]\nmax_enrichments = 2\ntol = 0\n[network]\nwidths = 2 6 1\nsteps = 20\nrestarts = 1\n"
            "[quadrature]\nneural_degree = 4\nsubdivisions = 1\n")
    cfg = write(tmp_path, text)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["enrich", "--config", cfg, "--out", str(a), "--seed", "7"]) == 0
    assert main(["enrich", "--config", cfg, "--out", str(b), "--seed", "7"]) == 0
    assert (a / "enrichment.csv").read_text() == (b / "enrichment.csv").read_text()
    man = json.loads((a / "manifest.json").read_text())
    assert man["seeds"]["network"] == 7
    ck = man["results"]["checkpoints"]
    assert len(ck) == 2 and len(ck[0]["theta"]) == 6 * 3 + 7


def test_domain_mismatch_is_config_error(tmp_path):
    cfg = write(tmp_path, "[problem]\nname = lshape_singular\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_mesh_info_and_quadrature(tmp_path, capsys):
    from wgnet.mesh import generate_lshape_mesh, save_mesh
    save_mesh(generate_lshape_mesh(2), tmp_path / "l.mesh")
    assert main(["mesh-info", "--mesh", str(tmp_path / "l.mesh")]) == 0
    out = capsys.readouterr().out
    assert "cells,12" in out and "area,3" in out
    assert main(["validate-quadrature", "--degree", "8"]) == 0


def test_missing_config_file(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.ini")]) == 2


def test_custom_problem_run(tmp_path):
    cfg = write(tmp_path, '[problem]\nname = custom\nf = 0\ng = x^2 - y^2\nu = x^2 - y^2\n[mesh]\nn = 4\n')
    assert main(["convergence", "--config", cfg, "--out", str(tmp_path / "c"), "--levels", "2"]) == 0
