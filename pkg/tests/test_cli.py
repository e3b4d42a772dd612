import numpy as np
import pytest

from controlsets.cli.config import (SANDSTEDE_CONFIG, config_from_text, default_config,
                                    dump_config, load_config)
from controlsets.cli.main import main
from controlsets.cli.raster import emit_raster, pgm_text, raster_levels, svg_text
from controlsets.dynamics import rhs
from controlsets.errors import ConfigSyntax, ConfigValidation, GridMismatch
from controlsets.reachset import Grid


def _without(section):
    out, skip = [], False
    for line in SANDSTEDE_CONFIG.splitlines():
        if line.startswith("["):
            skip = line.strip() == f"[{section}]"
        if not skip:
            out.append(line)
    return "\n".join(out) + "\n"


# -- config ------------------------------------------------------------------

def test_builtin_config_encodes_the_example(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SANDSTEDE_CONFIG)
    cfg = load_config(path)
    sys = cfg.build_system()
    np.testing.assert_array_equal(rhs(sys, cfg.run.alpha, (0, 0), [0.0]), [0, 0])
    assert cfg.run.rho == 0.01
    assert cfg.build_grid().shape == (150, 150)


def test_missing_grid_section():
    with pytest.raises(ConfigValidation):
        config_from_text(_without("grid"))


def test_zero_must_be_interior():
    text = SANDSTEDE_CONFIG.replace("lo = (-1)", "lo = (0.0)").replace("hi = (1)", "hi = (1.0)")
    with pytest.raises(ConfigValidation, match="0 must be interior to U"):
        config_from_text(text)


def test_unknown_key_is_an_error():
    with pytest.raises(ConfigValidation):
        config_from_text(SANDSTEDE_CONFIG + "stepT = 0.3\n")
    with pytest.raises(ConfigValidation):
        config_from_text(SANDSTEDE_CONFIG + "[extra]\nx = 1\n")


def test_syntax_error_carries_line_number():
    text = SANDSTEDE_CONFIG.replace("alpha = 0.0", "alpha 0.0")
    with pytest.raises(ConfigSyntax) as info:
        config_from_text(text)
    expected = SANDSTEDE_CONFIG.splitlines().index("alpha = 0.0") + 1
    assert info.value.line == expected


@pytest.mark.parametrize("old,new", [
    ('"-x+2*y+x^2"', '"-x+2*y+x^^2"'),
    ("rho = 0.01", "rho = nan"),
    ("cells = (150, 150)", "cells = (150, 0)"),
    ("rho = 0.01", "rho = 0.01\ncontrols = ((0.05))"),
])
def test_validation_failures(old, new):
    with pytest.raises(ConfigValidation):
        config_from_text(SANDSTEDE_CONFIG.replace(old, new, 1))


def test_dump_config_round_trip():
    cfg = default_config()
    again = config_from_text(dump_config(cfg))
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)


def test_dump_config_from_the_command_line(capsys):
    assert main(["--dump-config", "--rho", "0.02"]) == 0
    text = capsys.readouterr().out
    cfg = config_from_text(text)
    assert cfg.run.rho == 0.02
    assert config_from_text(dump_config(cfg)) == cfg


# -- rasters -----------------------------------------------------------------

def test_empty_raster_size():
    g = Grid((-0.2, -0.6), (1.2, 0.6), (150, 150))
    text = pgm_text([g.empty()])
    lines = text.splitlines()
    assert lines[:3] == ["P2", "150 150", "255"]
    values = np.array(" ".join(lines[3:]).split(), dtype=int)
    assert values.size == 150 * 150 and np.all(values == 255)


def test_orientation_contract():
    g = Grid((0, 0), (1, 1), (3, 2))
    img = raster_levels([g.from_flat([0])])
    assert img.shape == (2, 3)
    assert img[-1, 0] == 200
    assert np.sum(img != 255) == 1
    rows = pgm_text([g.from_flat([0])]).splitlines()[3:]
    assert rows == ["255 255 255", "200 255 255"]


def test_layers_overwrite_in_order():
    g = Grid((0, 0), (1, 1), (2, 2))
    a, b = g.from_flat([0, 1]), g.from_flat([1])
    img = raster_levels([a, b])
    assert sorted(img.ravel().tolist()) == [150, 200, 255, 255]
    with pytest.raises(ValueError):
        raster_levels([a] * 5)


def test_grid_mismatch():
    g1, g2 = Grid((0, 0), (1, 1), (2, 2)), Grid((0, 0), (1, 1), (3, 3))
    with pytest.raises(GridMismatch):
        raster_levels([g1.empty(), g2.empty()])


def test_svg_has_rect_per_cell_and_polylines(tmp_path):
    g = Grid((0, 0), (1, 1), (4, 4))
    text = svg_text([g.from_flat([0, 5, 6])], trajectories=[np.array([[0.1, 0.1], [0.9, 0.9]])])
    assert text.count("<rect") == 3 + 1  # cells plus background
    assert text.count("<polyline") == 1
    path = emit_raster([g.from_flat([1])], tmp_path / "x.svg", "svg")
    assert path.read_text().startswith("<svg") or path.read_text().startswith("<?xml")


# -- commands ----------------------------------------------------------------

def test_analyze(tmp_path, capsys):
    assert main(["analyze", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "kalman_rank: 2" in out
    assert "saddle_quantity: -2" in out


def test_flags_before_or_after_subcommand(tmp_path):
    assert main(["--alpha", "0.01", "split", "--alphas", "0.01", "--out", str(tmp_path)]) == 0
    assert main(["split", "--alpha", "0.01", "--out", str(tmp_path)]) == 0


def test_computation_error_exit_code(tmp_path):
    assert main(["cycle", "--alpha", "-0.017241", "--out", str(tmp_path)]) == 1


def test_config_error_exit_code(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text(_without("grid"))
    assert main(["analyze", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert main(["analyze", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_reach_outputs(tmp_path):
    code = main(["reach", "--out", str(tmp_path), "--format", "csv", "--format", "pgm",
                 "--seed", "1,0"])
    assert code == 0
    assert (tmp_path / "reach.csv").exists() and (tmp_path / "reach.pgm").exists()


@pytest.mark.slow
def test_figures_complete_and_regenerate(tmp_path):
    for n in range(1, 6):
        assert main(["figure", str(n), "--out", str(tmp_path / "a")]) == 0
    fig1 = sorted((tmp_path / "a").glob("*fig1"))[0]
    for name in ("report.txt", "raster.pgm", "raster.svg", "d0.csv", "d2.csv"):
        assert (fig1 / name).exists()
    assert main(["figure", "1", "--out", str(tmp_path / "b")]) == 0
    again = sorted((tmp_path / "b").glob("*fig1"))[0]
    assert (fig1 / "raster.pgm").read_bytes() == (again / "raster.pgm").read_bytes()
