import json
import math
import subprocess
import sys

import numpy as np
import pytest

from nearfield.cli import main
from nearfield.errors import EmptyMap
from nearfield.grid import extract_quadrupole, grid_axes, grid_from_wires
from nearfield.render import heatmap_pixels, read_pgm, render_pgm
from nearfield.wires import preset_scenario

from conftest import reference_params


@pytest.fixture
def params_file(tmp_path):
    path = tmp_path / "params.json"
    path.write_text(json.dumps(reference_params().to_json()))
    return path


def run(*argv):
    return main([str(a) for a in argv])


# -- exit codes --------------------------------------------------------------

def test_no_subcommand_is_usage_error(capsys):
    assert run() == 1


def test_unknown_subcommand_and_flag():
    assert run("frobnicate") == 1
    assert run("levels", "--bogus") == 1


def test_missing_input_is_usage_error(tmp_path):
    assert run("extract", tmp_path / "missing.csv") == 1


def test_missing_output_directory_is_usage_error(tmp_path, params_file):
    assert run("gen-field", "--params", params_file, "-o", tmp_path / "no" / "f.csv") == 1


def test_noise_without_seed_is_usage_error(tmp_path, params_file):
    assert run("shiftmap", "--params", params_file, "--noise", "0.05", "-o", tmp_path / "m.csv") == 1
    assert run("shiftmap", "--params", params_file, "--noise", "0.05", "--seed", "-1",
               "-o", tmp_path / "m.csv") == 1


def test_bad_file_is_data_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert run("extract", bad) == 2
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{")
    assert run("shiftmap", "--params", bad_json, "-o", tmp_path / "m.csv") == 2


def test_numerical_failure_exit_code(tmp_path):
    # minimum on the grid boundary
    out = tmp_path / "f.csv"
    assert run("gen-field", "--preset", "single", "--center", "0", "45", "-o", out) == 0
    assert run("extract", out) == 3


def test_resonant_drive_exit_code(tmp_path, params_file):
    assert run("shiftmap", "--params", params_file, "--f-drive", "1082.5470695220656",
               "-o", tmp_path / "m.csv") == 3


def test_help_per_subcommand(capsys):
    for sub in ("gen-field", "extract", "levels", "shiftmap", "fit", "render"):
        with pytest.raises(SystemExit) as exc:
            main([sub, "--help"])
        assert exc.value.code == 0
        assert "usage" in capsys.readouterr().out


# -- levels ------------------------------------------------------------------

def test_levels_zero_field(tmp_path):
    out = tmp_path / "levels.json"
    assert run("levels", "--B0", "0", "-o", out) == 0
    report = json.loads(out.read_text())
    assert report["F_splitting_MHz"] == pytest.approx(1250.017674, abs=1e-6)
    assert len(report["levels"]) == 8


def test_levels_labels(tmp_path, capsys):
    assert run("levels") == 0
    report = json.loads(capsys.readouterr().out)
    labelled = {t["label"]: t["freq_MHz"] for t in report["transitions"] if t["label"]}
    assert set(labelled) == {"A", "B", "C", "D", "E"}
    assert labelled["B"] == pytest.approx(1083.0, abs=1.0)


def test_transition_map_override(tmp_path, capsys):
    mapping = tmp_path / "map.json"
    mapping.write_text(json.dumps({"Q": [[2, 1], [1, 1]]}))
    assert run("levels", "--transition-map", mapping) == 0
    report = json.loads(capsys.readouterr().out)
    assert [t["label"] for t in report["transitions"] if t["label"]] == ["Q"]


# -- pipeline ----------------------------------------------------------------

def test_gen_field_extract_identity(tmp_path, params_file):
    field = tmp_path / "field.csv"
    out = tmp_path / "out.json"
    diag = tmp_path / "diag.json"
    assert run("gen-field", "--params", params_file, "-o", field) == 0
    assert run("extract", field, "-o", out, "--diagnostics", diag) == 0
    got = json.loads(out.read_text())
    want = json.loads(params_file.read_text())
    assert set(got) == set(want)
    for k in want:
        assert got[k] == pytest.approx(want[k], rel=1e-9, abs=1e-9)
    assert json.loads(diag.read_text())["fit_residual_rel"] < 1e-10


def test_extract_from_stdin(tmp_path, params_file, monkeypatch, capsys):
    field = tmp_path / "field.csv"
    assert run("gen-field", "--params", params_file, "-o", field) == 0
    import io
    monkeypatch.setattr(sys, "stdin", io.StringIO(field.read_text()))
    assert run("extract", "-") == 0
    assert json.loads(capsys.readouterr().out)["alpha_deg"] == pytest.approx(24.3)


def test_wires_round_trip(tmp_path):
    field = tmp_path / "field.csv"
    wires = tmp_path / "wires.json"
    assert run("gen-field", "--preset", "parallel-pair", "--wires-out", wires, "-o", field) == 0
    again = tmp_path / "again.csv"
    assert run("gen-field", "--wires", wires, "--center", "0", "0", "-o", again) == 0
    assert field.read_bytes() == again.read_bytes()
    assert run("gen-field", "--wires", wires, "-o", again) == 1


def test_byte_identical_reruns(tmp_path, params_file):
    outputs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        d.mkdir()
        assert run("shiftmap", "--params", params_file, "--transition", "E", "--noise", "0.05",
                   "--seed", "42", "-o", d / "e.csv") == 0
        assert run("shiftmap", "--params", params_file, "--noise", "0.05", "--seed", "43",
                   "-o", d / "b.csv") == 0
        assert run("fit", d / "b.csv", d / "e.csv", "-o", d / "fit.json") == 0
        assert run("render", d / "e.csv", "-o", d / "e.pgm") == 0
        outputs.append([(d / n).read_bytes() for n in ("e.csv", "b.csv", "fit.json", "e.pgm",
                                                        "e.pgm.json")])
    assert outputs[0] == outputs[1]


def test_cli_fit_recovers_params(tmp_path, params_file):
    assert run("shiftmap", "--params", params_file, "--transition", "B", "-o", tmp_path / "b.csv") == 0
    assert run("shiftmap", "--params", params_file, "--transition", "E", "--power-dB", "6.47",
               "--header-power-dB", "6", "-o", tmp_path / "e.csv") == 0
    assert run("fit", tmp_path / "b.csv", tmp_path / "e.csv", "-o", tmp_path / "fit.json") == 0
    report = json.loads((tmp_path / "fit.json").read_text())
    p = report["params"]
    assert p["B_uT"] / p["Bp_uT_per_um"] == pytest.approx(8.5, rel=1e-6)
    assert p["alpha_deg"] == pytest.approx(24.3, abs=1e-4)
    assert report["power_ratio_dB"][0] == pytest.approx(6.47, abs=1e-6)
    assert report["converged"]


def test_cli_fit_with_fixed_parameter(tmp_path, params_file):
    assert run("shiftmap", "--params", params_file, "-o", tmp_path / "b.csv") == 0
    assert run("fit", tmp_path / "b.csv", "--fix", "B", "-o", tmp_path / "f.json") == 1
    assert run("fit", tmp_path / "b.csv", "--fix", "B", "--initial", params_file,
               "-o", tmp_path / "f.json") == 0
    report = json.loads((tmp_path / "f.json").read_text())
    assert "B_uT" not in report["std_errors"]
    assert report["params"]["B_uT"] == pytest.approx(42.5)


# -- render ------------------------------------------------------------------

def test_render_scaling_example():
    pixels, vmax = heatmap_pixels(np.array([[0.0, 1.0], [2.0, 4.0]]))
    assert vmax == 4.0
    assert sorted(pixels.ravel().tolist()) == [0, 16383, 32767, 65535]
    # top row is the larger z, left column the smaller x
    assert pixels.tolist() == [[16383, 65535], [0, 32767]]


def test_render_all_zero_is_uniform(tmp_path):
    path = tmp_path / "z.pgm"
    render_pgm(np.zeros((3, 4)), np.arange(3.0), np.arange(4.0), path)
    px = read_pgm(path)
    assert px.shape == (4, 3)
    assert np.all(px == px.flat[0])


def test_render_fully_masked():
    with pytest.raises(EmptyMap):
        heatmap_pixels(np.full((2, 2), np.nan))


def test_render_masked_cells_are_zero(tmp_path):
    v = np.array([[np.nan, 1.0], [2.0, 4.0]])
    meta = render_pgm(v, [0.0, 1.0], [0.0, 1.0], tmp_path / "m.pgm")
    assert meta["masked_cells"] == 1
    assert read_pgm(tmp_path / "m.pgm")[1, 0] == 0
    side = json.loads((tmp_path / "m.pgm.json").read_text())
    assert side["scale_max"] == 4.0 and side["maxval"] == 65535


def test_render_pgm_header(tmp_path, params_file):
    assert run("shiftmap", "--params", params_file, "-o", tmp_path / "b.csv") == 0
    assert run("render", tmp_path / "b.csv", "-o", tmp_path / "b.pgm") == 0
    data = (tmp_path / "b.pgm").read_bytes()
    assert data.startswith(b"P5\n31 31\n65535\n")
    assert len(data) == len(b"P5\n31 31\n65535\n") + 31 * 31 * 2


def test_render_field_csv(tmp_path, params_file):
    assert run("gen-field", "--params", params_file, "-o", tmp_path / "f.csv") == 0
    assert run("render", tmp_path / "f.csv", "-o", tmp_path / "f.pgm") == 0
    side = json.loads((tmp_path / "f.pgm.json").read_text())
    assert side["units"] == "uT"


def test_meander_eddy_render_darkest_pixel(tmp_path):
    assert run("shiftmap", "--preset", "meander-eddy", "--transition", "E",
               "-o", tmp_path / "e.csv") == 0
    assert run("render", tmp_path / "e.csv", "-o", tmp_path / "e.pgm") == 0
    px = read_pgm(tmp_path / "e.pgm")
    side = json.loads((tmp_path / "e.pgm.json").read_text())
    xs = np.linspace(*side["x_um"], side["width"])
    zs = np.linspace(*side["z_um"], side["height"])[::-1]
    r, c = np.unravel_index(np.argmin(px), px.shape)
    ws = preset_scenario("meander-eddy")
    p, _ = extract_quadrupole(grid_from_wires(ws, grid_axes(0, 4), grid_axes(45, 4)))
    assert abs(xs[c] - p.x0) <= 1.0 and abs(zs[r] - p.z0) <= 1.0
    # brightest pixel well away from the minimum
    r, c = np.unravel_index(np.argmax(px), px.shape)
    assert math.hypot(xs[c] - p.x0, zs[r] - p.z0) > 10.0


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "nearfield", "levels", "--B0", "0"],
                         capture_output=True, text=True, check=True)
    assert json.loads(out.stdout)["B0_mT"] == 0.0
