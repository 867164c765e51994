"""End-to-end tests of the command-line runner.

main() is invoked in-process with an output root redirected into tmp_path, so
every test inspects real artifact files: manifests, diagnostics CSVs, curve
CSV / OFF snapshots, convergence tables and SVG plots.
"""

import json

import numpy as np
import pytest

from geomflow.cli import (
    EXIT_CONFIG,
    EXIT_DETECTED,
    EXIT_OK,
    EXIT_SOLVER,
    OUTPUT_ROOT_ENV,
    main,
)
from geomflow.curve import load_curve_csv
from geomflow.metrics import table_from_csv
from geomflow.surface import load_off


@pytest.fixture()
def root(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    return tmp_path


def write_config(root, name, data):
    path = root / name
    path.write_text(json.dumps(data))
    return str(path)


def circle_run(directory="run", **overrides):
    data = {
        "flow": {"kind": "csf"},
        "shape": {"name": "circle", "n": 128, "radius": 1.0},
        "scheme": {"k": 2, "tau": 0.01, "T": 0.25},
        "output": {"directory": directory, "snapshot_times": [0.0, 0.25]},
    }
    data.update(overrides)
    return data


def manifest_of(path):
    return json.loads((path / "manifest.json").read_text())


def test_exit_codes_are_distinct():
    assert len({EXIT_OK, EXIT_CONFIG, EXIT_DETECTED, EXIT_SOLVER}) == 4
    assert EXIT_OK == 0


def test_run_curve_completes(root):
    cfg = write_config(root, "run.json", circle_run())
    assert main(["run", cfg]) == EXIT_OK
    out = root / "run"
    manifest = manifest_of(out)
    assert manifest["status"] == "completed"
    assert manifest["config"]["flow"]["kind"] == "csf"
    assert manifest["wall_time_seconds"] >= 0
    assert set(manifest["outputs"]) == {"diagnostics.csv", "snapshot_000.csv",
                                        "snapshot_001.csv", "final.csv"}
    final = load_curve_csv(out / "final.csv")
    # Shrinking circle: R(0.25) = sqrt(1 - 2 * 0.25).
    assert np.abs(np.linalg.norm(final.positions, axis=1)
                  - np.sqrt(0.5)).max() <= 1e-3
    first_snapshot = load_curve_csv(out / "snapshot_000.csv")
    assert np.abs(np.linalg.norm(first_snapshot.positions, axis=1) - 1.0).max() <= 1e-12


def test_run_is_deterministic(root):
    cfg_a = write_config(root, "a.json", circle_run("a"))
    cfg_b = write_config(root, "b.json", circle_run("b"))
    assert main(["run", cfg_a]) == EXIT_OK
    assert main(["run", cfg_b]) == EXIT_OK
    assert (root / "a" / "diagnostics.csv").read_bytes() == \
        (root / "b" / "diagnostics.csv").read_bytes()
    assert (root / "a" / "final.csv").read_bytes() == \
        (root / "b" / "final.csv").read_bytes()


def test_run_surface_writes_off_snapshots(root):
    data = {
        "flow": {"kind": "mcf"},
        "shape": {"name": "icosphere", "radius": 1.0, "subdivisions": 1},
        "scheme": {"k": 2, "tau": 0.001, "T": 0.005},
        "output": {"directory": "mcf", "snapshot_times": [0.005]},
    }
    cfg = write_config(root, "mcf.json", data)
    assert main(["run", cfg]) == EXIT_OK
    out = root / "mcf"
    assert manifest_of(out)["status"] == "completed"
    final = load_off(out / "final.off")
    assert np.abs(np.linalg.norm(final.vertices, axis=1)
                  - np.sqrt(1.0 - 4.0 * 0.005)).max() <= 5e-3
    assert (out / "snapshot_000.off").exists()


def test_invalid_config_names_field(root, capsys):
    bad = circle_run()
    bad["scheme"]["T"] = 0.255
    cfg = write_config(root, "bad.json", bad)
    assert main(["run", cfg]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "scheme" in err and "integer multiple" in err
    # Crash-only reporting: the manifest lands at the output root since the
    # config never resolved to a directory.
    manifest = manifest_of(root)
    assert manifest["status"] == "config_error"
    assert "scheme" in manifest["error"]


def test_unknown_key_rejected(root, capsys):
    cfg = write_config(root, "typo.json", circle_run(flo={"kind": "csf"}))
    assert main(["run", cfg]) == EXIT_CONFIG
    assert "flo" in capsys.readouterr().err


def test_missing_config_file(root, capsys):
    assert main(["run", str(root / "nope.json")]) == EXIT_CONFIG
    assert "nope.json" in capsys.readouterr().err


def test_collapse_reports_detection(root, capsys):
    data = {
        "flow": {"kind": "csf"},
        "shape": {"name": "circle", "n": 32, "radius": 0.05},
        "scheme": {"k": 1, "tau": 0.0001, "T": 0.003},
        "output": {"directory": "blow"},
    }
    cfg = write_config(root, "blow.json", data)
    assert main(["run", cfg]) == EXIT_DETECTED
    assert "blowup detected" in capsys.readouterr().err
    out = root / "blow"
    manifest = manifest_of(out)
    assert manifest["status"] == "blowup"
    assert 0.0 < manifest["detection"]["time"] < 0.003
    # Partial results are still written for inspection.
    assert (out / "diagnostics.csv").exists()
    assert (out / "final.csv").exists()


def test_sweep_first_order_circle(root):
    data = {
        "flow": {"kind": "csf"},
        "shape": {"name": "circle", "n": 64, "radius": 1.0},
        "scheme": {"k": 1, "tau": 0.05, "T": 0.25},
        "output": {"directory": "sweep"},
        "sweep": {"taus": [0.05, 0.025], "reference": "exact"},
    }
    cfg = write_config(root, "sweep.json", data)
    assert main(["sweep", cfg, "--jobs", "2"]) == EXIT_OK
    out = root / "sweep"
    manifest = manifest_of(out)
    assert manifest["status"] == "completed"
    assert "table.csv" in manifest["outputs"]
    assert "table.svg" in manifest["outputs"]
    rows = table_from_csv(out / "table.csv")
    assert [r.tau for r in rows] == [0.05, 0.025]
    assert rows[1].order == pytest.approx(1.0, abs=0.2)
    assert (out / "diagnostics_tau_0.05.csv").exists()
    assert (out / "diagnostics_tau_0.025.csv").exists()
    assert (out / "table.svg").read_text().startswith("<svg")


def test_sweep_with_fine_reference_run(root):
    data = {
        "flow": {"kind": "csf"},
        "shape": {"name": "circle", "n": 64, "radius": 1.0},
        "scheme": {"k": 2, "tau": 0.05, "T": 0.25},
        "output": {"directory": "sweep2"},
        "sweep": {"taus": [0.05, 0.025], "reference": "finest",
                  "reference_tau": 0.0125,
                  "reference_bootstrap_fine_step": 0.0015625},
    }
    cfg = write_config(root, "sweep2.json", data)
    assert main(["sweep", cfg]) == EXIT_OK
    rows = table_from_csv(root / "sweep2" / "table.csv")
    assert rows[1].order == pytest.approx(2.0, abs=0.3)


def test_sweep_without_sweep_section(root, capsys):
    cfg = write_config(root, "nosweep.json", circle_run())
    assert main(["sweep", cfg]) == EXIT_CONFIG
    assert "sweep" in capsys.readouterr().err


def test_sweep_partial_on_failed_run(root, capsys):
    data = {
        "flow": {"kind": "csf"},
        "shape": {"name": "circle", "n": 32, "radius": 0.05},
        "scheme": {"k": 1, "tau": 0.0001, "T": 0.003},
        "output": {"directory": "sweepfail"},
        "sweep": {"taus": [0.0001, 0.00005], "reference": "exact"},
    }
    cfg = write_config(root, "sweepfail.json", data)
    assert main(["sweep", cfg]) == EXIT_DETECTED
    manifest = manifest_of(root / "sweepfail")
    assert manifest["status"] == "partial"
    assert "failed" in manifest["error"]
    assert "error" in capsys.readouterr().err


def test_plot_diagnostics_and_table(root):
    cfg = write_config(root, "run.json", circle_run("plotsrc"))
    assert main(["run", cfg]) == EXIT_OK
    diag = root / "plotsrc" / "diagnostics.csv"

    svg_path = root / "psi.svg"
    assert main(["plot", str(diag), "-o", str(svg_path)]) == EXIT_OK
    text = svg_path.read_text()
    assert text.startswith("<svg")
    assert "Psi" in text
    assert 'stroke-dasharray="2,3"' in text  # Psi = 1 reference line

    # Overlay keeps legend order; explicit field selection works.
    other = root / "plotsrc" / "copy.csv"
    other.write_bytes(diag.read_bytes())
    overlay = root / "overlay.svg"
    assert main(["plot", str(diag), str(other), "--field", "L",
                 "-o", str(overlay)]) == EXIT_OK
    content = overlay.read_text()
    assert content.index(">diagnostics<") < content.index(">copy<")

    # Determinism: re-rendering produces identical bytes.
    again = root / "psi2.svg"
    assert main(["plot", str(diag), "-o", str(again)]) == EXIT_OK
    assert again.read_bytes() == svg_path.read_bytes()


def test_plot_convergence_table(root):
    data = {
        "flow": {"kind": "csf"},
        "shape": {"name": "circle", "n": 64, "radius": 1.0},
        "scheme": {"k": 1, "tau": 0.05, "T": 0.25},
        "output": {"directory": "tab"},
        "sweep": {"taus": [0.05, 0.025], "reference": "exact"},
    }
    cfg = write_config(root, "tab.json", data)
    assert main(["sweep", cfg]) == EXIT_OK
    out_svg = root / "nested" / "dir" / "conv.svg"
    assert main(["plot", str(root / "tab" / "table.csv"),
                 "-o", str(out_svg)]) == EXIT_OK
    assert "slope 4" in out_svg.read_text()


def test_plot_rejects_bad_inputs(root, capsys):
    empty = root / "empty.csv"
    empty.write_text("")
    assert main(["plot", str(empty), "-o", str(root / "x.svg")]) == EXIT_CONFIG
    assert "empty" in capsys.readouterr().err

    cfg = write_config(root, "run.json", circle_run("mix2d"))
    assert main(["run", cfg]) == EXIT_OK
    data3d = {
        "flow": {"kind": "mcf"},
        "shape": {"name": "icosphere", "radius": 1.0, "subdivisions": 0},
        "scheme": {"k": 1, "tau": 0.001, "T": 0.002},
        "output": {"directory": "mix3d"},
    }
    cfg3d = write_config(root, "run3d.json", data3d)
    assert main(["run", cfg3d]) == EXIT_OK
    assert main(["plot", str(root / "mix2d" / "diagnostics.csv"),
                 str(root / "mix3d" / "diagnostics.csv"),
                 "-o", str(root / "x.svg")]) == EXIT_CONFIG
    assert "header differs" in capsys.readouterr().err

    assert main(["plot", str(root / "mix2d" / "diagnostics.csv"),
                 "--field", "bogus", "-o", str(root / "x.svg")]) == EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err


def test_plot_surface_diagnostics_defaults_to_volume(root):
    data = {
        "flow": {"kind": "mcf"},
        "shape": {"name": "icosphere", "radius": 1.0, "subdivisions": 0},
        "scheme": {"k": 1, "tau": 0.001, "T": 0.002},
        "output": {"directory": "vol"},
    }
    cfg = write_config(root, "vol.json", data)
    assert main(["run", cfg]) == EXIT_OK
    out_svg = root / "vol.svg"
    assert main(["plot", str(root / "vol" / "diagnostics.csv"),
                 "-o", str(out_svg)]) == EXIT_OK
    assert "relative volume change" in out_svg.read_text()
