import csv
import json
import os
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest
import yaml

from sparse_doa import cli, io_utils
from sparse_doa.errors import SchemaMismatch
from sparse_doa.plots import emit_plot

TINY = {
    "geometry": {"kind": "UCA", "M": 6, "spacing": 0.5},
    "selection": {"K": 3, "grid_points": 12, "T": 50},
    "dataset": {"P": 6, "L": 3, "T": 30, "snr_list": [10.0, 20.0]},
    "training": {"batch_size": 8, "max_epochs": 3, "conv_filters": [4], "fc": [[16, 0.0]]},
    "evaluation": {"policies": ["best_crb", "random"], "snr_list": [10.0], "J_T": 6},
    "scan": {"scans": 6, "refresh_period": 3, "T": 30},
    "sa": {"iterations": 20, "moves_per_temperature": 10, "candidates": 3},
    "seed": 5,
}


def write_config(tmp_path, overrides=None, name="cfg.yaml"):
    cfg = json.loads(json.dumps(TINY))
    for block, vals in (overrides or {}).items():
        if isinstance(vals, dict):
            cfg.setdefault(block, {}).update(vals)
        else:
            cfg[block] = vals
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def run_cli(*argv):
    return cli.main(list(argv))


def failing(capsys, *argv):
    with pytest.raises(SystemExit) as exc:
        run_cli(*argv)
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    return exc.value.code, err


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_pipeline_artifacts_and_manifests(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert run_cli("gen-data", "-c", cfg, "--out", str(out)) == 0
    assert run_cli("train", "-c", cfg, "--out", str(out)) == 0
    model = str(out / "model.bin")
    assert run_cli("eval-acc", "-c", cfg, "--out", str(out), "--model", model,
                   "--set", "evaluation.test_P=4", "--set", "evaluation.test_L=2") == 0
    assert run_cli("transfer", "-c", cfg, "--out", str(out), "--source-model", model) == 0
    for name in ("dataset.bin", "dataset_summary.json", "model.bin", "training_log.csv", "accuracy.csv",
                 "model_transfer.bin", "training_log_transfer.csv"):
        assert (out / name).stat().st_size > 0
    m = json.loads((out / "manifest-train.json").read_text())
    assert m["seed"] == 5 and m["artifacts"] == ["model.bin", "training_log.csv"]
    assert len(m["config_sha256"]) == 64 and "numpy" in m["versions"] and m["wall_time_s"] >= 0
    summary = json.loads((out / "dataset_summary.json").read_text())
    assert summary["N"] == 36
    assert [r["epoch"] for r in read_rows(out / "training_log.csv")][0] == "1"
    acc = read_rows(out / "accuracy.csv")
    assert [float(r["snr_test_db"]) for r in acc] == [0.0, 10.0, 20.0]


@pytest.mark.parametrize("command,artifacts", [
    ("reduce-classes", ["catalog.csv"]),
    ("select", ["selection.csv", "selection_histogram.csv"]),
    ("sa-design", ["candidates.csv", "parent_layout.csv"]),
    ("evaluate", ["rmse.csv"]),
    ("scan-loop", ["scan_log.csv"]),
    ("crb-diff", ["crb_diff.csv"]),
])
def test_analysis_commands_write_artifacts(tmp_path, command, artifacts):
    over = {"geometry": {"kind": "URA", "rows": 3, "cols": 3, "spacing": 0.5}} if command == "sa-design" else {}
    cfg = write_config(tmp_path, over)
    out = tmp_path / "o"
    assert run_cli(command, "-c", cfg, "--out", str(out)) == 0
    for a in artifacts:
        assert (out / a).stat().st_size > 0
    m = json.loads((out / f"manifest-{command}.json").read_text())
    assert m["artifacts"] == artifacts and m["command"] == command


def test_reduce_classes_on_uca16_k6(tmp_path):
    cfg = write_config(tmp_path, {"geometry": {"kind": "UCA", "M": 16, "spacing": 0.5},
                                  "selection": {"K": 6, "grid_points": 20, "mode": "asymptotic"}})
    out = tmp_path / "o"
    assert run_cli("reduce-classes", "-c", cfg, "--out", str(out)) == 0
    rows = read_rows(out / "catalog.csv")
    assert 1 <= len(rows) <= 20
    assert json.loads((out / "manifest-reduce-classes.json").read_text())["result"]["C"] == 8008


def test_crb_diff_compares_both_evaluators(tmp_path):
    cfg = write_config(tmp_path, {"geometry": {"kind": "URA", "rows": 3, "cols": 3, "spacing": 0.5},
                                  "selection": {"estimate": "joint", "theta_deg": 40.0}})
    out = tmp_path / "o"
    run_cli("crb-diff", "-c", cfg, "--out", str(out))
    rows = read_rows(out / "crb_diff.csv")
    assert len(rows) == 12
    for r in rows:
        assert float(r["kappa_theta_fim"]) > 0
        assert r["kappa_theta_cross"] == r["kappa_phi_cross"]


def test_reruns_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    outs = []
    for i, workers in enumerate((1, 3)):
        out = tmp_path / f"run{i}"
        sets = ["--set", f"dataset.workers={workers}", "--set", f"evaluation.workers={workers}"]
        for cmd in ("gen-data", "train", "evaluate", "select"):
            run_cli(cmd, "-c", cfg, "--out", str(out), *sets)
        outs.append(out)
    for name in ("dataset.bin", "model.bin", "training_log.csv", "rmse.csv", "selection.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_exit_codes_and_error_json(tmp_path, capsys):
    bad_yaml = tmp_path / "bad.yaml"
    bad_yaml.write_text("geometry: [unclosed\n")
    code, err = failing(capsys, "gen-data", "-c", str(bad_yaml))
    assert code == 2 and err["error"] == "parse"
    code, err = failing(capsys, "no-such-command")
    assert code == 2
    code, err = failing(capsys, "gen-data", "-c", write_config(tmp_path, {"dataset": {"Q": 1}}))
    assert code == 3 and err["error"] == "validation"
    code, err = failing(capsys, "gen-data", "-c", write_config(tmp_path, {"selection": {"K": 0}}))
    assert code == 3
    cfg = write_config(tmp_path)
    code, err = failing(capsys, "train", "-c", cfg, "--out", str(tmp_path / "empty"))
    assert code == 1 and err["error"] == "runtime"
    code, err = failing(capsys, "transfer", "-c", cfg, "--out", str(tmp_path / "x"))
    assert code == 3


def test_corrupt_dataset_is_a_runtime_error(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "o"
    run_cli("gen-data", "-c", cfg, "--out", str(out))
    blob = bytearray((out / "dataset.bin").read_bytes())
    blob[100] ^= 0xFF
    (out / "dataset.bin").write_bytes(bytes(blob))
    code, err = failing(capsys, "train", "-c", cfg, "--out", str(out))
    assert code == 1 and err["type"] == "ChecksumError"


def test_output_directory_precedence(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_config(tmp_path)
    monkeypatch.setenv("SPARSE_DOA_OUT", str(tmp_path / "env"))
    run_cli("crb-diff", "-c", cfg)
    assert (tmp_path / "env" / "crb_diff.csv").exists()
    cfg2 = write_config(tmp_path, {"output_dir": str(tmp_path / "fromcfg")}, "cfg2.yaml")
    run_cli("crb-diff", "-c", cfg2)
    assert (tmp_path / "fromcfg" / "crb_diff.csv").exists()
    run_cli("crb-diff", "-c", cfg2, "--out", str(tmp_path / "flag"))
    assert (tmp_path / "flag" / "crb_diff.csv").exists()
    monkeypatch.delenv("SPARSE_DOA_OUT")
    run_cli("crb-diff", "-c", cfg)
    assert (tmp_path / "out" / "crb_diff.csv").exists()


def test_set_and_seed_override(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "o"
    run_cli("gen-data", "-c", cfg, "--out", str(out), "--set", "dataset.P=2", "--seed", "11")
    m = json.loads((out / "manifest-gen-data.json").read_text())
    assert m["seed"] == 11 and m["result"]["N"] == 2 * 3 * 2


def test_atomic_write_leaves_no_partial_file(tmp_path, monkeypatch):
    target = tmp_path / "a.csv"
    target.write_text("old\n")

    def boom(src, dst):
        raise OSError("crash before rename")

    monkeypatch.setattr(io_utils.os, "replace", boom)
    with pytest.raises(OSError):
        io_utils.atomic_write_text(target, "new content\n")
    assert target.read_text() == "old\n"
    assert os.listdir(tmp_path) == ["a.csv"]


def write_csv(path, header, rows):
    path.write_text(io_utils.rows_to_csv(header, rows))
    return path


def test_rmse_plot_is_valid_svg(tmp_path):
    p = write_csv(tmp_path / "rmse.csv", ["sweep_value", "method", "rmse_deg", "failures", "J_T"],
                  [[0.0, "best_crb", 2.0, 0, 10], [10.0, "best_crb", 0.5, 0, 10],
                   [0.0, "random", 4.0, 0, 10], [10.0, "random", 1.5, 0, 10]])
    svg = emit_plot(p, "rmse_vs_snr")
    assert os.path.getsize(svg) > 0
    ET.parse(svg)
    assert open(svg, "rb").read() == open(emit_plot(p, "rmse_vs_snr"), "rb").read()


def test_empty_csv_is_a_schema_mismatch(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(SchemaMismatch):
        emit_plot(p, "rmse_vs_snr")
    q = write_csv(tmp_path / "wrong.csv", ["a", "b"], [[1, 2]])
    with pytest.raises(SchemaMismatch):
        emit_plot(q, "selection_histogram")


def test_layout_plot_parses_back_to_collinear_markers(tmp_path):
    from sparse_doa.geometry import make_geometry

    g = make_geometry("ULA", M=4, spacing=0.5)
    p = write_csv(tmp_path / "layout.csv", ["m", "x", "y"], [[m, x, y] for m, (x, y, _) in enumerate(g.positions)])
    svg = emit_plot(p, "array_layout")
    root = ET.parse(svg).getroot()
    ns = {"svg": "http://www.w3.org/2000/svg", "xlink": "http://www.w3.org/1999/xlink"}
    group = root.find(".//svg:g[@id='sensors']", ns)
    uses = group.findall(".//svg:use", ns)
    pts = np.array([[float(u.get("x")), float(u.get("y"))] for u in uses])
    assert pts.shape == (4, 2)
    assert np.ptp(pts[:, 1]) < 1e-6  # collinear on a horizontal line
    assert np.all(np.diff(pts[:, 0]) > 0)
    gaps = np.diff(pts[:, 0])
    assert np.allclose(gaps, gaps[0], rtol=1e-3)


def test_plot_subcommand_and_entry_point(tmp_path):
    p = write_csv(tmp_path / "hist.csv", ["index", "method", "percent"], [[0, "a", 50.0], [1, "a", 100.0]])
    assert run_cli("plot", str(p), "--kind", "selection_histogram", "-o", str(tmp_path / "h.svg")) == 0
    assert (tmp_path / "h.svg").exists()
    r = subprocess.run([sys.executable, "-m", "sparse_doa.cli", "plot", str(p), "--kind", "bogus"],
                       capture_output=True, text=True)
    assert r.returncode != 0 and json.loads(r.stderr.strip())["error"] in ("validation", "parse")
