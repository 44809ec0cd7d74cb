import json

import numpy as np
import pytest

from flock import cli
from flock.dynamics import read_trajectory
from flock.ensemble import AtomicMeasure


def write(path, obj):
    path.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return path


def base_config(tmp_path, **kw):
    cfg = {"weight": "singular", "alpha": 0.25, "t_end": 1.0, "output_dir": str(tmp_path / "out")}
    cfg.update(kw)
    return cfg


def test_distance_of_identical_files(tmp_path, capsys):
    p = write(tmp_path / "a.json", AtomicMeasure([[0.0, 1.0], [2.0, 3.0]], [0.5, 0.5]).to_dict())
    assert cli.main(["distance", str(p), str(p)]) == 0
    assert capsys.readouterr().out.strip() == "0.000000000000"


def test_distance_accepts_ensemble_files(tmp_path, capsys):
    a = write(tmp_path / "a.json", {"dim": 1, "masses": [1.0], "positions": [0.0], "velocities": [0.0]})
    b = write(tmp_path / "b.json", {"points": [[0.5, 0.0]], "weights": [1.0]})
    assert cli.main(["distance", str(a), str(b)]) == 0
    assert capsys.readouterr().out.strip() == "0.500000000000"


def test_distance_missing_file(tmp_path):
    assert cli.main(["distance", str(tmp_path / "no.json"), str(tmp_path / "no.json")]) == cli.EXIT_CONFIG


def test_simulate_single_particle(tmp_path):
    cfg = write(tmp_path / "c.json", base_config(tmp_path, atoms=[{"m": 2.0, "x": [1.0], "v": [0.5]}]))
    assert cli.main(["simulate", str(cfg)]) == 0
    out = tmp_path / "out"
    tr = read_trajectory(out / "trajectory.json")
    for s in tr.snapshots:
        assert s.masses[0] == 1.0
        np.testing.assert_allclose(s.positions[0, 0], 1.0 + 0.5 * s.time, atol=1e-14)
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["dissipation_p"] == 0.0
    assert not (out / "simulate.failed").exists()


def test_simulate_is_byte_identical(tmp_path):
    files = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        cfg = write(tmp_path / f"c{k}.json", base_config(tmp_path, random_cloud=12, seed=4, output_dir=str(out)))
        assert cli.main(["simulate", str(cfg)]) == 0
        files.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert files[0] == files[1]


def test_seed_changes_random_cloud(tmp_path):
    a = cli.config_from_dict(base_config(tmp_path, random_cloud=5, seed=1))
    b = cli.config_from_dict(base_config(tmp_path, random_cloud=5, seed=2))
    assert not a.source.same_as(b.source)


def test_output_dir_override(tmp_path):
    cfg = write(tmp_path / "c.json", base_config(tmp_path, atoms=[{"m": 1, "x": [0], "v": [0]}]))
    assert cli.main(["simulate", str(cfg), "--output-dir", str(tmp_path / "elsewhere")]) == 0
    assert (tmp_path / "elsewhere" / "trajectory.json").exists()


def test_parse_error_reports_line_and_column(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", '{"t_end": 1,\n "atoms": [}\n')
    assert cli.main(["simulate", str(cfg)]) == cli.EXIT_CONFIG
    assert "line 2, column 12" in capsys.readouterr().err


@pytest.mark.parametrize("patch, needle", [
    ({"bogus": 1}, "'bogus'"),
    ({"atoms": None}, "exactly one"),
    ({"random_cloud": 4}, "exactly one"),
    ({"alpha": 0.7}, "weight"),
    ({"weight": "capped"}, "'cap'"),
    ({"rel_tol": -1}, "tolerances"),
    ({"atoms": [{"m": 1, "x": [0]}]}, "atoms"),
    ({"atoms": [], "t_end": 1}, "atoms"),
])
def test_config_errors_name_the_field(tmp_path, capsys, patch, needle):
    raw = base_config(tmp_path, atoms=[{"m": 1, "x": [0], "v": [0]}])
    raw.update(patch)
    if patch.get("atoms", 0) is None:
        del raw["atoms"]
    cfg = write(tmp_path / "c.json", raw)
    assert cli.main(["simulate", str(cfg)]) == cli.EXIT_CONFIG
    assert needle in capsys.readouterr().err


def test_missing_t_end(tmp_path, capsys):
    raw = base_config(tmp_path, atoms=[{"m": 1, "x": [0], "v": [0]}])
    del raw["t_end"]
    assert cli.main(["simulate", str(write(tmp_path / "c.json", raw))]) == cli.EXIT_CONFIG
    assert "t_end" in capsys.readouterr().err


def test_runtime_failure_leaves_marker(tmp_path):
    # co-located atoms with distinct velocities under the singular weight
    raw = base_config(tmp_path, atoms=[{"m": 1, "x": [0], "v": [1]}, {"m": 1, "x": [0], "v": [-1]}])
    assert cli.main(["simulate", str(write(tmp_path / "c.json", raw))]) == cli.EXIT_FAILED
    marker = tmp_path / "out" / "simulate.failed"
    assert "CollisionAtSingularity" in marker.read_text()


def test_samples_file_needs_h(tmp_path):
    (tmp_path / "s.csv").write_text("x0,v0,w\n0.1,0.2,1\n0.4,0.1,2\n")
    raw = base_config(tmp_path, samples_file="s.csv")
    cfg = write(tmp_path / "c.json", raw)
    assert cli.main(["simulate", str(cfg)]) == cli.EXIT_CONFIG
    assert (tmp_path / "out" / "simulate.failed").exists()
    raw["h"] = 0.01
    write(tmp_path / "c.json", raw)
    assert cli.main(["simulate", str(cfg)]) == 0
    assert not (tmp_path / "out" / "simulate.failed").exists()
    tr = read_trajectory(tmp_path / "out" / "trajectory.json")
    np.testing.assert_allclose(tr.snapshots[0].masses, [1 / 3, 2 / 3])


def test_converge_writes_tables(tmp_path):
    raw = base_config(tmp_path, weight="capped", cap=100.0, t_end=0.5, rel_tol=1e-4, abs_tol=1e-6,
                      density="uniform", box_lo=[0, 0], box_hi=[1, 1], h_list=[0.5, 0.25, 0.125],
                      sample_times=[0.0, 0.5], caps=[10.0, 1000.0])
    assert cli.main(["converge", str(write(tmp_path / "c.json", raw))]) == 0
    out = tmp_path / "out"
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0] == "h,N,D" and len(lines) == 4
    assert (out / "caps.csv").read_text().splitlines()[0] == "cap_a,cap_b,deviation,window_end"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["all_passed"] and summary["checks"]["D_decreasing"]


def test_converge_rejects_atoms(tmp_path):
    raw = base_config(tmp_path, atoms=[{"m": 1, "x": [0], "v": [0]}], h_list=[0.5, 0.25])
    assert cli.main(["converge", str(write(tmp_path / "c.json", raw))]) == cli.EXIT_CONFIG


def test_verify_exit_code_follows_results(tmp_path, monkeypatch):
    from flock import acceptance

    def fake(fast=False, echo=None):
        return [acceptance.CriterionResult(1, "a", True, 0.0, "x"),
                acceptance.CriterionResult(2, "b", flag, 1.0, "y")]

    monkeypatch.setattr(acceptance, "run_all", fake)
    for flag, code in ((True, 0), (False, 1)):
        out = tmp_path / f"v{flag}.json"
        assert cli.main(["verify", "--fast", "--output", str(out)]) == code
        assert json.loads(out.read_text())["all_passed"] is flag


def test_bundled_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    for p in sorted(root.glob("*.json")):
        cli.load_config(p)
