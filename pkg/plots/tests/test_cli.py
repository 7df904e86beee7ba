import json

import pytest

from gmmplots.cli import main

from conftest import write_trajectory_ndjson


def test_heatmap_run(surface_file, tmp_path, capsys):
    out = tmp_path / "fig"
    assert main(["--input", str(surface_file), "--kind", "heatmap", "--out", str(out)]) == 0
    assert sorted(capsys.readouterr().out.split()) == ["joint.meta.json", "joint.png"]
    assert (out / "joint.png").is_file()


def test_animation_options_flow_through(tmp_path):
    traj = tmp_path / "t.ndjson"
    write_trajectory_ndjson(traj, iterations=range(0, 301, 50))
    out = tmp_path / "anim"
    rc = main(
        [
            "--input", str(traj),
            "--kind", "trajectory_animation",
            "--out", str(out),
            "--frames", "key",
            "--highlights", "50", "200",
            "--target-means", "0 0; 1 1",
        ]
    )
    assert rc == 0
    meta = json.loads((out / "animation.meta.json").read_text())
    assert meta["frames"] == [50, 200]
    assert meta["target_means"] == [[0.0, 0.0], [1.0, 1.0]]


def test_schema_mismatch_exits_2_naming_column(tmp_path, capsys):
    p = tmp_path / "eval.csv"
    p.write_text("iteration,loss,coverage\n0,1,2\n")
    assert main(["--input", str(p), "--kind", "coverage_curve", "--out", str(tmp_path / "x")]) == 2
    assert "column 2" in capsys.readouterr().err


def test_missing_input_exits_2(tmp_path, capsys):
    rc = main(["--input", str(tmp_path / "nope.csv"), "--kind", "heatmap", "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "not found" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_unknown_kind_is_usage_error(surface_file, tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["--input", str(surface_file), "--kind", "scatter", "--out", str(tmp_path)])
    assert e.value.code == 2


def test_bad_target_means_exits_2(tmp_path, capsys):
    traj = tmp_path / "t.ndjson"
    write_trajectory_ndjson(traj, iterations=[0, 100])
    rc = main(
        [
            "--input", str(traj),
            "--kind", "trajectory_animation",
            "--out", str(tmp_path / "x"),
            "--target-means", "0 zero; 1 1",
        ]
    )
    assert rc == 2
    assert "coordinate lists" in capsys.readouterr().err
