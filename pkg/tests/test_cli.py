import csv

import numpy as np
import pytest

from oracles import rot_z
from spatflow import formats
from spatflow.cli import main
from spatflow.config import ProjectConfig
from spatflow.geometry import CameraModel
from spatflow.render import default_camera, render
from spatflow.target import load_cloud
from spatflow.trajectory import Track2DSet


@pytest.fixture
def scene(tmp_path):
    out = tmp_path / "scene"
    assert main(["synth", "--motion", "rotation", "--deg-per-frame", "5", "--frames", "8",
                 "--precision", "64", "-o", str(out)]) == 0
    return out


def test_synth_outputs(scene):
    trajs = formats.load_trajectories(scene / "trajectories.mmtj")
    truth = formats.load_prior(scene / "prior_gt.mmsp")
    assert trajs.n_frames == 8 and truth.n_frames == 8
    for tr in truth.components[0]:
        assert np.max(np.abs(tr.rotation - rot_z(5))) < 1e-12
    for t, tr in enumerate(truth.components[0]):
        assert np.allclose(tr.apply(trajs.positions[:, t]), trajs.positions[:, t + 1], atol=1e-12)
    cloud = load_cloud(scene / "source.ply")
    assert np.array_equal(cloud.positions, trajs.positions[:, 0])


def test_synth_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["synth", "--frames", "3"])
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err
    assert main(["synth", "--motion", "rotation", "--frames", "1", "-o", str(tmp_path)]) == 2


def test_extract_matches_truth(scene, tmp_path):
    out = tmp_path / "ex"
    assert main(["extract", "--trajectories", str(scene / "trajectories.mmtj"), "--normalize", "false",
                 "--precision", "64", "--output-dir", str(out)]) == 0
    prior = formats.load_prior(out / "prior.mmsp")
    truth = formats.load_prior(scene / "prior_gt.mmsp")
    for a, b in zip(prior.components[0], truth.components[0]):
        assert np.max(np.abs(a.matrix() - b.matrix())) < 1e-9


def test_extract_normalized_scales_translation(scene, tmp_path):
    out = tmp_path / "ex"
    assert main(["extract", "--trajectories", str(scene / "trajectories.mmtj"),
                 "--precision", "64", "--output-dir", str(out)]) == 0
    prior = formats.load_prior(out / "prior.mmsp")
    truth = formats.load_prior(scene / "prior_gt.mmsp")
    trajs = formats.load_trajectories(scene / "trajectories.mmtj")
    first = trajs.positions[:, 0]
    s = 1.0 / np.linalg.norm(first.max(0) - first.min(0))
    for a, b in zip(prior.components[0], truth.components[0]):
        assert np.max(np.abs(a.rotation - b.rotation)) < 1e-9
        assert np.max(np.abs(a.translation - s * b.translation)) < 1e-9


def test_extract_degenerate_component(tmp_path, capsys):
    from spatflow.trajectory import TrajectorySet

    line = np.outer(np.arange(6.0), [1.0, 0.5, 0.0])
    pos = np.stack([line, line + 0.2, line + 0.4], axis=1)
    formats.save_trajectories(tmp_path / "line.mmtj", TrajectorySet(pos, np.zeros(6, np.int64)))
    code = main(["extract", "--trajectories", str(tmp_path / "line.mmtj"), "--output-dir", str(tmp_path)])
    assert code == 3
    err = capsys.readouterr().err
    assert "[prior] DegenerateConfiguration" in err
    assert not (tmp_path / "prior.mmsp").exists()


def _tracks_scene(tmp_path, mask_value):
    w, h, t = 32, 24, 4
    rng = np.random.default_rng(0)
    uv = rng.uniform([2, 2], [w - 3, h - 3], size=(10, t, 2))
    formats.save_tracks(tmp_path / "tracks.mmtk", Track2DSet(uv, np.ones((10, t), bool), w, h))
    (tmp_path / "depth").mkdir()
    (tmp_path / "mask").mkdir()
    for i in range(t):
        formats.write_pgm(tmp_path / "depth" / f"{i:05d}.pgm", np.full((h, w), 2000 + 100 * i, np.uint16))
        formats.write_pbm(tmp_path / "mask" / f"{i:05d}.pbm", np.full((h, w), mask_value, bool))
    return ["--tracks", str(tmp_path / "tracks.mmtk"), "--depth-dir", str(tmp_path / "depth"),
            "--mask-dir", str(tmp_path / "mask"), "--output-dir", str(tmp_path / "out")]


def test_extract_from_tracks(tmp_path):
    assert main(["extract", *_tracks_scene(tmp_path, True)]) == 0
    assert formats.load_prior(tmp_path / "out" / "prior.mmsp").n_frames == 4


def test_extract_empty_foreground(tmp_path, capsys):
    assert main(["extract", *_tracks_scene(tmp_path, False)]) == 3
    assert "EmptyForeground" in capsys.readouterr().err


def _reference_frames(scene, tmp_path, width=96, height=96):
    """Frames of the ground-truth source motion, plus the camera file used."""
    trajs = formats.load_trajectories(scene / "trajectories.mmtj")
    cloud = load_cloud(scene / "source.ply")
    cam = default_camera(trajs.positions[:, 0], width, height)
    formats.write_cameras(tmp_path / "path.txt", [cam] * trajs.n_frames)
    frames = render(trajs.positions.transpose(1, 0, 2), cloud, cam)
    formats.write_frames(tmp_path / "ref", frames)
    return tmp_path / "path.txt", tmp_path / "ref"


def test_transfer_self_psnr(scene, tmp_path):
    assert main(["extract", "--trajectories", str(scene / "trajectories.mmtj"),
                 "--precision", "64", "--output-dir", str(scene)]) == 0
    path, ref = _reference_frames(scene, tmp_path)
    out = tmp_path / "tr"
    assert main(["transfer", "--prior", str(scene / "prior.mmsp"), "--target", str(scene / "source.ply"),
                 "--sweeps", "0", "--static-mode", "off", "--camera-path", str(path),
                 "--width", "96", "--height", "96", "--reference-dir", str(ref),
                 "--output-dir", str(out)]) == 0
    with open(out / "metrics.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 8
    assert np.mean([float(r["psnr_db"]) for r in rows]) >= 45.0
    assert min(float(r["ssim"]) for r in rows) >= 0.99


def test_transfer_speed_repeats(scene, tmp_path):
    main(["extract", "--trajectories", str(scene / "trajectories.mmtj"), "--precision", "64",
          "--output-dir", str(scene)])
    common = ["transfer", "--prior", str(scene / "prior.mmsp"), "--target", str(scene / "source.ply"),
              "--neighbors", "8", "--precision", "64", "--render", "false"]
    assert main([*common, "--output-dir", str(tmp_path / "a")]) == 0
    assert main([*common, "--speed", "2", "--repeats", "3", "--mode", "loop",
                 "--output-dir", str(tmp_path / "b")]) == 0
    base = formats.load_field(tmp_path / "a" / "field.mmvf").velocities
    fast = formats.load_field(tmp_path / "b" / "field.mmvf").velocities
    assert fast.shape[0] + 1 == (8 - 1) * 3 + 1
    assert np.allclose(fast, np.concatenate([2 * base] * 3), atol=1e-12)


def test_transfer_loss_csv(tmp_path):
    main(["synth", "--motion", "rotation", "--components", "2", "--n-points", "200", "-o", str(tmp_path / "s")])
    main(["extract", "--trajectories", str(tmp_path / "s" / "trajectories.mmtj"), "--output-dir", str(tmp_path / "s")])
    (tmp_path / "seeds.txt").write_text("150\n")
    code = main(["transfer", "--prior", str(tmp_path / "s" / "prior.mmsp"),
                 "--target", str(tmp_path / "s" / "source.ply"), "--seeds", str(tmp_path / "seeds.txt"),
                 "--neighbors", "8", "--render", "false", "--output-dir", str(tmp_path / "o")])
    assert code == 0
    with open(tmp_path / "o" / "loss.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["sweep", "t", "L_kin", "L_topo", "L_total"]
    assert len(rows) == 1 + 6 * 9
    assert (tmp_path / "o" / "boundary.txt").read_text().strip()


def test_transfer_short_camera_path(scene, tmp_path, capsys):
    main(["extract", "--trajectories", str(scene / "trajectories.mmtj"), "--output-dir", str(scene)])
    cam = CameraModel.from_params(64.0, 64.0, 32.0, 32.0, 64, 64)
    formats.write_cameras(tmp_path / "short.txt", [cam] * 3)
    code = main(["transfer", "--prior", str(scene / "prior.mmsp"), "--target", str(scene / "source.ply"),
                 "--camera-path", str(tmp_path / "short.txt"), "--width", "64", "--height", "64",
                 "--neighbors", "8", "--output-dir", str(tmp_path / "o")])
    assert code == 2
    assert "camera path" in capsys.readouterr().err


def test_transfer_removes_partial_outputs(scene, tmp_path):
    main(["extract", "--trajectories", str(scene / "trajectories.mmtj"), "--output-dir", str(scene)])
    (tmp_path / "ref").mkdir()
    formats.write_ppm(tmp_path / "ref" / "00000.ppm", np.zeros((64, 64, 3), np.uint8))
    out = tmp_path / "o"
    code = main(["transfer", "--prior", str(scene / "prior.mmsp"), "--target", str(scene / "source.ply"),
                 "--reference-dir", str(tmp_path / "ref"), "--width", "64", "--height", "64",
                 "--neighbors", "8", "--output-dir", str(out)])
    assert code == 3
    assert not (out / "field.mmvf").exists() and not (out / "frames").exists()


def test_component_count_mismatch(scene, tmp_path, capsys):
    main(["extract", "--trajectories", str(scene / "trajectories.mmtj"), "--output-dir", str(scene)])
    (tmp_path / "labels.txt").write_text("".join(f"{i % 2}\n" for i in range(300)))
    code = main(["transfer", "--prior", str(scene / "prior.mmsp"), "--target", str(scene / "source.ply"),
                 "--labels", str(tmp_path / "labels.txt"), "--output-dir", str(tmp_path / "o")])
    assert code == 3
    assert "LabelCountMismatch" in capsys.readouterr().err


def test_missing_path_is_validation_error(tmp_path):
    assert main(["transfer", "--prior", str(tmp_path / "nope.mmsp"), "--target", str(tmp_path / "x.ply"),
                 "--output-dir", str(tmp_path)]) == 2
    assert main(["transfer", "--output-dir", str(tmp_path)]) == 2
    assert main(["transfer", "--sweeps", "-1"]) == 2


def test_dump_config_round_trip(tmp_path, capsys):
    assert main(["transfer", "--speed", "2.5", "--background", "0,10,20", "--static-mode", "global",
                 "--dump-config"]) == 0
    text = capsys.readouterr().out
    (tmp_path / "c.ini").write_text(text)
    cfg = ProjectConfig.from_file(tmp_path / "c.ini")
    assert cfg.speed == 2.5 and cfg.background == (0, 10, 20) and cfg.static_mode == "global"
    assert main(["transfer", "--config", str(tmp_path / "c.ini"), "--dump-config"]) == 0
    assert capsys.readouterr().out == text
    # flags override the file
    assert main(["transfer", "--config", str(tmp_path / "c.ini"), "--speed", "1", "--dump-config"]) == 0
    assert "speed = 1.0" in capsys.readouterr().out


def test_bad_config_file(tmp_path):
    (tmp_path / "c.ini").write_text("[refine]\nspeed = 2\n")
    assert main(["transfer", "--config", str(tmp_path / "c.ini"), "--dump-config"]) == 2


def test_render_graph_dump_metrics(scene, tmp_path, capsys):
    main(["extract", "--trajectories", str(scene / "trajectories.mmtj"), "--output-dir", str(scene)])
    out = tmp_path / "o"
    base = ["--target", str(scene / "source.ply"), "--output-dir", str(out), "--width", "48", "--height", "48"]
    assert main(["transfer", "--prior", str(scene / "prior.mmsp"), "--neighbors", "8", *base]) == 0
    first = sorted((out / "frames").iterdir())[3].read_bytes()
    assert main(["render", *base]) == 0
    assert sorted((out / "frames").iterdir())[3].read_bytes() == first
    assert main(["graph-dump", "--neighbors", "3", *base]) == 0
    with open(out / "graph.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["i", "j", "sqdist"] and len(rows) > 300
    capsys.readouterr()
    assert main(["metrics", str(out / "frames"), str(out / "frames")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "frame,psnr_db,ssim" and lines[1].startswith("0,99.0,1.0")
