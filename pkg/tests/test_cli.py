import json

import numpy as np
import pytest

from volwarp.cli import main
from volwarp.flows import save_script


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    code = main(
        [
            "gen-data",
            "--out",
            str(root),
            "--seed",
            "3",
            "--scenes",
            "5",
            "--views",
            "4",
            "--test-fraction",
            "0.2",
        ]
    )
    assert code == 0
    return root


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory, dataset_dir):
    out = tmp_path_factory.mktemp("run")
    code = main(
        ["train", "--data", str(dataset_dir), "--out", str(out), "--seed", "0", "--steps", "3"]
    )
    assert code == 0
    return out / "model.vbm"


class TestGenData:
    def test_layout(self, dataset_dir):
        manifest = json.loads((dataset_dir / "manifest.json").read_text())
        assert len(manifest["scenes"]) == 5
        scene0 = dataset_dir / "scenes" / "00000"
        assert (scene0 / "view_0.ppm").exists()
        assert (scene0 / "mask_0.pgm").exists()
        assert (scene0 / "poses.json").exists()
        assert (scene0 / "occupancy.vbv").exists()

    def test_identical_seeds_identical_bytes(self, tmp_path):
        for name in ("x", "y"):
            assert main(["gen-data", "--out", str(tmp_path / name), "--seed", "7", "--scenes", "2", "--views", "3"]) == 0
        for rel in sorted(p.relative_to(tmp_path / "x") for p in (tmp_path / "x").rglob("*") if p.is_file()):
            assert (tmp_path / "x" / rel).read_bytes() == (tmp_path / "y" / rel).read_bytes()


class TestTrain:
    def test_outputs(self, checkpoint):
        out = checkpoint.parent
        assert checkpoint.exists()
        config = json.loads((out / "config.json").read_text())
        assert config["weights"] == {"perceptual": 5.0, "ssim": 10.0, "adversarial": 0.05, "mask": 10.0}
        lines = (out / "loss_log.jsonl").read_text().splitlines()
        assert len(lines) == 3
        assert set(json.loads(lines[0])) == {"step", "L_R", "L_S", "L_M", "total"}

    def test_config_file_overrides(self, dataset_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"steps": 2, "batch_size": 1}))
        assert main(["train", "--data", str(dataset_dir), "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 0
        assert len((tmp_path / "o" / "loss_log.jsonl").read_text().splitlines()) == 2


class TestSynthReconManip:
    def test_synth_writes_image_and_volume(self, dataset_dir, checkpoint, tmp_path):
        code = main(
            [
                "synth",
                "--checkpoint",
                str(checkpoint),
                "--data",
                str(dataset_dir),
                "--scene",
                "0",
                "--inputs",
                "0,1",
                "--target-view",
                "2",
                "--out",
                str(tmp_path),
            ]
        )
        assert code == 0
        assert (tmp_path / "synth.png").exists()
        assert (tmp_path / "synth.vbv").exists()

    def test_synth_identity_pose_matches_autoencoded_input(self, dataset_dir, checkpoint, tmp_path):
        assert (
            main(
                [
                    "synth",
                    "--checkpoint",
                    str(checkpoint),
                    "--data",
                    str(dataset_dir),
                    "--scene",
                    "0",
                    "--inputs",
                    "0",
                    "--target-view",
                    "0",
                    "--out",
                    str(tmp_path),
                ]
            )
            == 0
        )
        from PIL import Image

        from volwarp.net import decode_image, encode, load_model
        from volwarp.scenes import load_dataset

        served = np.asarray(Image.open(tmp_path / "synth.png")) / 255.0
        model = load_model(checkpoint)
        scene = [s for s in load_dataset(dataset_dir) if s.scene_id == 0][0]
        direct = decode_image(model, encode(model, scene.views[0][1][..., :3]))[..., :3]
        assert np.abs(served - direct).max() <= 0.5 / 255 + 1e-9

    def test_recon_writes_iou_report(self, dataset_dir, checkpoint, tmp_path):
        code = main(
            [
                "recon",
                "--checkpoint",
                str(checkpoint),
                "--data",
                str(dataset_dir),
                "--extra",
                "2",
                "--mode",
                "regular",
                "--out",
                str(tmp_path),
                "--export-mesh",
            ]
        )
        assert code == 0
        report = json.loads((tmp_path / "iou.json").read_text())[0]
        assert {"mean_iou", "threshold", "per_scene", "views_added", "mode"} <= set(report)
        assert report["views_added"] == 2 and report["mode"] == "regular"
        assert (tmp_path / "iou.txt").exists()

    def test_manip_applies_script(self, dataset_dir, checkpoint, tmp_path):
        script = tmp_path / "script.json"
        save_script(
            script,
            [
                {"type": "stretch", "axis": "y", "a": -0.5, "b": 0.5},
                {"type": "twist", "alpha": 20.0, "split_y": 0.0},
            ],
        )
        code = main(
            [
                "manip",
                "--checkpoint",
                str(checkpoint),
                "--data",
                str(dataset_dir),
                "--scene",
                "1",
                "--inputs",
                "0",
                "--script",
                str(script),
                "--azimuth",
                "30",
                "--out",
                str(tmp_path),
                "--export-mesh",
            ]
        )
        assert code == 0
        assert (tmp_path / "manip.png").exists()
        assert (tmp_path / "manip.obj").exists()


class TestErrorsAndGradcheck:
    def test_unknown_subcommand_exits_2(self):
        assert main(["frobnicate"]) == 2

    def test_missing_dataset_exits_2(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2

    def test_bad_scene_exits_2(self, dataset_dir, checkpoint, tmp_path):
        code = main(
            [
                "synth",
                "--checkpoint",
                str(checkpoint),
                "--data",
                str(dataset_dir),
                "--scene",
                "99",
                "--out",
                str(tmp_path),
            ]
        )
        assert code == 2

    @pytest.mark.slow
    def test_gradcheck_passes(self, capsys):
        assert main(["gradcheck", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "max relative error" in out and "PASSED" in out
