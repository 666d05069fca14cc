import json
from pathlib import Path

import numpy as np
import pytest

import boxmocap as bm
from boxmocap.cli import main

from conftest import hinge_session


def tree_snapshot(root: Path):
    return {str(p.relative_to(root)): p.read_bytes() for p in root.rglob("*") if p.is_file()}


@pytest.fixture
def capture_file(tmp_path):
    session, _ = hinge_session(frames=10)
    path = tmp_path / "capture.jsonl"
    path.write_text(bm.serialize_capture(session))
    return path


@pytest.fixture
def walk_pair(tmp_path):
    motion = bm.gen_procedural_motion("walk", bm.ProceduralConfig(frames=8, seed=2), 0)
    seq = bm.skeleton_to_boxes(motion, bm.part_grouping(bm.HUMANOID22, 4))
    mpath = tmp_path / "motion.json"
    bpath = tmp_path / "boxes.json"
    mpath.write_text(bm.serialize_motion(motion))
    bpath.write_text(bm.serialize_boxes(seq))
    return mpath, bpath


class TestExitCodes:
    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
        assert "invalid choice" in capsys.readouterr().err

    def test_unknown_flag_exits_2(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "a.json", "b.json", "--bogus"])
        assert exc.value.code == 2

    def test_help_exits_0(self, capsys):
        for argv in (["--help"], ["fit-boxes", "--help"], ["eval", "--help"]):
            with pytest.raises(SystemExit) as exc:
                main(argv)
            assert exc.value.code == 0
        assert "fit-boxes" in capsys.readouterr().out

    def test_missing_input_exits_1(self, tmp_path, capsys):
        rc = main(["fit-boxes", str(tmp_path / "nope.jsonl"), "-o", str(tmp_path / "out.json")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_domain_error_exits_1(self, tmp_path, capsys):
        bad = tmp_path / "capture.jsonl"
        bad.write_text("{not json\n")
        rc = main(["fit-boxes", str(bad), "-o", str(tmp_path / "out.json")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestFitBoxes:
    def test_writes_boxes_and_manifest_only(self, tmp_path, capture_file):
        out_dir = tmp_path / "out"
        out_dir.mkdir()
        before = tree_snapshot(tmp_path)
        rc = main(["fit-boxes", str(capture_file), "-o", str(out_dir / "boxes.json")])
        assert rc == 0
        after = tree_snapshot(tmp_path)
        new = sorted(set(after) - set(before))
        assert new == ["out/boxes.json", "out/boxes.json.manifest.json"]
        seq = bm.parse_boxes((out_dir / "boxes.json").read_text())
        assert seq.num_boxes == 2

    def test_idempotent_bitwise(self, tmp_path, capture_file):
        outs = []
        for name in ("a", "b"):
            d = tmp_path / name
            d.mkdir()
            assert main(["fit-boxes", str(capture_file), "-o", str(d / "boxes.json")]) == 0
            outs.append(d)
        assert (outs[0] / "boxes.json").read_bytes() == (outs[1] / "boxes.json").read_bytes()
        assert (outs[0] / "boxes.json.manifest.json").read_bytes() == (
            outs[1] / "boxes.json.manifest.json"
        ).read_bytes()

    def test_flag_overrides_config(self, tmp_path, capture_file):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"normalize": {"target_height": 1.0}}))
        out = tmp_path / "boxes.json"
        rc = main(
            ["fit-boxes", str(capture_file), "-o", str(out), "--config", str(cfg), "--target-height", "2.0"]
        )
        assert rc == 0
        manifest = json.loads((tmp_path / "boxes.json.manifest.json").read_text())
        assert manifest["config"]["normalize"]["target_height"] == 2.0

    def test_unknown_config_key_exits_1(self, tmp_path, capture_file, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"normalize": {"target_heigth": 1.0}}))
        rc = main(["fit-boxes", str(capture_file), "-o", str(tmp_path / "o.json"), "--config", str(cfg)])
        assert rc == 1
        assert "target_heigth" in capsys.readouterr().err


class TestKeyframes:
    def test_expand_counts(self, tmp_path, rng):
        from conftest import random_rotation

        # Interpolation keeps extents fixed per box track, so the keys must
        # share half_extents; only center and rotation vary.
        ext = np.array([0.3, 0.2, 0.1])
        frames = [
            [bm.BoxPose(center=rng.normal(size=3), rotation=random_rotation(rng), half_extents=ext)]
            for _ in range(3)
        ]
        keys = bm.BoxMotionSequence(fps=20.0, frames=frames)
        kpath = tmp_path / "keys.json"
        kpath.write_text(bm.serialize_boxes(keys))
        out = tmp_path / "full.json"
        rc = main(["keyframes", str(kpath), "--between", "3,3", "-o", str(out)])
        assert rc == 0
        seq = bm.parse_boxes(out.read_text())
        assert seq.num_frames == 9

    def test_bad_between_exits_2(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["keyframes", "k.json", "--between", "3,x", "-o", "o.json"])
        assert exc.value.code == 2


class TestEval:
    def test_prints_exact_keys_and_writes_nothing(self, tmp_path, walk_pair, capsys):
        mpath, bpath = walk_pair
        before = tree_snapshot(tmp_path)
        rc = main(["eval", str(mpath), str(bpath)])
        assert rc == 0
        assert tree_snapshot(tmp_path) == before
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 1
        doc = json.loads(out[0])
        assert set(doc) == {"containment_rate", "mean_center_dist", "guidance_loss"}
        assert doc["containment_rate"] == 1.0  # boxes fitted from this very motion
        assert doc["mean_center_dist"] >= 0.0

    def test_frame_mismatch_exits_1(self, tmp_path, walk_pair, capsys):
        mpath, bpath = walk_pair
        motion = bm.parse_motion(mpath.read_text())
        short = bm.SkeletonMotion(fps=motion.fps, joints=motion.joints[:-1], label=motion.label)
        mpath.write_text(bm.serialize_motion(short))
        assert main(["eval", str(mpath), str(bpath)]) == 1
        assert "error:" in capsys.readouterr().err


class TestPipeline:
    def test_synth_train_generate_eval(self, tmp_path, capsys):
        ds_cfg = tmp_path / "dataset_cfg.json"
        ds_cfg.write_text(
            json.dumps(
                {
                    "procedural": {"num_sequences": 1, "frames": 8, "seed": 7},
                    "augment": {"p_drop_label": 0.0, "p_drop_box": 0.0, "p_jitter": 0.0},
                    "levels": [4],
                }
            )
        )
        ds_dir = tmp_path / "ds"
        assert main(["synth-dataset", str(ds_cfg), "-o", str(ds_dir)]) == 0
        assert (ds_dir / "dataset.json").exists()
        assert (ds_dir / "run_manifest.json").exists()

        train_cfg = tmp_path / "train_cfg.json"
        train_cfg.write_text(
            json.dumps(
                {
                    "diffusion": {"steps": 10, "d_model": 16, "layers": 1, "heads": 2},
                    "train": {
                        "phase_a_steps": 40,
                        "phase_b_steps": 10,
                        "batch_size": 8,
                        "encoder_hidden": 8,
                        "seed": 0,
                    },
                }
            )
        )
        ckpt = tmp_path / "ckpt"
        assert main(["train", str(ds_dir), "-o", str(ckpt), "--config", str(train_cfg)]) == 0
        assert (ckpt / "manifest.json").exists()
        assert (ckpt / "params.bin").exists()
        assert (ckpt / "loss_curve.json").exists()
        assert (ckpt / "run_manifest.json").exists()

        motion = bm.gen_procedural_motion("walk", bm.ProceduralConfig(frames=8, seed=77), 0)
        seq = bm.skeleton_to_boxes(motion, bm.part_grouping(bm.HUMANOID22, 4))
        boxes = tmp_path / "target_boxes.json"
        boxes.write_text(bm.serialize_boxes(seq))

        guided_out = tmp_path / "guided.json"
        rc = main(
            ["generate", str(ckpt), "--boxes", str(boxes), "--label", "walk", "--seed", "5", "-o", str(guided_out)]
        )
        assert rc == 0
        baseline_out = tmp_path / "baseline.json"
        rc = main(["generate", str(ckpt), "--label", "walk", "--seed", "5", "-o", str(baseline_out)])
        assert rc == 0
        capsys.readouterr()

        assert main(["eval", str(guided_out), str(boxes)]) == 0
        guided = json.loads(capsys.readouterr().out)
        assert main(["eval", str(baseline_out), str(boxes)]) == 0
        unguided = json.loads(capsys.readouterr().out)
        assert guided["containment_rate"] >= unguided["containment_rate"]

    def test_generate_idempotent(self, tmp_path):
        items = []
        motion = bm.gen_procedural_motion("idle", bm.ProceduralConfig(frames=8, seed=1), 0)
        seq = bm.skeleton_to_boxes(motion, bm.part_grouping(bm.HUMANOID22, 1))
        items.append((seq, motion, "idle"))
        from boxmocap.checkpoint import save_checkpoint
        from boxmocap.diffusion import DiffusionConfig, train_model

        cfg = DiffusionConfig(steps=10, d_model=16, layers=1, heads=2, frames=8, joints=22)
        bundle, _ = train_model(items, cfg, phase_a_steps=5, phase_b_steps=5, seed=0, encoder_hidden=8)
        ckpt = tmp_path / "ckpt"
        save_checkpoint(bundle, ckpt)

        outs = []
        for name in ("m1.json", "m2.json"):
            out = tmp_path / name
            assert main(["generate", str(ckpt), "--label", "idle", "--seed", "9", "-o", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        m1 = json.loads((tmp_path / "m1.json.manifest.json").read_text())
        m2 = json.loads((tmp_path / "m2.json.manifest.json").read_text())
        assert m1 == m2

    def test_train_dataset_json_path_accepted(self, tmp_path):
        ds_cfg = tmp_path / "cfg.json"
        ds_cfg.write_text(
            json.dumps(
                {
                    "procedural": {"num_sequences": 1, "frames": 8, "seed": 3},
                    "augment": {},
                    "levels": [1],
                }
            )
        )
        ds_dir = tmp_path / "ds"
        assert main(["synth-dataset", str(ds_cfg), "-o", str(ds_dir)]) == 0
        ckpt = tmp_path / "ckpt"
        rc = main(
            [
                "train", str(ds_dir / "dataset.json"), "-o", str(ckpt),
                "--steps", "10", "--d-model", "16", "--layers", "1", "--heads", "2",
                "--phase-a-steps", "5", "--phase-b-steps", "5",
                "--batch-size", "4", "--encoder-hidden", "8",
            ]
        )
        assert rc == 0
        manifest = json.loads((ckpt / "run_manifest.json").read_text())
        assert manifest["config"]["diffusion"]["steps"] == 10
