"""End-to-end subcommand checks through the argparse entry point."""

import json

import numpy as np
import pytest

from gradsr.cli import canonical_config_text, main, resolve_run_config
from gradsr.data import synth_dataset
from gradsr.gradops import load_image, save_image
from gradsr.nn import load_checkpoint

TINY = [
    "--set", "gen.num_rrdb=2", "--set", "gen.base_channels=8",
    "--set", "gen.growth_channels=4", "--set", "gen.tap_indices=1,2",
    "--set", "data.lr_patch=8", "--set", "data.batch=2",
    "--set", "train.disc_base_channels=4", "--set", "train.disc_num_downsamples=2",
    "--set", "train.checkpoint_interval=2",
]


@pytest.fixture(scope="module")
def hr_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli_hr")
    synth_dataset("edges", n=2, size=48, seed=4, out_dir=d)
    return d


@pytest.fixture(scope="module")
def tiny_ckpt(tmp_path_factory, hr_dir):
    """A 2-step training run shared by the infer/eval tests."""
    run = tmp_path_factory.mktemp("cli_run")
    rc = main(["train", "--run-dir", str(run), "--hr-dir", str(hr_dir),
               "--seed", "5", "--steps", "2", "--pretrain-steps", "2"] + TINY)
    assert rc == 0
    return run / "ckpt_0000002.ckpt"


class TestSynthData:
    def test_writes_files(self, tmp_path):
        rc = main(["synth-data", "--kind", "checker", "--n", "3",
                   "--size", "32", "--seed", "1", "--out", str(tmp_path / "d")])
        assert rc == 0
        assert len(list((tmp_path / "d").glob("*.png"))) == 3

    def test_bad_kind_is_usage_error(self, tmp_path):
        rc = main(["synth-data", "--kind", "noise", "--out", str(tmp_path)])
        assert rc == 1


class TestConfigResolution:
    def test_file_plus_overrides(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("train.seed = 9\nloss.beta_gm = 0.02  # comment\n")
        cfg = resolve_run_config(cfg_file, ["train.seed=11", "gen.num_rrdb=3",
                                            "gen.tap_indices=1,3"])
        assert cfg.seed == 11
        assert cfg.weights.beta_gm == 0.02
        assert cfg.gen.num_rrdb == 3

    def test_unknown_key_rejected(self):
        from gradsr.cli import UserError
        with pytest.raises(UserError):
            resolve_run_config(None, ["gen.bogus=1"])

    def test_canonical_text_round_trips(self, tmp_path):
        cfg = resolve_run_config(None, ["train.seed=4", "gen.num_rrdb=3",
                                        "gen.tap_indices=1,3",
                                        "train.clip_grad_norm=2.5"])
        text = canonical_config_text(cfg)
        cfg_file = tmp_path / "c.cfg"
        cfg_file.write_text(text)
        again = resolve_run_config(cfg_file, [])
        assert canonical_config_text(again) == text


class TestTrainCommand:
    def test_steps_zero_writes_init_checkpoint(self, tmp_path, hr_dir):
        run = tmp_path / "run0"
        rc = main(["train", "--run-dir", str(run), "--hr-dir", str(hr_dir),
                   "--steps", "0"] + TINY)
        assert rc == 0
        ckpt = load_checkpoint(run / "ckpt_0000000.ckpt")
        assert ckpt.step == 0
        assert (run / "config.txt").exists()

    def test_short_run_produces_artifacts(self, tiny_ckpt):
        run = tiny_ckpt.parent
        assert tiny_ckpt.exists()
        assert (run / "train_log.jsonl").exists()
        assert (run / "pretrain.ckpt").exists()
        assert list((run / "samples").glob("*.png"))

    def test_rerun_same_seed_identical_loss_log(self, tmp_path, hr_dir):
        args = ["--hr-dir", str(hr_dir), "--seed", "5", "--steps", "2",
                "--pretrain-steps", "1"] + TINY
        r1, r2 = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--run-dir", str(r1)] + args) == 0
        assert main(["train", "--run-dir", str(r2)] + args) == 0
        assert (r1 / "train_log.jsonl").read_bytes() == (r2 / "train_log.jsonl").read_bytes()

    def test_ablation_no_gb_removes_branch_params(self, tmp_path, hr_dir):
        run = tmp_path / "nogb"
        rc = main(["train", "--run-dir", str(run), "--hr-dir", str(hr_dir),
                   "--steps", "0", "--ablation", "no-gb"] + TINY)
        assert rc == 0
        ckpt = load_checkpoint(run / "ckpt_0000000.ckpt")
        assert all(not k.startswith("gen.grad_branch.") for k in ckpt.arrays)

    def test_missing_data_dir_is_user_error(self, tmp_path):
        rc = main(["train", "--run-dir", str(tmp_path / "x"),
                   "--hr-dir", str(tmp_path / "does-not-exist"),
                   "--steps", "1", "--pretrain-steps", "0"] + TINY)
        assert rc == 1


class TestInferCommand:
    def test_writes_sr_and_gradient_map(self, tmp_path, tiny_ckpt, rng):
        in_dir = tmp_path / "in"
        in_dir.mkdir()
        save_image(rng.random((16, 16, 3)), in_dir / "img.png")
        out_dir = tmp_path / "out"
        rc = main(["infer", str(tiny_ckpt), str(in_dir), str(out_dir)])
        assert rc == 0
        sr = load_image(out_dir / "img.png")
        assert sr.shape == (64, 64, 3)
        assert (out_dir / "img_gradmap.png").exists()

    def test_zero_grad_features_changes_output(self, tmp_path, tiny_ckpt, rng):
        in_dir = tmp_path / "in"
        in_dir.mkdir()
        save_image(rng.random((16, 16, 3)), in_dir / "img.png")
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["infer", str(tiny_ckpt), str(in_dir), str(out_a)]) == 0
        assert main(["infer", str(tiny_ckpt), str(in_dir), str(out_b),
                     "--zero-grad-features"]) == 0
        img_a = load_image(out_a / "img.png")
        img_b = load_image(out_b / "img.png")
        assert not np.array_equal(img_a, img_b)
        # the emitted gradient map is untouched by the fusion probe
        assert np.array_equal(load_image(out_a / "img_gradmap.png"),
                              load_image(out_b / "img_gradmap.png"))

    def test_too_small_file_skipped_but_batch_continues(self, tmp_path, tiny_ckpt, rng):
        in_dir = tmp_path / "in"
        in_dir.mkdir()
        save_image(rng.random((4, 4, 3)), in_dir / "small.png")
        save_image(rng.random((16, 16, 3)), in_dir / "ok.png")
        out_dir = tmp_path / "out"
        rc = main(["infer", str(tiny_ckpt), str(in_dir), str(out_dir)])
        assert rc == 0
        assert (out_dir / "ok.png").exists()
        assert not (out_dir / "small.png").exists()

    def test_bad_checkpoint_is_user_error(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"nonsense")
        rc = main(["infer", str(bad), str(tmp_path), str(tmp_path / "o")])
        assert rc == 1


class TestExtractGradCommand:
    def test_constant_image_uniform_output(self, tmp_path):
        in_dir = tmp_path / "in"
        in_dir.mkdir()
        save_image(np.full((16, 16, 3), 0.5), in_dir / "flat.png")
        out_dir = tmp_path / "out"
        assert main(["extract-grad", str(in_dir), str(out_dir)]) == 0
        out = load_image(out_dir / "flat.png")
        assert np.all(out == out[0, 0])

    def test_step_edge_band_location(self, tmp_path):
        img = np.zeros((16, 16, 3))
        img[:, 8:, :] = 1.0
        in_dir = tmp_path / "in"
        in_dir.mkdir()
        save_image(img, in_dir / "step.png")
        out_dir = tmp_path / "out"
        assert main(["extract-grad", str(in_dir), str(out_dir)]) == 0
        gmap = load_image(out_dir / "step.png")
        band = gmap[:, 7:9, 0]
        elsewhere = gmap[:, :6, 0]
        assert band.min() > 0.9
        assert elsewhere.max() < 0.1

    def test_idempotent_bytes(self, tmp_path, rng):
        in_dir = tmp_path / "in"
        in_dir.mkdir()
        save_image(rng.random((12, 12, 3)), in_dir / "x.png")
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["extract-grad", str(in_dir), str(out1)]) == 0
        assert main(["extract-grad", str(in_dir), str(out2)]) == 0
        assert (out1 / "x.png").read_bytes() == (out2 / "x.png").read_bytes()


class TestEvalCommand:
    def test_identical_dirs_sentinel_values(self, tmp_path, rng, capsys):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        d1.mkdir(), d2.mkdir()
        img = rng.random((32, 32, 3))
        save_image(img, d1 / "x.png")
        save_image(img, d2 / "x.png")
        out = tmp_path / "r.jsonl"
        rc = main(["eval", str(d1), str(d2), "--out", str(out)])
        assert rc == 0
        rows = [json.loads(ln) for ln in out.read_text().strip().splitlines()]
        mean = [r for r in rows if r["name"] == "__mean__"][0]
        assert mean["psnr"] == 99.0
        assert mean["ssim"] == 1.0
        assert mean["gm_l1"] == 0.0

    def test_unpaired_listed_and_rest_evaluated(self, tmp_path, rng, capsys):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        d1.mkdir(), d2.mkdir()
        img = rng.random((32, 32, 3))
        save_image(img, d1 / "x.png")
        save_image(img, d2 / "x.png")
        save_image(img, d1 / "lonely.png")
        rc = main(["eval", str(d1), str(d2)])
        assert rc == 0
        assert "lonely.png" in capsys.readouterr().err

    def test_zero_pairs_is_error(self, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        d1.mkdir(), d2.mkdir()
        assert main(["eval", str(d1), str(d2)]) == 1


class TestReportCommand:
    def test_renders_curves_and_summary(self, tiny_ckpt, capsys):
        run = tiny_ckpt.parent
        rc = main(["report", str(run)])
        assert rc == 0
        assert (run / "loss_curves.png").exists()
        assert "tail means" in capsys.readouterr().out

    def test_empty_run_dir_is_user_error(self, tmp_path):
        assert main(["report", str(tmp_path)]) == 1
