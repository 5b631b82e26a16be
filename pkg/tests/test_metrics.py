"""Metric oracles: analytic PSNR values, direct-formula SSIM, grid layout."""

import numpy as np
import pytest

from gradsr.metrics import (
    PSNR_SENTINEL_DB,
    EvalReport,
    emit_grid,
    gm_l1,
    psnr,
    ssim,
    to_luma,
)


def mse_loop_oracle(a, b):
    total = 0.0
    for x, y in zip(a.reshape(-1), b.reshape(-1)):
        total += (x - y) ** 2
    return total / a.size


def ssim_direct_oracle(a, b):
    """Per-window double-loop evaluation of the SSIM formula."""
    ya, yb = to_luma(a), to_luma(b)
    half = 5
    x = np.arange(11) - 5.0
    g = np.exp(-(x * x) / (2 * 1.5 * 1.5))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(ya.shape[0] - 10):
        for j in range(ya.shape[1] - 10):
            wa = ya[i:i + 11, j:j + 11]
            wb = yb[i:i + 11, j:j + 11]
            mua, mub = (w * wa).sum(), (w * wb).sum()
            va = (w * wa * wa).sum() - mua * mua
            vb = (w * wb * wb).sum() - mub * mub
            cov = (w * wa * wb).sum() - mua * mub
            vals.append(((2 * mua * mub + c1) * (2 * cov + c2))
                        / ((mua * mua + mub * mub + c1) * (va + vb + c2)))
    return float(np.mean(vals))


class TestPsnr:
    def test_identical_images_sentinel(self, rng):
        img = rng.random((16, 16, 3))
        assert psnr(img, img) == PSNR_SENTINEL_DB

    def test_uniform_one_lsb_offset(self):
        a = np.full((32, 32, 3), 0.5)
        b = a + 1.0 / 255.0
        expected = 20.0 * np.log10(255.0)
        assert psnr(a, b, border=4) == pytest.approx(expected, abs=1e-3)
        assert expected == pytest.approx(48.1308, abs=1e-3)

    def test_matches_loop_oracle(self, rng):
        a, b = rng.random((20, 20, 3)), rng.random((20, 20, 3))
        out = psnr(a, b, border=2)
        mse = mse_loop_oracle(a[2:-2, 2:-2], b[2:-2, 2:-2])
        assert out == pytest.approx(10 * np.log10(1 / mse), abs=1e-10)

    def test_symmetry(self, rng):
        a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_luma_convention_flag(self, rng):
        a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        assert psnr(a, b, channels="luma") != psnr(a, b, channels="rgb")

    def test_border_too_large_rejected(self, rng):
        with pytest.raises(ValueError):
            psnr(rng.random((8, 8, 1)), rng.random((8, 8, 1)), border=4)

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            psnr(rng.random((8, 8, 1)), rng.random((8, 9, 1)), border=0)


class TestSsim:
    def test_self_similarity_is_one(self, rng):
        img = rng.random((24, 24, 3))
        assert ssim(img, img) == 1.0

    def test_constant_images_luminance_term(self):
        v1, v2 = 0.3, 0.7
        a = np.full((16, 16, 1), v1)
        b = np.full((16, 16, 1), v2)
        c1 = 0.01 ** 2
        expected = (2 * v1 * v2 + c1) / (v1 * v1 + v2 * v2 + c1)
        assert ssim(a, b) == pytest.approx(expected, abs=1e-12)

    def test_matches_direct_formula_oracle(self, rng):
        for _ in range(20):
            a = rng.random((18, 18, 3))
            b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
            assert ssim(a, b) == pytest.approx(ssim_direct_oracle(a, b), abs=1e-8)

    def test_too_small_image_rejected(self, rng):
        with pytest.raises(ValueError):
            ssim(rng.random((8, 8, 1)), rng.random((8, 8, 1)))


class TestGmL1:
    def test_identical_zero(self, rng):
        img = rng.random((12, 12, 3))
        assert gm_l1(img, img) == 0.0

    def test_constant_shift_invisible(self, rng):
        img = rng.random((12, 12, 3)) * 0.5
        assert gm_l1(img, img + 0.3) < 1e-12

    def test_simultaneous_shift_invariant(self, rng):
        a, b = rng.random((12, 12, 1)) * 0.5, rng.random((12, 12, 1)) * 0.5
        assert gm_l1(a, b) == pytest.approx(gm_l1(a + 0.2, b + 0.2), abs=1e-12)

    def test_blur_increases_distance(self):
        row = np.zeros(32)
        row[16:] = 1.0
        sharp = np.tile(row, (32, 1))[:, :, None]
        ramp = np.clip((np.arange(32) - 12) / 8.0, 0, 1)
        blurry = np.tile(ramp, (32, 1))[:, :, None]
        assert gm_l1(blurry, sharp) > gm_l1(sharp * 0.95, sharp)
        assert gm_l1(blurry, sharp) > 0.0


class TestEmitGrid:
    def test_layout_contract(self, rng, tmp_path):
        imgs = [rng.random((64, 64, 3)) for _ in range(3)]
        p = tmp_path / "grid.png"
        emit_grid(imgs, ["a", "b", "c"], p)
        from gradsr.gradops import load_image
        grid = load_image(p)
        assert grid.shape[0] == 64
        assert grid.shape[1] == 3 * 64 + 2 * 4

    def test_empty_list_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_grid([], [], tmp_path / "x.png")

    def test_deterministic_bytes(self, rng, tmp_path):
        imgs = [rng.random((32, 32, 3))]
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        emit_grid(imgs, ["label"], p1)
        emit_grid(imgs, ["label"], p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_size_mismatch_rejected(self, rng, tmp_path):
        with pytest.raises(ValueError):
            emit_grid([rng.random((16, 16, 3)), rng.random((17, 16, 3))],
                      ["a", "b"], tmp_path / "x.png")


class TestEvalReport:
    def test_means_are_arithmetic(self):
        r = EvalReport()
        r.add("a", 30.0, 0.9, 0.01)
        r.add("b", 40.0, 0.7, 0.03)
        m = r.means()
        assert m["psnr"] == 35.0
        assert m["ssim"] == pytest.approx(0.8)
        assert m["gm_l1"] == pytest.approx(0.02)

    def test_text_table_and_jsonl(self):
        r = EvalReport()
        r.add("x.png", 31.5, 0.88, 0.02)
        table = r.to_text_table()
        assert "x.png" in table and "mean" in table
        lines = r.to_jsonl().strip().splitlines()
        assert len(lines) == 2
