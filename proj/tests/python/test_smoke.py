import numpy as np
import pytest

import tskd


def test_dice_and_miou_match_counting():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 3, (16, 16)).astype(np.int32)
    b = rng.integers(0, 3, (16, 16)).astype(np.int32)
    pa, pb = a == 1, b == 1
    assert tskd.dice(a, b, 1) == pytest.approx(2 * (pa & pb).sum() / (pa.sum() + pb.sum()))
    ious = [((a == c) & (b == c)).sum() / ((a == c) | (b == c)).sum() for c in (1, 2)]
    assert tskd.miou(a, b, 3) == pytest.approx(np.mean(ious))


def test_hd95_identity_and_empty():
    m = np.zeros((8, 8), np.int32)
    m[2:5, 2:6] = 1
    assert tskd.hd95(m, m) == 0.0
    assert tskd.hd95(m, np.zeros_like(m)) is None


def test_psnr_law():
    assert 27.69 <= tskd.psnr_from_mse(109.4084, 255.0) <= 27.80


def test_presets_expose_table_weights():
    assert "TS-KD8" in tskd.distillation_presets()
    assert tskd.distillation("TS-KD8")["weights"] == "MSE weight: 0.2; Hidden Loss weight: 0.1"
    assert tskd.config(desk=True)["distillation"] == "TS-KD8"


def test_shapes_and_schedule():
    img, mask = tskd.make_shapes_sample("target", 1, 0, 32)
    assert img.shape == (32, 32) and mask.shape == (32, 32)
    assert 0.0 <= img.min() and img.max() <= 1.0
    assert set(np.unique(mask)) <= {0, 1, 2}
    s = tskd.DiffusionSchedule.linear(50)
    snr = [s.snr(t) for t in range(1, 51)]
    assert all(x > y for x, y in zip(snr, snr[1:]))


def test_cli_exit_codes(tmp_path):
    assert tskd.run_cli(["no-such-command"]) == 2
    assert tskd.run_cli(["make-shapes", "-w", str(tmp_path), "--count", "4", "--test-count", "2"]) == 0
    assert (tmp_path / "data" / "target" / "train").is_dir()
