import numpy as np
import pytest

from drt.tensor import ShapeError, Tensor
from drt.imaging import (
    ImagePair,
    RainParams,
    load_image,
    psnr,
    read_pair_manifest,
    save_image,
    ssim,
    synthesize_rain,
    write_pair_manifest,
)

from oracles import make_clean_image, psnr_np, ssim_np


# ----------------------------------------------------------------------
# file I/O
# ----------------------------------------------------------------------

def test_save_load_roundtrip_on_quantized_grid(tmp_path):
    rng = np.random.default_rng(0)
    levels = rng.integers(0, 256, size=(3, 9, 7))
    t = (levels / 255.0).astype(np.float32)
    path = tmp_path / "img.png"
    save_image(path, t)
    back = load_image(path)
    assert np.array_equal(back.data, t)


def test_load_all_black(tmp_path):
    path = tmp_path / "black.png"
    save_image(path, np.zeros((3, 5, 5), np.float32))
    assert np.all(load_image(path).data == 0.0)


def test_load_known_pixels(tmp_path):
    # hand-authored 2x2 fixture: distinct per-channel byte values
    from PIL import Image

    arr = np.array(
        [[[255, 0, 0], [0, 255, 0]],
         [[0, 0, 255], [10, 20, 30]]], dtype=np.uint8
    )
    path = tmp_path / "known.png"
    Image.fromarray(arr, mode="RGB").save(path)
    t = load_image(path)
    assert t.shape == (3, 2, 2)
    assert t.data[0, 0, 0] == pytest.approx(1.0)
    assert t.data[1, 0, 1] == pytest.approx(1.0)
    assert t.data[2, 1, 0] == pytest.approx(1.0)
    assert np.allclose(t.data[:, 1, 1], np.array([10, 20, 30]) / 255.0)


def test_load_converts_grayscale(tmp_path):
    from PIL import Image

    path = tmp_path / "gray.png"
    Image.fromarray(np.full((4, 4), 128, np.uint8), mode="L").save(path)
    t = load_image(path)
    assert t.shape == (3, 4, 4)
    assert np.allclose(t.data, 128 / 255.0)


def test_save_clamps_out_of_range(tmp_path):
    t = np.array([[[-0.5, 2.0]]] * 3, dtype=np.float32)
    path = tmp_path / "clamp.png"
    save_image(path, t)
    back = load_image(path).data
    assert np.all(back[:, 0, 0] == 0.0)
    assert np.all(back[:, 0, 1] == 1.0)


def test_load_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_image(tmp_path / "nope.png")


# ----------------------------------------------------------------------
# rain synthesis
# ----------------------------------------------------------------------

def test_rain_zero_intensity_is_identity():
    clean = make_clean_image(0, 32, 32)
    pair = synthesize_rain(clean, RainParams(intensity=(0.0, 0.0), seed=1))
    assert np.array_equal(pair.degraded.data, clean)


def test_rain_deterministic_per_seed():
    clean = make_clean_image(1, 32, 32)
    a = synthesize_rain(clean, RainParams(seed=5))
    b = synthesize_rain(clean, RainParams(seed=5))
    c = synthesize_rain(clean, RainParams(seed=6))
    assert np.array_equal(a.degraded.data, b.degraded.data)
    assert not np.array_equal(a.degraded.data, c.degraded.data)


def test_rain_never_darkens():
    for seed in range(5):
        clean = make_clean_image(seed, 48, 48)
        pair = synthesize_rain(clean, RainParams(seed=seed))
        assert np.all(pair.degraded.data >= pair.clean.data - 1e-7)


def test_rain_pairs_satisfy_invariants():
    for seed in range(5):
        clean = make_clean_image(seed + 10, 24, 40)
        pair = synthesize_rain(clean, RainParams(seed=seed))
        pair.validate()
        assert pair.degraded.data.max() <= 1.0
        assert pair.degraded.data.min() >= 0.0


def test_rain_default_psnr_band():
    # default parameters on a 64x64 mid-gray image stay in the 18-30 dB band
    clean = np.full((3, 64, 64), 0.5, dtype=np.float32)
    for seed in range(100):
        pair = synthesize_rain(clean, RainParams(seed=seed))
        value = psnr(pair.degraded, pair.clean)
        assert 18.0 <= value <= 30.0, f"seed {seed}: {value:.2f} dB"


# ----------------------------------------------------------------------
# PSNR
# ----------------------------------------------------------------------

def test_psnr_identical_returns_cap():
    x = make_clean_image(2, 16, 16)
    assert psnr(x, x.copy()) == 100.0


def test_psnr_uniform_offset_is_20db():
    a = np.full((3, 8, 8), 0.3, dtype=np.float64)
    b = a + 0.1
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


def test_psnr_matches_one_line_oracle():
    rng = np.random.default_rng(3)
    a = rng.random((3, 12, 12))
    b = rng.random((3, 12, 12))
    assert psnr(a, b) == pytest.approx(psnr_np(a, b), abs=1e-9)


def test_psnr_symmetric():
    rng = np.random.default_rng(4)
    a = rng.random((3, 10, 10))
    b = rng.random((3, 10, 10))
    assert psnr(a, b) == psnr(b, a)


def test_psnr_strictly_decreases_with_noise():
    base = make_clean_image(5, 16, 16).astype(np.float64)
    rng = np.random.default_rng(6)
    noise = rng.standard_normal(base.shape)
    last = np.inf
    for amp in (1e-4, 1e-3, 1e-2, 1e-1):
        value = psnr(base, base + amp * noise)
        assert value < last
        last = value


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


def test_psnr_accepts_tensors():
    t = Tensor(make_clean_image(7, 12, 12))
    assert psnr(t, t) == 100.0


# ----------------------------------------------------------------------
# SSIM
# ----------------------------------------------------------------------

def test_ssim_identical_is_one():
    x = make_clean_image(8, 16, 16)
    assert ssim(x, x.copy()) == pytest.approx(1.0, abs=1e-9)


def test_ssim_negation_scores_low():
    # high-contrast pattern vs its negation
    x = np.zeros((3, 16, 16), dtype=np.float64)
    x[:, ::2, :] = 1.0
    y = 1.0 - x
    assert ssim(x, y) < 0.5


def test_ssim_constant_vs_constant_closed_form():
    # zero variance leaves only the luminance factor (2ab + C1) / (a^2 + b^2 + C1)
    a_level, b_level = 0.25, 0.75
    a = np.full((3, 12, 12), a_level)
    b = np.full((3, 12, 12), b_level)
    c1 = 0.01 ** 2
    want = (2 * a_level * b_level + c1) / (a_level ** 2 + b_level ** 2 + c1)
    assert ssim(a, b) == pytest.approx(want, abs=1e-12)


def test_ssim_matches_sliding_window_oracle():
    rng = np.random.default_rng(9)
    a = rng.random((3, 14, 15))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim_np(a, b), abs=1e-9)


def test_ssim_symmetric():
    rng = np.random.default_rng(10)
    a = rng.random((3, 13, 13))
    b = rng.random((3, 13, 13))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_rejects_images_smaller_than_window():
    with pytest.raises(ShapeError):
        ssim(np.zeros((3, 10, 12)), np.zeros((3, 10, 12)))


def test_ssim_bounded():
    rng = np.random.default_rng(11)
    for _ in range(3):
        a = rng.random((3, 12, 12))
        b = rng.random((3, 12, 12))
        v = ssim(a, b)
        assert -1.0 <= v <= 1.0


# ----------------------------------------------------------------------
# pair manifest + ImagePair invariants
# ----------------------------------------------------------------------

def test_manifest_roundtrip(tmp_path):
    rows = [("a/clean1.png", "b/rain1.png"), ("/abs/clean2.png", "rain2.png")]
    path = tmp_path / "pairs.tsv"
    write_pair_manifest(path, rows)
    back = read_pair_manifest(path)
    assert back[0][0] == tmp_path / "a/clean1.png"
    assert back[0][1] == tmp_path / "b/rain1.png"
    assert str(back[1][0]) == "/abs/clean2.png"
    assert back[1][1] == tmp_path / "rain2.png"


def test_manifest_rejects_malformed(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("only_one_column\n")
    with pytest.raises(ValueError):
        read_pair_manifest(path)


def test_image_pair_validation():
    good = ImagePair(
        clean=Tensor(np.zeros((3, 4, 4), np.float32)),
        degraded=Tensor(np.ones((3, 4, 4), np.float32)),
    )
    good.validate()
    with pytest.raises(ShapeError):
        ImagePair(
            clean=Tensor(np.zeros((3, 4, 4), np.float32)),
            degraded=Tensor(np.zeros((3, 4, 5), np.float32)),
        ).validate()
    with pytest.raises(ValueError):
        ImagePair(
            clean=Tensor(np.full((3, 4, 4), 1.5, np.float32)),
            degraded=Tensor(np.full((3, 4, 4), 1.5, np.float32)),
        ).validate()
