import numpy as np
import pytest

import rfr_inpaint as rfr


def micro(**kw):
    args = dict(channel_scale=8, iter_num=2, resolution=32, seed=1)
    args.update(kw)
    return rfr.Network(**args)


def test_full_size_parameter_count():
    assert rfr.Network().param_count == 24_822_468
    assert rfr.Network(attention=False).param_count == 24_297_667


def test_describe_starts_with_the_encoder():
    rows = micro().describe()
    assert rows[0]["name"] == "PartialConv0"
    assert rows[-1]["name"] == "OutputConv"


def test_infer_shapes_and_composite():
    net = micro()
    rng = np.random.default_rng(0)
    mask = rfr.generate_mask(32, "30-40", seed=3)
    image = rng.random((1, 3, 32, 32), dtype=np.float32) * mask
    pred, comp, masks = net.infer(image, mask)
    assert pred.shape == image.shape and comp.shape == image.shape
    assert len(masks) == 2
    assert np.array_equal(comp, np.where(mask == 1, image, pred))
    assert np.isfinite(pred).all()


def test_full_mask_returns_the_input():
    net = micro()
    image = np.random.default_rng(1).random((1, 3, 32, 32), dtype=np.float32)
    _, comp, _ = net.infer(image, np.ones((1, 1, 32, 32), np.float32))
    assert np.array_equal(comp, image)


def test_errors_map_to_python_exceptions():
    net = micro()
    with pytest.raises(rfr.DimensionError):
        net.infer(np.zeros((1, 4, 32, 32), np.float32), np.ones((1, 1, 32, 32), np.float32))
    with pytest.raises(rfr.ContractError):
        net.infer(np.zeros((1, 3, 32, 32), np.float32), np.full((1, 1, 32, 32), 0.5, np.float32))
    with pytest.raises(rfr.ConfigError):
        micro(merge_mode="max")
    with pytest.raises(ValueError):
        rfr.psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 4)))


def test_partial_conv_matches_plain_conv_on_full_mask():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    out, new_mask = rfr.partial_conv(x, np.ones((1, 1, 6, 6)), w)
    expected = np.zeros((1, 3, 4, 4))
    for o in range(3):
        for i in range(4):
            for j in range(4):
                expected[0, o, i, j] = np.sum(x[0, :, i:i + 3, j:j + 3] * w[o])
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)
    assert (new_mask == 1).all()


def test_partial_conv_empty_window_is_zero():
    x = np.ones((1, 1, 5, 5))
    mask = np.zeros((1, 1, 5, 5))
    out, new_mask = rfr.partial_conv(x, mask, np.ones((1, 1, 3, 3)), bias=np.full((1, 1, 1, 1), 5.0), padding=1)
    assert (out == 0).all() and (new_mask == 0).all()


def test_mask_update_dilates_holes_shut():
    mask = np.zeros((1, 1, 9, 9))
    mask[0, 0, 4, 4] = 1
    grown = rfr.mask_update(mask, 3, padding=1)
    assert grown.sum() == 9


def test_metrics():
    a = np.full((1, 3, 16, 16), 0.5)
    b = np.full((1, 3, 16, 16), 0.6)
    assert rfr.psnr(a, b) == pytest.approx(20.0)
    assert rfr.mean_l1(a, b) == pytest.approx(0.1)
    assert rfr.ssim(a, a) == pytest.approx(1.0)
    assert rfr.psnr(a, a) == float("inf")


def test_generated_masks_stay_in_band():
    for seed in range(5):
        m = rfr.generate_mask(32, "50-60", seed=seed)
        assert set(np.unique(m)) <= {0.0, 1.0}
        assert 0.48 <= rfr.hole_fraction(m) <= 0.62
    with pytest.raises(rfr.ConfigError):
        rfr.generate_mask(32, "20-30")


def test_pnm_round_trip(tmp_path):
    img = np.round(rfr.generate_image(16, seed=4) * 255) / 255
    path = str(tmp_path / "img.ppm")
    rfr.write_pnm(path, img)
    np.testing.assert_allclose(rfr.read_pnm(path), img, atol=1e-6)
    with pytest.raises(rfr.IoError):
        rfr.read_pnm(str(tmp_path / "missing.ppm"))
    (tmp_path / "bad.ppm").write_bytes(b"P6\n2 2\n255\n\x00")
    with pytest.raises(rfr.FormatError):
        rfr.read_pnm(str(tmp_path / "bad.ppm"))


def test_training_and_weight_round_trip(tmp_path):
    net = micro()
    losses = net.train(dataset_size=4, steps_main=3, batch_size=2, lr_main=1e-3, seed=5)
    assert len(losses) == 3 and all(np.isfinite(losses))
    path = str(tmp_path / "w.rfrw")
    net.save(path)
    other = micro(seed=9)
    assert other.to_bytes() != net.to_bytes()
    other.load(path)
    assert other.to_bytes() == net.to_bytes()
    with pytest.raises(rfr.FormatError):
        other.from_bytes(b"XXXX")
