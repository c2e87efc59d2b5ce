import numpy as np
import pytest

import jafar_upsampler as ju


def small_model(seed=1, strategy="sft"):
    return ju.Model.init(seed=seed, feature_channels=32, d=16, n_heads=2, key_strategy=strategy)


def test_encode_shape_and_determinism():
    img = ju.synth_image(3, 32)
    assert img.shape == (3, 32, 32)
    assert 0.0 <= img.min() and img.max() <= 1.0
    f = ju.encode(img)
    assert f.shape == (32, 8, 8)
    np.testing.assert_array_equal(f, ju.encode(img))


def test_upsample_constant_features_and_tiling():
    model = small_model()
    img = ju.synth_image(4, 32)
    const = np.full((32, 4, 4), 0.25, dtype=np.float32)
    out = model.upsample(img, const, 12, 12)
    assert out.shape == (32, 12, 12)
    np.testing.assert_allclose(out, 0.25, atol=1e-5)

    feats = ju.encode(img)
    mono = model.upsample(img, feats, 16, 16)
    np.testing.assert_array_equal(mono, model.upsample(img, feats, 16, 16, tile_rows=3))


def test_attention_row_is_a_distribution():
    model = small_model(2)
    img = ju.synth_image(5, 32)
    row = model.attention_row(img, ju.encode(img), 16, 16, 3, 7)
    assert row.shape == (8, 8)
    assert row.min() >= 0.0
    assert abs(row.sum() - 1.0) < 1e-5


def test_baseline_and_scores():
    f = ju.encode(ju.synth_image(6, 64))
    up = ju.feature_resize(ju.feature_resize(f, 8, 8, "nearest"), 16, 16, "bilinear")
    cos, l2 = ju.recon_score(up, f)
    assert -1.0 <= cos <= 1.0 and l2 >= 0.0
    assert ju.recon_score(f, f)[0] == pytest.approx(1.0, abs=1e-6)


def test_cam_formulas():
    assert ju.avg_drop([(0.8, 0.6)]) == pytest.approx(25.0)
    assert ju.avg_increase([(0.5, 0.6), (0.5, 0.4)]) == pytest.approx(50.0)
    assert ju.avg_gain([(0.5, 0.75)])[0] == pytest.approx(50.0)
    assert ju.adcc(91.4, 44.1, 17.4) == pytest.approx(73.3, abs=0.05)
    a = np.random.default_rng(0).random((8, 8)).astype(np.float32)
    assert ju.coherency(a, a) == pytest.approx(100.0)
    assert ju.complexity(np.zeros((4, 4), dtype=np.float32)) == 0.0


def test_errors_surface_as_exceptions():
    with pytest.raises(ju.Error, match="UndefinedHarmonicMean"):
        ju.adcc(0.0, 10.0, 10.0)
    model = small_model()
    with pytest.raises(ju.Error, match="ShapeMismatch"):
        model.upsample(ju.synth_image(1, 32), np.zeros((8, 4, 4), dtype=np.float32), 8, 8)


def test_checkpoint_and_feature_files(tmp_path):
    model = small_model(7, "linear_projection")
    path = str(tmp_path / "m.ck")
    model.save(path)
    loaded = ju.Model.load(path)
    assert loaded.key_strategy == "linear_projection"
    assert loaded.parameter_count == model.parameter_count
    img = ju.synth_image(8, 32)
    feats = ju.encode(img)
    np.testing.assert_array_equal(model.upsample(img, feats, 8, 8), loaded.upsample(img, feats, 8, 8))

    fpath = str(tmp_path / "f.jfar")
    ju.write_features(fpath, feats)
    np.testing.assert_array_equal(ju.read_features(fpath), feats)


def test_cli_entry_point(tmp_path):
    code, _, err = ju.run_cli([])
    assert code == 1 and "UnknownSubcommand" in err
    fpath = str(tmp_path / "c.jfar")
    ju.write_features(fpath, np.full((3, 2, 2), 0.5, dtype=np.float32))
    out = str(tmp_path / "o.jfar")
    code, _, _ = ju.run_cli(["baseline", "--mode", "bilinear", "--features", fpath, "--out-h", "5", "--out-w", "5",
                             "--out", out])
    assert code == 0
    np.testing.assert_array_equal(ju.read_features(out), np.full((3, 5, 5), 0.5, dtype=np.float32))
