"""Synthetic generator, augmentation, and PPM/PGM round trips."""

import os

import numpy as np
import pytest

from shelfnet.data import (AugmentPolicy, SampleBatch, SynthConfig, augment,
                           load_dataset_dir, read_pgm, read_ppm, resize_bilinear,
                           synth_batch, synth_dataset, synth_image,
                           write_dataset_dir, write_pgm, write_ppm)
from shelfnet.errors import ConfigError, InputError


CFG = SynthConfig(num_classes=4, size=48)


def test_same_seed_identical_batches():
    a = synth_batch(7, range(4), CFG)
    b = synth_batch(7, range(4), CFG)
    np.testing.assert_array_equal(a.images.data, b.images.data)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_different_seed_differs():
    a = synth_batch(1, range(2), CFG)
    b = synth_batch(2, range(2), CFG)
    assert not np.array_equal(a.labels, b.labels)


def test_labels_in_range_and_images_in_unit_interval():
    for i in range(16):
        img, lab = synth_image(3, i, CFG)
        assert lab.min() >= 0 and lab.max() < CFG.num_classes
        assert img.min() >= 0.0 and img.max() <= 1.0


def test_class_frequencies_match_configured_priors():
    # empirical pixel fractions over many images vs the generator's priors
    priors = CFG.class_priors()
    counts = np.zeros(CFG.num_classes)
    n_images = 1000
    for i in range(n_images):
        _, lab = synth_image(0, i, CFG)
        counts += np.bincount(lab.reshape(-1), minlength=CFG.num_classes)
    freq = counts / counts.sum()
    for k in range(1, CFG.num_classes):
        assert abs(freq[k] - priors[k]) <= 0.20 * priors[k], (k, freq[k], priors[k])


def test_stream_covers_requested_images():
    batches = list(synth_dataset(0, 10, 48, 4, batch_size=4))
    assert [b.size for b in batches] == [4, 4, 2]


def test_degenerate_config_rejected():
    with pytest.raises(ConfigError):
        SynthConfig(num_classes=1)
    with pytest.raises(ConfigError):
        SynthConfig(size=4)


# --- augmentation ----------------------------------------------------------------

def _identity_policy():
    return AugmentPolicy(flip_prob=0.0, scale_range=(1.0, 1.0), rotation_deg=0.0, crop=None)


def test_identity_policy_is_exact():
    batch = synth_batch(0, range(2), CFG)
    out = augment(batch, seed=5, policy=_identity_policy())
    np.testing.assert_array_equal(out.images.data, batch.images.data)
    np.testing.assert_array_equal(out.labels, batch.labels)


def test_forced_flip_twice_is_identity():
    batch = synth_batch(0, range(2), CFG)
    policy = AugmentPolicy(flip_prob=1.0, scale_range=(1.0, 1.0), rotation_deg=0.0)
    once = augment(batch, seed=1, policy=policy)
    twice = augment(once, seed=2, policy=policy)
    np.testing.assert_array_equal(twice.images.data, batch.images.data)
    np.testing.assert_array_equal(twice.labels, batch.labels)
    assert not np.array_equal(once.labels, batch.labels)


def test_augment_deterministic_per_seed():
    batch = synth_batch(0, range(2), CFG)
    policy = AugmentPolicy()
    a = augment(batch, seed=9, policy=policy)
    b = augment(batch, seed=9, policy=policy)
    np.testing.assert_array_equal(a.images.data, b.images.data)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_nearest_labels_never_invent_classes():
    policy = AugmentPolicy(scale_range=(0.5, 2.0), rotation_deg=10.0, crop=(40, 40))
    for trial in range(10):
        batch = synth_batch(trial, range(1), CFG)
        source_values = set(np.unique(batch.labels)) | {255}
        out = augment(batch, seed=trial, policy=policy)
        assert set(np.unique(out.labels)) <= source_values


def test_crop_pads_with_ignore_when_zoomed_out():
    batch = synth_batch(0, range(1), CFG)
    policy = AugmentPolicy(flip_prob=0.0, scale_range=(0.5, 0.5), rotation_deg=0.0,
                           crop=(48, 48))
    out = augment(batch, seed=0, policy=policy)
    assert (out.labels == 255).any()  # corners fall outside the shrunken source


def test_resize_bilinear_identity_and_shape():
    arr = np.random.default_rng(0).random((2, 3, 8, 8))
    np.testing.assert_array_equal(resize_bilinear(arr, 8, 8), arr)
    out = resize_bilinear(arr, 16, 12)
    assert out.shape == (2, 3, 16, 12)
    const = np.full((1, 1, 5, 5), 2.5)
    np.testing.assert_allclose(resize_bilinear(const, 13, 7), 2.5)


# --- netpbm io --------------------------------------------------------------------

def test_ppm_pgm_roundtrip(tmp_path):
    img, lab = synth_image(0, 0, CFG)
    p_img = str(tmp_path / "0000.ppm")
    p_lab = str(tmp_path / "0000.pgm")
    write_ppm(p_img, img)
    write_pgm(p_lab, lab)
    img2 = read_ppm(p_img)
    lab2 = read_pgm(p_lab)
    assert img2.shape == img.shape
    assert np.abs(img2 - img).max() <= 0.5 / 255 + 1e-9  # 8-bit quantization only
    np.testing.assert_array_equal(lab2, lab)


def test_dataset_dir_roundtrip(tmp_path):
    out = str(tmp_path / "ds")
    write_dataset_dir(out, seed=4, n_images=6, config=CFG)
    pairs = load_dataset_dir(out)
    assert len(pairs) == 6
    img, lab = pairs[0]
    ref_img, ref_lab = synth_image(4, 0, CFG)
    np.testing.assert_array_equal(lab, ref_lab)
    assert np.abs(img - ref_img).max() <= 0.5 / 255 + 1e-9


def test_truncated_ppm_rejected(tmp_path):
    img, _ = synth_image(0, 0, CFG)
    p = str(tmp_path / "x.ppm")
    write_ppm(p, img)
    with open(p, "rb") as f:
        blob = f.read()
    with open(p, "wb") as f:
        f.write(blob[: len(blob) // 2])
    with pytest.raises(InputError):
        read_ppm(p)


def test_missing_label_file_rejected(tmp_path):
    out = str(tmp_path / "ds")
    write_dataset_dir(out, seed=0, n_images=2, config=CFG)
    os.remove(os.path.join(out, "0001.pgm"))
    with pytest.raises(InputError):
        load_dataset_dir(out)
