import numpy as np
import pytest

from cipher_vit import codec, data
from cipher_vit.errors import FormatError, GeometryError, ParameterError
from cipher_vit.data import PreprocessSpec, load_cifar10, prepare, resize

from conftest import make_two_class_set


# ------------------------------------------------------- independent oracle

def oracle_bilinear(img, target):
    """Textbook half-pixel-centers bilinear, written per-pixel."""
    c, h, w = img.shape
    out = np.zeros((c, target, target), dtype=np.uint8)
    for ch in range(c):
        for dy in range(target):
            sy = min(max((dy + 0.5) * h / target - 0.5, 0.0), h - 1)
            y0 = int(np.floor(sy))
            y1 = min(y0 + 1, h - 1)
            fy = sy - y0
            for dx in range(target):
                sx = min(max((dx + 0.5) * w / target - 0.5, 0.0), w - 1)
                x0 = int(np.floor(sx))
                x1 = min(x0 + 1, w - 1)
                fx = sx - x0
                top = img[ch, y0, x0] * (1 - fx) + img[ch, y0, x1] * fx
                bot = img[ch, y1, x0] * (1 - fx) + img[ch, y1, x1] * fx
                value = top * (1 - fy) + bot * fy
                out[ch, dy, dx] = int(np.floor(value + 0.5))
    return out


def oracle_nearest(img, target):
    c, h, w = img.shape
    out = np.zeros((c, target, target), dtype=np.uint8)
    for dy in range(target):
        sy = min(int((dy + 0.5) * h / target), h - 1)
        for dx in range(target):
            sx = min(int((dx + 0.5) * w / target), w - 1)
            out[:, dy, dx] = img[:, sy, sx]
    return out


# --------------------------------------------------------------- binary io

def test_batch_file_roundtrip(tmp_path):
    labels, images = make_two_class_set(10, seed=0)
    path = tmp_path / "batch.bin"
    data.write_batch_file(path, labels, images)
    assert path.stat().st_size == 10 * data.RECORD_BYTES
    got_labels, got_images = data.read_batch_file(path)
    np.testing.assert_array_equal(got_labels, labels)
    np.testing.assert_array_equal(got_images, images)


def test_record_layout_is_channel_planar(tmp_path):
    img = np.zeros((1, 3, 32, 32), dtype=np.uint8)
    img[0, 0] = 1  # red plane
    img[0, 1] = 2
    img[0, 2] = 3
    path = tmp_path / "b.bin"
    data.write_batch_file(path, [7], img)
    raw = path.read_bytes()
    assert raw[0] == 7
    assert set(raw[1:1025]) == {1}
    assert set(raw[1025:2049]) == {2}
    assert set(raw[2049:3073]) == {3}


def test_truncated_file_reports_offset(tmp_path):
    labels, images = make_two_class_set(2, seed=1)
    path = tmp_path / "t.bin"
    data.write_batch_file(path, labels, images)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(FormatError) as err:
        data.read_batch_file(path)
    assert str(data.RECORD_BYTES) in str(err.value)  # names the record size


def test_label_out_of_range_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    record = bytes([11]) + bytes(3072)
    path.write_bytes(record)
    with pytest.raises(FormatError):
        data.read_batch_file(path)


def test_load_directory_and_limit(cifar_dir):
    labels, images = load_cifar10(cifar_dir, split="train")
    assert labels.shape == (64,)
    assert images.shape == (64, 3, 32, 32)
    sub_labels, sub_images = load_cifar10(cifar_dir, split="train", limit=10)
    np.testing.assert_array_equal(sub_labels, labels[:10])  # prefix order
    np.testing.assert_array_equal(sub_images, images[:10])
    test_labels, _ = load_cifar10(cifar_dir, split="test")
    assert test_labels.shape == (32,)


def test_load_single_file(cifar_dir):
    labels, images = load_cifar10(cifar_dir / "test_batch.bin")
    assert labels.shape == (32,)


def test_load_empty_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_cifar10(tmp_path, split="train")


def test_load_is_deterministic(cifar_dir):
    a = load_cifar10(cifar_dir, split="train", limit=20)
    b = load_cifar10(cifar_dir, split="train", limit=20)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


# ------------------------------------------------------------------ resize

def test_resize_identity_is_exact():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, size=(3, 32, 32), dtype=np.uint8)
    assert np.array_equal(resize(img, 32, "bilinear"), img)
    assert np.array_equal(resize(img, 32, "nearest"), img)


def test_bilinear_matches_oracle():
    rng = np.random.default_rng(3)
    for src, dst in [(4, 8), (8, 4), (5, 7), (32, 48)]:
        img = rng.integers(0, 256, size=(3, src, src), dtype=np.uint8)
        np.testing.assert_array_equal(resize(img, dst, "bilinear"),
                                      oracle_bilinear(img, dst), err_msg=f"{src}->{dst}")


def test_nearest_matches_oracle():
    rng = np.random.default_rng(4)
    for src, dst in [(4, 8), (8, 4), (5, 7)]:
        img = rng.integers(0, 256, size=(3, src, src), dtype=np.uint8)
        np.testing.assert_array_equal(resize(img, dst, "nearest"),
                                      oracle_nearest(img, dst))


def test_resize_checkerboard_upsample():
    img = np.zeros((3, 2, 2), dtype=np.uint8)
    img[:, 0, 0] = img[:, 1, 1] = 255
    out = resize(img, 4, "bilinear")
    np.testing.assert_array_equal(out, oracle_bilinear(img, 4))
    assert out[0, 0, 0] == 255  # corners keep their source value
    assert out[0, 3, 3] == 255
    assert out[0, 0, 3] == 0


def test_resize_rejects_bad_target():
    with pytest.raises(ParameterError):
        resize(np.zeros((3, 4, 4), dtype=np.uint8), 0)
    with pytest.raises(ParameterError):
        resize(np.zeros((3, 4, 4), dtype=np.uint8), 4, "bicubic")


# ----------------------------------------------------------------- prepare

def test_spec_validation():
    with pytest.raises(ParameterError):
        PreprocessSpec(target_size=0)
    with pytest.raises(ParameterError):
        PreprocessSpec(std=(0.5, 0.0, 0.5))
    with pytest.raises(ParameterError):
        PreprocessSpec(encrypt_key=4)  # key without a block size
    assert PreprocessSpec(encrypt_key=4, encrypt_patch=8).encrypted
    assert not PreprocessSpec().encrypted


def test_prepare_plain_normalization():
    img = np.full((1, 3, 8, 8), 255, dtype=np.uint8)
    spec = PreprocessSpec(target_size=8, mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5))
    out = prepare(img, spec)
    np.testing.assert_allclose(out, np.ones((1, 3, 8, 8)), rtol=1e-6)
    assert out.dtype == np.float32


def test_prepare_per_channel_stats():
    img = np.zeros((1, 3, 4, 4), dtype=np.uint8)
    spec = PreprocessSpec(target_size=4, mean=(0.0, 0.5, 1.0), std=(1.0, 0.5, 0.25))
    out = prepare(img, spec)
    np.testing.assert_allclose(out[0, 0], 0.0, atol=1e-7)
    np.testing.assert_allclose(out[0, 1], -1.0, rtol=1e-6)
    np.testing.assert_allclose(out[0, 2], -4.0, rtol=1e-6)


def test_prepare_matches_composed_reference():
    """resize -> encrypt -> normalize, in that order and no other."""
    rng = np.random.default_rng(5)
    images = rng.integers(0, 256, size=(3, 3, 20, 20), dtype=np.uint8)
    spec = PreprocessSpec(target_size=16, mean=(0.4, 0.5, 0.6), std=(0.2, 0.25, 0.3),
                          encrypt_key=77, encrypt_patch=4)
    got = prepare(images, spec)

    perm = codec.derive_permutation(77, 4)
    mean = np.array(spec.mean, dtype=np.float32).reshape(3, 1, 1)
    std = np.array(spec.std, dtype=np.float32).reshape(3, 1, 1)
    for i in range(3):
        step = codec.encrypt_image(resize(images[i], 16, "bilinear"), perm)
        reference = (step.astype(np.float32) / 255.0 - mean) / std
        np.testing.assert_allclose(got[i], reference, rtol=1e-6, err_msg=f"image {i}")

    # encrypting after normalization is a different (wrong) pipeline when the
    # stats differ per channel, because encryption mixes channels
    wrong = (resize(images[0], 16, "bilinear").astype(np.float32) / 255.0 - mean) / std
    wrong = wrong.reshape(3, 4, 4, 4, 4).transpose(1, 3, 0, 2, 4).reshape(16, 48)
    wrong = wrong[:, perm.forward].reshape(4, 4, 3, 4, 4).transpose(2, 0, 3, 1, 4)
    wrong = wrong.reshape(3, 16, 16)
    assert np.abs(wrong - got[0]).max() > 1e-3


def test_prepare_single_derivation(monkeypatch):
    calls = []
    real = codec.derive_permutation

    def counting(key, patch):
        calls.append((key, patch))
        return real(key, patch)

    monkeypatch.setattr(codec, "derive_permutation", counting)
    rng = np.random.default_rng(6)
    images = rng.integers(0, 256, size=(4, 3, 16, 16), dtype=np.uint8)
    spec = PreprocessSpec(target_size=16, encrypt_key=9, encrypt_patch=4)
    prepare(images, spec)
    assert calls == [(9, 4)]  # once per run, not per image

    # a caller-supplied permutation suppresses derivation entirely
    calls.clear()
    prepare(images, spec, perm=real(9, 4))
    assert calls == []


def test_prepare_key_determinism_and_sensitivity():
    rng = np.random.default_rng(7)
    images = rng.integers(0, 256, size=(2, 3, 16, 16), dtype=np.uint8)
    spec = PreprocessSpec(target_size=16, encrypt_key=5, encrypt_patch=4)
    np.testing.assert_array_equal(prepare(images, spec), prepare(images, spec))
    other = PreprocessSpec(target_size=16, encrypt_key=6, encrypt_patch=4)
    assert not np.array_equal(prepare(images, spec), prepare(images, other))


def test_cross_split_consistency():
    """The same plaintext block encrypts identically in both splits."""
    block = np.arange(48, dtype=np.uint8).reshape(3, 4, 4)
    train_img = np.tile(block, (1, 4, 4))[None]
    test_img = np.zeros((1, 3, 16, 16), dtype=np.uint8)
    test_img[0, :, 4:8, 8:12] = block
    spec = PreprocessSpec(target_size=16, encrypt_key=11, encrypt_patch=4)
    a = prepare(train_img, spec)
    b = prepare(test_img, spec)
    np.testing.assert_array_equal(a[0, :, 0:4, 0:4], b[0, :, 4:8, 8:12])


def test_prepare_geometry_error_before_output():
    spec = PreprocessSpec(target_size=10, encrypt_key=1, encrypt_patch=4)
    with pytest.raises(GeometryError):
        prepare(np.zeros((1, 3, 10, 10), dtype=np.uint8), spec)


def test_prepare_mismatched_perm_rejected():
    spec = PreprocessSpec(target_size=16, encrypt_key=1, encrypt_patch=4)
    wrong = codec.derive_permutation(1, 8)
    with pytest.raises(GeometryError):
        prepare(np.zeros((1, 3, 16, 16), dtype=np.uint8), spec, perm=wrong)


def test_prepare_resizes_to_target(cifar_dir):
    labels, images = load_cifar10(cifar_dir, split="test", limit=2)
    spec = PreprocessSpec(target_size=48)
    out = prepare(images, spec)
    assert out.shape == (2, 3, 48, 48)
