import json

import numpy as np
import pytest

from cipher_vit import autodiff as ad
from cipher_vit import vit
from cipher_vit.checkpoint import load_checkpoint, load_into_model, save_checkpoint
from cipher_vit.errors import FormatError
from cipher_vit.lora import LoraConfig, inject
from cipher_vit.vit import build_vit

from conftest import TINY


def small_registry(dtype=np.float32):
    rng = np.random.default_rng(0)
    return {
        "a.weight": ad.Tensor(rng.standard_normal((3, 4)), dtype=dtype),
        "a.bias": ad.Tensor(rng.standard_normal(3), dtype=dtype),
        "b": ad.Tensor(rng.standard_normal((2, 2, 2)), dtype=dtype),
    }


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_roundtrip(tmp_path, dtype):
    reg = small_registry(dtype)
    save_checkpoint(tmp_path, reg)
    loaded = load_checkpoint(tmp_path)
    assert set(loaded) == set(reg)
    for name, t in reg.items():
        assert loaded[name].dtype == dtype
        np.testing.assert_array_equal(loaded[name], t.data)


def test_manifest_structure(tmp_path):
    reg = small_registry()
    save_checkpoint(tmp_path, reg)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert isinstance(manifest, list)
    assert [e["name"] for e in manifest] == list(reg)  # registry order preserved
    offset = 0
    for entry in manifest:
        assert set(entry) == {"name", "dtype", "shape", "offset", "length"}
        assert entry["dtype"] == "f32"
        assert entry["offset"] == offset
        offset += entry["length"]
    assert (tmp_path / "weights.bin").stat().st_size == offset


def test_weights_are_little_endian_concat(tmp_path):
    reg = small_registry()
    save_checkpoint(tmp_path, reg)
    raw = (tmp_path / "weights.bin").read_bytes()
    expected = b"".join(np.ascontiguousarray(t.data.astype("<f4")).tobytes()
                        for t in reg.values())
    assert raw == expected


def test_subset_save(tmp_path):
    reg = small_registry()
    save_checkpoint(tmp_path, reg, names=["a.weight"])
    loaded = load_checkpoint(tmp_path)
    assert list(loaded) == ["a.weight"]


def test_missing_manifest(tmp_path):
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path)


def test_malformed_entry(tmp_path):
    save_checkpoint(tmp_path, small_registry())
    (tmp_path / "manifest.json").write_text(json.dumps([{"name": "x"}]))
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path)


def test_overrun_entry(tmp_path):
    save_checkpoint(tmp_path, small_registry())
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest[-1]["offset"] = 10**6
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(FormatError) as err:
        load_checkpoint(tmp_path)
    assert "overrun" in str(err.value)


def test_shape_length_mismatch(tmp_path):
    save_checkpoint(tmp_path, small_registry())
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest[0]["shape"] = [5, 5]
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path)


def test_model_roundtrip_bitwise(tmp_path):
    model = build_vit(TINY, seed=1, dtype=np.float32)
    inject(model, LoraConfig(rank=2), seed=2)
    save_checkpoint(tmp_path, model.registry)

    clone = build_vit(TINY, seed=99, dtype=np.float32, init="zeros")
    inject(clone, LoraConfig(rank=2), seed=98)
    load_into_model(clone, tmp_path, strict=True)
    for name, t in model.registry.items():
        np.testing.assert_array_equal(clone.registry[name].data, t.data, err_msg=name)

    rng = np.random.default_rng(3)
    images = rng.standard_normal((2, 3, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(vit.forward(model, images).data,
                                  vit.forward(clone, images).data)


def test_strict_load_rejects_missing_names(tmp_path):
    model = build_vit(TINY, seed=1, dtype=np.float32)
    save_checkpoint(tmp_path, model.registry)
    clone = build_vit(TINY, seed=0, dtype=np.float32, init="zeros")
    inject(clone, LoraConfig(rank=2))  # clone expects adapter tensors too
    with pytest.raises(FormatError):
        load_into_model(clone, tmp_path, strict=True)


def test_strict_load_rejects_shape_change(tmp_path):
    import dataclasses
    model = build_vit(TINY, seed=1, dtype=np.float32)
    save_checkpoint(tmp_path, model.registry)
    other = build_vit(dataclasses.replace(TINY, num_classes=5), seed=0, init="zeros")
    with pytest.raises(FormatError):
        load_into_model(other, tmp_path, strict=True)


def test_save_is_deterministic(tmp_path):
    model = build_vit(TINY, seed=4, dtype=np.float32)
    d1, d2 = tmp_path / "one", tmp_path / "two"
    save_checkpoint(d1, model.registry)
    save_checkpoint(d2, model.registry)
    assert (d1 / "weights.bin").read_bytes() == (d2 / "weights.bin").read_bytes()
    assert (d1 / "manifest.json").read_bytes() == (d2 / "manifest.json").read_bytes()
