import struct

import numpy as np
import pytest

from tcinn.autodiff import Tensor
from tcinn.data.manifest import DatasetManifest, ManifestEntry, load_manifest, load_pair, write_manifest
from tcinn.data.phantom import (
    PhantomConfig,
    generate_phantom_dataset,
    modulation_mask,
    phantom_source,
    phantom_target,
)
from tcinn.data.preprocess import (
    IDENTITY_SCALE,
    ScaleRecord,
    center_crop,
    denormalize,
    normalize_minmax,
    preprocess_image,
    read_scale_record,
    scale_path,
    write_scale_record,
)
from tcinn.data.tensor_file import (
    crc64_xz,
    decode_bundle,
    decode_tensor,
    encode_bundle,
    encode_tensor,
    read_tensor_array,
    read_tensor_file,
    write_tensor_file,
)
from tcinn.errors import (
    BadMagicError,
    ChecksumError,
    ManifestError,
    PayloadMismatchError,
    UnsupportedVersionError,
    ValidationError,
)


def _sealed(body):
    return body + struct.pack("<Q", crc64_xz(body))


def test_crc64_check_value():
    assert crc64_xz(b"123456789") == 0x995DC9BBDF1939FA


def test_golden_tensor_file_layout():
    data = encode_tensor(np.arange(1, 7, dtype=np.float32).reshape(2, 3))
    body = b"TCIT\x01\x00" + b"\x00\x02" + struct.pack("<II", 2, 3) + struct.pack("<6f", 1, 2, 3, 4, 5, 6)
    assert len(data) == 48
    assert data == _sealed(body)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(5,), (2, 3), (1, 4, 4), (2, 3, 2, 2)])
def test_tensor_file_round_trip(tmp_path, rng, dtype, shape):
    array = rng.normal(size=shape).astype(dtype)
    path = write_tensor_file(array, tmp_path / "sub" / "x.tcit")
    restored = read_tensor_array(path)
    assert restored.dtype == np.dtype(dtype)
    assert restored.tobytes() == array.tobytes()


def test_read_tensor_file_uses_engine_precision(tmp_path, float64):
    path = write_tensor_file(np.ones((2, 2), dtype=np.float32), tmp_path / "x.tcit")
    assert read_tensor_file(path).dtype == np.float64


def test_corruption_is_detected():
    data = bytearray(encode_tensor(np.ones((2, 3), dtype=np.float32)))
    data[20] ^= 0x01
    with pytest.raises(ChecksumError):
        decode_tensor(bytes(data))
    with pytest.raises(ChecksumError):
        decode_tensor(encode_tensor(np.ones(3))[:-3])


def test_header_errors():
    good = encode_tensor(np.ones(2, dtype=np.float32))
    with pytest.raises(BadMagicError):
        decode_tensor(b"NOPE" + good[4:])
    with pytest.raises(BadMagicError):
        decode_tensor(b"TC")
    with pytest.raises(UnsupportedVersionError):
        decode_tensor(good[:4] + b"\x02" + good[5:])


def test_payload_errors():
    short = b"TCIT\x01\x00\x00\x01" + struct.pack("<I", 4) + struct.pack("<2f", 1, 2)
    with pytest.raises(PayloadMismatchError):
        decode_tensor(_sealed(short))
    trailing = b"TCIT\x01\x00\x00\x01" + struct.pack("<I", 1) + struct.pack("<2f", 1, 2)
    with pytest.raises(PayloadMismatchError):
        decode_tensor(_sealed(trailing))
    unknown = b"TCIT\x01\x00\x07\x01" + struct.pack("<I", 1) + struct.pack("<f", 1)
    with pytest.raises(PayloadMismatchError):
        decode_tensor(_sealed(unknown))
    with pytest.raises(PayloadMismatchError):
        encode_tensor(np.arange(3, dtype=np.int32))
    with pytest.raises(PayloadMismatchError):
        decode_tensor(encode_bundle({}, {}))


def test_bundle_round_trip():
    records = {"a": np.arange(3.0), "b/c": np.ones((2, 2), dtype=np.float32)}
    meta, restored = decode_bundle(encode_bundle({"kind": "X", "n": [1, 2]}, records))
    assert meta == {"kind": "X", "n": [1, 2]}
    assert list(restored) == ["a", "b/c"]
    assert restored["b/c"].dtype == np.float32
    np.testing.assert_array_equal(restored["a"], records["a"])


def test_center_crop_examples():
    img = Tensor(np.arange(256 * 256, dtype=np.float64).reshape(1, 256, 256))
    cropped = center_crop(img, 200)
    assert cropped.shape == (1, 200, 200)
    np.testing.assert_array_equal(cropped.numpy(), img.numpy()[:, 28:228, 28:228])

    small = Tensor(np.arange(16.0).reshape(1, 4, 4))
    np.testing.assert_array_equal(center_crop(small, 3).numpy(), small.numpy()[:, 0:3, 0:3])
    np.testing.assert_array_equal(center_crop(small, 4).numpy(), small.numpy())
    with pytest.raises(ValidationError):
        center_crop(small, 5)


def test_normalize_and_denormalize(float64):
    img = Tensor(np.array([[[2.0, 4.0, 6.0]]]))
    scaled, rec = normalize_minmax(img)
    assert scaled.numpy().ravel().tolist() == [0.0, 0.5, 1.0]
    assert rec == ScaleRecord(2.0, 6.0)
    np.testing.assert_array_equal(denormalize(scaled, rec).numpy(), img.numpy())
    with pytest.raises(ValidationError):
        normalize_minmax(Tensor(np.full((1, 2, 2), 3.0)))
    with pytest.raises(ValidationError):
        ScaleRecord(1.0, 1.0)


def test_preprocess_image_crops_then_scales(float64, rng):
    raw = Tensor(rng.uniform(10.0, 500.0, size=(1, 9, 9)))
    img, rec = preprocess_image(raw, 5)
    assert img.shape == (1, 5, 5)
    assert img.numpy().min() == 0.0 and img.numpy().max() == 1.0
    np.testing.assert_allclose(denormalize(img, rec).numpy(), raw.numpy()[:, 2:7, 2:7], rtol=1e-12)


def test_scale_sidecars(tmp_path):
    image = tmp_path / "a.tcit"
    assert read_scale_record(image) == IDENTITY_SCALE
    sidecar = write_scale_record(ScaleRecord(0.1, 2.5), image)
    assert sidecar == scale_path(image) == tmp_path / "a.tcit.scale"
    assert read_scale_record(image) == ScaleRecord(0.1, 2.5)
    sidecar.write_text("nonsense\n")
    with pytest.raises(ValidationError):
        read_scale_record(image)


def _write_pair(root, name, shape=(1, 4, 4)):
    source = write_tensor_file(np.zeros(shape, dtype=np.float32), root / f"{name}_src.tcit")
    target = write_tensor_file(np.ones(shape, dtype=np.float32), root / f"{name}_tgt.tcit")
    return source, target


def test_manifest_round_trip(tmp_path):
    entries = [ManifestEntry(*_write_pair(tmp_path / "imgs", name)) for name in ("a", "b")]
    path = write_manifest(DatasetManifest(tmp_path, entries), tmp_path / "manifest.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1] == "imgs/a_src.tcit,imgs/a_tgt.tcit"
    loaded = load_manifest(path)
    assert [entry.source for entry in loaded] == [entry.source for entry in entries]
    source, target, mask = load_pair(loaded.entries[0])
    assert source.shape == (1, 4, 4) and target[0, 0, 0] == 1.0 and mask is None


@pytest.mark.parametrize(
    "content",
    [
        "only_one_column.tcit\n",
        "a.tcit,,\n",
        "missing_src.tcit,missing_tgt.tcit\n",
        "# header only\n",
    ],
    ids=["columns", "empty-field", "missing-file", "empty"],
)
def test_manifest_errors(tmp_path, content):
    path = tmp_path / "manifest.csv"
    path.write_text(content)
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_manifest_rejects_mixed_shapes(tmp_path):
    a = _write_pair(tmp_path, "a")
    b = _write_pair(tmp_path, "b", shape=(1, 5, 5))
    path = tmp_path / "manifest.csv"
    path.write_text(f"{a[0].name},{a[1].name}\n{b[0].name},{b[1].name}\n")
    with pytest.raises(ManifestError):
        load_manifest(path)
    assert len(load_manifest(path, validate=False)) == 2


def test_manifest_rejects_unparsable_files(tmp_path):
    (tmp_path / "bad.tcit").write_bytes(b"garbage")
    source, _ = _write_pair(tmp_path, "a")
    path = tmp_path / "manifest.csv"
    path.write_text(f"{source.name},bad.tcit\n")
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_phantom_map_examples():
    ones, zeros = np.ones((2, 2)), np.zeros((2, 2))
    assert not phantom_target(np.zeros((2, 2)), ones).any()
    np.testing.assert_allclose(phantom_target(np.full((2, 2), 0.25), ones), 0.5)
    np.testing.assert_allclose(phantom_target(np.full((2, 2), 0.25), zeros), 0.2)
    mask = modulation_mask(16)
    assert mask.max() < 1.0 and mask[7, 7] == mask[8, 8]
    assert mask[7, 7] > mask[0, 0]


def test_phantom_dataset_is_deterministic(tmp_path):
    cfg = PhantomConfig(seed=7, size=16, pairs=3)
    first = generate_phantom_dataset(cfg, tmp_path / "one")
    generate_phantom_dataset(cfg, tmp_path / "two")
    fewer = PhantomConfig(seed=7, size=16, pairs=2)
    generate_phantom_dataset(fewer, tmp_path / "three")
    assert len(first) == 3
    for name in ("source_0000.tcit", "target_0001.tcit", "voi_mask.tcit", "manifest.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()
    assert (tmp_path / "one" / "source_0001.tcit").read_bytes() == (tmp_path / "three" / "source_0001.tcit").read_bytes()
    assert (tmp_path / "one" / "source_0000.tcit").read_bytes() != (tmp_path / "one" / "source_0001.tcit").read_bytes()


def test_phantom_targets_follow_the_analytic_map(phantom_dir):
    manifest = load_manifest(phantom_dir / "manifest.csv")
    mask = modulation_mask(16)
    for entry in manifest.entries:
        source, target, voi = load_pair(entry)
        assert source.min() >= 0.0 and source.max() <= 1.0
        np.testing.assert_allclose(target[0], phantom_target(source[0], mask), atol=1e-7)
        assert read_scale_record(entry.source) == IDENTITY_SCALE
        np.testing.assert_array_equal(voi[0], (mask >= 0.5).astype(np.float32))


def test_phantom_source_is_seeded_per_pair():
    cfg = PhantomConfig(seed=1, size=16, pairs=10)
    np.testing.assert_array_equal(phantom_source(cfg, 4), phantom_source(PhantomConfig(seed=1, size=16), 4))
    with pytest.raises(ValidationError):
        PhantomConfig(size=8)
    with pytest.raises(ValidationError):
        PhantomConfig(pairs=0)
