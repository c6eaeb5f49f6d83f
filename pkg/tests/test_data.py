import struct

import numpy as np
import pytest

from flatvae import data as dt
from flatvae.errors import ContractViolation, FormatError


def test_render_periodic_in_angle():
    assert np.array_equal(dt.pendulum_render(37.0), dt.pendulum_render(37.0 + 360.0))


def test_render_point_reflection_symmetry():
    img0 = dt.pendulum_render(0.0)
    img180 = dt.pendulum_render(180.0)
    assert np.allclose(img180, img0[::-1, ::-1], atol=1e-12)
    img45 = dt.pendulum_render(45.0)
    img225 = dt.pendulum_render(225.0)
    assert np.allclose(img225, img45[::-1, ::-1], atol=1e-12)


def test_render_intensities_in_unit_interval_full_sweep():
    for angle in range(360):
        img = dt.pendulum_render(float(angle))
        assert img.shape == (16, 16)
        assert img.min() >= 0.0 and img.max() <= 1.0
        assert img.max() > 0.5  # the bob is always visible


def test_render_distinct_angles_give_distinct_images():
    imgs = [dt.pendulum_render(a).ravel() for a in np.arange(0, 360, 15.0)]
    for i in range(len(imgs)):
        for j in range(i + 1, len(imgs)):
            assert np.linalg.norm(imgs[i] - imgs[j]) > 0.1


def test_pendulum_dataset_noiseless_rows_are_pure_renders():
    spec = dt.PendulumSpec(count=5, noise_std=0.0, seed=3)
    ds = dt.pendulum_dataset(spec)
    assert ds.count == 5 and ds.dim == 256
    for row, angle in zip(ds.samples, ds.metadata):
        assert np.array_equal(row, dt.pendulum_render(angle).ravel())


def test_pendulum_dataset_deterministic():
    a = dt.pendulum_dataset(dt.PendulumSpec(count=20, seed=9))
    b = dt.pendulum_dataset(dt.PendulumSpec(count=20, seed=9))
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.metadata, b.metadata)


def test_pendulum_dataset_noise_level():
    spec = dt.PendulumSpec(count=15_000, noise_std=0.05, seed=1)
    noisy = dt.pendulum_dataset(spec)
    clean = np.stack([dt.pendulum_render(a).ravel() for a in noisy.metadata])
    resid = noisy.samples - clean
    per_pixel_std = resid.std(axis=0)
    assert np.all(np.abs(per_pixel_std - 0.05) / 0.05 < 0.02)


def test_pendulum_explicit_angles():
    angles = np.array([0.0, 90.0, 180.0])
    ds = dt.pendulum_dataset(dt.PendulumSpec(count=3, noise_std=0.0, angles=angles))
    assert np.array_equal(ds.metadata, angles)


def idx_images_bytes(images: np.ndarray) -> bytes:
    n, rows, cols = images.shape
    return struct.pack(">IIII", dt.IDX_IMAGES_MAGIC, n, rows, cols) + images.astype(np.uint8).tobytes()


def idx_labels_bytes(labels: np.ndarray) -> bytes:
    return struct.pack(">II", dt.IDX_LABELS_MAGIC, len(labels)) + labels.astype(np.uint8).tobytes()


def test_mnist_load_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, size=(10, 4, 4), dtype=np.uint8)
    labels = np.array([5, 0, 4, 1, 9, 2, 1, 3, 1, 4], dtype=np.uint8)
    ipath = tmp_path / "imgs.idx3-ubyte"
    lpath = tmp_path / "labels.idx1-ubyte"
    ipath.write_bytes(idx_images_bytes(imgs))
    lpath.write_bytes(idx_labels_bytes(labels))

    ds = dt.mnist_load(ipath, lpath, binarise_threshold=0.5)
    assert ds.count == 10 and ds.dim == 16
    assert ds.kind == "binary"
    assert set(np.unique(ds.samples)) <= {0.0, 1.0}
    assert np.array_equal(ds.metadata, labels)
    assert ds.metadata[0] == 5
    want = (imgs.reshape(10, 16) / 255.0 >= 0.5).astype(float)
    assert np.array_equal(ds.samples, want)

    cont = dt.mnist_load(ipath, binarise_threshold=None)
    assert cont.kind == "continuous"
    assert cont.samples.max() <= 1.0


def test_mnist_header_only_file(tmp_path):
    path = tmp_path / "empty.idx3-ubyte"
    path.write_bytes(struct.pack(">IIII", dt.IDX_IMAGES_MAGIC, 0, 28, 28))
    ds = dt.mnist_load(path)
    assert ds.count == 0 and ds.dim == 784


def test_mnist_wrong_magic_raises_with_offset(tmp_path):
    path = tmp_path / "bad.idx3-ubyte"
    path.write_bytes(struct.pack(">IIII", 0xDEADBEEF, 1, 2, 2) + b"\x00" * 4)
    with pytest.raises(FormatError, match="byte 0"):
        dt.mnist_load(path)


def test_mnist_truncated_payload_raises(tmp_path):
    path = tmp_path / "short.idx3-ubyte"
    path.write_bytes(struct.pack(">IIII", dt.IDX_IMAGES_MAGIC, 2, 4, 4) + b"\x00" * 10)
    with pytest.raises(FormatError, match="truncated"):
        dt.mnist_load(path)


def test_mnist_label_count_mismatch(tmp_path):
    ipath = tmp_path / "i.idx"
    lpath = tmp_path / "l.idx"
    ipath.write_bytes(idx_images_bytes(np.zeros((3, 2, 2), dtype=np.uint8)))
    lpath.write_bytes(idx_labels_bytes(np.zeros(2, dtype=np.uint8)))
    with pytest.raises(FormatError):
        dt.mnist_load(ipath, lpath)


def test_csv_load_plain_and_header(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1.0,2.0,3.0\n4.0,5.0,6.0\n")
    ds = dt.csv_load(p)
    assert ds.count == 2 and ds.dim == 3
    assert np.array_equal(ds.samples, [[1, 2, 3], [4, 5, 6]])

    p2 = tmp_path / "h.csv"
    p2.write_text("a,b,c\n1.0,2.0,3.0\n")
    ds2 = dt.csv_load(p2)
    assert ds2.count == 1


def test_csv_load_errors_carry_line_numbers(tmp_path):
    ragged = tmp_path / "r.csv"
    ragged.write_text("1,2\n3,4,5\n")
    with pytest.raises(FormatError, match="line 2"):
        dt.csv_load(ragged)
    bad = tmp_path / "b.csv"
    bad.write_text("1,2\n3,x\n")
    with pytest.raises(FormatError, match="line 2"):
        dt.csv_load(bad)


def test_dataset_npz_roundtrip(tmp_path):
    ds = dt.pendulum_dataset(dt.PendulumSpec(count=4, seed=2))
    path = tmp_path / "d.npz"
    dt.save_dataset(path, ds)
    back = dt.load_dataset(path)
    assert np.array_equal(back.samples, ds.samples)
    assert back.kind == ds.kind
    assert np.array_equal(back.metadata, ds.metadata)


def test_epoch_batches_cover_without_duplicates():
    batches = dt.epoch_batches(10, 4, seed=1, epoch=0)
    assert len(batches) == 2
    flat = np.concatenate(batches)
    assert len(set(flat.tolist())) == len(flat)
    again = dt.epoch_batches(10, 4, seed=1, epoch=0)
    assert all(np.array_equal(a, b) for a, b in zip(batches, again))
    other_epoch = dt.epoch_batches(10, 4, seed=1, epoch=1)
    assert not all(np.array_equal(a, b) for a, b in zip(batches, other_epoch))


def test_batches_iterator_and_batch_size_guard():
    ds = dt.pendulum_dataset(dt.PendulumSpec(count=6, seed=0))
    it = dt.batches(ds, 4, seed=0)
    first = next(it)
    assert len(first) == 4
    with pytest.raises(ContractViolation):
        dt.epoch_batches(10, 1, seed=0, epoch=0)
