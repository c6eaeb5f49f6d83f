"""Dataset provision: pendulum image simulator, MNIST IDX files, delimited text.

All construction is seeded and pure; metadata (angles or labels) rides along
for analysis colouring only and never enters training.
"""

import csv as _csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, FormatError

PENDULUM_SIDE = 16
ROD_LENGTH = 6.0  # px from the image centre
ROD_WIDTH = 0.5  # Gaussian half-width of the rod profile, px
BOB_SIGMA = 1.2  # px

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    samples: np.ndarray  # [N, data_dim]
    kind: str  # "continuous" | "binary"
    metadata: np.ndarray | None = None  # per-sample angle or label

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ContractViolation(f"dataset needs shape [N, dim], got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ContractViolation("dataset contains non-finite values")
        if self.kind == "binary" and not np.all((self.samples == 0) | (self.samples == 1)):
            raise ContractViolation("binary dataset contains values outside {0, 1}")

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass
class PendulumSpec:
    count: int = 15_000
    noise_std: float = 0.05
    seed: int = 0
    image_side: int = PENDULUM_SIDE
    angles: np.ndarray | None = None  # override the uniform [0, 360) draw


def pendulum_render(angle_degrees: float) -> np.ndarray:
    """Noiseless 16x16 pendulum image in [0, 1].

    An anti-aliased rod extends from the image centre at the given angle
    (0 degrees points down the image) with a Gaussian-blob bob at its tip.
    """
    side = PENDULUM_SIDE
    theta = np.deg2rad(float(angle_degrees) % 360.0)
    centre = (side - 1) / 2.0
    direction = np.array([np.sin(theta), np.cos(theta)])  # (x, y), y grows downward
    tip = ROD_LENGTH * direction

    jj, ii = np.meshgrid(np.arange(side), np.arange(side), indexing="xy")
    px = jj - centre  # x
    py = ii - centre  # y
    # distance from each pixel to the centre-tip segment
    t = np.clip((px * tip[0] + py * tip[1]) / (ROD_LENGTH ** 2), 0.0, 1.0)
    dx = px - t * tip[0]
    dy = py - t * tip[1]
    d2 = dx * dx + dy * dy
    rod = np.exp(-d2 / (2.0 * ROD_WIDTH ** 2))
    bx = px - tip[0]
    by = py - tip[1]
    bob = np.exp(-(bx * bx + by * by) / (2.0 * BOB_SIGMA ** 2))
    return np.maximum(rod, bob)


def pendulum_dataset(spec: PendulumSpec) -> Dataset:
    """Render count pendulum images and add per-pixel Gaussian noise."""
    rng = np.random.default_rng(spec.seed)
    if spec.angles is not None:
        angles = np.asarray(spec.angles, dtype=float)
    else:
        angles = rng.uniform(0.0, 360.0, size=spec.count)
    images = np.stack([pendulum_render(a).ravel() for a in angles])
    if spec.noise_std > 0.0:
        images = images + rng.normal(0.0, spec.noise_std, size=images.shape)
    return Dataset(samples=images, kind="continuous", metadata=angles)


def mnist_load(image_path, label_path=None, binarise_threshold: float | None = 0.5) -> Dataset:
    """Parse IDX image (and optional label) files.

    Pixels are scaled to [0, 1] and, when a threshold is given, binarised at
    it. Headers are big-endian; a wrong magic number or a truncated payload
    raises a FormatError carrying the byte offset.
    """
    with open(image_path, "rb") as fh:
        raw = fh.read()
    magic, n = _read_header(raw, image_path, IDX_IMAGES_MAGIC, dims=3)
    rows, cols = struct.unpack_from(">II", raw, 8)
    need = 16 + n * rows * cols
    if len(raw) < need:
        raise FormatError(f"{image_path}: truncated at byte {len(raw)}, expected {need}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16)
    samples = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    kind = "continuous"
    if binarise_threshold is not None:
        samples = (samples >= binarise_threshold).astype(np.float64)
        kind = "binary"

    labels = None
    if label_path is not None:
        with open(label_path, "rb") as fh:
            lraw = fh.read()
        _, ln = _read_header(lraw, label_path, IDX_LABELS_MAGIC, dims=1)
        if ln != n:
            raise FormatError(f"{label_path}: {ln} labels for {n} images")
        if len(lraw) < 8 + ln:
            raise FormatError(f"{label_path}: truncated at byte {len(lraw)}, expected {8 + ln}")
        labels = np.frombuffer(lraw, dtype=np.uint8, count=ln, offset=8).astype(np.int64)
    return Dataset(samples=samples.reshape(n, rows * cols), kind=kind, metadata=labels)


def _read_header(raw: bytes, path, want_magic: int, dims: int):
    header_len = 4 + 4 * dims
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != want_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at byte 0, expected 0x{want_magic:08x}")
    (count,) = struct.unpack_from(">I", raw, 4)
    return magic, count


def csv_load(path, delimiter: str = ",") -> Dataset:
    """Load a rectangular numeric table; a non-numeric first row is a header."""
    rows = []
    with open(path, newline="") as fh:
        reader = _csv.reader(fh, delimiter=delimiter)
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                values = [float(v) for v in row]
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise FormatError(f"{path}: non-numeric cell at line {lineno}")
            if rows and len(values) != len(rows[0]):
                raise FormatError(f"{path}: ragged row at line {lineno}")
            rows.append(values)
    if not rows:
        raise FormatError(f"{path}: no numeric rows")
    return Dataset(samples=np.asarray(rows), kind="continuous")


def save_dataset(path, dataset: Dataset) -> None:
    """Self-describing .npz container (samples, kind, optional metadata)."""
    payload = {"samples": dataset.samples, "kind": np.array(dataset.kind)}
    if dataset.metadata is not None:
        payload["metadata"] = dataset.metadata
    np.savez_compressed(path, **payload)


def load_dataset(path) -> Dataset:
    path = str(path)
    if path.endswith(".csv") or path.endswith(".txt"):
        return csv_load(path)
    with np.load(path) as z:
        return Dataset(samples=z["samples"], kind=str(z["kind"]),
                       metadata=z["metadata"] if "metadata" in z else None)


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffle order for one epoch, a pure function of (seed, epoch)."""
    return np.random.default_rng((seed, epoch)).permutation(n)


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> "list[np.ndarray]":
    """Index batches for one epoch: seeded shuffle, short tail dropped."""
    if batch_size < 2:
        raise ContractViolation(f"batch_size must be >= 2 for pairing, got {batch_size}")
    perm = epoch_permutation(n, seed, epoch)
    per_epoch = n // batch_size
    return [perm[i * batch_size:(i + 1) * batch_size] for i in range(per_epoch)]


def batches(dataset: Dataset, batch_size: int, seed: int):
    """Endless iterator over per-epoch index batches."""
    epoch = 0
    while True:
        for idx in epoch_batches(dataset.count, batch_size, seed, epoch):
            yield idx
        epoch += 1
