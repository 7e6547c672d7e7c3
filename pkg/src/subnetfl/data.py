"""Dataset acquisition (MNIST IDX files, synthetic sets), balanced non-IID
label partitioning, and batching.

partition_noniid splits every class into equal shards and deals each client
shards from exactly `classes_per_client` distinct classes, so shard sizes
stay balanced within one example per contributing class.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs must be (N x d) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if self.size < self.class_count:
            raise ValueError("dataset must hold at least one example per class")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


@dataclass
class Partition:
    """Disjoint per-client index lists into a dataset."""

    client_indices: list[np.ndarray]
    classes_per_client: int

    @property
    def clients(self) -> int:
        return len(self.client_indices)


def _open_maybe_gz(path: Path):
    gz = path.with_name(path.name + ".gz")
    if path.exists():
        return open(path, "rb")
    if gz.exists():
        return gzip.open(gz, "rb")
    raise FileNotFoundError(f"missing IDX file {path} (also tried {gz.name})")


def _read_exact(f, n: int, path: Path) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ValueError(f"truncated IDX file {path}: wanted {n} bytes, got {len(data)}")
    return data


def _load_idx_images(path: Path) -> np.ndarray:
    with _open_maybe_gz(path) as f:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(f, 16, path))
        if magic != IDX_IMAGE_MAGIC:
            raise ValueError(f"bad magic 0x{magic:08x} in image file {path} (expected 0x{IDX_IMAGE_MAGIC:08x})")
        raw = _read_exact(f, count * rows * cols, path)
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)
    return pixels.astype(np.float64) / 255.0


def _load_idx_labels(path: Path) -> np.ndarray:
    with _open_maybe_gz(path) as f:
        magic, count = struct.unpack(">ii", _read_exact(f, 8, path))
        if magic != IDX_LABEL_MAGIC:
            raise ValueError(f"bad magic 0x{magic:08x} in label file {path} (expected 0x{IDX_LABEL_MAGIC:08x})")
        raw = _read_exact(f, count, path)
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def load_mnist(dir_path: str | Path, split: str = "train") -> Dataset:
    """Load one MNIST split from the standard big-endian IDX files.

    Pixels are scaled to [0, 1] and flattened to 784 features. Plain and
    .gz-compressed files are both accepted.
    """
    if split not in MNIST_FILES:
        raise ValueError(f"split must be one of {sorted(MNIST_FILES)}, got {split!r}")
    directory = Path(dir_path)
    image_name, label_name = MNIST_FILES[split]
    images = _load_idx_images(directory / image_name)
    labels = _load_idx_labels(directory / label_name)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image/label count mismatch in {directory}: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    return Dataset(images, labels, class_count=10)


def synth_blobs(class_count: int, per_class: int, dim: int, spread: float, seed: int) -> Dataset:
    """Gaussian clusters with unit-separated means; deterministic per seed."""
    if class_count < 1 or per_class < 1 or dim < 1:
        raise ValueError("class count, per-class count, and dimension must be positive")
    if spread < 0.0:
        raise ValueError("spread must be nonnegative")
    rng = np.random.default_rng(seed)
    means = np.zeros((class_count, dim))
    for k in range(class_count):
        means[k, k % dim] = 1.0 + k // dim
    inputs = np.empty((class_count * per_class, dim))
    labels = np.empty(class_count * per_class, dtype=np.int64)
    for k in range(class_count):
        sl = slice(k * per_class, (k + 1) * per_class)
        inputs[sl] = means[k] + spread * rng.standard_normal((per_class, dim))
        labels[sl] = k
    order = rng.permutation(class_count * per_class)
    return Dataset(inputs[order], labels[order], class_count)


# Coarse 7x5 digit glyphs for the rendered-digit dataset.
_DIGIT_GLYPHS = [
    ".###.|#...#|#..##|#.#.#|##..#|#...#|.###.",
    "..#..|.##..|..#..|..#..|..#..|..#..|.###.",
    ".###.|#...#|....#|...#.|..#..|.#...|#####",
    ".###.|#...#|....#|..##.|....#|#...#|.###.",
    "...#.|..##.|.#.#.|#..#.|#####|...#.|...#.",
    "#####|#....|####.|....#|....#|#...#|.###.",
    ".###.|#....|####.|#...#|#...#|#...#|.###.",
    "#####|....#|...#.|..#..|..#..|.#...|.#...",
    ".###.|#...#|#...#|.###.|#...#|#...#|.###.",
    ".###.|#...#|#...#|.####|....#|....#|.###.",
]


def _glyph_image(digit: int) -> np.ndarray:
    rows = _DIGIT_GLYPHS[digit].split("|")
    bitmap = np.array([[1.0 if ch == "#" else 0.0 for ch in row] for row in rows])
    image = np.kron(bitmap, np.ones((4, 4)))  # 28 x 20
    return np.pad(image, ((0, 0), (4, 4)))


def synth_digits(
    per_class: int,
    seed: int,
    max_shift: int = 2,
    max_rotation_deg: float = 20.0,
    blur_sigma: float = 0.7,
    noise: float = 0.15,
) -> Dataset:
    """Rendered 28x28 digit images: glyph prototypes under random rotation,
    shift, blur, and pixel noise. A deterministic desk-scale stand-in for
    handwritten-digit data when no IDX files are available."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    glyphs = [_glyph_image(d) for d in range(10)]
    n = 10 * per_class
    inputs = np.empty((n, 28 * 28))
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        digit = i % 10
        image = glyphs[digit]
        angle = rng.uniform(-max_rotation_deg, max_rotation_deg)
        image = ndimage.rotate(image, angle, reshape=False, order=1, mode="constant")
        dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
        image = ndimage.shift(image, (dy, dx), order=0, mode="constant")
        sigma = rng.uniform(0.5 * blur_sigma, blur_sigma)
        image = ndimage.gaussian_filter(image, sigma)
        image = image + noise * rng.standard_normal(image.shape)
        inputs[i] = np.clip(image, 0.0, 1.0).ravel()
        labels[i] = digit
    order = rng.permutation(n)
    return Dataset(inputs[order], labels[order], class_count=10)


def partition_noniid(dataset: Dataset, clients: int, classes_per_client: int, seed: int) -> Partition:
    """Balanced non-IID label partition.

    Every class is split into clients*sigma/K equal shards (remainder dealt
    round-robin); each client receives shards from exactly sigma distinct
    classes, matched by a seeded greedy that always draws from the classes
    with the most shards remaining. sigma equal to the class count yields an
    IID-style partition where every client holds all classes.
    """
    k = dataset.class_count
    sigma = classes_per_client
    if not 1 <= sigma <= k:
        raise ValueError(f"classes_per_client must be in [1, {k}], got {sigma}")
    if clients < 1:
        raise ValueError("clients must be >= 1")
    if (clients * sigma) % k != 0:
        raise ValueError(
            f"infeasible partition: clients*sigma = {clients * sigma} class-slots "
            f"must be divisible by the class count {k}"
        )
    shards_per_class = clients * sigma // k
    rng = np.random.default_rng(seed)

    # Split each class into equal shards (sizes differ by at most 1).
    class_shards: dict[int, list[np.ndarray]] = {}
    for c in range(k):
        indices = np.flatnonzero(dataset.labels == c)
        if indices.size < shards_per_class:
            raise ValueError(
                f"infeasible partition: class {c} has {indices.size} examples for "
                f"{shards_per_class} shards"
            )
        indices = rng.permutation(indices)
        class_shards[c] = [np.sort(s) for s in np.array_split(indices, shards_per_class)]

    # Deal sigma distinct classes per client, largest remaining counts first.
    remaining = np.full(k, shards_per_class)
    client_classes: list[list[int]] = []
    for _ in range(clients):
        tiebreak = rng.random(k)
        order = np.lexsort((tiebreak, -remaining))
        chosen = [int(c) for c in order[:sigma]]
        if remaining[chosen].min() < 1:
            raise ValueError("infeasible partition: ran out of class shards")
        for c in chosen:
            remaining[c] -= 1
        client_classes.append(chosen)

    client_indices = []
    taken = {c: 0 for c in range(k)}
    for chosen in client_classes:
        parts = []
        for c in chosen:
            parts.append(class_shards[c][taken[c]])
            taken[c] += 1
        client_indices.append(np.sort(np.concatenate(parts)))
    return Partition(client_indices, sigma)


def batch(
    shard: np.ndarray,
    batch_size: int,
    seed: int,
    reshuffle_per_epoch: bool = False,
    epoch: int = 0,
) -> list[np.ndarray]:
    """Split a shard's indices into ceil(|shard|/B) ordered batches.

    The batch count is stable across rounds; ordering is seeded. With
    reshuffling off the order is identical every epoch, keeping the
    per-batch index stable for Fisher bookkeeping.
    """
    shard = np.asarray(shard)
    if shard.size == 0:
        raise ValueError("cannot batch an empty shard")
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    key = [seed, epoch] if reshuffle_per_epoch else [seed]
    order = np.random.default_rng(key).permutation(shard.size)
    shuffled = shard[order]
    return [shuffled[i : i + batch_size] for i in range(0, shard.size, batch_size)]


def write_partition_csv(partition: Partition, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        f.write("client,index\n")
        for client, indices in enumerate(partition.client_indices):
            for idx in indices:
                f.write(f"{client},{int(idx)}\n")
