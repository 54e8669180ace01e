"""IDX ingestion and construction of permuted / rotated task sequences."""
import gzip
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import AngleOutOfRange, BadMagic, CountMismatch, TruncatedFile

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DATA_DIR_ENV = "BOCL_DATA_DIR"
CACHE_DIR_ENV = "BOCL_CACHE_DIR"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class LabeledSet:
    images: np.ndarray  # (N, H, W, C) in [0, 1]
    labels: np.ndarray
    class_count: int = 10

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim == 3:
            self.images = self.images[..., None]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise CountMismatch(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "LabeledSet":
        return LabeledSet(self.images[idx], self.labels[idx], self.class_count)


@dataclass
class Task:
    train: LabeledSet
    val: LabeledSet
    test: LabeledSet
    kind: str
    index: int
    seed: Optional[int] = None
    angle: Optional[float] = None

    @property
    def digest(self) -> str:
        return provenance_digest(self.kind, self.index, self.seed if self.kind == "permutation" else self.angle)


@dataclass
class TaskSequence:
    tasks: List[Task]
    kind: str
    master_seed: int

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]

    def digests(self) -> List[str]:
        return [t.digest for t in self.tasks]


def provenance_digest(kind: str, index: int, param) -> str:
    payload = json.dumps({"kind": kind, "index": int(index), "param": param}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# IDX


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path, magic):
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise TruncatedFile(f"{path}: {len(raw)} bytes is shorter than an IDX header")
    found, count = struct.unpack(">II", raw[:8])
    if found != magic:
        raise BadMagic(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFile(f"{path}: header needs {header} bytes, file has {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    if len(raw) - header < expected:
        raise TruncatedFile(f"{path}: expected {expected} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header).reshape(dims)


def load_idx(images_path, labels_path, class_count: int = 10) -> LabeledSet:
    """Parse an IDX image/label file pair (optionally gzipped) into a LabeledSet."""
    images = _read_idx(images_path, IMAGE_MAGIC)
    labels = _read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images_path} has {images.shape[0]} images, {labels_path} has {labels.shape[0]} labels")
    return LabeledSet(images.astype(np.float64) / 255.0, labels.astype(np.int64), class_count)


def write_idx(images_path, labels_path, images_u8, labels_u8) -> None:
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels_u8 = np.asarray(labels_u8, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">II", IMAGE_MAGIC, images_u8.shape[0]))
        f.write(struct.pack(">II", *images_u8.shape[1:3]))
        f.write(images_u8.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, labels_u8.shape[0]))
        f.write(labels_u8.tobytes())


def _find(directory: Path, name: str) -> Optional[Path]:
    for candidate in (name, name + ".gz", name.replace("-idx", ".idx")):
        p = directory / candidate
        if p.exists():
            return p
    return None


def _write_pools(directory: Path, images_u8, labels_u8, test_mask) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    splits = {"train": ~test_mask, "test": test_mask}
    for split, (img_name, lbl_name) in MNIST_FILES.items():
        m = splits[split]
        write_idx(directory / img_name, directory / lbl_name, images_u8[m], labels_u8[m])
    return directory


def write_mnist5k_idx(directory) -> Path:
    """Write the 5,000-image MNIST subset bundled with ``mlxtend`` as IDX files.

    The subset holds 500 images per class in class order. The last 100 of
    each class form the test split, giving a 4,000 / 1,000 train/test pool.
    """
    from mlxtend.data import mnist_data

    x, y = mnist_data()
    images = np.asarray(x, dtype=np.float64).reshape(-1, 28, 28).round().astype(np.uint8)
    labels = np.asarray(y).astype(np.uint8)
    rank = np.zeros(len(labels), dtype=np.int64)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rank[idx] = np.arange(len(idx)) - len(idx)
    return _write_pools(Path(directory), images, labels, rank >= -100)


def write_digits_idx(directory) -> Path:
    """Write scikit-learn's bundled 8x8 digits as an MNIST-style IDX file set.

    The last 397 images form the test split. Pixel intensities 0..16 map
    linearly onto 0..255.
    """
    from sklearn.datasets import load_digits

    digits = load_digits()
    images = np.round(digits.images * (255.0 / 16.0)).astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    test = np.arange(len(labels)) >= len(labels) - 397
    return _write_pools(Path(directory), images, labels, test)


BUNDLED_SOURCES = {"mnist5k": write_mnist5k_idx, "digits": write_digits_idx}


def _bundled_source(preferred: Optional[str]) -> str:
    if preferred:
        if preferred not in BUNDLED_SOURCES:
            raise ValueError(f"unknown bundled source {preferred!r}; expected one of {sorted(BUNDLED_SOURCES)}")
        return preferred
    try:
        import mlxtend  # noqa: F401
    except ImportError:
        return "digits"
    return "mnist5k"


def load_pools(data_dir=None, source: Optional[str] = None) -> Tuple[LabeledSet, LabeledSet, str]:
    """Return (train pool, test pool, source name).

    Looks for MNIST IDX files in ``data_dir`` or ``$BOCL_DATA_DIR``. If none
    are configured, a bundled stand-in is written as IDX under
    ``$BOCL_CACHE_DIR`` (default ``~/.cache/bocl``) and read back:
    ``mnist5k`` (real MNIST images, needs ``mlxtend``) or ``digits``
    (scikit-learn 8x8 digits). ``source`` picks one explicitly.
    """
    data_dir = data_dir or os.environ.get(DATA_DIR_ENV)
    if data_dir:
        directory = Path(data_dir)
        paths = {k: (_find(directory, a), _find(directory, b)) for k, (a, b) in MNIST_FILES.items()}
        missing = [MNIST_FILES[k][i] for k, v in paths.items() for i, p in enumerate(v) if p is None]
        if missing:
            raise FileNotFoundError(f"{directory}: missing IDX files {missing}")
        name = "idx:" + str(directory)
    else:
        name = _bundled_source(source)
        cache = Path(os.environ.get(CACHE_DIR_ENV, Path.home() / ".cache" / "bocl")) / name
        if not all((cache / n).exists() for pair in MNIST_FILES.values() for n in pair):
            BUNDLED_SOURCES[name](cache)
        paths = {k: (cache / a, cache / b) for k, (a, b) in MNIST_FILES.items()}
    train = load_idx(*paths["train"])
    test = load_idx(*paths["test"])
    return train, test, name


# ---------------------------------------------------------------------------
# transforms


def pixel_permutation(shape, seed) -> np.ndarray:
    return np.random.default_rng(seed).permutation(int(np.prod(shape)))


def apply_permutation(data: LabeledSet, perm) -> LabeledSet:
    n = len(data)
    shape = data.images.shape[1:]
    flat = data.images.reshape(n, -1)[:, perm]
    return LabeledSet(flat.reshape((n,) + shape), data.labels.copy(), data.class_count)


def permute_pixels(data: LabeledSet, seed) -> LabeledSet:
    """Apply one seeded permutation of all pixel positions to every image."""
    return apply_permutation(data, pixel_permutation(data.images.shape[1:], seed))


def rotate_images(data: LabeledSet, angle: float) -> LabeledSet:
    """Rotate each image about its center (bilinear, zero fill)."""
    if not 0.0 <= angle <= 180.0:
        raise AngleOutOfRange(f"angle {angle} outside [0, 180]")
    if angle == 0.0:
        return LabeledSet(data.images.copy(), data.labels.copy(), data.class_count)
    out = ndimage.rotate(data.images, angle, axes=(2, 1), reshape=False, order=1, mode="constant", cval=0.0)
    return LabeledSet(np.clip(out, 0.0, 1.0), data.labels.copy(), data.class_count)


# ---------------------------------------------------------------------------
# sequences


def split_pool(pool: LabeledSet, rng, n_train: int, n_val: int) -> Tuple[LabeledSet, LabeledSet]:
    if n_train + n_val > len(pool):
        raise ValueError(f"requested {n_train}+{n_val} examples from a pool of {len(pool)}")
    order = rng.permutation(len(pool))
    return pool.subset(order[:n_train]), pool.subset(order[len(pool) - n_val :])


def build_sequence(
    kind: str,
    n_tasks: int,
    train_pool: LabeledSet,
    test_pool: LabeledSet,
    n_train: int,
    n_val: int,
    n_test: int,
    master_seed: int,
) -> TaskSequence:
    """Build a ``permutations`` or ``mix`` task sequence.

    In ``mix`` odd task positions are permutations and even positions are
    rotations at angles evenly spaced over (0, 180].
    """
    if kind not in ("permutations", "mix"):
        raise ValueError(f"unknown sequence kind {kind!r}")
    if n_tasks < 1:
        raise ValueError("a sequence needs at least one task")
    if n_test > len(test_pool):
        raise ValueError(f"requested {n_test} test examples from a pool of {len(test_pool)}")
    ss = np.random.SeedSequence(master_seed)
    children = ss.spawn(n_tasks)
    n_rot = n_tasks // 2 if kind == "mix" else 0
    angles = [180.0 * (j + 1) / n_rot for j in range(n_rot)]
    tasks = []
    for i in range(n_tasks):
        child = children[i]
        split_rng = np.random.default_rng(child.spawn(1)[0])
        train, val = split_pool(train_pool, split_rng, n_train, n_val)
        test = test_pool.subset(split_rng.permutation(len(test_pool))[:n_test])
        rotation = kind == "mix" and i % 2 == 1
        if rotation:
            angle = angles[i // 2]
            tasks.append(Task(*(rotate_images(s, angle) for s in (train, val, test)), "rotation", i + 1, angle=angle))
        else:
            seed = int(child.generate_state(1)[0])
            perm = pixel_permutation(train.images.shape[1:], seed)
            tasks.append(
                Task(*(apply_permutation(s, perm) for s in (train, val, test)), "permutation", i + 1, seed=seed)
            )
    return TaskSequence(tasks, kind, master_seed)
