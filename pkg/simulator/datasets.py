"""Image classification datasets with pixels scaled into [0, 1]."""

import gzip
import logging
import math
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split

from .exceptions import ConfigError
from .flcore import Dataset
from .seeding import STREAM_DATA, derive_rng

logger = logging.getLogger(__name__)

DATASETS = ("digits", "synthetic", "idx")
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

GLYPHS = {
    0: ("..####..", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", "..####..", "........"),
    1: ("...##...", "..###...", "...##...", "...##...", "...##...", "...##...", "..####..", "........"),
    2: ("..####..", ".##..##.", ".....##.", "....##..", "...##...", "..##....", ".######.", "........"),
    3: ("..####..", ".....##.", "....##..", ".....##.", ".....##.", ".##..##.", "..####..", "........"),
    4: ("....##..", "...###..", "..####..", ".##.##..", ".######.", "....##..", "....##..", "........"),
    5: (".######.", ".##.....", ".#####..", ".....##.", ".....##.", ".##..##.", "..####..", "........"),
    6: ("...###..", "..##....", ".##.....", ".#####..", ".##..##.", ".##..##.", "..####..", "........"),
    7: (".######.", ".....##.", "....##..", "...##...", "...##...", "...##...", "...##...", "........"),
    8: ("..####..", ".##..##.", ".##..##.", "..####..", ".##..##.", ".##..##.", "..####..", "........"),
    9: ("..####..", ".##..##.", ".##..##.", "..#####.", ".....##.", "....##..", "..###...", "........"),
}


def load_digits_dataset() -> Dataset:
    digits = load_digits()
    x = (digits.images / 16.0).astype(np.float32)[:, None, :, :]
    return Dataset(x=x, y=digits.target.astype(np.int64), n_classes=10)


def synthetic_digits(n_per_class: int = 180, seed: int = 0, noise: float = 0.1) -> Dataset:
    """Shifted 8x8 glyph templates with additive pixel noise."""
    rng = derive_rng(seed, STREAM_DATA)
    templates = np.array(
        [[[cell == "#" for cell in row] for row in GLYPHS[digit]] for digit in sorted(GLYPHS)],
        dtype=np.float32,
    )
    images, labels = [], []
    for digit, template in enumerate(templates):
        shifts = rng.integers(-1, 2, size=(n_per_class, 2))
        for dy, dx in shifts:
            image = np.roll(template, (int(dy), int(dx)), axis=(0, 1))
            images.append(image + noise * rng.standard_normal(image.shape))
            labels.append(digit)
    x = np.clip(np.stack(images), 0.0, 1.0).astype(np.float32)[:, None, :, :]
    return Dataset(x=x, y=np.asarray(labels, dtype=np.int64), n_classes=len(GLYPHS))


def _read_idx(path: Path, magic: int) -> np.ndarray:
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as handle:
            raw = handle.read()
    except OSError as exc:
        raise ConfigError(f"Cannot read IDX file '{path}': {exc}") from exc
    dims = magic & 0xFF
    header_len = 4 * (dims + 1)
    if len(raw) < header_len:
        raise ConfigError(f"'{path}' is too short for an IDX header with {dims} dimensions.")
    header = np.frombuffer(raw[:header_len], dtype=">u4")
    if int(header[0]) != magic:
        raise ConfigError(f"'{path}' is not an IDX file of the expected kind.")
    shape = tuple(int(v) for v in header[1:])
    expected = math.prod(shape)
    if len(raw) - header_len != expected:
        raise ConfigError(f"'{path}' holds {len(raw) - header_len} data bytes, its header says {expected}.")
    return np.frombuffer(raw, dtype=np.uint8, offset=header_len).reshape(shape)


def load_idx(images_path, labels_path, *, limit=None) -> Dataset:
    images = _read_idx(Path(images_path), IDX_IMAGES_MAGIC)
    labels = _read_idx(Path(labels_path), IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ConfigError("IDX images and labels disagree on the sample count.")
    if limit:
        images, labels = images[:limit], labels[:limit]
    x = (images.astype(np.float32) / 255.0)[:, None, :, :]
    y = labels.astype(np.int64)
    return Dataset(x=x, y=y, n_classes=int(y.max()) + 1)


def load_dataset(name: str, *, seed: int = 0, images_path=None, labels_path=None) -> Dataset:
    if name == "digits":
        dataset = load_digits_dataset()
    elif name == "synthetic":
        dataset = synthetic_digits(seed=seed)
    elif name == "idx":
        if not images_path or not labels_path:
            raise ConfigError("The idx dataset needs image and label file paths.")
        dataset = load_idx(images_path, labels_path)
    else:
        raise ConfigError(f"Unknown dataset '{name}'.")
    logger.debug("Loaded %s: %d samples of shape %s.", name, len(dataset), dataset.x.shape[1:])
    return dataset


def split_dataset(dataset: Dataset, test_fraction: float, seed: int):
    """Stratified train/test split."""
    x_train, x_test, y_train, y_test = train_test_split(
        dataset.x,
        dataset.y,
        test_size=test_fraction,
        random_state=seed,
        stratify=dataset.y,
    )
    return (
        Dataset(x=x_train, y=y_train, n_classes=dataset.n_classes),
        Dataset(x=x_test, y=y_test, n_classes=dataset.n_classes),
    )
