"""Directory-per-class ingestion, class balancing, and split bookkeeping.

Layout contract: <root>/nonPdr/*.{png,jpg,jpeg} and <root>/pdr/*.{...};
label 0 is "nonPdr", label 1 is "pdr". Traversal is sorted so two runs over
the same tree produce identical orderings.
"""

import logging
import os
from dataclasses import dataclass

from .errors import ConfigError, DataError
from .imgproc import Image, resize

logger = logging.getLogger(__name__)

CLASS_NAMES = ("nonPdr", "pdr")
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
DEFAULT_SIZE = (224, 224)


@dataclass
class Sample:
    image: Image
    label: int
    source_path: str


@dataclass
class DatasetSplit:
    train: list
    valid: list
    test: list
    class_names: tuple = CLASS_NAMES

    def partitions(self):
        return (("train", self.train), ("valid", self.valid), ("test", self.test))


def _class_dirs(root):
    if not os.path.isdir(root):
        raise DataError(f"dataset directory does not exist: {root}")
    dirs = sorted(
        f for f in os.listdir(root)
        if not f.startswith(".") and os.path.isdir(os.path.join(root, f))
    )
    for name in dirs:
        if name not in CLASS_NAMES:
            raise ConfigError(
                f"unknown class directory {name!r} under {root}; expected one of {list(CLASS_NAMES)}"
            )
    return dirs


def load_samples(root, size=DEFAULT_SIZE):
    """Load every readable image under the class layout, resized to `size`.

    Returns (samples, failed_paths); unreadable files are logged and skipped.
    """
    samples = []
    failed = []
    for cls in _class_dirs(root):
        label = CLASS_NAMES.index(cls)
        cls_dir = os.path.join(root, cls)
        for fname in sorted(os.listdir(cls_dir)):
            if fname.startswith("."):
                continue
            if os.path.splitext(fname)[1].lower() not in IMAGE_EXTENSIONS:
                continue
            path = os.path.join(cls_dir, fname)
            try:
                img = resize(Image.load(path), size)
            except Exception as exc:
                logger.warning("skipping unreadable image %s: %s", path, exc)
                failed.append(path)
                continue
            samples.append(Sample(image=img, label=label, source_path=path))
    if failed:
        logger.warning("%d image(s) failed to load under %s", len(failed), root)
    return samples, failed


def read_images(root, size=DEFAULT_SIZE):
    """(images, labels) view of load_samples, in deterministic sorted order."""
    samples, _ = load_samples(root, size)
    return [s.image for s in samples], [s.label for s in samples]


def balance(samples, per_class, rng):
    """Draw exactly `per_class` samples per class, uniformly without
    replacement, keeping the original relative order of the selected ones."""
    per_class = int(per_class)
    by_class = {i: [] for i in range(len(CLASS_NAMES))}
    for idx, s in enumerate(samples):
        by_class[s.label].append(idx)
    keep = set()
    for label, indices in by_class.items():
        if len(indices) < per_class:
            raise DataError(
                f"class {CLASS_NAMES[label]!r} has {len(indices)} samples, "
                f"need {per_class} for balancing"
            )
        chosen = rng.choice(len(indices), size=per_class, replace=False)
        keep.update(indices[int(c)] for c in chosen)
    return [s for i, s in enumerate(samples) if i in keep]


def make_splits(train_dir, valid_dir, test_dir, size=DEFAULT_SIZE):
    """Assemble a DatasetSplit from three directory roots."""
    parts = {}
    for name, root in (("train", train_dir), ("valid", valid_dir), ("test", test_dir)):
        samples, _ = load_samples(root, size)
        if not samples:
            raise DataError(f"{name} partition at {root} is empty")
        parts[name] = samples
    split = DatasetSplit(train=parts["train"], valid=parts["valid"], test=parts["test"])
    logger.info("dataset manifest:\n%s", split_manifest(split))
    return split


def partition_manifest(parts, class_names=CLASS_NAMES):
    """Per-class counts for (name, samples) pairs, as a readable text report."""
    lines = []
    for name, samples in parts:
        counts = [0] * len(class_names)
        for s in samples:
            counts[s.label] += 1
        per_class = ", ".join(f"{cls}={counts[i]}" for i, cls in enumerate(class_names))
        balanced = "balanced" if len(set(counts)) == 1 else "IMBALANCED"
        lines.append(f"{name}: total={len(samples)} ({per_class}) [{balanced}]")
    return "\n".join(lines)


def split_manifest(split):
    """Per-class counts per partition of a DatasetSplit."""
    return partition_manifest(split.partitions(), split.class_names)
