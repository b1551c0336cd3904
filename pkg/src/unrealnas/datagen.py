"""Unreal datasets (RLRD, RLGD, RLRN), the REAL baseline, splits and file I/O.

Images are stored as one ``(n, H, W, C)`` float32 array. Every random draw is
keyed by ``(seed, purpose, sample index)`` so a dataset is a pure function of
its manifest, independent of generation order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fractal
from .rng import stream, uniform_indices

__all__ = [
    "KINDS",
    "IMAGE_SHAPE",
    "CIFAR_MEAN",
    "CIFAR_STD",
    "DatasetError",
    "ChecksumError",
    "FormatError",
    "LabelAssignment",
    "UnrealDataset",
    "DatasetView",
    "SplitPair",
    "random_labels",
    "build_rlrd",
    "build_rlgd",
    "build_rlrn",
    "build_real",
    "build_dataset",
    "regenerate",
    "make_split",
    "hflip",
    "save_dataset",
    "load_dataset",
    "read_manifest",
    "load_cifar_batches",
    "write_cifar_batch",
    "sample_real_images",
    "load_digits_real",
]

KINDS = ("RLRD", "RLGD", "RLRN", "REAL")
UNREAL_KINDS = ("RLRD", "RLGD", "RLRN")
IMAGE_SHAPE = (32, 32, 3)

CIFAR_MEAN = (0.49139968, 0.48215827, 0.44653124)
CIFAR_STD = (0.24703233, 0.24348505, 0.26158768)

FORMAT_VERSION = 1
_MAGIC = b"UNRL"
_HEADER = struct.Struct("<4sHIHHHH")
_DTYPE_TAGS = {1: np.dtype("<f4")}


class DatasetError(ValueError):
    pass


class ChecksumError(DatasetError):
    pass


class FormatError(DatasetError):
    pass


@dataclass(frozen=True, eq=False)
class LabelAssignment:
    num_classes: int
    labels: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.num_classes < 1:
            raise DatasetError(f"num_classes must be >= 1, got {self.num_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DatasetError("label index out of range")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        if not isinstance(other, LabelAssignment):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.seed == other.seed
            and np.array_equal(self.labels, other.labels)
        )


def _canonical(obj):
    # JSON round trip: what gets written is exactly what compares equal later.
    return json.loads(json.dumps(obj, sort_keys=True))


@dataclass(frozen=True, eq=False)
class UnrealDataset:
    kind: str
    images: np.ndarray
    labels: LabelAssignment
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DatasetError(f"unknown dataset kind {self.kind!r}")
        images = np.ascontiguousarray(self.images, dtype=np.float32)
        if images.ndim != 4:
            raise DatasetError(f"images must be (n, H, W, C), got shape {images.shape}")
        if len(images) != len(self.labels):
            raise DatasetError(f"{len(images)} images but {len(self.labels)} labels")
        if not np.isfinite(images).all():
            raise DatasetError("images contain non-finite values")
        images.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "manifest", _canonical(self.manifest))

    @property
    def n(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return self.labels.num_classes

    @property
    def norm_stats(self) -> tuple[np.ndarray, np.ndarray]:
        stats = self.manifest["normalization"]
        return np.asarray(stats["mean"], dtype=np.float32), np.asarray(stats["std"], dtype=np.float32)

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, UnrealDataset):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.images.shape == other.images.shape
            and np.array_equal(self.images.view(np.uint32), other.images.view(np.uint32))
            and self.labels == other.labels
            and self.manifest == other.manifest
        )


# ------------------------------------------------------------- builders


def random_labels(n: int, d_rand: int, seed: int) -> LabelAssignment:
    """``n`` i.i.d. labels, uniform over ``[0, d_rand)``."""
    if d_rand < 1:
        raise DatasetError(f"d_rand must be >= 1, got {d_rand}")
    if n < 1:
        raise DatasetError(f"n must be >= 1, got {n}")
    return LabelAssignment(int(d_rand), uniform_indices(seed, "labels", n, d_rand), int(seed))


def _channel_stats(images: np.ndarray) -> dict:
    flat = images.reshape(-1, images.shape[-1]).astype(np.float64)
    std = flat.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return {"mean": [float(v) for v in flat.mean(axis=0)], "std": [float(v) for v in std]}


def _as_image_array(images) -> np.ndarray:
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1:] != IMAGE_SHAPE:
        raise DatasetError(f"expected images of shape (n, 32, 32, 3), got {arr.shape}")
    if len(arr) == 0:
        raise DatasetError("no source images")
    return arr


def _sha256(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def build_rlrd(source_images, d_rand: int, seed: int, source: str = "unspecified") -> UnrealDataset:
    """Real images paired with uniformly random labels over ``d_rand`` classes."""
    images = _as_image_array(source_images)
    labels = random_labels(len(images), d_rand, seed)
    manifest = {
        "kind": "RLRD",
        "n": len(images),
        "d_rand": int(d_rand),
        "seed": int(seed),
        "generator": {"source": source, "source_sha256": _sha256(images)},
        "normalization": _channel_stats(images),
    }
    return UnrealDataset("RLRD", images, labels, manifest)


def _rlgd_images(num_categories, instances_per_category, seed, render_params, max_skip_factor=20):
    images = np.empty((num_categories * instances_per_category, *IMAGE_SHAPE), dtype=np.float32)
    out = 0
    for cat_seed in fractal.category_seeds(seed, num_categories):
        sys = fractal.sample_category(cat_seed, render_params)
        got = 0
        for k in range(max_skip_factor * instances_per_category):
            img = fractal.render_instance(sys, k, cat_seed)
            if img is None:
                continue
            images[out] = img
            out += 1
            got += 1
            if got == instances_per_category:
                break
        else:
            raise fractal.ResamplingExhaustedError(
                f"category {cat_seed} produced only {got} renderable instances"
            )
    return images


def build_rlgd(
    num_categories: int = 100,
    instances_per_category: int = 500,
    d_rand: int = 5000,
    seed: int = 0,
    render_params: fractal.RenderParams | None = None,
) -> UnrealDataset:
    """Fractal images from random IFS categories, with fresh random labels.

    Category identity is discarded; only the random labels are kept.
    """
    if num_categories < 1 or instances_per_category < 1:
        raise DatasetError("num_categories and instances_per_category must be >= 1")
    rp = render_params or fractal.RenderParams()
    if (rp.height, rp.width, rp.channels) != IMAGE_SHAPE:
        raise DatasetError(f"render size must be {IMAGE_SHAPE}")
    images = _rlgd_images(num_categories, instances_per_category, seed, rp)
    labels = random_labels(len(images), d_rand, seed)
    manifest = {
        "kind": "RLGD",
        "n": len(images),
        "d_rand": int(d_rand),
        "seed": int(seed),
        "generator": {
            "num_categories": int(num_categories),
            "instances_per_category": int(instances_per_category),
            "render": rp.as_dict(),
        },
        "normalization": _channel_stats(images),
    }
    return UnrealDataset("RLGD", images, labels, manifest)


def build_rlrn(n: int, d_rand: int = 5000, seed: int = 0) -> UnrealDataset:
    """Standard-normal float pixels with uniformly random labels."""
    if n < 1:
        raise DatasetError(f"n must be >= 1, got {n}")
    images = np.empty((n, *IMAGE_SHAPE), dtype=np.float32)
    for i in range(n):
        images[i] = stream(seed, "rlrn-pixels", i).standard_normal(IMAGE_SHAPE, dtype=np.float32)
    labels = random_labels(n, d_rand, seed)
    manifest = {
        "kind": "RLRN",
        "n": int(n),
        "d_rand": int(d_rand),
        "seed": int(seed),
        "generator": {"distribution": "standard_normal", "dtype": "float32"},
        "normalization": _channel_stats(images),
    }
    return UnrealDataset("RLRN", images, labels, manifest)


def build_real(images, labels, num_classes: int, source: str = "unspecified", norm_stats=None) -> UnrealDataset:
    """Ground-truth labelled real images, the supervised baseline."""
    images = _as_image_array(images)
    la = LabelAssignment(int(num_classes), np.asarray(labels), None)
    if norm_stats is None:
        stats = _channel_stats(images)
    else:
        mean, std = norm_stats
        stats = {"mean": [float(v) for v in mean], "std": [float(v) for v in std]}
    manifest = {
        "kind": "REAL",
        "n": len(images),
        "d_rand": int(num_classes),
        "seed": None,
        "generator": {"source": source, "source_sha256": _sha256(images)},
        "normalization": stats,
    }
    return UnrealDataset("REAL", images, la, manifest)


def build_dataset(kind: str, **params) -> UnrealDataset:
    kind = kind.upper()
    if kind == "RLGD":
        return build_rlgd(**params)
    if kind == "RLRN":
        return build_rlrn(**params)
    if kind == "RLRD":
        return build_rlrd(**params)
    if kind == "REAL":
        return build_real(**params)
    raise DatasetError(f"unknown dataset kind {kind!r}")


def regenerate(manifest: dict, source_images=None) -> UnrealDataset:
    """Rebuild a dataset from its manifest alone (RLRN, RLGD) or from its source (RLRD)."""
    kind = manifest.get("kind")
    gen = manifest.get("generator", {})
    if kind == "RLRN":
        return build_rlrn(manifest["n"], manifest["d_rand"], manifest["seed"])
    if kind == "RLGD":
        return build_rlgd(
            gen["num_categories"],
            gen["instances_per_category"],
            manifest["d_rand"],
            manifest["seed"],
            fractal.RenderParams.from_dict(gen["render"]),
        )
    if kind == "RLRD":
        if source_images is None:
            raise DatasetError("RLRD regeneration needs the source images")
        ds = build_rlrd(source_images, manifest["d_rand"], manifest["seed"], gen.get("source", "unspecified"))
        if ds.manifest["generator"]["source_sha256"] != gen.get("source_sha256"):
            raise ChecksumError("source images differ from the ones named in the manifest")
        return ds
    raise DatasetError(f"cannot regenerate a {kind!r} dataset from its manifest")


# ------------------------------------------------------------ transforms


def hflip(images: np.ndarray) -> np.ndarray:
    """Mirror ``(..., H, W, C)`` images left-right."""
    return images[..., :, ::-1, :]


def _normalize(images, mean, std):
    return (images - mean) / std


def _crop_flip(images: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    n, h, w, _ = images.shape
    padded = np.pad(images, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    dy = rng.integers(0, 2 * pad + 1, size=n)
    dx = rng.integers(0, 2 * pad + 1, size=n)
    flip = rng.random(n) < 0.5
    out = np.empty_like(images)
    for i in range(n):
        crop = padded[i, dy[i] : dy[i] + h, dx[i] : dx[i] + w]
        out[i] = crop[:, ::-1] if flip[i] else crop
    return out


TRANSFORMS = ("normalize", "flip_normalize", "crop_flip_normalize")


@dataclass(frozen=True, eq=False)
class DatasetView:
    """Indexed view of a dataset with a fixed image transform.

    ``crop_flip_normalize`` is random and needs a generator at batch time;
    the other transforms are deterministic.
    """

    dataset: UnrealDataset
    indices: np.ndarray
    transform: str = "normalize"

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise DatasetError(f"unknown transform {self.transform!r}")
        idx = np.asarray(self.indices, dtype=np.int64)
        if len(idx) == 0:
            raise DatasetError("empty dataset view")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    @property
    def num_classes(self) -> int:
        return self.dataset.num_classes

    @property
    def labels(self) -> np.ndarray:
        return self.dataset.labels.labels[self.indices]

    def images(self, positions=None, rng: np.random.Generator | None = None) -> np.ndarray:
        """Transformed ``(b, H, W, C)`` images at view ``positions`` (all by default)."""
        pos = slice(None) if positions is None else np.asarray(positions)
        x = self.dataset.images[self.indices[pos]]
        mean, std = self.dataset.norm_stats
        if self.transform == "crop_flip_normalize":
            if rng is None:
                raise DatasetError("random crop/flip needs a generator")
            x = _crop_flip(x, rng)
        elif self.transform == "flip_normalize":
            x = hflip(x)
        return np.ascontiguousarray(_normalize(x, mean, std), dtype=np.float32)

    def batch(self, positions, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
        """``(x, y)`` with ``x`` laid out ``(b, C, H, W)`` for the network."""
        x = self.images(positions, rng).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(x), self.labels[np.asarray(positions)]


@dataclass(frozen=True)
class SplitPair:
    train: DatasetView
    val: DatasetView


def make_split(ds: UnrealDataset, disjoint: bool | None = None) -> SplitPair:
    """Train/validation views for search.

    Unreal kinds reuse the same samples on both sides: train is normalised
    only, validation is mirrored then normalised. REAL data is split into
    disjoint halves with random crop + flip on train. ``disjoint=True``
    forces disjoint halves for unreal kinds too.
    """
    n = ds.n
    if disjoint is None:
        disjoint = ds.kind == "REAL"
    if disjoint:
        if n < 2:
            raise DatasetError("need at least two samples for disjoint halves")
        half = n // 2
        train_idx, val_idx = np.arange(half), np.arange(half, n)
    else:
        train_idx = val_idx = np.arange(n)
    if ds.kind == "REAL":
        return SplitPair(DatasetView(ds, train_idx, "crop_flip_normalize"), DatasetView(ds, val_idx, "normalize"))
    return SplitPair(DatasetView(ds, train_idx, "normalize"), DatasetView(ds, val_idx, "flip_normalize"))


# ---------------------------------------------------------------- file I/O


def _paths(path) -> tuple[Path, Path, Path]:
    p = Path(path)
    name = p.name
    for suffix in (".manifest.json", ".images.bin", ".labels.bin"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    base = p.with_name(name)
    return (
        base.with_name(name + ".manifest.json"),
        base.with_name(name + ".images.bin"),
        base.with_name(name + ".labels.bin"),
    )


def save_dataset(ds: UnrealDataset, path) -> dict:
    """Write ``<path>.manifest.json``, ``<path>.images.bin`` and ``<path>.labels.bin``.

    Returns the manifest as written (with format version and checksum).
    """
    man_p, img_p, lab_p = _paths(path)
    man_p.parent.mkdir(parents=True, exist_ok=True)
    n, h, w, c = ds.images.shape
    img_bytes = _HEADER.pack(_MAGIC, FORMAT_VERSION, n, h, w, c, 1) + ds.images.astype("<f4").tobytes()
    lab_bytes = ds.labels.labels.astype("<u4").tobytes()
    digest = hashlib.sha256(img_bytes + lab_bytes).hexdigest()
    written = dict(ds.manifest)
    written.update(
        {
            "format_version": FORMAT_VERSION,
            "checksum": {"sha256": digest},
            "label_seed": ds.labels.seed,
            "files": {"images": img_p.name, "labels": lab_p.name},
        }
    )
    img_p.write_bytes(img_bytes)
    lab_p.write_bytes(lab_bytes)
    man_p.write_text(json.dumps(written, indent=2, sort_keys=True) + "\n")
    return written


_FILE_KEYS = ("format_version", "checksum", "label_seed", "files")


def read_manifest(path) -> dict:
    man_p, _, _ = _paths(path)
    try:
        written = json.loads(man_p.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest {man_p} is not valid JSON: {exc}") from exc
    if written.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported dataset format version {written.get('format_version')!r}")
    return written


def load_dataset(path, manifest_only: bool = False, source_images=None) -> UnrealDataset:
    """Load a dataset written by :func:`save_dataset`.

    With ``manifest_only`` the tensors are regenerated from the manifest
    instead of read from disk.
    """
    written = read_manifest(path)
    manifest = {k: v for k, v in written.items() if k not in _FILE_KEYS}
    if manifest_only:
        return regenerate(manifest, source_images)
    _, img_p, lab_p = _paths(path)
    img_bytes = img_p.read_bytes()
    lab_bytes = lab_p.read_bytes()
    if hashlib.sha256(img_bytes + lab_bytes).hexdigest() != written["checksum"]["sha256"]:
        raise ChecksumError(f"checksum mismatch for dataset {path}")
    magic, version, n, h, w, c, tag = _HEADER.unpack_from(img_bytes)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported image blob version {version}")
    if tag not in _DTYPE_TAGS:
        raise FormatError(f"unknown dtype tag {tag}")
    images = np.frombuffer(img_bytes, dtype=_DTYPE_TAGS[tag], offset=_HEADER.size).reshape(n, h, w, c)
    labels = np.frombuffer(lab_bytes, dtype="<u4").astype(np.int64)
    la = LabelAssignment(int(manifest["d_rand"]), labels, written.get("label_seed"))
    return UnrealDataset(manifest["kind"], images.astype(np.float32), la, manifest)


# ------------------------------------------------------ real image sources


def load_cifar_batches(paths: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Read CIFAR-10 binary batches (3073-byte records: label, R, G, B planes).

    Returns float32 images in ``[0, 1]`` shaped ``(n, 32, 32, 3)`` and labels.
    """
    chunks = []
    for p in paths:
        raw = np.fromfile(p, dtype=np.uint8)
        if raw.size % 3073:
            raise FormatError(f"{p} is not a whole number of 3073-byte records")
        chunks.append(raw.reshape(-1, 3073))
    if not chunks:
        raise DatasetError("no CIFAR batch files given")
    rec = np.concatenate(chunks)
    labels = rec[:, 0].astype(np.int64)
    images = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1).astype(np.float32) / 255.0
    return images, labels


def write_cifar_batch(path, images_uint8: np.ndarray, labels: np.ndarray) -> None:
    """Write ``(n, 32, 32, 3)`` uint8 images in the CIFAR-10 binary layout."""
    planes = np.asarray(images_uint8, dtype=np.uint8).transpose(0, 3, 1, 2).reshape(len(labels), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], planes], axis=1)
    rec.tofile(path)


def sample_real_images(n: int, seed: int = 0, max_scale: int = 4) -> np.ndarray:
    """``n`` random 32x32 views of the photographs bundled with scikit-learn.

    Each view is a ``32 s`` square window (``s`` drawn from 1..max_scale)
    block-averaged down to 32x32 and mirrored with probability 1/2. A
    stand-in real-image corpus when CIFAR-10 is not available locally.
    """
    from sklearn.datasets import load_sample_images

    photos = [np.asarray(im, dtype=np.float32) / 255.0 for im in load_sample_images().images]
    out = np.empty((n, *IMAGE_SHAPE), dtype=np.float32)
    for i in range(n):
        rng = stream(seed, "real-crop", i)
        im = photos[int(rng.integers(len(photos)))]
        s = int(rng.integers(1, max_scale + 1))
        size = 32 * s
        r = int(rng.integers(im.shape[0] - size + 1))
        c = int(rng.integers(im.shape[1] - size + 1))
        view = im[r : r + size, c : c + size].reshape(32, s, 32, s, 3).mean(axis=(1, 3))
        out[i] = view[:, ::-1] if rng.random() < 0.5 else view
    return out


def load_digits_real() -> UnrealDataset:
    """scikit-learn's 8x8 digits upscaled to 32x32x3: a small labelled REAL set."""
    from sklearn.datasets import load_digits

    d = load_digits()
    imgs = d.images.astype(np.float32) / 16.0
    imgs = np.repeat(np.repeat(imgs, 4, axis=1), 4, axis=2)
    imgs = np.repeat(imgs[..., None], 3, axis=3)
    return build_real(imgs, d.target, 10, source="sklearn-digits-upscaled")
