"""Dataset ingestion, splitting, normalization, augmentation, and a
synthetic blob generator for desk-scale experiments.

Directory datasets follow an images/ + masks/ layout with matching file
stems; masks are single-channel with nonzero meaning foreground.  Splits
are 80% development / 20% test, with the development set further divided
80/20 into train/validation (a fixed test-tail mode covers datasets that
ship pre-partitioned).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import affine_transform, gaussian_filter, map_coordinates

from .errors import InvalidFraction, MissingPair, TooSmall, UnreadableImage

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}


@dataclass
class Sample:
    id: str
    image: np.ndarray  # (H, W, 3) float32
    mask: np.ndarray   # (H, W) uint8 in {0, 1}


@dataclass
class Dataset:
    samples: list
    name: str = "dataset"
    image_size: tuple = (0, 0)

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, indices, suffix: str) -> "Dataset":
        return Dataset([self.samples[i] for i in indices],
                       f"{self.name}/{suffix}", self.image_size)


@dataclass(frozen=True)
class SplitSpec:
    dev_fraction: float = 0.8
    train_fraction: float = 0.8
    seed: int = 0
    fixed_test: int | None = None  # reserve the last N samples as the test set

    def __post_init__(self):
        for f in (self.dev_fraction, self.train_fraction):
            if not 0.0 < f < 1.0:
                raise ValueError(f"split fractions must be in (0, 1), got {f}")


def _floor(x: float) -> int:
    # guard against float representation error on exact products like 490*0.8
    return int(math.floor(x + 1e-9))


def split_indices(n: int, spec: SplitSpec):
    """Deterministic (train, val, test) index partition of range(n)."""
    if spec.fixed_test is not None:
        if spec.fixed_test >= n:
            raise TooSmall(f"fixed_test={spec.fixed_test} leaves no development data")
        test = list(range(n - spec.fixed_test, n))
        dev = list(np.random.default_rng(spec.seed).permutation(n - spec.fixed_test))
    else:
        perm = list(np.random.default_rng(spec.seed).permutation(n))
        n_test = _floor(n * (1.0 - spec.dev_fraction))
        test = perm[:n_test]
        dev = perm[n_test:]
    n_train = _floor(len(dev) * spec.train_fraction)
    train, val = dev[:n_train], dev[n_train:]
    if not train or not val or not test:
        raise TooSmall(f"cannot split {n} samples into non-empty train/val/test")
    return [int(i) for i in train], [int(i) for i in val], [int(i) for i in test]


def split(dataset: Dataset, spec: SplitSpec):
    """Split into disjoint (train, val, test) datasets covering every sample."""
    train, val, test = split_indices(len(dataset.samples), spec)
    return (dataset.subset(train, "train"), dataset.subset(val, "val"),
            dataset.subset(test, "test"))


def normalize(image: np.ndarray, mode: str = "zscore") -> np.ndarray:
    """Standardize an image per channel.

    zscore: zero mean, unit variance per channel; a constant channel maps
    to all-zeros.  minmax: rescale each channel to [0, 1] instead.
    """
    img = np.asarray(image, dtype=np.float64)
    if not np.isfinite(img).all():
        raise ValueError("image contains non-finite pixels")
    flat = img.reshape(-1, img.shape[-1]) if img.ndim == 3 else img.reshape(-1, 1)
    if mode == "zscore":
        mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        std_safe = np.where(std > 0, std, 1.0)
        out = (flat - mean) / std_safe
        out[:, std == 0] = 0.0
    elif mode == "minmax":
        lo, hi = flat.min(axis=0), flat.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        out = (flat - lo) / span
        out[:, hi == lo] = 0.0
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    return out.reshape(img.shape)


def mirror(image: np.ndarray, axis: int) -> np.ndarray:
    """Flip along axis 0 (vertical) or 1 (horizontal)."""
    return np.flip(image, axis=axis).copy()


def rotate_zoom(image: np.ndarray, angle_deg: float, zoom: float,
                order: int = 1) -> np.ndarray:
    """Rotate about the center and zoom, edge values reflected."""
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    # inverse mapping: output coords -> input coords
    m = np.array([[cos_t, -sin_t], [sin_t, cos_t]]) / zoom
    center = (np.asarray(image.shape[:2], dtype=np.float64) - 1.0) / 2.0
    offset = center - m @ center

    def warp_plane(plane):
        return affine_transform(plane, m, offset=offset, order=order,
                                mode="reflect")

    if image.ndim == 2:
        return warp_plane(image)
    return np.stack([warp_plane(image[..., c]) for c in range(image.shape[-1])],
                    axis=-1)


def elastic_fields(shape, max_displacement: float, sigma: float,
                   rng: np.random.Generator):
    """Smooth random displacement fields with |d| capped at max_displacement."""
    dy = gaussian_filter(rng.uniform(-1.0, 1.0, shape), sigma, mode="reflect")
    dx = gaussian_filter(rng.uniform(-1.0, 1.0, shape), sigma, mode="reflect")
    peak = max(np.abs(dy).max(), np.abs(dx).max(), 1e-12)
    scale = max_displacement / peak
    return dy * scale, dx * scale


def elastic_deform(image: np.ndarray, dy: np.ndarray, dx: np.ndarray,
                   order: int = 1) -> np.ndarray:
    ys, xs = np.mgrid[0:image.shape[0], 0:image.shape[1]]
    coords = [ys + dy, xs + dx]

    def warp_plane(plane):
        return map_coordinates(plane, coords, order=order, mode="reflect")

    if image.ndim == 2:
        return warp_plane(image)
    return np.stack([warp_plane(image[..., c]) for c in range(image.shape[-1])],
                    axis=-1)


def augment(image: np.ndarray, mask: np.ndarray, seed):
    """Random paired augmentation: zoom, rotation, mirroring, elastic
    deformation and brightness, each applied with probability 0.5.

    Geometric transforms use identical parameters on image and mask; the
    mask is re-binarized after interpolation.  The same seed always yields
    the same output pair.
    """
    rng = np.random.default_rng(seed)
    img = np.asarray(image, dtype=np.float64)
    msk = np.asarray(mask, dtype=np.float64)

    zoom = rng.uniform(0.9, 1.1) if rng.random() < 0.5 else 1.0
    angle = rng.uniform(-15.0, 15.0) if rng.random() < 0.5 else 0.0
    if zoom != 1.0 or angle != 0.0:
        img = rotate_zoom(img, angle, zoom)
        msk = rotate_zoom(msk, angle, zoom)
    if rng.random() < 0.5:
        axis = int(rng.integers(0, 2))
        img, msk = mirror(img, axis), mirror(msk, axis)
    if rng.random() < 0.5:
        dy, dx = elastic_fields(msk.shape, rng.uniform(2.0, 5.0), 8.0, rng)
        img = elastic_deform(img, dy, dx)
        msk = elastic_deform(msk, dy, dx)
    if rng.random() < 0.5:
        img = img * (1.0 + rng.uniform(-0.1, 0.1))
    return img, (msk > 0.5).astype(np.uint8)


def _resolve_size(image_size) -> tuple:
    if isinstance(image_size, int):
        return image_size, image_size
    h, w = image_size
    return int(h), int(w)


def load_dataset(root_dir, image_size) -> Dataset:
    """Load an images/ + masks/ directory of paired files.

    Images are resized bilinearly to image_size; masks are resized with
    nearest-neighbor and re-binarized (nonzero = foreground).
    """
    from PIL import Image

    root = Path(root_dir)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise MissingPair(f"{root} must contain images/ and masks/ directories")

    def stems(d: Path) -> dict:
        return {p.stem: p for p in sorted(d.iterdir())
                if p.suffix.lower() in IMAGE_EXTENSIONS}

    images, masks = stems(img_dir), stems(mask_dir)
    if not images:
        raise MissingPair(f"no images found under {img_dir}")
    missing = sorted(set(images) ^ set(masks))
    if missing:
        raise MissingPair(f"unpaired image/mask stems: {', '.join(missing[:5])}")

    h, w = _resolve_size(image_size)
    samples = []
    for stem in sorted(images):
        try:
            img = Image.open(images[stem]).convert("RGB").resize((w, h), Image.BILINEAR)
            msk = Image.open(masks[stem]).convert("L").resize((w, h), Image.NEAREST)
        except Exception as exc:
            raise UnreadableImage(f"cannot read pair {stem!r}: {exc}") from exc
        image = np.asarray(img, dtype=np.float32) / 255.0
        mask = (np.asarray(msk) > 0).astype(np.uint8)
        samples.append(Sample(id=stem, image=image, mask=mask))
    return Dataset(samples, name=root.name, image_size=(h, w))


def synth_blobs(n: int, size, fg_fraction: float, seed: int = 0,
                min_radius: float = 2.0, max_radius: float | None = None,
                name: str = "synth_blobs") -> Dataset:
    """Soft-edged elliptical blobs on a textured background.

    Blobs are added until the realized foreground fraction lands just
    under the target, so each image stays within a few points of
    fg_fraction.  Small max_radius values scatter many tiny blobs across
    the whole field, which makes coarse spatial attention uninformative.
    """
    if not 0.0 < fg_fraction < 0.5:
        raise InvalidFraction(f"fg_fraction must be in (0, 0.5), got {fg_fraction}")
    h, w = _resolve_size(size)
    if max_radius is None:
        max_radius = max(min_radius + 1.0, min(h, w) / 4.0)
    yy, xx = np.mgrid[0:h, 0:w]
    samples = []
    for i in range(n):
        rng = np.random.default_rng((seed, i))
        mask = np.zeros((h, w), dtype=bool)
        bump = np.zeros((h, w))
        target = fg_fraction * h * w
        tolerance = min(0.08 * target, 0.02 * h * w)
        for _ in range(400):
            deficit = target - mask.sum()
            if deficit <= tolerance:
                break
            area = max(deficit, 1.0) * rng.uniform(0.35, 0.9)
            aspect = rng.uniform(0.6, 1.6)
            ry = float(np.clip(math.sqrt(area * aspect / math.pi), min_radius, max_radius))
            rx = float(np.clip(math.sqrt(area / (aspect * math.pi)), min_radius, max_radius))
            cy = rng.uniform(ry, h - ry)
            cx = rng.uniform(rx, w - rx)
            theta = rng.uniform(0.0, math.pi)
            du = np.cos(theta) * (xx - cx) + np.sin(theta) * (yy - cy)
            dv = -np.sin(theta) * (xx - cx) + np.cos(theta) * (yy - cy)
            rho = np.sqrt((du / rx) ** 2 + (dv / ry) ** 2)
            mask |= rho <= 1.0
            edge = (1.0 - rho) * min(rx, ry)  # approx signed distance in pixels
            bump = np.maximum(bump, 1.0 / (1.0 + np.exp(-edge / 1.5)))
        tex = gaussian_filter(rng.normal(size=(h, w)), 6.0, mode="reflect")
        tex = tex / max(tex.std(), 1e-6) * 0.08
        base = 0.35 + tex + 0.45 * bump
        channels = [base * rng.uniform(0.92, 1.08) +
                    rng.normal(scale=0.05, size=(h, w)) for _ in range(3)]
        image = np.stack(channels, axis=-1).astype(np.float32)
        samples.append(Sample(id=f"blob_{i:04d}", image=image,
                              mask=mask.astype(np.uint8)))
    return Dataset(samples, name=name, image_size=(h, w))


def write_manifest(path, dataset: Dataset, splits=None) -> None:
    """JSON manifest of sample ids and (optionally) split assignment."""
    assignment = {}
    if splits is not None:
        for split_name, ds in zip(("train", "val", "test"), splits):
            for s in ds.samples:
                assignment[s.id] = split_name
    doc = {
        "name": dataset.name,
        "image_size": list(dataset.image_size),
        "n_samples": len(dataset.samples),
        "samples": [{"id": s.id, "split": assignment.get(s.id)}
                    for s in dataset.samples],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
