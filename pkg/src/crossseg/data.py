"""Synthetic lesion dataset generation, on-disk layout, and augmentation.

A dataset directory holds images/<id>.ppm, masks/<id>.pgm, and manifest.json
with the generator seed, the spec, and the train/test id split. Generation is
a pure function of the spec: the same spec yields byte-identical files.
"""

import dataclasses
import json
import os

import numpy as np
from scipy import ndimage

from .config import AugmentConfig, DatasetSpec
from .errors import DatasetError
from .netpbm import read_mask, read_ppm, write_mask, write_ppm

MANIFEST_NAME = "manifest.json"
_TRAIN_FRACTION = 0.8


@dataclasses.dataclass
class Sample:
    """One image/mask pair."""

    image: np.ndarray  # (3, H, W) floats in [0, 1]
    mask: np.ndarray  # (H, W) values {0, 1}
    id: str

    def validate(self) -> "Sample":
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise DatasetError(f"sample {self.id}: image must be (3, H, W), got {self.image.shape}")
        if self.mask.shape != self.image.shape[1:]:
            raise DatasetError(
                f"sample {self.id}: mask shape {self.mask.shape} does not match image {self.image.shape[1:]}"
            )
        if not np.all(np.isin(np.unique(self.mask), (0, 1))):
            raise DatasetError(f"sample {self.id}: mask is not binary")
        return self


def resize_bilinear(array, out_h, out_w):
    """Resize the last two axes with bilinear sampling, edges clamped."""
    array = np.asarray(array, dtype=np.float64)
    h, w = array.shape[-2:]
    if (h, w) == (out_h, out_w):
        return array.copy()
    sy = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    sx = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0).reshape(-1, 1)
    wx = (sx - x0).reshape(1, -1)
    top = array[..., y0, :][..., :, x0] * (1 - wx) + array[..., y0, :][..., :, x1] * wx
    bot = array[..., y1, :][..., :, x0] * (1 - wx) + array[..., y1, :][..., :, x1] * wx
    return top * (1 - wy) + bot * wy


def _lesion_fields(size, rng, spec):
    """Distance field based interior mask and soft alpha for one ellipse."""
    ra = size * rng.uniform(*spec.lesion_radius)
    rb = size * rng.uniform(*spec.lesion_radius)
    phi = rng.uniform(0.0, np.pi)
    margin = max(ra, rb)
    lo = min(margin, (size - 1) / 2)
    hi = max(size - 1 - margin, lo)
    cy = rng.uniform(lo, hi)
    cx = rng.uniform(lo, hi)
    rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    dy = rows - cy
    dx = cols - cx
    u = np.cos(phi) * dx + np.sin(phi) * dy
    v = -np.sin(phi) * dx + np.cos(phi) * dy
    dist = np.sqrt((u / ra) ** 2 + (v / rb) ** 2)
    blur = rng.uniform(0.5, max(0.5, spec.edge_blur))
    # signed distance to the boundary in pixels, roughly (1 - d) * minor axis
    alpha = np.clip(0.5 + (1.0 - dist) * min(ra, rb) / blur, 0.0, 1.0)
    return dist <= 1.0, alpha


def _render_sample(size, rng, spec):
    base = rng.uniform(0.3, 0.7, size=3)
    grid = max(2, size // 16)
    coarse = rng.normal(0.0, 1.0, size=(3, grid, grid))
    low = resize_bilinear(coarse, size, size)
    fine = rng.normal(0.0, 1.0, size=(3, size, size))
    image = base[:, None, None] + spec.texture_noise * (low + 0.3 * fine)
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(rng.integers(spec.lesion_count[0], spec.lesion_count[1] + 1)):
        interior, alpha = _lesion_fields(size, rng, spec)
        contrast = rng.choice((-1.0, 1.0)) * rng.uniform(0.15, 0.40)
        color = np.clip(base + contrast + rng.uniform(-0.05, 0.05, size=3), 0.0, 1.0)
        image = image * (1.0 - alpha) + color[:, None, None] * alpha
        mask |= interior
    return np.clip(image, 0.0, 1.0), mask.astype(np.float64)


def _spec_dict(spec: DatasetSpec) -> dict:
    doc = dataclasses.asdict(spec)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in doc.items()}


def synth_generate(spec: DatasetSpec, out_dir: str) -> str:
    """Generate the dataset under out_dir and return the manifest path."""
    spec.validate()
    try:
        os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    except (OSError, FileExistsError) as exc:
        raise DatasetError(f"cannot create dataset directory {out_dir}: {exc}") from exc
    streams = np.random.SeedSequence(spec.seed).spawn(spec.count)
    ids = []
    try:
        for index, stream in enumerate(streams):
            sample_id = f"synth_{index:04d}"
            image, mask = _render_sample(spec.image_size, np.random.default_rng(stream), spec)
            write_ppm(os.path.join(out_dir, "images", f"{sample_id}.ppm"), image)
            write_mask(os.path.join(out_dir, "masks", f"{sample_id}.pgm"), mask)
            ids.append(sample_id)
    except OSError as exc:
        raise DatasetError(f"cannot write dataset under {out_dir}: {exc}") from exc
    n_train = max(1, int(round(spec.count * _TRAIN_FRACTION)))
    if spec.count > 1:
        n_train = min(n_train, spec.count - 1)
    manifest = {
        "seed": spec.seed,
        "spec": _spec_dict(spec),
        "splits": {"train": ids[:n_train], "test": ids[n_train:]},
    }
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def read_manifest(root: str) -> dict:
    path = os.path.join(root, MANIFEST_NAME)
    try:
        with open(path) as handle:
            return json.load(handle)
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed manifest {path}: {exc}") from exc


def load_sample(root: str, sample_id: str) -> Sample:
    image = read_ppm(os.path.join(root, "images", f"{sample_id}.ppm"))
    mask = read_mask(os.path.join(root, "masks", f"{sample_id}.pgm"))
    return Sample(image=image, mask=mask, id=sample_id).validate()


def load_split(root: str, split: str) -> list:
    manifest = read_manifest(root)
    splits = manifest.get("splits", {})
    if split not in splits:
        raise DatasetError(f"manifest has no split {split!r}, available: {sorted(splits)}")
    samples = [load_sample(root, sample_id) for sample_id in splits[split]]
    if not samples:
        raise DatasetError(f"split {split!r} is empty")
    return samples


def augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Jointly flip/rotate image and mask, color-jitter the image only.

    Draws the same number of variates regardless of outcomes so downstream
    draws stay aligned across configurations.
    """
    flip = rng.random() < cfg.flip_prob
    angle = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees)
    d_bright = rng.uniform(-cfg.brightness, cfg.brightness)
    d_contrast = rng.uniform(-cfg.contrast, cfg.contrast)

    image, mask = sample.image, sample.mask
    if flip:
        image = image[:, :, ::-1]
        mask = mask[:, ::-1]
    if angle != 0.0:
        image = np.stack(
            [ndimage.rotate(ch, angle, reshape=False, order=1, mode="constant", cval=0.0) for ch in image]
        )
        mask = ndimage.rotate(mask, angle, reshape=False, order=0, mode="constant", cval=0.0)
    image = np.asarray(image, dtype=np.float64)
    if d_bright != 0.0:
        image = image + d_bright
    if d_contrast != 0.0:
        mean = image.mean()
        image = (image - mean) * (1.0 + d_contrast) + mean
    image = np.clip(image, 0.0, 1.0)
    return Sample(image=image, mask=np.ascontiguousarray(mask), id=sample.id)
