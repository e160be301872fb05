"""Image ingestion, edge extraction, right-region masks and dataset splits.

Arrays follow the H x W (x C) layout with float32 intensities in [0, 1].
Masks use 1 for known pixels and 0 for the region to outpaint.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from skimage.feature import canny

from .errors import ConfigError, IngestError, ShapeError

log = logging.getLogger(__name__)

MIN_SIDE = 8
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)
DEFAULT_CANNY = {"sigma": 2.0, "low": 0.1, "high": 0.2}


@dataclass
class Sample:
    id: str
    image: np.ndarray   # H x W x 3
    gray: np.ndarray    # H x W
    edges: np.ndarray   # H x W, {0, 1}
    mask: np.ndarray    # H x W, {0, 1}

    def __post_init__(self):
        shape = self.image.shape[:2]
        for name in ("gray", "edges", "mask"):
            if getattr(self, name).shape != shape:
                raise ShapeError(f"sample {self.id}: {name} shape {getattr(self, name).shape} != {shape}")


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    seed: int = 0

    def as_dict(self):
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}


def _check_image(img, channels=None):
    img = np.asarray(img)
    if img.ndim not in (2, 3):
        raise ShapeError(f"expected H x W or H x W x C array, got shape {img.shape}")
    if channels is not None:
        c = 1 if img.ndim == 2 else img.shape[2]
        if c != channels:
            raise ShapeError(f"expected {channels} channel(s), got {c}")
    return img


def load_image(path, side):
    """Decode ``path``, center-crop to a square and bilinearly resample to ``side``."""
    if side < MIN_SIDE:
        raise ConfigError(f"side must be >= {MIN_SIDE}, got {side}")
    try:
        with Image.open(path) as im:
            im.load()
            im = im.convert("RGB")
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise IngestError(f"cannot decode {path}: {exc}") from exc

    w, h = im.size
    s = min(w, h)
    if s < MIN_SIDE:
        raise IngestError(f"{path}: {w}x{h} is smaller than {MIN_SIDE}px after cropping")
    left, top = (w - s) // 2, (h - s) // 2
    im = im.crop((left, top, left + s, top + s))
    if s != side:
        im = im.resize((side, side), Image.BILINEAR)
    return np.asarray(im, dtype=np.float32) / 255.0


def to_grayscale(img):
    img = _check_image(img, channels=3)
    gray = img.astype(np.float64) @ LUMA
    return np.clip(gray, 0.0, 1.0).astype(img.dtype if img.dtype.kind == "f" else np.float32)


def _check_canny_params(sigma, low, high):
    if not sigma > 0:
        raise ConfigError(f"canny sigma must be positive, got {sigma}")
    if not (0 <= low < high <= 1):
        raise ConfigError(f"canny thresholds need 0 <= low < high <= 1, got low={low}, high={high}")


def canny_edges(gray, sigma=2.0, low=0.1, high=0.2):
    """Binary Canny edge map; thresholds apply to Sobel magnitudes of the [0, 1] image."""
    _check_canny_params(sigma, low, high)
    gray = _check_image(gray)
    if gray.ndim == 3:
        if gray.shape[2] != 1:
            raise ShapeError(f"canny_edges expects one channel, got {gray.shape[2]}")
        gray = gray[..., 0]
    edges = canny(gray.astype(np.float64), sigma=sigma, low_threshold=low,
                  high_threshold=high, mode="nearest")
    return edges.astype(np.float32)


def known_region_edges(gray, mask, sigma=2.0, low=0.1, high=0.2):
    """Canny edges computed from known pixels only, zero in the outpaint region.

    For right-region masks the known block is cropped before detection so the
    artificial step at the mask border never registers as an edge.
    """
    mask = np.asarray(mask)
    gray = np.asarray(gray)
    if gray.ndim == 3:
        gray = gray[..., 0]
    if gray.shape != mask.shape:
        raise ShapeError(f"gray {gray.shape} and mask {mask.shape} differ")
    out = np.zeros(mask.shape, dtype=np.float32)
    known_cols = np.flatnonzero(mask.all(axis=0))
    if known_cols.size and known_cols[0] == 0 and known_cols[-1] == known_cols.size - 1:
        k = known_cols.size
        if k >= 3:
            out[:, :k] = canny_edges(gray[:, :k], sigma, low, high)
        return out
    return canny_edges(gray * mask, sigma, low, high) * mask.astype(np.float32)


def make_right_mask(height, width, ratio):
    if not 0 < ratio < 1:
        raise ConfigError(f"mask ratio must lie in (0, 1), got {ratio}")
    mask = np.ones((height, width), dtype=np.float32)
    k = math.floor(ratio * width)
    if k:
        mask[:, width - k:] = 0.0
    return mask


def apply_mask(img, mask):
    img = _check_image(img)
    mask = np.asarray(mask)
    if img.shape[:2] != mask.shape:
        raise ShapeError(f"image {img.shape[:2]} and mask {mask.shape} differ")
    m = mask if img.ndim == 2 else mask[..., None]
    return (img * m).astype(img.dtype)


def _largest_remainder(n, fractions):
    quotas = [n * f for f in fractions]
    sizes = [math.floor(q + 1e-9) for q in quotas]
    rest = n - sum(sizes)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    return sizes


def split_dataset(ids, fractions=(0.8, 0.1, 0.1), seed=0):
    """Seeded shuffle followed by a contiguous partition sized by largest remainder."""
    ids = list(ids)
    if not ids:
        raise IngestError("cannot split an empty corpus")
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ConfigError(f"fractions must be three positive values summing to 1, got {fractions}")
    if len(set(ids)) != len(ids):
        raise IngestError("sample ids must be unique")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    a, b, _ = _largest_remainder(len(ids), fractions)
    return DatasetSplit(shuffled[:a], shuffled[a:a + b], shuffled[a + b:], seed)


def make_sample(sample_id, image, ratio, canny_params=None):
    p = dict(DEFAULT_CANNY, **(canny_params or {}))
    gray = to_grayscale(image)
    edges = canny_edges(gray, p["sigma"], p["low"], p["high"])
    mask = make_right_mask(image.shape[0], image.shape[1], ratio)
    return Sample(sample_id, image, gray, edges, mask)


def list_images(root):
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"dataset root {root} is not a directory")
    return sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _to_png(arr, path):
    u8 = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(u8).save(path, format="PNG")


def _from_png(path):
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float32) / 255.0


def prepare_corpus(root, out_dir, side=128, ratio=0.25, fractions=(0.8, 0.1, 0.1),
                   seed=0, canny_params=None):
    """Ingest every decodable image under ``root`` and write per-split PNGs and manifests.

    Unreadable files are skipped with a warning. Returns the DatasetSplit.
    """
    out_dir = Path(out_dir)
    samples = {}
    for path in list_images(root):
        try:
            image = load_image(path, side)
        except IngestError as exc:
            log.warning("skipping %s: %s", path.name, exc)
            continue
        sid = path.stem
        n = 1
        while sid in samples:
            sid = f"{path.stem}_{n}"
            n += 1
        samples[sid] = make_sample(sid, image, ratio, canny_params)
    if len(samples) < 3:
        raise IngestError(f"need at least 3 decodable images under {root}, found {len(samples)}")

    split = split_dataset(sorted(samples), fractions, seed)
    for name, ids in split.as_dict().items():
        d = out_dir / name
        d.mkdir(parents=True, exist_ok=True)
        for stale in d.glob("*.png"):
            stale.unlink()
        lines = []
        for sid in ids:
            s = samples[sid]
            rec = {"id": sid}
            for kind, arr in (("image", s.image), ("gray", s.gray), ("edge", s.edges), ("mask", s.mask)):
                fname = f"{sid}_{kind}.png"
                _to_png(arr, d / fname)
                rec[kind] = fname
            rec["mask_ratio"] = ratio
            rec["seed"] = seed
            lines.append(json.dumps(rec, sort_keys=True))
        (d / "manifest.jsonl").write_text("".join(line + "\n" for line in lines))
    return split


def load_split(split_dir):
    """Read the samples listed in ``split_dir/manifest.jsonl``."""
    split_dir = Path(split_dir)
    manifest = split_dir / "manifest.jsonl"
    if not manifest.exists():
        raise IngestError(f"no manifest at {manifest}; run prepare first")
    samples = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        samples.append(Sample(
            rec["id"],
            _from_png(split_dir / rec["image"]),
            _from_png(split_dir / rec["gray"]),
            (_from_png(split_dir / rec["edge"]) > 0.5).astype(np.float32),
            (_from_png(split_dir / rec["mask"]) > 0.5).astype(np.float32),
        ))
    return samples


def read_manifest(split_dir):
    path = Path(split_dir) / "manifest.jsonl"
    return [json.loads(l) for l in path.read_text().splitlines() if l.strip()]
