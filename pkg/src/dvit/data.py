"""Synthetic landmark images, augmentation, and on-disk dataset format.

Each sample is a textured background with a soft face ellipse, one coloured
Gaussian blob per landmark (landmark ``i`` is the centre of blob ``i``) and a
few smaller distractor blobs. Coordinates are ``(x, y)`` in image pixels with
pixel centres at integers.

On disk a split directory holds ``manifest.txt`` (``key=value``),
``landmarks.csv`` (``id,x1,y1,...,xM,yM``) and ``images/<id>.ppm`` (binary
``P6``, max value 255, rows top to bottom, RGB interleaved).
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .config import ConfigError

FORMAT_VERSION = 1

# one distinct colour per landmark index (cycled for M > palette size)
PALETTE = np.array(
    [
        [0.10, 0.25, 0.95],
        [0.95, 0.85, 0.10],
        [0.95, 0.15, 0.15],
        [0.10, 0.85, 0.30],
        [0.85, 0.20, 0.90],
        [0.10, 0.90, 0.95],
        [1.00, 0.55, 0.05],
        [0.55, 0.30, 0.10],
    ]
)


class DatasetError(OSError):
    pass


@dataclass
class Sample:
    image: np.ndarray  # (3, R, R) in [0, 1]
    landmarks: np.ndarray  # (M, 2) image pixels
    id: int
    clamped: bool = False

    @property
    def resolution(self) -> int:
        return self.image.shape[-1]


@dataclass
class DatasetManifest:
    count: int
    resolution: int
    landmarks: int
    seed: int
    split: str
    recipe_hash: str
    content_hash: str = ""
    format_version: int = FORMAT_VERSION

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        try:
            return cls(
                count=int(kv["count"]),
                resolution=int(kv["resolution"]),
                landmarks=int(kv["landmarks"]),
                seed=int(kv["seed"]),
                split=kv["split"],
                recipe_hash=kv["recipe_hash"],
                content_hash=kv.get("content_hash", ""),
                format_version=int(kv.get("format_version", FORMAT_VERSION)),
            )
        except (KeyError, ValueError) as exc:
            raise DatasetError(f"malformed manifest: {exc}") from exc


# -- face template --------------------------------------------------------------------
def face_template(m: int) -> tuple[np.ndarray, list[int]]:
    """Canonical landmark layout in face units and its left/right swap permutation.

    Landmarks 0 and 1 are the eyes (the normalization pair); the rest sit on the
    centre line (odd remainder) and in mirrored pairs below the eyes.
    """
    if m < 2:
        raise ConfigError(f"need at least 2 landmarks, got {m}")
    pts = [(-0.36, -0.25), (0.36, -0.25)]
    swap = [1, 0]
    rest = m - 2
    if rest % 2:
        pts.append((0.0, 0.05))
        swap.append(len(pts) - 1)
    pairs = rest // 2
    for k in range(pairs):
        x = 0.30 - 0.12 * k / max(pairs, 1)
        y = 0.36 + 0.3 * k / max(pairs, 1)
        i = len(pts)
        pts += [(-x, y), (x, y)]
        swap += [i + 1, i]
    return np.array(pts, dtype=np.float64), swap


def blob_sigma(resolution: int) -> float:
    return resolution / 11.0


def render_blob(center, resolution: int, sigma: float) -> np.ndarray:
    """Unit-height Gaussian ``(R, R)`` centred at ``(x, y)``."""
    ax = np.arange(resolution, dtype=np.float64)
    gx = np.exp(-((ax - center[0]) ** 2) / (2 * sigma * sigma))
    gy = np.exp(-((ax - center[1]) ** 2) / (2 * sigma * sigma))
    return gy[:, None] * gx[None, :]


def composite(image: np.ndarray, alpha: np.ndarray, color) -> np.ndarray:
    c = np.asarray(color, dtype=np.float64).reshape(3, 1, 1)
    return image * (1.0 - alpha) + c * alpha


def _background(rng: np.random.Generator, r: int) -> np.ndarray:
    coarse = rng.uniform(0.25, 0.65, size=(3, 5, 5))
    bg = np.stack([ndimage.zoom(ch, r / 5.0, order=1, mode="nearest")[:r, :r] for ch in coarse])
    stripes = 0.04 * np.sin(2 * math.pi * (np.arange(r) * rng.uniform(0.05, 0.15) + rng.uniform()))
    bg = bg + (stripes[None, :, None] if rng.random() < 0.5 else stripes[None, None, :])
    return bg


def sample_landmarks(rng: np.random.Generator, r: int, m: int) -> np.ndarray:
    template, _ = face_template(m)
    margin = blob_sigma(r) * 0.75
    for _ in range(100):
        scale = rng.uniform(0.62, 0.78) * r
        theta = math.radians(rng.uniform(-15.0, 15.0))
        center = r / 2.0 + rng.uniform(-0.08, 0.08, size=2) * r
        rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        pts = center + (template @ rot.T) * scale + rng.normal(0.0, 0.015 * scale, size=(m, 2))
        if np.all(pts >= margin) and np.all(pts <= r - 1 - margin):
            return pts
    raise RuntimeError("could not place landmarks inside the image")


def render_sample(landmarks: np.ndarray, rng: np.random.Generator, r: int, noise: bool = True, return_layers: bool = False):
    m = len(landmarks)
    img = _background(rng, r)
    # soft face ellipse around the landmark centroid
    cx, cy = landmarks.mean(axis=0)
    span = np.ptp(landmarks[:, 0]) + 1e-6
    yy, xx = np.mgrid[0:r, 0:r].astype(np.float64)
    ell = np.sqrt(((xx - cx) / (0.85 * span)) ** 2 + ((yy - cy) / (1.05 * span)) ** 2)
    face = 1.0 / (1.0 + np.exp((ell - 1.0) * 12.0))
    img = composite(img, 0.6 * face, rng.uniform(0.55, 0.8, size=3))
    # distractors: small blobs, random colours
    for _ in range(int(rng.integers(2, 5))):
        pos = rng.uniform(0.05 * r, 0.95 * r, size=2)
        img = composite(img, 0.7 * render_blob(pos, r, blob_sigma(r) * 0.45), rng.uniform(0, 1, size=3))
    layers = []
    sigma = blob_sigma(r)
    for i, p in enumerate(landmarks):
        alpha = 0.9 * render_blob(p, r, sigma)
        layers.append(alpha)
        img = composite(img, alpha, PALETTE[i % len(PALETTE)])
    if noise:
        img = img + rng.normal(0.0, 0.02, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return (img, np.stack(layers)) if return_layers else img


def sample_rng(seed: int, sample_id: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(sample_id), int(stream)]))


def generate_synthetic(n: int, resolution: int, m: int, seed: int, start_id: int = 0) -> list[Sample]:
    """Deterministic in ``(n, resolution, m, seed)``; sample ``k`` draws from its own stream."""
    if m < 2:
        raise ConfigError(f"need at least 2 landmarks (normalization pair), got {m}")
    out = []
    for k in range(start_id, start_id + n):
        rng = sample_rng(seed, k)
        lm = sample_landmarks(rng, resolution, m)
        out.append(Sample(render_sample(lm, rng, resolution), lm, k))
    return out


def split_by_parity(samples: list[Sample]) -> tuple[list[Sample], list[Sample]]:
    return [s for s in samples if s.id % 2 == 0], [s for s in samples if s.id % 2 == 1]


# -- augmentation ---------------------------------------------------------------------------
@dataclass(frozen=True)
class AugmentRecipe:
    """Per-transform magnitudes; zero disables a transform."""

    rotation: float = 0.0  # max |degrees|
    translation: float = 0.0  # max |pixels| per axis
    occlusion: float = 0.0  # probability
    flip: float = 0.0  # probability
    blur: float = 0.0  # probability
    jitter: float = 0.0  # colour jitter strength
    grayscale: float = 0.0  # probability

    def to_text(self) -> str:
        return ",".join(f"{f.name}={getattr(self, f.name)!r}" for f in dataclasses.fields(self))

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    @property
    def is_identity(self) -> bool:
        return all(getattr(self, f.name) == 0 for f in dataclasses.fields(self))

    @classmethod
    def parse(cls, text: str) -> "AugmentRecipe":
        text = text.strip()
        if text in ("", "none"):
            return cls()
        if text == "default":
            return cls(rotation=10.0, translation=3.0, occlusion=0.2, flip=0.5, blur=0.2, jitter=0.1, grayscale=0.1)
        kw = {}
        names = {f.name for f in dataclasses.fields(cls)}
        for item in text.replace(";", ",").split(","):
            if not item.strip():
                continue
            k, _, v = item.partition("=")
            if k.strip() not in names:
                raise ConfigError(f"unknown augmentation {k!r}")
            kw[k.strip()] = float(v)
        return cls(**kw)


def _clamp(landmarks: np.ndarray, r: int) -> tuple[np.ndarray, bool]:
    c = np.clip(landmarks, 0.0, r - 1.0)
    return c, bool(np.any(c != landmarks))


def warp(image: np.ndarray, angle_deg: float = 0.0, shift=(0.0, 0.0)) -> np.ndarray:
    """Rotate about the image centre by ``angle_deg`` (counter-clockwise in x-right/y-down view), then shift.

    Bilinear sampling, zero fill.
    """
    r = image.shape[-1]
    c = (r - 1) / 2.0
    t = math.radians(angle_deg)
    cos, sin = math.cos(t), math.sin(t)
    yy, xx = np.mgrid[0:r, 0:r].astype(np.float64)
    qx = xx - shift[0] - c
    qy = yy - shift[1] - c
    # inverse rotation
    sx = cos * qx + sin * qy + c
    sy = -sin * qx + cos * qy + c
    coords = np.stack([sy, sx])
    return np.stack([ndimage.map_coordinates(ch, coords, order=1, mode="constant", cval=0.0) for ch in image])


def transform_points(landmarks: np.ndarray, r: int, angle_deg: float = 0.0, shift=(0.0, 0.0)) -> np.ndarray:
    pts = np.asarray(landmarks, dtype=np.float64)
    if angle_deg != 0.0:
        c = (r - 1) / 2.0
        t = math.radians(angle_deg)
        rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        pts = (pts - c) @ rot.T + c
    return pts + np.asarray(shift, dtype=np.float64)


def rotate(s: Sample, angle_deg: float) -> Sample:
    lm, flag = _clamp(transform_points(s.landmarks, s.resolution, angle_deg), s.resolution)
    return Sample(warp(s.image, angle_deg), lm, s.id, s.clamped or flag)


def translate(s: Sample, dx: float, dy: float) -> Sample:
    lm, flag = _clamp(transform_points(s.landmarks, s.resolution, 0.0, (dx, dy)), s.resolution)
    return Sample(warp(s.image, 0.0, (dx, dy)), lm, s.id, s.clamped or flag)


def hflip(s: Sample, swap: list[int] | None = None) -> Sample:
    r = s.resolution
    if swap is None:
        _, swap = face_template(len(s.landmarks))
    lm = s.landmarks.copy()
    lm[:, 0] = (r - 1) - lm[:, 0]
    return Sample(s.image[:, :, ::-1].copy(), lm[swap], s.id, s.clamped)


def augment(s: Sample, recipe: AugmentRecipe, seed: int) -> Sample:
    """Random transforms per ``recipe``; geometric ones move the landmarks with the image."""
    if recipe.is_identity:
        return Sample(s.image.copy(), s.landmarks.copy(), s.id, s.clamped)
    rng = sample_rng(seed, s.id, stream=1)
    r = s.resolution
    out = s
    if recipe.flip and rng.random() < recipe.flip:
        out = hflip(out)
    angle = rng.uniform(-recipe.rotation, recipe.rotation) if recipe.rotation else 0.0
    shift = tuple(rng.uniform(-recipe.translation, recipe.translation, size=2)) if recipe.translation else (0.0, 0.0)
    if angle or any(shift):
        lm, flag = _clamp(transform_points(out.landmarks, r, angle, shift), r)
        out = Sample(warp(out.image, angle, shift), lm, out.id, out.clamped or flag)
    img = out.image.copy()
    if recipe.occlusion and rng.random() < recipe.occlusion:
        h, w = (rng.uniform(0.1, 0.3, size=2) * r).astype(int) + 1
        y0, x0 = rng.integers(0, r - h + 1), rng.integers(0, r - w + 1)
        img[:, y0 : y0 + h, x0 : x0 + w] = 0.0
    if recipe.blur and rng.random() < recipe.blur:
        img = np.stack([ndimage.gaussian_filter(ch, rng.uniform(0.5, 1.2)) for ch in img])
    if recipe.jitter:
        j = recipe.jitter
        brightness = rng.uniform(-j, j)
        contrast = 1.0 + rng.uniform(-j, j)
        mean = img.mean()
        img = (img - mean) * contrast + mean + brightness
    if recipe.grayscale and rng.random() < recipe.grayscale:
        g = 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]
        img = np.stack([g, g, g])
    return Sample(np.clip(img, 0.0, 1.0), out.landmarks, out.id, out.clamped)


# -- file I/O ------------------------------------------------------------------------------
def write_ppm(path: Path, image: np.ndarray) -> None:
    q = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = q.shape[1:]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.transpose(1, 2, 0).tobytes())


def read_ppm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"{path}: truncated PPM header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise DatasetError(f"{path}: expected binary P6 with max value 255")
    w, h = int(tokens[1]), int(tokens[2])
    body = raw[pos:]
    if len(body) != w * h * 3:
        raise DatasetError(f"{path}: expected {w * h * 3} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def _content_hash(split_dir: Path, ids: list[int]) -> str:
    h = hashlib.sha256((split_dir / "landmarks.csv").read_bytes())
    for i in ids:
        h.update((split_dir / "images" / f"{i:06d}.ppm").read_bytes())
    return h.hexdigest()


def save_dataset(samples: list[Sample], directory: str | Path, seed: int = 0, split: str = "all", recipe: AugmentRecipe | None = None, resolution: int | None = None, landmarks: int | None = None) -> DatasetManifest:
    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    m = landmarks if landmarks is not None else (len(samples[0].landmarks) if samples else 0)
    r = resolution if resolution is not None else (samples[0].resolution if samples else 0)
    header = "id," + ",".join(f"x{i + 1},y{i + 1}" for i in range(m))
    lines = [header]
    for s in samples:
        write_ppm(d / "images" / f"{s.id:06d}.ppm", s.image)
        lines.append(f"{s.id}," + ",".join(repr(float(v)) for v in s.landmarks.reshape(-1)))
    (d / "landmarks.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest = DatasetManifest(len(samples), r, m, seed, split, (recipe or AugmentRecipe()).hash())
    manifest.content_hash = _content_hash(d, [s.id for s in samples])
    (d / "manifest.txt").write_text(manifest.to_text(), encoding="utf-8")
    return manifest


def load_dataset(directory: str | Path, verify: bool = True) -> tuple[list[Sample], DatasetManifest]:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"dataset directory {d} does not exist")
    mpath = d / "manifest.txt"
    if not mpath.exists():
        if not any(d.iterdir()):
            raise DatasetError(f"dataset directory {d} is empty")
        raise DatasetError(f"{d}: missing manifest.txt")
    manifest = DatasetManifest.from_text(mpath.read_text(encoding="utf-8"))
    if manifest.format_version != FORMAT_VERSION:
        raise DatasetError(f"{d}: dataset format {manifest.format_version}, expected {FORMAT_VERSION}")
    lpath = d / "landmarks.csv"
    try:
        lines = lpath.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read {lpath}: {exc}") from exc
    rows = []
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split(",")
        if len(parts) != 1 + 2 * manifest.landmarks:
            raise DatasetError(f"{lpath}:{lineno}: expected {1 + 2 * manifest.landmarks} fields, found {len(parts)}")
        rows.append((int(parts[0]), np.array([float(v) for v in parts[1:]]).reshape(-1, 2)))
    if len(rows) != manifest.count:
        raise DatasetError(f"{d}: manifest lists {manifest.count} samples, landmarks.csv has {len(rows)}")
    if verify:
        try:
            actual = _content_hash(d, [i for i, _ in rows])
        except OSError as exc:
            raise DatasetError(f"{d}: missing image file ({exc})") from exc
        if actual != manifest.content_hash:
            raise DatasetError(f"{d}: content hash mismatch (manifest {manifest.content_hash[:12]}..., files {actual[:12]}...); dataset was modified")
    samples = []
    for i, lm in rows:
        img = read_ppm(d / "images" / f"{i:06d}.ppm")
        if img.shape != (3, manifest.resolution, manifest.resolution):
            raise DatasetError(f"image {i} has shape {img.shape}, manifest resolution {manifest.resolution}")
        samples.append(Sample(img, lm, i))
    return samples, manifest


def generate_dataset(directory: str | Path, n: int, resolution: int, m: int, seed: int) -> tuple[DatasetManifest, DatasetManifest]:
    """Write ``train/`` (even ids) and ``test/`` (odd ids) splits of ``n`` generated samples."""
    samples = generate_synthetic(n, resolution, m, seed)
    train, test = split_by_parity(samples)
    d = Path(directory)
    return (
        save_dataset(train, d / "train", seed, "train", resolution=resolution, landmarks=m),
        save_dataset(test, d / "test", seed, "test", resolution=resolution, landmarks=m),
    )
