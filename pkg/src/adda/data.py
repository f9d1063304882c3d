"""Dataset ingestion, preprocessing, and synthetic domain shifts.

Datasets travel as pairs of IDX files (``<name>-images.idx`` +
``<name>-labels.idx``): big-endian dimension sizes, unsigned bytes, magic
0x00000801 for 1-D labels, 0x00000803 for 3-D images (loaded as C=1) and
0x00000804 for 4-D N,C,H,W images. Preprocessing converts to grayscale
with fixed luma weights, resizes bilinearly to 28x28 using half-pixel
centers, and normalizes bytes to [-1, 1].

``synthetic_digits`` renders a deterministic glyph-based digit set so the
full pipeline can be exercised at desk scale without external downloads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .tensor import Tensor

_IDX_MAGIC_BY_NDIM = {1: 0x00000801, 3: 0x00000803, 4: 0x00000804}
_IDX_NDIM_BY_MAGIC = {v: k for k, v in _IDX_MAGIC_BY_NDIM.items()}
_MAX_IDX_BYTES = 1 << 40


@dataclass
class DatasetContainer:
    """Raw byte images (N,C,H,W with C in {1,3}) plus digit labels."""

    name: str
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.dtype != np.uint8 or self.labels.dtype != np.uint8:
            raise ValidationError("dataset arrays must be uint8")
        if self.images.ndim != 4 or self.images.shape[1] not in (1, 3):
            raise ValidationError(
                f"images must be N,C,H,W with C in {{1,3}}, got shape {self.images.shape}"
            )
        if self.labels.ndim != 1 or self.labels.shape[0] != self.images.shape[0]:
            raise ValidationError(
                f"label count {self.labels.shape} does not match {self.images.shape[0]} images"
            )
        if self.labels.size and self.labels.max() > 9:
            raise ValidationError(f"labels must be < 10, found {self.labels.max()}")

    def __len__(self) -> int:
        return self.images.shape[0]

    def take(self, indices: np.ndarray, name: str | None = None) -> "DatasetContainer":
        return DatasetContainer(
            name if name is not None else self.name,
            self.images[indices],
            self.labels[indices],
        )


@dataclass(frozen=True)
class PreprocessConfig:
    height: int = 28
    width: int = 28
    luma: tuple[float, float, float] = (0.299, 0.587, 0.114)
    mean: float = 0.5
    std: float = 0.5


@dataclass(frozen=True)
class SyntheticShiftSpec:
    """Label-preserving image corruption: invert, gaussian_noise or translate."""

    kind: str
    sigma: float = 0.0
    dx: int = 0
    dy: int = 0
    seed: int = 0


# ---------------------------------------------------------------------------
# IDX container


def save_idx(arr: np.ndarray, path) -> None:
    if arr.dtype != np.uint8:
        raise ValidationError(f"IDX payload must be uint8, got {arr.dtype}")
    if arr.ndim not in _IDX_MAGIC_BY_NDIM:
        raise ValidationError(f"IDX arrays must be 1-D, 3-D or 4-D, got {arr.ndim}-D")
    header = struct.pack(">I", _IDX_MAGIC_BY_NDIM[arr.ndim])
    header += b"".join(struct.pack(">I", d) for d in arr.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(arr).tobytes())


def load_idx(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise FormatError("truncated", f"{path}: no magic")
    (magic,) = struct.unpack_from(">I", blob, 0)
    if magic not in _IDX_NDIM_BY_MAGIC:
        raise FormatError("bad-magic", f"{path}: 0x{magic:08x}")
    ndim = _IDX_NDIM_BY_MAGIC[magic]
    if len(blob) < 4 + 4 * ndim:
        raise FormatError("truncated", f"{path}: header needs {ndim} dimension sizes")
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    total = int(np.prod([int(d) for d in dims], dtype=object))
    if total > _MAX_IDX_BYTES:
        raise FormatError("dimension-overflow", f"{path}: {dims}")
    payload = len(blob) - 4 - 4 * ndim
    if payload < total:
        raise FormatError("truncated", f"{path}: payload {payload} bytes, header says {total}")
    if payload > total:
        raise FormatError("oversized", f"{path}: payload {payload} bytes, header says {total}")
    arr = np.frombuffer(blob, dtype=np.uint8, offset=4 + 4 * ndim).reshape(dims).copy()
    if ndim == 3:
        arr = arr[:, None]  # single-channel convention
    return arr


def save_dataset(ds: DatasetContainer, directory) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    img_path = directory / f"{ds.name}-images.idx"
    lab_path = directory / f"{ds.name}-labels.idx"
    save_idx(ds.images, img_path)
    save_idx(ds.labels, lab_path)
    return img_path, lab_path


def load_dataset(directory, name: str) -> DatasetContainer:
    img_path = Path(directory) / f"{name}-images.idx"
    lab_path = Path(directory) / f"{name}-labels.idx"
    for p in (img_path, lab_path):
        if not p.is_file():
            raise FileNotFoundError(f"{p} not found")
    images = load_idx(img_path)
    labels = load_idx(lab_path)
    if labels.ndim != 1:
        raise FormatError("bad-magic", f"{lab_path}: expected a 1-D label file")
    return DatasetContainer(name, images, labels)


def resolve_dataset(directory, name: str, fraction: float = 0.8, seed: int = 0,
                    ) -> tuple[DatasetContainer, DatasetContainer]:
    """Train/test pair for ``name``: prefers explicit ``<name>-train`` /
    ``<name>-test`` files, otherwise splits a single ``<name>`` pair."""
    directory = Path(directory)
    if (directory / f"{name}-train-images.idx").is_file():
        return load_dataset(directory, f"{name}-train"), load_dataset(directory, f"{name}-test")
    if (directory / f"{name}-images.idx").is_file():
        return split(load_dataset(directory, name), fraction, seed)
    raise FileNotFoundError(
        f"no dataset '{name}' under {directory} "
        f"(tried {name}-train-images.idx and {name}-images.idx)"
    )


# ---------------------------------------------------------------------------
# preprocessing


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resize of a (B,H,W) float stack."""
    b, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    sy = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0)[:, None]
    wx = (sx - x0)[None, :]
    ia = img[:, y0[:, None], x0[None, :]]
    ib = img[:, y0[:, None], x1[None, :]]
    ic = img[:, y1[:, None], x0[None, :]]
    id_ = img[:, y1[:, None], x1[None, :]]
    top = ia * (1.0 - wx) + ib * wx
    bot = ic * (1.0 - wx) + id_ * wx
    return top * (1.0 - wy) + bot * wy


def to_grayscale(images: np.ndarray, luma=(0.299, 0.587, 0.114)) -> np.ndarray:
    """RGB (N,3,H,W) bytes -> luma (N,1,H,W) bytes, rounding half up."""
    if images.shape[1] == 1:
        return images
    r, g, b = (images[:, i].astype(np.float64) for i in range(3))
    lum = np.floor(luma[0] * r + luma[1] * g + luma[2] * b + 0.5)
    return lum.astype(np.uint8)[:, None]


def preprocess(ds: DatasetContainer, cfg: PreprocessConfig | None = None,
               ) -> tuple[Tensor, np.ndarray]:
    """Dataset bytes -> normalized float32 Tensor[N,1,28,28] plus int labels."""
    cfg = cfg or PreprocessConfig()
    gray = to_grayscale(ds.images, cfg.luma)
    resized = _bilinear_resize(gray[:, 0].astype(np.float64), cfg.height, cfg.width)
    x = (resized / 255.0 - cfg.mean) / cfg.std
    return Tensor(x[:, None].astype(np.float32)), ds.labels.astype(np.int64)


# ---------------------------------------------------------------------------
# synthetic shifts and splits


def apply_shift(ds: DatasetContainer, spec: SyntheticShiftSpec) -> DatasetContainer:
    """Shifted copy of a dataset; image geometry and labels are untouched."""
    imgs = ds.images
    n, c, h, w = imgs.shape
    if spec.kind == "invert":
        out = (255 - imgs.astype(np.int16)).astype(np.uint8)
    elif spec.kind == "gaussian_noise":
        if spec.sigma < 0:
            raise ValidationError("gaussian_noise: sigma must be nonnegative")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
        noisy = imgs.astype(np.float64) + rng.normal(0.0, spec.sigma, size=imgs.shape)
        out = np.clip(np.floor(noisy + 0.5), 0, 255).astype(np.uint8)
    elif spec.kind == "translate":
        if abs(spec.dx) >= w or abs(spec.dy) >= h:
            raise ValidationError(
                f"translate: offsets ({spec.dx},{spec.dy}) must be smaller than {w}x{h}"
            )
        out = np.zeros_like(imgs)
        dy, dx = spec.dy, spec.dx
        ys_dst = slice(max(dy, 0), h + min(dy, 0))
        ys_src = slice(max(-dy, 0), h + min(-dy, 0))
        xs_dst = slice(max(dx, 0), w + min(dx, 0))
        xs_src = slice(max(-dx, 0), w + min(-dx, 0))
        out[:, :, ys_dst, xs_dst] = imgs[:, :, ys_src, xs_src]
    else:
        raise ValidationError(f"unknown shift kind {spec.kind!r}")
    return DatasetContainer(f"{ds.name}-{spec.kind}", out, ds.labels.copy())


def split(ds: DatasetContainer, fraction: float, seed: int,
          ) -> tuple[DatasetContainer, DatasetContainer]:
    """Seeded permutation split into (train, test); both sides non-empty."""
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"split fraction must be in (0,1), got {fraction}")
    n = len(ds)
    k = int(np.floor(fraction * n + 0.5))
    if k == 0 or k == n:
        raise ValidationError(f"split of {n} at {fraction} leaves an empty side")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    perm = rng.permutation(n)
    return ds.take(perm[:k]), ds.take(perm[k:])


# ---------------------------------------------------------------------------
# desk-scale synthetic digits

_GLYPHS = [
    "01110 10001 10011 10101 11001 10001 01110",
    "00100 01100 00100 00100 00100 00100 01110",
    "01110 10001 00001 00010 00100 01000 11111",
    "11111 00010 00100 00010 00001 10001 01110",
    "00010 00110 01010 10010 11111 00010 00010",
    "11111 10000 11110 00001 00001 10001 01110",
    "00110 01000 10000 11110 10001 10001 01110",
    "11111 00001 00010 00100 01000 01000 01000",
    "01110 10001 10001 01110 10001 10001 01110",
    "01110 10001 10001 01111 00001 00010 01100",
]


def _glyph_templates(size: int = 28) -> np.ndarray:
    """One soft white-on-black template per digit, centered on the canvas."""
    tpls = np.zeros((10, size, size))
    box_h, box_w = 21, 15  # 3x the 5x7 glyph grid
    y0 = (size - box_h) // 2
    x0 = (size - box_w) // 2
    for d, rows in enumerate(_GLYPHS):
        grid = np.array([[float(ch) for ch in row] for row in rows.split()])
        up = _bilinear_resize(grid[None] * 255.0, box_h, box_w)[0]
        tpls[d, y0 : y0 + box_h, x0 : x0 + box_w] = up
    return tpls


def _thickness_filter(img: np.ndarray, mode: np.ndarray) -> np.ndarray:
    """Per-image 3x3 dilation (mode > 0) or erosion (mode < 0) of strokes."""
    pad = np.pad(img, ((0, 0), (1, 1), (1, 1)))
    shifts = [pad[:, 1 + dy : 1 + dy + img.shape[1], 1 + dx : 1 + dx + img.shape[2]]
              for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    stack = np.stack(shifts)
    dil = stack.max(axis=0)
    ero = stack.min(axis=0)
    m = mode[:, None, None]
    return np.where(m > 0, dil, np.where(m < 0, ero, img))


def synthetic_digits(n: int, seed: int = 0, name: str = "synthdigits") -> DatasetContainer:
    """Deterministic jittered glyph digits for desk-scale experiments.

    Each image is a rotated, sheared, scaled, shifted, elastically warped
    and intensity-varied rendering of a fixed digit template with random
    stroke thickness, plus pixel noise. The jitter ranges are deliberately
    wide so classes form clouds rather than point masses in feature space."""
    if n <= 0:
        raise ValidationError("synthetic_digits: n must be positive")
    size = 28
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    labels = rng.integers(0, 10, size=n).astype(np.uint8)
    tpls = _glyph_templates(size)

    theta = rng.uniform(-0.30, 0.30, size=n)
    shear = rng.uniform(-0.25, 0.25, size=n)
    zoom_x = rng.uniform(0.75, 1.25, size=n)
    zoom_y = rng.uniform(0.75, 1.25, size=n)
    tx = rng.uniform(-3.0, 3.0, size=n)
    ty = rng.uniform(-3.0, 3.0, size=n)
    gain = rng.uniform(0.55, 1.0, size=n)
    warp_amp = rng.uniform(0.0, 1.3, size=(n, 2))
    warp_freq = rng.uniform(0.15, 0.45, size=(n, 2))
    warp_phase = rng.uniform(0.0, 2 * np.pi, size=(n, 2))
    thickness = rng.integers(-1, 2, size=n)

    # inverse map: output pixel -> template coordinate
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    px = xx[None] - c - tx[:, None, None]
    py = yy[None] - c - ty[:, None, None]
    # low-frequency displacement field (elastic-ish)
    px = px + warp_amp[:, 0, None, None] * np.sin(
        warp_freq[:, 0, None, None] * yy[None] + warp_phase[:, 0, None, None]
    )
    py = py + warp_amp[:, 1, None, None] * np.sin(
        warp_freq[:, 1, None, None] * xx[None] + warp_phase[:, 1, None, None]
    )
    cos_t = np.cos(theta)[:, None, None]
    sin_t = np.sin(theta)[:, None, None]
    rx = cos_t * px + sin_t * py
    ry = -sin_t * px + cos_t * py
    rx = rx + shear[:, None, None] * ry
    sx = rx / zoom_x[:, None, None] + c
    sy = ry / zoom_y[:, None, None] + c

    inside = (sx >= 0) & (sx <= size - 1) & (sy >= 0) & (sy <= size - 1)
    sxc = np.clip(sx, 0, size - 1)
    syc = np.clip(sy, 0, size - 1)
    x0 = np.floor(sxc).astype(np.intp)
    y0 = np.floor(syc).astype(np.intp)
    x1 = np.minimum(x0 + 1, size - 1)
    y1 = np.minimum(y0 + 1, size - 1)
    wx = sxc - x0
    wy = syc - y0

    flat = tpls[labels].reshape(n, -1)
    rows = np.arange(n)[:, None, None]
    ia = flat[rows, y0 * size + x0]
    ib = flat[rows, y0 * size + x1]
    ic = flat[rows, y1 * size + x0]
    id_ = flat[rows, y1 * size + x1]
    img = (ia * (1 - wx) + ib * wx) * (1 - wy) + (ic * (1 - wx) + id_ * wx) * wy
    img = _thickness_filter(img * inside, thickness) * gain[:, None, None]
    img += rng.normal(0.0, 8.0, size=img.shape)
    images = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)[:, None]
    return DatasetContainer(name, images, labels)
