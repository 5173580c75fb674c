"""Scalogram -> 8-bit image rasterization."""
from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image

from .io import ArtifactError, atomic_write_bytes
from .wavelet import Scalogram

IMAGE_SIZE = 224
LOG_EPS = 1e-12
COLORMAP_SHA256 = "b4246d7478e637ac890a28d0c312f9ddb0f2e0c4ff61529e0d335f729e36edc1"

_colormap_cache: dict[str, np.ndarray] = {}


def load_colormap(name: str = "jet256") -> np.ndarray:
    """256 x 3 uint8 lookup table, verified against its recorded checksum."""
    if name not in _colormap_cache:
        if name != "jet256":
            raise ValueError(f"unknown colormap {name!r}")
        raw = resources.files("ismd").joinpath("assets", "jet256.txt").read_bytes()
        digest = hashlib.sha256(raw).hexdigest()
        if digest != COLORMAP_SHA256:
            raise ValueError(f"colormap asset checksum mismatch: {digest}")
        table = np.array([line.split() for line in raw.decode().splitlines()], dtype=np.uint8)
        if table.shape != (256, 3):
            raise ValueError(f"colormap must be 256 x 3, got {table.shape}")
        _colormap_cache[name] = table
    return _colormap_cache[name]


@dataclass
class ScalogramImage:
    pixels: np.ndarray
    normalization: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def style(self) -> str:
        return "grey" if self.pixels.ndim == 2 else "rgb"


def normalize(mag, mode: str = "log", eps: float = LOG_EPS) -> np.ndarray:
    m = np.asarray(mag.magnitudes if isinstance(mag, Scalogram) else mag, dtype=float)
    if m.size == 0:
        raise ValueError("cannot normalize an empty matrix")
    if mode == "log":
        m = np.log10(m + eps)
    elif mode != "linear":
        raise ValueError(f"unknown normalization mode {mode!r}")
    lo, hi = float(m.min()), float(m.max())
    if hi <= lo:
        return np.zeros_like(m)
    return np.clip((m - lo) / (hi - lo), 0.0, 1.0)


def _axis_weights(n_src: int, n_dst: int):
    if n_dst == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))
    i0 = np.minimum(np.floor(pos).astype(int), n_src - 2)
    return i0, pos - i0


def resize(m, height: int, width: int) -> np.ndarray:
    """Corner-aligned bilinear resampling."""
    m = np.asarray(m, dtype=float)
    if height < 1 or width < 1:
        raise ValueError(f"target shape must be at least 1 x 1, got {height} x {width}")
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
        raise ValueError(f"source must be a 2-D matrix of at least 2 x 2, got {m.shape}")
    if m.shape == (height, width):
        return m.copy()
    r0, fr = _axis_weights(m.shape[0], height)
    c0, fc = _axis_weights(m.shape[1], width)
    rows = m[r0] * (1.0 - fr)[:, None] + m[r0 + 1] * fr[:, None]
    return rows[:, c0] * (1.0 - fc) + rows[:, c0 + 1] * fc


def render(v, style: str = "grey", colormap: str = "jet256") -> ScalogramImage:
    v = np.asarray(v, dtype=float)
    if np.any(~((v >= 0.0) & (v <= 1.0))):
        raise ValueError("render expects values in [0, 1]")
    idx = np.floor(255.0 * v + 0.5).astype(np.uint8)
    if style == "grey":
        return ScalogramImage(idx)
    if style == "rgb":
        return ScalogramImage(load_colormap(colormap)[idx])
    raise ValueError(f"unknown render style {style!r}")


def to_image(sc: Scalogram, size: int | tuple[int, int] = IMAGE_SIZE, mode: str = "log",
             style: str = "grey", low_frequency_top: bool = True, eps: float = LOG_EPS) -> ScalogramImage:
    """normalize -> orient -> resize -> render."""
    h, w = (size, size) if isinstance(size, int) else size
    v = normalize(sc, mode, eps)
    freqs = sc.frequencies
    if low_frequency_top != (freqs[0] < freqs[-1]):
        v = v[::-1]
    img = render(np.clip(resize(v, h, w), 0.0, 1.0), style)
    img.normalization = {"mode": mode, "eps": eps, "floor": 0.0, "ceiling": 1.0}
    img.provenance = dict(sc.provenance)
    return img


def png_bytes(img: ScalogramImage) -> bytes:
    px = np.ascontiguousarray(img.pixels)
    buf = io.BytesIO()
    Image.fromarray(px).save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


def write_png(img: ScalogramImage, path) -> None:
    atomic_write_bytes(Path(path), png_bytes(img))


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im).copy()
    except OSError as exc:
        raise ArtifactError(f"cannot read image {path}: {exc}") from exc
