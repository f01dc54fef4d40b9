"""RGB <-> normalised CIE Lab conversion and pixmap I/O.

The working representation keeps luminance and chrominance apart:
L is rescaled from [0, 100] to [-1, 1] via L/50 - 1, and a, b are
divided by 110 (covers the sRGB gamut with margin) then clamped to
[-1, 1]. sRGB primaries, D65 white point.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import ShapeError, Tensor, concat

# sRGB -> XYZ (D65, 2 degree observer). Row sums reproduce the white
# point exactly so the grey axis lands on a = b = 0.
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_WHITE = _RGB_TO_XYZ.sum(axis=1)  # Xn, Yn, Zn

AB_SCALE = 110.0
_DELTA = 6.0 / 29.0


@dataclass
class LabImage:
    """An image in normalised CIE Lab: L in [-1,1], ab in [-1,1]."""

    L: Tensor
    ab: Tensor

    def __post_init__(self):
        if self.L.ndim != 3 or self.L.shape[0] != 1:
            raise ShapeError(f"L must be [1,H,W], got {self.L.shape}")
        if self.ab.ndim != 3 or self.ab.shape[0] != 2:
            raise ShapeError(f"ab must be [2,H,W], got {self.ab.shape}")
        if self.L.shape[1:] != self.ab.shape[1:]:
            raise ShapeError(
                f"L and ab spatial dims differ: {self.L.shape} vs {self.ab.shape}")

    @property
    def height(self) -> int:
        return self.L.shape[1]

    @property
    def width(self) -> int:
        return self.L.shape[2]

    def lab(self) -> Tensor:
        """The stacked [3,H,W] channel volume (L, a, b)."""
        return concat(self.L, self.ab, axis=0)


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA ** 3, np.cbrt(t), t / (3 * _DELTA ** 2) + 4.0 / 29.0)


def _lab_f_inv(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA, t ** 3, 3 * _DELTA ** 2 * (t - 4.0 / 29.0))


def rgb_to_lab(rgb: Tensor | np.ndarray) -> LabImage:
    """Convert a [3,H,W] sRGB image with values in [0,1] to normalised Lab.

    Out-of-range inputs are clamped with a warning.
    """
    arr = rgb.data if isinstance(rgb, Tensor) else np.asarray(rgb, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"rgb must be [3,H,W], got {arr.shape}")
    if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
        warnings.warn("rgb values outside [0,1]; clamping", stacklevel=2)
        arr = np.clip(arr, 0.0, 1.0)

    lin = _srgb_to_linear(arr)
    xyz = np.einsum("ij,jhw->ihw", _RGB_TO_XYZ, lin)
    fx, fy, fz = (_lab_f(xyz[i] / _WHITE[i]) for i in range(3))
    lum = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)

    l_norm = lum / 50.0 - 1.0
    ab_norm = np.clip(np.stack([a, b]) / AB_SCALE, -1.0, 1.0)
    return LabImage(L=Tensor(l_norm[None]), ab=Tensor(ab_norm))


def lab_to_rgb(img: LabImage) -> Tensor:
    """Invert the normalised Lab pipeline; output clamped to [0,1]."""
    lum = (img.L.data[0] + 1.0) * 50.0
    a = img.ab.data[0] * AB_SCALE
    b = img.ab.data[1] * AB_SCALE

    fy = (lum + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    xyz = np.stack([_lab_f_inv(fx) * _WHITE[0],
                    _lab_f_inv(fy) * _WHITE[1],
                    _lab_f_inv(fz) * _WHITE[2]])
    lin = np.einsum("ij,jhw->ihw", _XYZ_TO_RGB, xyz)
    return Tensor(np.clip(_linear_to_srgb(np.clip(lin, 0.0, None)), 0.0, 1.0))


def replicate_luma(l_channel: Tensor) -> Tensor:
    """Triplicate [1,H,W] luminance into a [3,H,W] volume (autodiff-aware)."""
    if l_channel.ndim != 3 or l_channel.shape[0] != 1:
        raise ShapeError(f"expected [1,H,W], got {l_channel.shape}")
    return concat(concat(l_channel, l_channel, axis=0), l_channel, axis=0)


def luma_of(img: LabImage) -> np.ndarray:
    """Reconstructed [0,1] grayscale rendering of the L channel."""
    grey = LabImage(L=img.L, ab=Tensor(np.zeros((2, img.height, img.width))))
    return lab_to_rgb(grey).data[0]


# ---------------------------------------------------------------------------
# pixmap I/O
# ---------------------------------------------------------------------------


def read_ppm(path) -> np.ndarray:
    """Read a binary 8-bit P6 pixmap into a [3,H,W] float array in [0,1]."""
    raw = Path(path).read_bytes()
    if raw[:2] != b"P6":
        raise ValueError(f"{path}: not a binary P6 pixmap")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit pixmaps supported, maxval={maxval}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height * 3, offset=pos)
    return pixels.reshape(height, width, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def write_ppm(path, rgb: np.ndarray | Tensor) -> None:
    arr = rgb.data if isinstance(rgb, Tensor) else np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected [3,H,W], got {arr.shape}")
    quantised = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{arr.shape[2]} {arr.shape[1]}\n255\n".encode())
        fh.write(quantised.transpose(1, 2, 0).tobytes())


def read_image(path, allow_png: bool = False) -> np.ndarray:
    """Read a P6 pixmap, or a PNG when the feature switch is enabled."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        if not allow_png:
            raise ValueError("PNG input requires the png feature switch (allow_png=True)")
        try:
            from PIL import Image
        except ImportError as exc:
            raise ValueError("PNG support needs the optional pillow dependency") from exc
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        return arr.transpose(2, 0, 1)
    return read_ppm(path)
