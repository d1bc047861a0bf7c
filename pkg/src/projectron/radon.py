"""Global Radon projections of square images.

Geometry: x is the column index, y the row index, both measured from the
image center c = (N - 1) / 2.  A pixel at (x, y) lies at signed detector
offset ``rho = (x - c) cos(theta) + (y - c) sin(theta)``.  Each pixel's
intensity is split between the two nearest detector bins by linear
interpolation on rho, so every projection preserves total mass exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AngleSet:
    """Equi-spaced projection angles in degrees over [0, 180)."""

    delta_degrees: float = 15.0
    angles: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        delta = float(self.delta_degrees)
        if not (0.0 < delta <= 180.0):
            raise ValueError(f"delta_degrees must lie in (0, 180], got {self.delta_degrees}")
        count = math.ceil(180.0 / delta - 1e-9)
        object.__setattr__(self, "angles", tuple(k * delta for k in range(count)))

    def __len__(self):
        return len(self.angles)

    def __iter__(self):
        return iter(self.angles)


@dataclass(frozen=True)
class Sinogram:
    """Projections stacked row-wise, one row per angle."""

    angles: tuple[float, ...]
    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] != len(self.angles):
            raise ValueError(
                f"expected {len(self.angles)} rows of equal length, got shape {rows.shape}"
            )
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        object.__setattr__(self, "rows", rows)

    @property
    def bins(self) -> int:
        return self.rows.shape[1]


def projection_length(side: int) -> int:
    """Detector bin count for an image of the given side.

    This is the hypotenuse ``ceil(side * sqrt(2))``, raised by one when
    needed so that it has the same parity as ``side``; with equal parity
    the pixel centers of an axis-aligned projection fall exactly on bin
    centers.
    """
    if side < 1:
        raise ValueError(f"side must be positive, got {side}")
    length = math.ceil(side * math.sqrt(2.0))
    if (length - side) % 2:
        length += 1
    return length


def _direction(theta: float) -> tuple[float, float]:
    # exact values on the axes keep axis-aligned projections free of rounding
    exact = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0)}
    if theta in exact:
        return exact[theta]
    rad = math.radians(theta)
    return math.cos(rad), math.sin(rad)


def _check_theta(theta: float) -> float:
    theta = float(theta)
    if not (0.0 <= theta < 180.0):
        raise ValueError(f"theta must lie in [0, 180), got {theta}")
    return theta


def _splat_weights(side: int, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Lower bin index and upper-bin weight for every pixel, in row-major order."""
    length = projection_length(side)
    cos_t, sin_t = _direction(theta)
    c = (side - 1) / 2.0
    offsets = np.arange(side, dtype=np.float64) - c
    ys, xs = np.meshgrid(offsets, offsets, indexing="ij")
    rho = (xs * cos_t + ys * sin_t).ravel()
    pos = rho + (length - 1) / 2.0
    lower = np.floor(pos).astype(np.intp)
    frac = pos - lower
    edge = lower >= length - 1
    lower[edge] = length - 2
    frac[edge] = 1.0
    return lower, frac


def _as_image(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1] or img.shape[0] < 1:
        raise ValueError(f"expected a non-empty square 2-D image, got shape {img.shape}")
    return img


def radon_projection(image, theta: float) -> np.ndarray:
    """Project ``image`` along direction ``theta`` (degrees) onto the detector."""
    theta = _check_theta(theta)
    img = _as_image(image)
    side = img.shape[0]
    length = projection_length(side)
    lower, frac = _splat_weights(side, theta)
    values = img.ravel()
    out = np.bincount(lower, weights=values * (1.0 - frac), minlength=length)
    out += np.bincount(lower + 1, weights=values * frac, minlength=length)
    return out


def sinogram(image, angles: AngleSet | tuple | list) -> Sinogram:
    angle_list = tuple(angles)
    if not angle_list:
        raise ValueError("at least one angle is required")
    rows = np.stack([radon_projection(image, theta) for theta in angle_list])
    return Sinogram(angle_list, rows)


def feature_vector(sino: Sinogram) -> np.ndarray:
    """Flatten a sinogram angle-major."""
    return sino.rows.reshape(-1).copy()


@lru_cache(maxsize=16)
def _cached_matrix(side: int, angles: tuple[float, ...]) -> np.ndarray:
    length = projection_length(side)
    npix = side * side
    cols = np.arange(npix)
    matrix = np.zeros((len(angles) * length, npix))
    for a, theta in enumerate(angles):
        lower, frac = _splat_weights(side, _check_theta(theta))
        rows = a * length + lower
        matrix[rows, cols] = 1.0 - frac
        matrix[rows + 1, cols] += frac
    matrix.setflags(write=False)
    return matrix


def projection_matrix(side: int, angles) -> np.ndarray:
    """Dense linear operator mapping a flattened image to its feature vector."""
    return _cached_matrix(int(side), tuple(float(a) for a in angles))


def batch_features(images, angles, scale: bool = False) -> np.ndarray:
    """Feature vectors for a stack of square images, shape (n, side, side).

    With ``scale`` each projection is divided by its own maximum (projections
    that are all zero are left alone).
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1] != images.shape[2]:
        raise ValueError(f"expected images of shape (n, side, side), got {images.shape}")
    angles = tuple(angles)
    side = images.shape[1]
    matrix = projection_matrix(side, angles)
    feats = images.reshape(len(images), -1) @ matrix.T
    if scale:
        feats = scale_projections(feats, len(angles))
    return feats


def scale_projections(feats: np.ndarray, n_angles: int) -> np.ndarray:
    shaped = feats.reshape(len(feats), n_angles, -1)
    peak = shaped.max(axis=2, keepdims=True)
    peak[peak <= 0] = 1.0
    return (shaped / peak).reshape(feats.shape)


def preprocess(raw, target_side: int) -> np.ndarray:
    """Grayscale, resize to ``target_side`` squared and min-max normalize.

    Multi-channel input is reduced with ITU-R BT.601 luma weights (an alpha
    channel is dropped).  Resizing is bilinear.  A constant image maps to
    all zeros.
    """
    if int(target_side) != target_side or target_side < 2:
        raise ValueError(f"target_side must be an integer >= 2, got {target_side}")
    target_side = int(target_side)
    img = np.asarray(raw, dtype=np.float64)
    if img.size == 0 or img.ndim not in (2, 3):
        raise ValueError(f"expected a non-empty 2-D or 3-D image, got shape {img.shape}")
    if img.ndim == 3:
        channels = img.shape[2]
        if channels >= 3:
            img = img[..., :3] @ LUMA_WEIGHTS
        else:
            img = img[..., 0]
    if img.shape != (target_side, target_side):
        from skimage.transform import resize

        img = resize(img, (target_side, target_side), order=1, mode="edge",
                     anti_aliasing=False, preserve_range=True)
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros((target_side, target_side))
    return (img - lo) / (hi - lo)


def write_sinogram_csv(path, sino: Sinogram) -> None:
    header = ",".join(["angle"] + [str(k) for k in range(sino.bins)])
    lines = [header]
    for theta, row in zip(sino.angles, sino.rows):
        lines.append(",".join([f"{theta:.9g}"] + [f"{v:.9g}" for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_sinogram_pgm(path, sino: Sinogram) -> None:
    """Binary 8-bit PGM; rows are angles, columns are bins, rescaled to 0..255."""
    rows = sino.rows
    lo, hi = rows.min(), rows.max()
    if hi > lo:
        pixels = np.round((rows - lo) / (hi - lo) * 255.0)
    else:
        pixels = np.zeros_like(rows)
    header = f"P5\n{rows.shape[1]} {rows.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.astype(np.uint8).tobytes())
