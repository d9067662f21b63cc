"""Volume data model and the canonicalisation pipeline: slice padding,
width-normalised rescale onto the canvas and median intensity scaling.

Voxel layout is (height, width, slices), intensities are nonnegative
reals; the canonical canvas is square for vertebral bodies and half as
tall for discs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VB_LEVELS = ("T12", "L1", "L2", "L3", "L4", "L5", "S1")
DISC_LEVELS = ("T12-L1", "L1-L2", "L2-L3", "L3-L4", "L4-L5", "L5-S1")
GRADED_DISC_LEVELS = DISC_LEVELS[1:]  # grades are annotated from L1-L2 down

ANATOMY_VB = "vb"
ANATOMY_IVD = "ivd"

INTENSITY_CEILING = 4.0


class DataError(ValueError):
    """Raised for degenerate or inconsistent volume data."""


@dataclass
class Volume:
    voxels: np.ndarray  # (H, W, S) float
    anatomy: str
    level: str

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float64)
        if self.voxels.ndim != 3:
            raise DataError(f"voxels must be (H, W, S), got {self.voxels.ndim} axes")
        if self.anatomy not in (ANATOMY_VB, ANATOMY_IVD):
            raise DataError(f"unknown anatomy {self.anatomy!r}")
        known = VB_LEVELS if self.anatomy == ANATOMY_VB else DISC_LEVELS
        if self.level not in known:
            raise DataError(f"unknown {self.anatomy} level {self.level!r}")

    @property
    def height(self) -> int:
        return self.voxels.shape[0]

    @property
    def width(self) -> int:
        return self.voxels.shape[1]

    @property
    def slices(self) -> int:
        return self.voxels.shape[2]

    def level_index(self) -> int:
        levels = VB_LEVELS if self.anatomy == ANATOMY_VB else DISC_LEVELS
        return levels.index(self.level)

    def to_input(self) -> np.ndarray:
        """Network layout (C=1, D, H, W)."""
        return self.voxels.transpose(2, 0, 1)[None]


@dataclass(frozen=True)
class GeometryConfig:
    """Canvas extents per anatomy. `reduced` keeps the 1:1 / 1:2 aspect
    ratios and odd slice count of the full-size geometry at desk scale."""

    mode: str = "reduced"
    vb_shape: tuple[int, int, int] = (56, 56, 5)
    ivd_shape: tuple[int, int, int] = (28, 56, 5)
    anatomy_width_fraction: float = 0.75

    @staticmethod
    def named(mode: str) -> "GeometryConfig":
        if mode == "paper":
            return GeometryConfig(mode="paper", vb_shape=(224, 224, 9), ivd_shape=(112, 224, 9))
        if mode == "reduced":
            return GeometryConfig()
        raise DataError(f"unknown geometry mode {mode!r}")

    def canvas(self, anatomy: str) -> tuple[int, int, int]:
        return self.vb_shape if anatomy == ANATOMY_VB else self.ivd_shape


def pad_slices(v: Volume, target_slices: int) -> Volume:
    """Zero-pad the slice axis to target_slices, originals centred; an odd
    deficit puts the extra zero slice on the trailing side."""
    if v.slices > target_slices:
        raise DataError(f"volume has {v.slices} slices, cannot pad down to {target_slices}")
    deficit = target_slices - v.slices
    front = deficit // 2
    out = np.zeros((v.height, v.width, target_slices), dtype=v.voxels.dtype)
    out[:, :, front : front + v.slices] = v.voxels
    return Volume(out, v.anatomy, v.level)


def resample_plane(plane: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear sample of one (H, W) plane at float coordinates; zero fill
    outside the source."""
    H, W = plane.shape
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    fy = ys - y0
    fx = xs - x0

    def tap(yy, xx):
        inside = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
        vals = plane[np.clip(yy, 0, H - 1), np.clip(xx, 0, W - 1)]
        return np.where(inside, vals, 0.0)

    top = tap(y0, x0) * (1 - fx) + tap(y0, x0 + 1) * fx
    bot = tap(y0 + 1, x0) * (1 - fx) + tap(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bot * fy


def resample_affine(
    voxels: np.ndarray,
    out_hw: tuple[int, int],
    scale: float,
    theta_deg: float,
    out_center: tuple[float, float],
    in_center: tuple[float, float],
    shift_yx: tuple[float, float] = (0.0, 0.0),
) -> np.ndarray:
    """Slice-wise bilinear warp: output pixel p maps to source coordinate
    R(-theta) @ ((p - out_center - shift) / scale) + in_center."""
    OH, OW = out_hw
    oy, ox = np.meshgrid(np.arange(OH, dtype=np.float64), np.arange(OW, dtype=np.float64), indexing="ij")
    dy = (oy - out_center[0] - shift_yx[0]) / scale
    dx = (ox - out_center[1] - shift_yx[1]) / scale
    t = np.deg2rad(theta_deg)
    ct, st = np.cos(t), np.sin(t)
    ys = ct * dy + st * dx + in_center[0]
    xs = -st * dy + ct * dx + in_center[1]
    out = np.empty((OH, OW, voxels.shape[2]), dtype=voxels.dtype)
    for s in range(voxels.shape[2]):
        out[:, :, s] = resample_plane(voxels[:, :, s], ys, xs)
    return out


def anatomy_bbox(v: Volume, threshold_fraction: float = 0.2) -> tuple[float, float, float, float]:
    """(y0, y1, x0, x1) extents of voxels above threshold_fraction * max,
    pooled over slices, in continuous pixel-center coordinates (pixel i
    spans [i - 0.5, i + 0.5]).  Used when the caller has no analytic box."""
    peak = float(v.voxels.max())
    if peak <= 0:
        raise DataError("cannot locate anatomy in an all-zero volume")
    mask = (v.voxels >= threshold_fraction * peak).any(axis=2)
    ys, xs = np.nonzero(mask)
    return float(ys.min() - 0.5), float(ys.max() + 0.5), float(xs.min() - 0.5), float(xs.max() + 0.5)


def rescale_to_canvas(
    v: Volume,
    geometry: GeometryConfig,
    bbox: tuple[float, float, float, float] | None = None,
) -> Volume:
    """Bilinear resample so the anatomy width spans the configured fraction
    of the canvas width, anatomy centred, isotropic in-plane scale."""
    ch, cw, _ = geometry.canvas(v.anatomy)
    if bbox is None:
        bbox = anatomy_bbox(v)
    y0, y1, x0, x1 = bbox
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        raise DataError(f"degenerate anatomy bounding box {bbox}")
    scale = geometry.anatomy_width_fraction * cw / (x1 - x0)
    out = resample_affine(
        v.voxels,
        (ch, cw),
        scale=scale,
        theta_deg=0.0,
        out_center=((ch - 1) / 2.0, (cw - 1) / 2.0),
        in_center=((y0 + y1) / 2.0, (x0 + x1) / 2.0),
    )
    return Volume(out, v.anatomy, v.level)


def normalize_median(v: Volume, reference_mask: np.ndarray) -> Volume:
    """Scale intensities so the median over the reference voxels (the
    vertebral bodies adjacent to the target) is 0.5; clamp to [0, 4]."""
    reference_mask = np.asarray(reference_mask, dtype=bool)
    if reference_mask.shape != v.voxels.shape:
        raise DataError(f"reference mask shape {reference_mask.shape} != volume shape {v.voxels.shape}")
    if not reference_mask.any():
        raise DataError("reference mask selects no voxels")
    med = float(np.median(v.voxels[reference_mask]))
    if med <= 0:
        raise DataError(f"reference median must be positive, got {med}")
    out = np.clip(v.voxels * (0.5 / med), 0.0, INTENSITY_CEILING)
    return Volume(out, v.anatomy, v.level)
