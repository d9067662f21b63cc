"""Training-time augmentation: in-plane rotation, integer translation,
slice shift, isotropic rescale, additive intensity jitter and slice-order
flip.  Applied in that fixed order; a pair shares one flip decision.

When rotation is 0 and scale is 1 the transform skips resampling entirely,
so the identity configuration reproduces the input bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .volumes import GeometryConfig, Volume, resample_affine


@dataclass(frozen=True)
class AugmentConfig:
    rotate_deg: float = 15.0
    shift_x: int = 48
    shift_y: int = 24
    shift_slices: int = 2
    scale_low: float = 0.9
    scale_high: float = 1.1
    intensity_delta: float = 0.2
    flip: bool = True

    def __post_init__(self):
        if self.rotate_deg < 0 or self.shift_x < 0 or self.shift_y < 0 or self.shift_slices < 0:
            raise ValueError("augmentation ranges must be symmetric around identity (nonnegative)")
        if not 0 < self.scale_low <= 1.0 <= self.scale_high:
            raise ValueError(f"scale range must straddle 1.0, got [{self.scale_low}, {self.scale_high}]")
        if self.intensity_delta < 0:
            raise ValueError("intensity delta must be nonnegative")

    @staticmethod
    def identity() -> "AugmentConfig":
        return AugmentConfig(0.0, 0, 0, 0, 1.0, 1.0, 0.0, False)

    def scaled_for(self, geometry: GeometryConfig) -> "AugmentConfig":
        """Pixel-denominated ranges are quoted at the 224-wide canvas; shrink
        them proportionally for smaller geometries."""
        fw = geometry.vb_shape[1] / 224.0
        fh = geometry.vb_shape[0] / 224.0
        fs = geometry.vb_shape[2] / 9.0
        return replace(
            self,
            shift_x=int(round(self.shift_x * fw)),
            shift_y=int(round(self.shift_y * fh)),
            shift_slices=max(1, int(round(self.shift_slices * fs))) if self.shift_slices else 0,
        )


def shift_slices(voxels: np.ndarray, k: int) -> np.ndarray:
    """Shift the slice axis by k with zero fill."""
    if k == 0:
        return voxels
    out = np.zeros_like(voxels)
    if k > 0:
        out[:, :, k:] = voxels[:, :, :-k]
    else:
        out[:, :, :k] = voxels[:, :, -k:]
    return out


def translate_plane_int(voxels: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Integer in-plane shift with zero fill (exact, no resampling)."""
    if dy == 0 and dx == 0:
        return voxels
    H, W, _ = voxels.shape
    out = np.zeros_like(voxels)
    ys = slice(max(dy, 0), min(H, H + dy))
    xs = slice(max(dx, 0), min(W, W + dx))
    ys_src = slice(max(-dy, 0), min(H, H - dy))
    xs_src = slice(max(-dx, 0), min(W, W - dx))
    out[ys, xs] = voxels[ys_src, xs_src]
    return out


def draw_params(cfg: AugmentConfig, rng: np.random.Generator) -> dict:
    """All stochastic choices, drawn in a fixed order so runs replay."""
    return {
        "theta": float(rng.uniform(-cfg.rotate_deg, cfg.rotate_deg)),
        "dx": int(rng.integers(-cfg.shift_x, cfg.shift_x + 1)),
        "dy": int(rng.integers(-cfg.shift_y, cfg.shift_y + 1)),
        "ds": int(rng.integers(-cfg.shift_slices, cfg.shift_slices + 1)),
        "scale": float(rng.uniform(cfg.scale_low, cfg.scale_high)),
        "dI": float(rng.uniform(-cfg.intensity_delta, cfg.intensity_delta)),
        "flip": bool(rng.integers(0, 2)) if cfg.flip else False,
    }


def apply_params(v: Volume, p: dict) -> Volume:
    vox = v.voxels
    if p["theta"] == 0.0 and p["scale"] == 1.0:
        vox = translate_plane_int(vox, p["dy"], p["dx"])
    else:
        H, W, _ = vox.shape
        c = ((H - 1) / 2.0, (W - 1) / 2.0)
        vox = resample_affine(
            vox,
            (H, W),
            scale=p["scale"],
            theta_deg=p["theta"],
            out_center=c,
            in_center=c,
            shift_yx=(p["scale"] * p["dy"], p["scale"] * p["dx"]),
        )
    if p["ds"]:
        vox = shift_slices(vox, p["ds"])
    if p["dI"]:
        vox = np.maximum(vox + p["dI"], 0.0)
    if p["flip"]:
        vox = vox[:, :, ::-1]
    if vox is v.voxels:
        vox = vox.copy()
    return Volume(np.ascontiguousarray(vox), v.anatomy, v.level)


def augment(v: Volume, cfg: AugmentConfig, rng: np.random.Generator, flip_decision: bool | None = None) -> Volume:
    p = draw_params(cfg, rng)
    if flip_decision is not None:
        p["flip"] = bool(flip_decision) and cfg.flip
    return apply_params(v, p)


def augment_pair(
    va: Volume, vb: Volume, cfg: AugmentConfig, rng: np.random.Generator
) -> tuple[Volume, Volume]:
    """Independent geometric/intensity draws per side, one shared flip."""
    flip = bool(rng.integers(0, 2)) if cfg.flip else False
    return augment(va, cfg, rng, flip_decision=flip), augment(vb, cfg, rng, flip_decision=flip)
