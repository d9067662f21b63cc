"""Synthetic longitudinal cohort generator.

Each subject is a deterministic function of an identity seed: vertebral
bodies are rendered as textured rounded rectangles (aspect ratio encodes
the anatomical level, a wedge taper marks the sacral end), discs as
lens-shaped phantoms whose nucleus brightness and height fall with the
degeneration grade.  Scans of the same subject differ by a smooth random
deformation, a scanner-dependent contrast exponent and fresh noise, so
same-subject matching is learnable but not trivial on raw voxels.

Every rendered volume passes through the real preparation pipeline
(rescale to canvas, slice padding, reference-median normalisation), so
the generator exercises exactly the code path clinical volumes would.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataio import ScanRecord
from .volumes import (
    ANATOMY_IVD,
    ANATOMY_VB,
    DISC_LEVELS,
    GRADED_DISC_LEVELS,
    VB_LEVELS,
    DataError,
    GeometryConfig,
    Volume,
    normalize_median,
    pad_slices,
    rescale_to_canvas,
)

BASELINE_SCANNER = "1.0T"
FOLLOWUP_SCANNER = "1.5T"

_EDGE_SOFTNESS = 1.0  # px, anti-aliasing band of the signed-distance edges


@dataclass(frozen=True)
class GeneratorConfig:
    subjects: int = 60
    followup_fraction: float = 0.5
    tau_range: tuple[float, float] = (8.0, 12.0)
    grade_distribution: tuple[float, float, float, float] = (0.3, 0.3, 0.25, 0.15)
    noise_sigma: float = 0.08
    deform_fraction: float = 0.04  # displacement amplitude as a fraction of canvas width
    scanner_gamma: tuple[float, float] = (0.80, 0.95)  # follow-up contrast exponent range
    worsen_prob: float = 0.35
    texture_amp: float = 0.28

    def __post_init__(self):
        if abs(sum(self.grade_distribution) - 1.0) > 1e-9:
            raise DataError("grade distribution must sum to 1")
        if not 0 <= self.followup_fraction <= 1:
            raise DataError("followup fraction must be in [0, 1]")


@dataclass
class SubjectParams:
    """Identity signature: everything that stays constant across scans."""

    aspect_delta: float
    corner_radius: float
    wedge_delta: float
    gap_fraction: float
    vb_base: float
    neighbor_width_ratio: float
    raw_width_fraction: float
    slice_shrink: float
    disc_intensity_delta: float
    disc_aspect_delta: float
    annulus_intensity: float
    tex_freq: np.ndarray  # (K, 2) cycles per anatomy extent
    tex_phase: np.ndarray  # (K,)
    tex_slice_rate: np.ndarray  # (K,)
    tex_amp: np.ndarray  # (K,)


@dataclass
class ScanEffects:
    """Per-scan nuisance parameters."""

    deform_amp: float = 0.0
    deform_freq: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    deform_phase: np.ndarray = field(default_factory=lambda: np.zeros(2))
    gamma: float = 1.0
    noise_sigma: float = 0.0
    noise_seed: tuple[int, ...] = (0,)


def subject_params(seed_key, cfg: GeneratorConfig) -> SubjectParams:
    rng = np.random.default_rng(seed_key)
    K = 8
    amps = rng.uniform(0.4, 1.0, K)
    amps *= cfg.texture_amp / math.sqrt((amps**2).sum() / 2.0)
    return SubjectParams(
        aspect_delta=float(rng.uniform(-0.02, 0.02)),
        corner_radius=float(rng.uniform(0.10, 0.40)),
        wedge_delta=float(rng.uniform(-0.02, 0.02)),
        gap_fraction=float(rng.uniform(0.08, 0.16)),
        vb_base=float(rng.uniform(0.88, 1.12)),
        neighbor_width_ratio=float(rng.uniform(0.92, 1.08)),
        raw_width_fraction=float(rng.uniform(0.58, 0.78)),
        slice_shrink=float(rng.uniform(0.04, 0.14)),
        disc_intensity_delta=float(rng.uniform(-0.08, 0.08)),
        disc_aspect_delta=float(rng.uniform(-0.02, 0.02)),
        annulus_intensity=float(rng.uniform(0.42, 0.52)),
        tex_freq=rng.uniform(0.6, 1.8, (K, 2)) * rng.choice([-1.0, 1.0], (K, 2)),
        tex_phase=rng.uniform(0, 2 * np.pi, K),
        tex_slice_rate=rng.uniform(-1.2, 1.2, K),
        tex_amp=amps,
    )


def scan_effects(seed_key, cfg: GeneratorConfig, geometry: GeometryConfig, followup: bool) -> ScanEffects:
    rng = np.random.default_rng(seed_key)
    W = geometry.vb_shape[1]
    gamma = float(rng.uniform(*cfg.scanner_gamma)) if followup else 1.0
    # short-wavelength field: decorrelates voxel-level texture between scans
    # while coarse structure (and anything pooled) barely moves
    return ScanEffects(
        deform_amp=cfg.deform_fraction * W,
        deform_freq=rng.uniform(3.0, 6.0, (2, 2)) * rng.choice([-1.0, 1.0], (2, 2)),
        deform_phase=rng.uniform(0, 2 * np.pi, 2),
        gamma=gamma,
        noise_sigma=cfg.noise_sigma,
        noise_seed=tuple(list(np.atleast_1d(seed_key)) + [0xA0]),
    )


def vb_aspect(level_index: int, p: SubjectParams) -> float:
    return 0.40 + 0.06 * level_index + p.aspect_delta


def vb_wedge(level_index: int, p: SubjectParams) -> float:
    base = 0.04 * level_index + (0.15 if level_index == len(VB_LEVELS) - 1 else 0.0)
    return base + p.wedge_delta


def vb_corner_radius(level_index: int, p: SubjectParams) -> float:
    return float(np.clip(p.corner_radius + 0.03 * (level_index - 3), 0.06, 0.45))


def vb_gap_fraction(level_index: int, p: SubjectParams) -> float:
    return p.gap_fraction + 0.008 * level_index


def vb_texture_scale(level_index: int) -> float:
    return 1.0 + 0.08 * level_index


def disc_aspect(grade: int, p: SubjectParams) -> float:
    """Disc height over disc width; strictly decreasing in grade."""
    return 0.30 - 0.035 * (grade - 1) + p.disc_aspect_delta


def nucleus_intensity(grade: int, p: SubjectParams) -> float:
    """Raw nucleus brightness relative to vertebral bone at 1.0; strictly
    decreasing in grade."""
    return 1.7 - 0.22 * (grade - 1) + p.disc_intensity_delta


def _texture(p: SubjectParams, uy: np.ndarray, ux: np.ndarray, s_norm: float, phase_shift: float = 0.0):
    """Band-limited multiplicative texture evaluated at anatomy-normalised
    coordinates, so it deforms and rescales with the anatomy."""
    out = np.zeros_like(uy)
    for k in range(p.tex_freq.shape[0]):
        arg = 2 * np.pi * (p.tex_freq[k, 0] * uy + p.tex_freq[k, 1] * ux)
        out += p.tex_amp[k] * np.cos(arg + p.tex_phase[k] + p.tex_slice_rate[k] * s_norm + phase_shift)
    return out


def _rounded_rect_sdf(py, px, cy, cx, hh, wh, radius_frac, wedge):
    """Signed distance to a rounded rectangle; positive outside.  `wedge`
    linearly narrows the top edge relative to the bottom."""
    r = radius_frac * min(hh, wh)
    ny = py - cy
    taper = 1.0 - wedge * np.clip((-ny / max(hh, 1e-9) + 1.0) / 2.0, 0.0, 1.0)
    nx = (px - cx) / taper
    qy = np.abs(ny) - (hh - r)
    qx = np.abs(nx) - (wh - r)
    qyp = np.maximum(qy, 0.0)
    qxp = np.maximum(qx, 0.0)
    return np.sqrt(qyp**2 + qxp**2) + np.minimum(np.maximum(qy, qx), 0.0) - r


def _superellipse_sdf(py, px, cy, cx, hh, wh, power=2.5):
    """Approximate signed distance to a lens |x/wh|^p + |y/hh|^p = 1,
    scaled to pixels via the minor half-extent."""
    f = (np.abs((py - cy) / hh) ** power + np.abs((px - cx) / wh) ** power) ** (1.0 / power)
    return (f - 1.0) * min(hh, wh)


def _coverage(sdf):
    return np.clip(0.5 - sdf / _EDGE_SOFTNESS, 0.0, 1.0)


def _displaced_grid(H, W, eff: ScanEffects):
    oy, ox = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    if eff.deform_amp == 0.0:
        return oy, ox
    fy, fx = eff.deform_freq
    py = oy + eff.deform_amp * np.sin(2 * np.pi * (fy[0] * oy / H + fy[1] * ox / W) + eff.deform_phase[0])
    px = ox + eff.deform_amp * np.sin(2 * np.pi * (fx[0] * oy / H + fx[1] * ox / W) + eff.deform_phase[1])
    return py, px


def _finish_volume(raw, mask_raw, anatomy, level, bbox, eff: ScanEffects, geometry: GeometryConfig):
    """Shared tail of both renderers: contrast exponent, noise, rescale to
    the canonical canvas, slice padding, reference-median normalisation."""
    raw = np.power(np.maximum(raw, 0.0), eff.gamma)
    if eff.noise_sigma > 0:
        levels = VB_LEVELS if anatomy == ANATOMY_VB else DISC_LEVELS
        anat_code = 0 if anatomy == ANATOMY_VB else 1
        noise_rng = np.random.default_rng(list(eff.noise_seed) + [anat_code, levels.index(level)])
        raw = np.maximum(raw + noise_rng.normal(0.0, eff.noise_sigma, raw.shape), 0.0)
    target_slices = geometry.canvas(anatomy)[2]
    vol = rescale_to_canvas(Volume(raw, anatomy, level), geometry, bbox=bbox)
    mask_vol = rescale_to_canvas(Volume(mask_raw, anatomy, level), geometry, bbox=bbox)
    vol = pad_slices(vol, target_slices)
    mask_vol = pad_slices(mask_vol, target_slices)
    return normalize_median(vol, mask_vol.voxels > 0.5)


def render_vb(p: SubjectParams, level: str, eff: ScanEffects, geometry: GeometryConfig) -> Volume:
    """One vertebral-body volume: target body centred, the adjacent bodies
    partially visible above and below (they are the normalisation
    reference, as in the clinical preparation)."""
    H, W, S = geometry.vb_shape
    idx = VB_LEVELS.index(level)
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    wh = p.raw_width_fraction * W / 2.0
    hh = wh * vb_aspect(idx, p)
    wedge = vb_wedge(idx, p)
    radius = vb_corner_radius(idx, p)
    gap = vb_gap_fraction(idx, p) * 2.0 * hh
    tex_scale = vb_texture_scale(idx)
    wh_n = wh * p.neighbor_width_ratio
    background = 0.02
    mid = (S - 1) / 2.0

    out = np.empty((H, W, S))
    mask = np.zeros((H, W, S))
    py, px = _displaced_grid(H, W, eff)
    for s in range(S):
        s_norm = (s - mid) / max(mid, 1.0)
        shrink = 1.0 - p.slice_shrink * abs(s_norm)
        hh_s, wh_s, wh_ns = hh * shrink, wh * shrink, wh_n * shrink

        cover_t = _coverage(_rounded_rect_sdf(py, px, cy, cx, hh_s, wh_s, radius, wedge))
        cy_top = cy - hh_s - gap - hh_s
        cy_bot = cy + hh_s + gap + hh_s
        cover_top = _coverage(_rounded_rect_sdf(py, px, cy_top, cx, hh_s, wh_ns, radius, wedge))
        cover_bot = _coverage(_rounded_rect_sdf(py, px, cy_bot, cx, hh_s, wh_ns, radius, wedge))

        uy, ux = (py - cy) / (2 * hh) * tex_scale, (px - cx) / (2 * wh) * tex_scale
        tex_t = 1.0 + _texture(p, uy, ux, s_norm)
        tex_n = 1.0 + _texture(p, uy, ux, s_norm, phase_shift=2.1)

        plane = np.full((H, W), background)
        plane += cover_t * (p.vb_base * tex_t - background)
        cover_n = np.clip(cover_top + cover_bot, 0.0, 1.0)
        plane += cover_n * (1.0 * tex_n - background)
        out[:, :, s] = plane
        mask[:, :, s] = (cover_n > 0.5).astype(float)

    bbox = (cy - hh, cy + hh, cx - wh, cx + wh)
    return _finish_volume(out, mask, ANATOMY_VB, level, bbox, eff, geometry)


def render_ivd(p: SubjectParams, level: str, grade: int, eff: ScanEffects, geometry: GeometryConfig) -> Volume:
    """One disc volume: bright nucleus inside a darker annulus, vertebral
    slabs above and below as the normalisation reference.  Nucleus
    brightness and disc height encode the grade."""
    if grade not in (1, 2, 3, 4):
        raise DataError(f"grade must be in 1..4, got {grade}")
    H, W, S = geometry.ivd_shape
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    a = p.raw_width_fraction * W / 2.0  # disc half-width
    b = a * disc_aspect(grade, p)  # disc half-height
    nuc = nucleus_intensity(grade, p)
    gap = max(2.0, 0.08 * H)
    slab_hh = H / 2.0  # slabs extend past the canvas; only their edge shows
    background = 0.02
    mid = (S - 1) / 2.0

    out = np.empty((H, W, S))
    mask = np.zeros((H, W, S))
    py, px = _displaced_grid(H, W, eff)
    for s in range(S):
        s_norm = (s - mid) / max(mid, 1.0)
        shrink = 1.0 - p.slice_shrink * abs(s_norm)
        a_s, b_s = a * shrink, b * shrink

        cover_disc = _coverage(_superellipse_sdf(py, px, cy, cx, b_s, a_s))
        cover_nuc = _coverage(_superellipse_sdf(py, px, cy, cx, 0.55 * b_s, 0.62 * a_s))
        cy_top = cy - b_s - gap - slab_hh
        cy_bot = cy + b_s + gap + slab_hh
        cover_top = _coverage(_rounded_rect_sdf(py, px, cy_top, cx, slab_hh, a_s * 1.05, 0.2, 0.0))
        cover_bot = _coverage(_rounded_rect_sdf(py, px, cy_bot, cx, slab_hh, a_s * 1.05, 0.2, 0.0))

        uy, ux = (py - cy) / max(2 * b, 1e-9), (px - cx) / (2 * a)
        tex_n = 1.0 + _texture(p, uy * 0.3, ux, s_norm, phase_shift=4.2)

        plane = np.full((H, W), background)
        plane += cover_disc * (p.annulus_intensity - background)
        plane += cover_nuc * (nuc - p.annulus_intensity)
        cover_slab = np.clip(cover_top + cover_bot, 0.0, 1.0) * (1.0 - cover_disc)
        plane += cover_slab * (1.0 * tex_n - background)
        out[:, :, s] = plane
        mask[:, :, s] = (cover_slab > 0.5).astype(float)

    bbox = (cy - b, cy + b, cx - a, cx + a)
    return _finish_volume(out, mask, ANATOMY_IVD, level, bbox, eff, geometry)


def _render_scan(p, grades_by_level, eff, geometry) -> tuple[dict, dict]:
    vb = {level: render_vb(p, level, eff, geometry) for level in VB_LEVELS}
    ivd = {level: render_ivd(p, level, grades_by_level[level], eff, geometry) for level in DISC_LEVELS}
    return vb, ivd


def synth_subject(
    identity_seed,
    grades: list[int],
    tau_years: float,
    geometry: GeometryConfig,
    cfg: GeneratorConfig,
    subject_id: str = "S0000",
    with_followup: bool = True,
) -> list[ScanRecord]:
    """Baseline scan plus (optionally) a follow-up sharing the identity.

    `grades` are the baseline grades of the five annotated discs, from
    L1-L2 downward; grades can only worsen at the follow-up.
    """
    if len(grades) != len(GRADED_DISC_LEVELS):
        raise DataError(f"expected {len(GRADED_DISC_LEVELS)} grades, got {len(grades)}")
    for g in grades:
        if g not in (1, 2, 3, 4):
            raise DataError(f"grade must be in 1..4, got {g}")
    if tau_years < 0:
        raise DataError("tau must be nonnegative")

    seed_list = list(np.atleast_1d(identity_seed).astype(np.int64))
    p = subject_params(seed_list + [1], cfg)
    grades_by_level = {DISC_LEVELS[0]: 1, **dict(zip(GRADED_DISC_LEVELS, grades))}

    eff0 = scan_effects(seed_list + [2], cfg, geometry, followup=False)
    vb0, ivd0 = _render_scan(p, grades_by_level, eff0, geometry)
    records = [
        ScanRecord(
            subject_id=subject_id,
            scan_time=0.0,
            scanner_tag=BASELINE_SCANNER,
            vb=vb0,
            ivd=ivd0,
            grades={lvl: grades_by_level[lvl] for lvl in GRADED_DISC_LEVELS},
        )
    ]
    if with_followup:
        worsen_rng = np.random.default_rng(seed_list + [3])
        worsened = {
            lvl: min(4, g + int(worsen_rng.random() < cfg.worsen_prob))
            for lvl, g in grades_by_level.items()
        }
        eff1 = scan_effects(seed_list + [4], cfg, geometry, followup=True)
        vb1, ivd1 = _render_scan(p, worsened, eff1, geometry)
        records.append(
            ScanRecord(
                subject_id=subject_id,
                scan_time=float(tau_years),
                scanner_tag=FOLLOWUP_SCANNER,
                vb=vb1,
                ivd=ivd1,
                grades={lvl: worsened[lvl] for lvl in GRADED_DISC_LEVELS},
            )
        )
    return records


def synth_cohort(cfg: GeneratorConfig, geometry: GeometryConfig, seed: int) -> list[ScanRecord]:
    """Deterministic cohort: subject i is fully determined by (seed, i)."""
    assign_rng = np.random.default_rng([int(seed), 10])
    n_follow = int(round(cfg.subjects * cfg.followup_fraction))
    followup_ids = set(assign_rng.permutation(cfg.subjects)[:n_follow].tolist())

    records: list[ScanRecord] = []
    for i in range(cfg.subjects):
        rng = np.random.default_rng([int(seed), 20, i])
        grades = rng.choice([1, 2, 3, 4], size=len(GRADED_DISC_LEVELS), p=cfg.grade_distribution)
        tau = float(rng.uniform(*cfg.tau_range))
        records.extend(
            synth_subject(
                [int(seed), 30, i],
                [int(g) for g in grades],
                tau,
                geometry,
                cfg,
                subject_id=f"S{i:04d}",
                with_followup=i in followup_ids,
            )
        )
    return records


def measure_height(v: Volume, threshold: float) -> float:
    """Height in rows of the centred blob: starting from the middle row,
    expand up and down while the central-third columns stay above the
    threshold.  Stops at the dark gap, so the reference slabs at the canvas
    edges are excluded."""
    mid = v.slices // 2
    W = v.width
    band = v.voxels[:, W // 3 : 2 * W // 3, mid].max(axis=1) > threshold
    center = v.height // 2
    if not band[center]:
        return 0.0
    top = center
    while top > 0 and band[top - 1]:
        top -= 1
    bottom = center
    while bottom < v.height - 1 and band[bottom + 1]:
        bottom += 1
    return float(bottom - top + 1)


def center_intensity(v: Volume) -> float:
    """Median intensity of a small box at the volume centre (inside the
    nucleus for rendered discs)."""
    cy, cx, mid = v.height // 2, v.width // 2, v.slices // 2
    return float(np.median(v.voxels[cy - 1 : cy + 2, cx - 3 : cx + 4, mid]))
