"""Asymmetric view generation for student-teacher training.

One globally augmented teacher view per scene (crop / zoom-out / flip /
photometric jitter), then four student views derived from it by strictly
non-geometric corruptions (blur, rectangle masking, color jitter). Student
pixels therefore stay aligned with teacher pixels, which is what lets
attention maps be compared per pixel without any warping bookkeeping.

Everything operates on float (3, s, s) arrays in [0, 1] and is a pure
function of (image, seed, config).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError

STUDENT_VIEW_COUNT = 4


@dataclass
class AugmentConfig:
    crop_prob: float = 0.5
    crop_min_area: float = 0.5
    zoom_prob: float = 0.3
    zoom_max_factor: float = 1.5
    flip_prob: float = 0.5
    photometric_prob: float = 0.8
    teacher_jitter: float = 0.2
    blur_sigma_min: float = 0.1
    blur_sigma_max: float = 1.5
    mask_rect_min: int = 1
    mask_rect_max: int = 3
    mask_area_budget: float = 0.25
    student_jitter: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.crop_min_area <= 1.0:
            raise ConfigError(f"crop_min_area must be in (0,1], got {self.crop_min_area}")
        if self.zoom_max_factor < 1.0:
            raise ConfigError(f"zoom_max_factor must be >= 1, got {self.zoom_max_factor}")
        if not 0.0 <= self.mask_area_budget <= 1.0:
            raise ConfigError(f"mask_area_budget must be in [0,1], got {self.mask_area_budget}")
        if self.mask_rect_min > self.mask_rect_max or self.mask_rect_min < 0:
            raise ConfigError(
                f"bad mask rectangle range {self.mask_rect_min}..{self.mask_rect_max}"
            )
        for name in ("crop_prob", "zoom_prob", "flip_prob", "photometric_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be a probability, got {p}")


@dataclass
class ViewBatch:
    teacher_view: np.ndarray
    student_views: list
    mask_records: list          # per view: list of (top, left, height, width)
    rng_seed: int

    def __post_init__(self):
        if len(self.student_views) != STUDENT_VIEW_COUNT:
            raise ConfigError(
                f"exactly {STUDENT_VIEW_COUNT} student views required, "
                f"got {len(self.student_views)}"
            )


def _resize_bilinear(image, out_size):
    """Channel-wise bilinear resample of (3, h, w) to (3, out, out)."""
    _, h, w = image.shape
    ys = (np.arange(out_size) + 0.5) * h / out_size - 0.5
    xs = (np.arange(out_size) + 0.5) * w / out_size - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = image[:, y0][:, :, x0] * (1 - wx) + image[:, y0][:, :, x1] * wx
    bot = image[:, y1][:, :, x0] * (1 - wx) + image[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def _photometric(image, rng, amplitude):
    out = image
    brightness = 1.0 + rng.uniform(-amplitude, amplitude)
    out = out * brightness
    contrast = 1.0 + rng.uniform(-amplitude, amplitude)
    mean = out.mean()
    out = mean + (out - mean) * contrast
    saturation = 1.0 + rng.uniform(-amplitude, amplitude)
    gray = out.mean(axis=0, keepdims=True)
    out = gray + (out - gray) * saturation
    return np.clip(out, 0.0, 1.0)


def teacher_augment(image, rng, cfg: AugmentConfig):
    """Global geometric + photometric augmentation; output stays (3, s, s)."""
    s = image.shape[1]
    out = image
    if rng.random() < cfg.crop_prob:
        area = rng.uniform(cfg.crop_min_area, 1.0)
        side = max(1, int(round(s * np.sqrt(area))))
        top = int(rng.integers(0, s - side + 1))
        left = int(rng.integers(0, s - side + 1))
        out = _resize_bilinear(out[:, top:top + side, left:left + side], s)
    if rng.random() < cfg.zoom_prob:
        factor = rng.uniform(1.0, cfg.zoom_max_factor)
        padded_side = max(s, int(round(s * factor)))
        pad_total = padded_side - s
        top = int(rng.integers(0, pad_total + 1))
        left = int(rng.integers(0, pad_total + 1))
        canvas = np.empty((3, padded_side, padded_side))
        canvas[:] = out.mean(axis=(1, 2))[:, None, None]
        canvas[:, top:top + s, left:left + s] = out
        out = _resize_bilinear(canvas, s)
    if rng.random() < cfg.flip_prob:
        out = out[:, :, ::-1]
    if rng.random() < cfg.photometric_prob:
        out = _photometric(out, rng, cfg.teacher_jitter)
    return np.ascontiguousarray(np.clip(out, 0.0, 1.0))


def _sample_masks(rng, s, cfg: AugmentConfig):
    """Rectangles whose summed area stays within the configured budget."""
    if cfg.mask_rect_max == 0 or cfg.mask_area_budget == 0.0:
        return []
    count = int(rng.integers(cfg.mask_rect_min, cfg.mask_rect_max + 1))
    budget = cfg.mask_area_budget * s * s
    rects = []
    used = 0.0
    for _ in range(count):
        for _attempt in range(20):
            height = int(rng.integers(s // 8, s // 2 + 1))
            width = int(rng.integers(s // 8, s // 2 + 1))
            if used + height * width <= budget:
                top = int(rng.integers(0, s - height + 1))
                left = int(rng.integers(0, s - width + 1))
                rects.append((top, left, height, width))
                used += height * width
                break
    return rects


def student_augment(teacher_view, rng, cfg: AugmentConfig, n_views=STUDENT_VIEW_COUNT):
    """Blur + masking + jitter per view; geometry is the identity map."""
    s = teacher_view.shape[1]
    views = []
    mask_records = []
    for _ in range(n_views):
        view = teacher_view.copy()
        sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max)
        if sigma > 0.0:
            view = np.stack([gaussian_filter(c, sigma, mode="nearest") for c in view])
        rects = _sample_masks(rng, s, cfg)
        fill = view.mean(axis=(1, 2))
        for top, left, height, width in rects:
            view[:, top:top + height, left:left + width] = fill[:, None, None]
        jitter = cfg.student_jitter
        if jitter > 0.0:
            view = view * (1.0 + rng.uniform(-jitter, jitter))
            mean = view.mean()
            view = mean + (view - mean) * (1.0 + rng.uniform(-jitter, jitter))
        views.append(np.ascontiguousarray(np.clip(view, 0.0, 1.0)))
        mask_records.append(rects)
    return views, mask_records


def apply_student_geometry(grid):
    """Spatial transform the student pipeline applies to coordinates: none.

    Exists so the alignment contract is testable against label maps: any
    per-pixel ground truth pushed through the student geometry must come
    back unchanged, because blur, masking, and jitter never move content.
    """
    return grid


def build_view_batch(image, seed, cfg: AugmentConfig):
    """Deterministic ViewBatch for one scene image."""
    rng = np.random.default_rng(seed)
    teacher_view = teacher_augment(image, rng, cfg)
    student_views, mask_records = student_augment(teacher_view, rng, cfg)
    return ViewBatch(teacher_view, student_views, mask_records, seed)
