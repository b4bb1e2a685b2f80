"""Procedural scenes with exact semantic, instance, and group ground truth.

Scenes are built from a small catalog of composite objects (snowman, house,
cart, ...) whose parts are primitive shapes. Shape kind determines the
semantic class, each part gets its own instance id, and all parts of one
catalog object share a group id, so all three annotation levels fall out of
the same geometry. Colors come from a per-class palette of well separated
hues sharing one dominant channel, so classes stay separable from raw RGB
while same-class instances usually differ in hue. The background is the
same flat gray in every scene, the one appearance cluster shared across
the whole dataset.

Later objects occlude earlier ones; placements where any part loses more
than the allowed fraction of its area are resampled, never surfaced as
errors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError
from .imgio import read_pgm, read_ppm, write_pgm, write_ppm

CATALOG_VERSION = "v1"

CLASS_CIRCLE, CLASS_RECT, CLASS_TRIANGLE = 1, 2, 3

# Discrete palette per semantic class. Every anchor keeps the family's
# dominant channel at least 0.2 above the other two, so a nearest-mean
# pixel classifier clears 90% and the semantic task stays learnable from
# color alone. Within a family the anchors are deliberately far apart:
# two same-class instances should usually land on visibly different hues,
# otherwise nothing in the image distinguishes them. Tight jitter around
# each anchor keeps the hues clusterable instead of a continuous smear.
_CLASS_PALETTE = {
    CLASS_CIRCLE: (
        (0.95, 0.10, 0.10),
        (0.90, 0.45, 0.10),
        (0.85, 0.10, 0.45),
        (0.75, 0.45, 0.40),
    ),
    CLASS_RECT: (
        (0.10, 0.95, 0.10),
        (0.45, 0.90, 0.10),
        (0.10, 0.85, 0.45),
        (0.40, 0.75, 0.40),
    ),
    CLASS_TRIANGLE: (
        (0.10, 0.10, 0.95),
        (0.45, 0.10, 0.90),
        (0.10, 0.45, 0.85),
        (0.40, 0.40, 0.75),
    ),
}
_COLOR_JITTER = 0.04

# Catalog: object name -> parts as (shape, dy, dx, scale). Offsets are in
# units of the object's base half-size and chosen so parts touch or overlap
# slightly. Listed draw order matters: later parts overdraw.
CATALOG = {
    "ball": [("circle", 0.0, 0.0, 1.0)],
    "box": [("rect", 0.0, 0.0, 1.0)],
    "cone": [("triangle", 0.0, 0.0, 1.1)],
    "snowman": [("circle", 0.0, 0.0, 1.0), ("circle", -1.45, 0.0, 0.62)],
    "tower": [("rect", 0.0, 0.0, 1.0), ("rect", -1.70, 0.0, 0.78)],
    "house": [("rect", 0.0, 0.0, 1.0), ("triangle", -1.60, 0.0, 1.05)],
    "tree": [("triangle", 0.0, 0.0, 1.15), ("rect", 1.45, 0.0, 0.55)],
    "cart": [
        ("rect", 0.0, 0.0, 1.0),
        ("circle", 1.05, -0.85, 0.5),
        ("circle", 1.05, 0.85, 0.5),
    ],
}

_SHAPE_CLASS = {"circle": CLASS_CIRCLE, "rect": CLASS_RECT, "triangle": CLASS_TRIANGLE}

MIN_INSTANCES, MAX_INSTANCES = 2, 6
MIN_PART_PIXELS = 12


@dataclass
class SceneConfig:
    size: int = 64
    min_objects: int = 2
    max_objects: int = 4
    noise_sigma: float = 0.02
    max_occlusion: float = 0.30

    def __post_init__(self):
        if self.size < 32:
            raise ConfigError(f"scene size must be >= 32, got {self.size}")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ConfigError(
                f"bad object count range {self.min_objects}..{self.max_objects}"
            )
        if not 0.0 <= self.max_occlusion < 1.0:
            raise ConfigError(f"max_occlusion must be in [0,1), got {self.max_occlusion}")


@dataclass
class Scene:
    image: np.ndarray          # float (3, s, s) in [0, 1]
    semantic_map: np.ndarray   # int (s, s), 0 = background
    instance_map: np.ndarray   # int (s, s), 0 = background
    group_map: np.ndarray      # int (s, s), 0 = background
    spec: list                 # one dict per placed object
    seed: int


def _shape_mask(shape, size, cy, cx, half):
    ys = np.arange(size)[:, None]
    xs = np.arange(size)[None, :]
    if shape == "circle":
        return (ys - cy) ** 2 + (xs - cx) ** 2 <= half ** 2
    if shape == "rect":
        return (np.abs(ys - cy) <= half) & (np.abs(xs - cx) <= half * 1.25)
    if shape == "triangle":
        frac = (ys - (cy - half)) / (2.0 * half)
        return (frac >= 0.0) & (frac <= 1.0) & (np.abs(xs - cx) <= frac * half * 1.15)
    raise ValueError(f"unknown shape {shape}")


def _sample_color(rng, class_id):
    anchors = _CLASS_PALETTE[class_id]
    base = np.array(anchors[int(rng.integers(0, len(anchors)))])
    return np.clip(base + rng.uniform(-_COLOR_JITTER, _COLOR_JITTER, size=3), 0.0, 1.0)


# How far scene backgrounds roam around the shared mid gray. Kept well
# below the palette's 0.2 channel margin: the backgrounds must read as
# one appearance cluster across the dataset, not one cluster per scene.
_BG_SPREAD = 0.0


def _background(rng, size, noise_sigma):
    base = 0.485 + (rng.uniform(0.42, 0.55) - 0.485) * _BG_SPREAD
    texture = gaussian_filter(rng.standard_normal((size, size)), 3.0)
    peak = np.abs(texture).max()
    if peak > 0.0:
        texture *= 0.04 / peak
    image = np.empty((3, size, size))
    image[:] = base + texture
    tint = rng.uniform(-0.02, 0.02, size=3) * _BG_SPREAD
    image += tint[:, None, None]
    return image


def _sample_object_names(rng, cfg):
    names = sorted(CATALOG)
    while True:
        count = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
        if count == 0:
            return []
        chosen = [names[int(rng.integers(0, len(names)))] for _ in range(count)]
        parts = sum(len(CATALOG[name]) for name in chosen)
        if MIN_INSTANCES <= parts <= MAX_INSTANCES:
            return chosen


def _try_layout(rng, cfg, chosen):
    """Render one placement attempt; None if occlusion limits are violated."""
    size = cfg.size
    semantic = np.zeros((size, size), dtype=np.int64)
    instance = np.zeros((size, size), dtype=np.int64)
    group = np.zeros((size, size), dtype=np.int64)
    color_map = np.zeros((3, size, size))
    solo_areas = []
    spec = []
    instance_id = 0
    for group_id, name in enumerate(chosen, start=1):
        base = rng.uniform(size / 8.0, size / 5.0) / 2.0
        cy = rng.uniform(size * 0.2, size * 0.8)
        cx = rng.uniform(size * 0.15, size * 0.85)
        placed_parts = []
        for shape, dy, dx, scale in CATALOG[name]:
            instance_id += 1
            half = base * scale
            py, px = cy + dy * base, cx + dx * base
            mask = _shape_mask(shape, size, py, px, half)
            if mask.sum() < MIN_PART_PIXELS:
                return None
            class_id = _SHAPE_CLASS[shape]
            color = _sample_color(rng, class_id)
            semantic[mask] = class_id
            instance[mask] = instance_id
            group[mask] = group_id
            color_map[:, mask] = color[:, None]
            solo_areas.append(int(mask.sum()))
            placed_parts.append(
                {
                    "shape": shape,
                    "class": class_id,
                    "instance": instance_id,
                    "center": [float(py), float(px)],
                    "half_size": float(half),
                    "color": [float(c) for c in color],
                }
            )
        spec.append({"name": name, "group": group_id, "parts": placed_parts})
    for pid, solo in enumerate(solo_areas, start=1):
        visible = int((instance == pid).sum())
        if visible < (1.0 - cfg.max_occlusion) * solo:
            return None
    return semantic, instance, group, color_map, spec


def generate_scene(cfg: SceneConfig, rng) -> Scene:
    seed_note = int(rng.integers(0, 2 ** 31))
    layout = None
    while layout is None:
        chosen = _sample_object_names(rng, cfg)
        for _ in range(100):
            layout = _try_layout(rng, cfg, chosen)
            if layout is not None:
                break
    semantic, instance, group, color_map, spec = layout
    image = _background(rng, cfg.size, cfg.noise_sigma)
    foreground = instance > 0
    image[:, foreground] = color_map[:, foreground]
    image += rng.normal(0.0, cfg.noise_sigma, image.shape)
    image = np.clip(image, 0.0, 1.0)
    return Scene(image, semantic, instance, group, spec, seed_note)


def scene_rng(master_seed, index):
    """Per-scene generator: independent stream derived from (seed, counter)."""
    return np.random.default_rng(np.random.SeedSequence((master_seed, index)))


def write_dataset(n, cfg: SceneConfig, out_dir, master_seed):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        scene = generate_scene(cfg, scene_rng(master_seed, i))
        stem = f"scene_{i:05d}"
        files = {
            "image": f"{stem}.ppm",
            "semantic": f"{stem}_sem.pgm",
            "instance": f"{stem}_inst.pgm",
            "group": f"{stem}_grp.pgm",
        }
        write_ppm(out / files["image"], scene.image)
        write_pgm(out / files["semantic"], scene.semantic_map)
        write_pgm(out / files["instance"], scene.instance_map)
        write_pgm(out / files["group"], scene.group_map)
        entries.append(
            {
                "index": i,
                "seed": [int(master_seed), i],
                **files,
                "objects": [o["name"] for o in scene.spec],
            }
        )
    manifest = {
        "format": 1,
        "catalog": CATALOG_VERSION,
        "size": cfg.size,
        "master_seed": int(master_seed),
        "count": n,
        "val_count": (n + 7) // 8 if n else 0,
        "scenes": entries,
    }
    path = out / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(data_dir):
    path = Path(data_dir) / "manifest.json"
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_scene(data_dir, entry):
    """Read one dataset entry back; image is the 8-bit quantized canonical."""
    base = Path(data_dir)
    return Scene(
        image=read_ppm(base / entry["image"]),
        semantic_map=read_pgm(base / entry["semantic"]),
        instance_map=read_pgm(base / entry["instance"]),
        group_map=read_pgm(base / entry["group"]),
        spec=[],
        seed=-1,
    )


def split_entries(manifest):
    """(train, validation) partition; validation is the manifest's tail."""
    entries = manifest["scenes"]
    val = manifest.get("val_count", 0)
    if val == 0:
        return entries, []
    return entries[:-val], entries[-val:]
