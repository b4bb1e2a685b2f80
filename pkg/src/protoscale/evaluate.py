"""Grouping quality metrics against generated ground truth.

Attention maps become hard segmentations by per-pixel argmax, compared
with the known label grids: semantic purity over all pixels, adjusted
Rand index for instances and object groups over foreground pixels only
(background is not an instance). Prototype collapse shows up as low
entropy of the mean semantic attention mass per prototype.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, ShapeError
from .imgio import write_pgm, write_ppm
from .tensor import Tensor

EVAL_CSV_HEADER = (
    "step,semantic_purity,instance_ari,hierarchy_ari,"
    "usage_entropy,active_prototypes,n_scenes"
)

# 16 visually spread colors; overlays must be byte-stable across runs.
PALETTE = np.array(
    [
        (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
        (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
        (210, 245, 60), (250, 190, 190), (0, 128, 128), (170, 110, 40),
        (128, 0, 0), (128, 128, 0), (0, 0, 128), (128, 128, 128),
    ],
    dtype=np.float64,
) / 255.0


def argmax_segmentation(attention, grid, target_size):
    """Row-argmax per pixel (ties to the lowest index), nearest-upsampled.

    ``attention`` is an (N, HW) array or Tensor over a ``grid = (h, w)``
    layout; the result is an int grid of shape (target_size, target_size).
    """
    data = attention.data if isinstance(attention, Tensor) else np.asarray(attention)
    h, w = grid
    if data.shape[1] != h * w:
        raise ShapeError(f"attention has {data.shape[1]} columns, grid wants {h * w}")
    labels = np.argmax(data, axis=0).reshape(h, w)
    rows = (np.arange(target_size) * h) // target_size
    cols = (np.arange(target_size) * w) // target_size
    return labels[np.ix_(rows, cols)].astype(np.int64)


def _contingency(pred, truth, mask):
    if pred.shape != truth.shape or pred.shape != mask.shape:
        raise ShapeError(
            f"label grids disagree: {pred.shape}, {truth.shape}, {mask.shape}"
        )
    if not mask.any():
        raise ContractError("metric mask selects no pixels")
    p = pred[mask].ravel()
    t = truth[mask].ravel()
    _, pi = np.unique(p, return_inverse=True)
    tu, ti = np.unique(t, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return table


def _pairs(counts):
    counts = counts.astype(np.float64)
    return float((counts * (counts - 1.0) / 2.0).sum())


def adjusted_rand_index(pred, truth, mask):
    """Pair-counting ARI over masked pixels; degenerate cases give 0."""
    table = _contingency(pred, truth, mask)
    n = table.sum()
    sum_cells = _pairs(table)
    sum_rows = _pairs(table.sum(axis=1))
    sum_cols = _pairs(table.sum(axis=0))
    total = float(n) * (float(n) - 1.0) / 2.0
    expected = sum_rows * sum_cols / total if total > 0 else 0.0
    maximum = 0.5 * (sum_rows + sum_cols)
    if maximum == expected:
        return 0.0
    return (sum_cells - expected) / (maximum - expected)


def purity(pred, truth, mask):
    """Fraction of masked pixels matching their cluster's majority label."""
    table = _contingency(pred, truth, mask)
    return float(table.max(axis=1).sum()) / float(table.sum())


def collapse_metrics(attention_maps):
    """Usage entropy and active count from pooled attention mass.

    ``attention_maps`` iterates (N, HW) arrays (one per scene); usage is
    total mass per prototype normalized to a distribution. Returns
    (entropy_nats, active_count, usage).
    """
    sums = None
    for att in attention_maps:
        data = att.data if isinstance(att, Tensor) else np.asarray(att)
        mass = data.sum(axis=1)
        sums = mass.copy() if sums is None else sums + mass
    if sums is None:
        raise ContractError("collapse_metrics needs at least one attention map")
    usage = sums / sums.sum()
    positive = usage[usage > 0.0]
    entropy = float(-(positive * np.log(positive)).sum())
    active = int((usage > 1.0 / (10.0 * usage.size)).sum())
    return entropy, active, usage


@dataclass
class MetricsReport:
    semantic_purity: float
    instance_ari: float
    hierarchy_ari: float
    usage_entropy: float
    active_prototypes: int
    n_scenes: int
    per_scale: list = field(default_factory=list)

    def as_dict(self):
        return {
            "semantic_purity": self.semantic_purity,
            "instance_ari": self.instance_ari,
            "hierarchy_ari": self.hierarchy_ari,
            "usage_entropy": self.usage_entropy,
            "active_prototypes": self.active_prototypes,
            "n_scenes": self.n_scenes,
            "per_scale": self.per_scale,
        }

    def csv_row(self, step):
        return ",".join(
            [str(step)]
            + [
                repr(v)
                for v in (
                    self.semantic_purity,
                    self.instance_ari,
                    self.hierarchy_ari,
                    self.usage_entropy,
                )
            ]
            + [str(self.active_prototypes), str(self.n_scenes)]
        )


def evaluate_model(network, scenes):
    """Score a network on (image, semantic, instance, group) quadruples.

    Headline numbers come from the finest pyramid scale; ``per_scale``
    carries the same metrics for every scale. ARI terms are averaged
    over scenes.
    """
    if not scenes:
        raise ContractError("evaluation needs at least one scene")
    n_scales = None
    scores = None
    usage_sums = None
    for image, semantic_map, instance_map, group_map in scenes:
        sets = network(Tensor(image))
        if n_scales is None:
            n_scales = len(sets)
            scores = [{"purity": [], "instance": [], "hierarchy": []} for _ in sets]
            usage_sums = [None] * n_scales
        size = semantic_map.shape[0]
        everywhere = np.ones_like(instance_map, dtype=bool)
        foreground = instance_map > 0
        for k, att in enumerate(sets):
            sem_pred = argmax_segmentation(att.semantic, att.grid, size)
            inst_pred = argmax_segmentation(att.instance, att.grid, size)
            hier_pred = argmax_segmentation(att.hierarchical, att.grid, size)
            scores[k]["purity"].append(purity(sem_pred, semantic_map, everywhere))
            scores[k]["instance"].append(
                adjusted_rand_index(inst_pred, instance_map, foreground)
            )
            scores[k]["hierarchy"].append(
                adjusted_rand_index(hier_pred, group_map, foreground)
            )
            mass = att.semantic.data.sum(axis=1)
            usage_sums[k] = (
                mass.copy() if usage_sums[k] is None else usage_sums[k] + mass
            )
    per_scale = []
    for k in range(n_scales):
        entropy, active, _ = collapse_metrics([usage_sums[k][:, None]])
        per_scale.append(
            {
                "semantic_purity": float(np.mean(scores[k]["purity"])),
                "instance_ari": float(np.mean(scores[k]["instance"])),
                "hierarchy_ari": float(np.mean(scores[k]["hierarchy"])),
                "usage_entropy": entropy,
                "active_prototypes": active,
            }
        )
    finest = per_scale[0]
    return MetricsReport(
        semantic_purity=finest["semantic_purity"],
        instance_ari=finest["instance_ari"],
        hierarchy_ari=finest["hierarchy_ari"],
        usage_entropy=finest["usage_entropy"],
        active_prototypes=finest["active_prototypes"],
        n_scenes=len(scenes),
        per_scale=per_scale,
    )


def write_report(report, json_path):
    payload = json.dumps(report.as_dict(), indent=2, sort_keys=True)
    Path(json_path).write_text(payload + "\n", encoding="utf-8")


def append_report_csv(report, csv_path, step):
    path = Path(csv_path)
    fresh = not path.exists()
    with open(path, "a", encoding="utf-8") as fh:
        if fresh:
            fh.write(EVAL_CSV_HEADER + "\n")
        fh.write(report.csv_row(step) + "\n")


# -- image export -------------------------------------------------------------


def _to_gray(row, grid):
    """Min-max normalize one attention row to 0..255; flat rows go mid-gray."""
    h, w = grid
    data = row.reshape(h, w)
    lo, hi = data.min(), data.max()
    if hi - lo < 1e-12:
        return np.full((h, w), 128, dtype=np.int64)
    scaled = np.round((data - lo) / (hi - lo) * 255.0)
    return scaled.astype(np.int64)


def export_attention_images(attention_sets, image, out_dir):
    """Write every attention map as PGM plus one overlay PPM per scale.

    The overlay blends the input image with palette colors of the
    semantic argmax. Returns the list of written paths; the count is
    sum over scales of (semantic + instance + hierarchical rows) plus
    one overlay per scale.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    size = image.shape[1]
    written = []

    def emit(path, writer, *args):
        writer(str(path), *args)
        written.append(path)

    for k, att in enumerate(attention_sets):
        tag = f"scale{k + 1}"
        groups = (
            ("sem", att.semantic.data),
            ("inst", att.instance.data),
            ("hier", att.hierarchical.data),
        )
        for label, maps in groups:
            for row in range(maps.shape[0]):
                emit(
                    out / f"{tag}_{label}{row:02d}.pgm",
                    write_pgm,
                    _to_gray(maps[row], att.grid),
                )
        labels = argmax_segmentation(att.semantic, att.grid, size)
        colors = PALETTE[labels % len(PALETTE)].transpose(2, 0, 1)
        overlay = np.clip(0.5 * image + 0.5 * colors, 0.0, 1.0)
        emit(out / f"{tag}_overlay.ppm", write_ppm, overlay)
    return written
