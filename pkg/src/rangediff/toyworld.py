"""Procedurally rendered shapes-at-distance imagery with exact oracles.

Each image shows one red foreground shape (class) whose apparent size
scales as 1/distance, over a muted background with non-red clutter.
Because the foreground is the only red-dominant content, brute-force
oracles exist for every question the pipeline needs answered:

    oracle_detect     exact-ish bounding box from red dominance
    oracle_classify   class identity by mask/template IoU
    toy_quality_label structural-integrity pass/fail for generated images

Shape geometry is continuous: the class polygon is scaled by the exact
size S_ref * d_ref / d and placed at a random subpixel position, then
rasterized by pixel-center test.  Averaged over samples the mask area is
therefore an unbiased estimate of the continuous area, and the
area-vs-distance law holds without rasterization bias.  Distance also
degrades the image: Gaussian blur with sigma = blur_per_meter * d and
per-pixel noise with std noise_per_meter * d (8-bit units).

Rendering is a pure function of (config, class, distance, seed) down to
the PNG bytes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from matplotlib.path import Path as MplPath
from PIL import Image
from scipy import ndimage

from .conditioning import ConditionVocabulary
from .datapipe import DatasetManifest, Sample, save_manifest
from .quality import QualityLabel

SHAPE_CLASS_NAMES = ("arrow-up", "arrow-down", "arrow-left", "chevron", "bar", "empty")
EMPTY_CLASS_ID = SHAPE_CLASS_NAMES.index("empty")

# minimum red-over-other-channels margin that counts as foreground
DETECT_MARGIN = 95

_ARROW_UP = [
    (0.5, 0.0), (1.0, 0.45), (0.65, 0.45), (0.65, 1.0),
    (0.35, 1.0), (0.35, 0.45), (0.0, 0.45),
]
_SHAPE_POLYGONS = {
    "arrow-up": _ARROW_UP,
    "arrow-down": [(x, 1.0 - y) for x, y in _ARROW_UP],
    "arrow-left": [(y, x) for x, y in _ARROW_UP],
    "chevron": [
        (0.0, 0.0), (0.5, 0.62), (1.0, 0.0),
        (1.0, 0.38), (0.5, 1.0), (0.0, 0.38),
    ],
    "bar": [(0.0, 0.325), (1.0, 0.325), (1.0, 0.675), (0.0, 0.675)],
}

_BACKGROUND_PALETTE = (
    (96, 96, 96), (70, 90, 110), (80, 100, 80),
    (120, 110, 95), (62, 62, 72), (108, 118, 126),
)
_CLUTTER_PALETTE = (
    (50, 80, 160), (60, 140, 70), (170, 160, 60),
    (110, 60, 130), (60, 130, 140), (140, 140, 140),
)
_FOREGROUND_COLOR = (230, 40, 35)


def toy_vocabulary() -> ConditionVocabulary:
    return ConditionVocabulary(class_names=SHAPE_CLASS_NAMES)


@dataclass(frozen=True)
class ToyWorldConfig:
    image_size: int = 64
    s_ref: float = 40.0          # foreground size in pixels at d_ref
    d_ref: float = 4.0
    distances: tuple = tuple(range(4, 26))
    clutter_range: tuple = (0, 3)
    blur_per_meter: float = 0.02
    noise_per_meter: float = 0.3  # 8-bit levels of pixel noise per meter
    background_palette: tuple = _BACKGROUND_PALETTE
    seed: int = 0

    def __post_init__(self):
        far = max(self.distances)
        if round(self.size_at(far)) < 2:
            raise ValueError(
                f"shape would shrink below 2 px at d={far}; raise s_ref"
            )
        if self.size_at(far) * 0.35 < 1.05:
            raise ValueError("thinnest shape could rasterize to an empty mask; raise s_ref")
        if self.s_ref > self.image_size - 4:
            raise ValueError("s_ref leaves no placement margin at d_ref")
        if any(d < 4 or d > 25 for d in self.distances):
            raise ValueError("distances must lie within [4, 25]")

    def size_at(self, distance: float) -> float:
        """Continuous foreground size in pixels at the given distance."""
        return self.s_ref * self.d_ref / distance


def _rasterize_polygon(points_xy: np.ndarray, height: int, width: int) -> np.ndarray:
    """Pixel-center-inside-polygon mask for polygon vertices in pixel coords."""
    x0 = max(0, int(np.floor(points_xy[:, 0].min())))
    x1 = min(width, int(np.ceil(points_xy[:, 0].max())) + 1)
    y0 = max(0, int(np.floor(points_xy[:, 1].min())))
    y1 = min(height, int(np.ceil(points_xy[:, 1].max())) + 1)
    mask = np.zeros((height, width), dtype=bool)
    if x1 <= x0 or y1 <= y0:
        return mask
    xs, ys = np.meshgrid(np.arange(x0, x1) + 0.5, np.arange(y0, y1) + 0.5)
    centers = np.column_stack([xs.ravel(), ys.ravel()])
    inside = MplPath(points_xy).contains_points(centers)
    mask[y0:y1, x0:x1] = inside.reshape(y1 - y0, x1 - x0)
    return mask


def _shape_mask(
    class_name: str, size: float, origin_xy: tuple, height: int, width: int
) -> np.ndarray:
    unit = np.asarray(_SHAPE_POLYGONS[class_name], dtype=np.float64)
    mins = unit.min(axis=0)
    pts = (unit - mins) * size + np.asarray(origin_xy, dtype=np.float64)
    return _rasterize_polygon(pts, height, width)


def _paint(img: np.ndarray, mask: np.ndarray, color) -> None:
    img[mask] = np.asarray(color, dtype=np.float64)


def render_sample(config: ToyWorldConfig, class_id: int, distance: float, rng) -> tuple:
    """Render one image; returns ((H, W, 3) uint8, truth dict).

    truth holds the pre-degradation foreground bounding box
    [left, top, right, bottom) (None for the empty class), the nominal
    integer size, and the exact mask pixel area.
    """
    n = config.image_size
    class_name = SHAPE_CLASS_NAMES[class_id]
    img = np.empty((n, n, 3), dtype=np.float64)
    bg = np.asarray(config.background_palette[rng.integers(len(config.background_palette))])
    img[:] = np.clip(bg + rng.integers(-10, 11, size=3), 0, 255)

    lo, hi = config.clutter_range
    for _ in range(int(rng.integers(lo, hi + 1))):
        color = np.asarray(_CLUTTER_PALETTE[rng.integers(len(_CLUTTER_PALETTE))])
        color = np.clip(color + rng.integers(-15, 16, size=3), 0, 255)
        extent = rng.uniform(0.05, 0.2) * n
        cx, cy = rng.uniform(0, n, size=2)
        if rng.integers(2) == 0:
            ys, xs = np.mgrid[0:n, 0:n]
            blob = (xs + 0.5 - cx) ** 2 + (ys + 0.5 - cy) ** 2 <= (extent / 2) ** 2
        else:
            rect = np.array(
                [(cx, cy), (cx + extent, cy), (cx + extent, cy + extent * 0.6), (cx, cy + extent * 0.6)]
            )
            blob = _rasterize_polygon(rect, n, n)
        _paint(img, blob, color)

    truth = {"truth_box": None, "size_px": 0, "mask_area": 0}
    if class_name != "empty":
        size = config.size_at(distance)
        unit = np.asarray(_SHAPE_POLYGONS[class_name])
        extent_x = (unit[:, 0].max() - unit[:, 0].min()) * size
        extent_y = (unit[:, 1].max() - unit[:, 1].min()) * size
        margin = 1.0
        ox = rng.uniform(margin, n - extent_x - margin)
        oy = rng.uniform(margin, n - extent_y - margin)
        mask = _shape_mask(class_name, size, (ox, oy), n, n)
        if not mask.any():
            raise RuntimeError("foreground rasterized to an empty mask")
        color = np.clip(np.asarray(_FOREGROUND_COLOR) + rng.integers(-12, 13, size=3), 0, 255)
        _paint(img, mask, color)
        ys, xs = np.nonzero(mask)
        truth = {
            "truth_box": [int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1],
            "size_px": int(round(size)),
            "mask_area": int(mask.sum()),
        }

    sigma = config.blur_per_meter * distance
    if sigma > 0:
        img = ndimage.gaussian_filter(img, sigma=(sigma, sigma, 0))
    noise_std = config.noise_per_meter * distance
    if noise_std > 0:
        img = img + rng.normal(0.0, noise_std, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), truth


def generate_toy_dataset(
    config: ToyWorldConfig,
    n_per_class_distance: int,
    out_dir,
    test_fraction: float = 0.0,
) -> DatasetManifest:
    """Render a dataset uniform over (class, distance) cells and write it out.

    Produces PNGs under out_dir/images plus out_dir/manifest.jsonl; returns
    the loaded manifest.  Byte-deterministic given config.seed.
    """
    if n_per_class_distance < 1:
        raise ValueError("need at least one sample per (class, distance) cell")
    out_dir = os.fspath(out_dir)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    vocab = toy_vocabulary()
    n_test = int(round(n_per_class_distance * test_fraction))
    samples = []
    for class_id, class_name in enumerate(SHAPE_CLASS_NAMES):
        for distance in config.distances:
            for i in range(n_per_class_distance):
                seq = np.random.SeedSequence([config.seed, class_id, int(distance), i])
                rng = np.random.Generator(np.random.PCG64(seq))
                image, truth = render_sample(config, class_id, float(distance), rng)
                name = f"{class_name}_d{int(distance):02d}_{i:05d}.png"
                path = os.path.join(img_dir, name)
                Image.fromarray(image).save(path)
                samples.append(
                    Sample(
                        path=path,
                        class_id=class_id,
                        distance_m=float(distance),
                        split="test" if i < n_test else "train",
                        meta=truth,
                    )
                )
    manifest = DatasetManifest(samples=samples, vocab=vocab)
    save_manifest(manifest, os.path.join(out_dir, "manifest.jsonl"))
    return manifest


def foreground_mask(image: np.ndarray, margin: int = DETECT_MARGIN) -> np.ndarray:
    """Red-dominance mask: R - max(G, B) >= margin."""
    arr = image.astype(np.int16)
    return (arr[..., 0] - np.maximum(arr[..., 1], arr[..., 2])) >= margin


def oracle_detect(image: np.ndarray, margin: int = DETECT_MARGIN):
    """Foreground bounding box (left, top, right, bottom), or None if absent."""
    mask = foreground_mask(image, margin)
    if not mask.any():
        return None
    ys, xs = np.nonzero(mask)
    return (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


class OracleShapeDetector:
    """Detector-protocol wrapper around oracle_detect."""

    def __call__(self, image: np.ndarray):
        return oracle_detect(image)


def measure_foreground_area(image: np.ndarray) -> int:
    return int(foreground_mask(image).sum())


def _template_mask(class_name: str, height: int, width: int) -> np.ndarray:
    """Class polygon rasterized to exactly fill a height x width box."""
    unit = np.asarray(_SHAPE_POLYGONS[class_name], dtype=np.float64)
    mins, maxs = unit.min(axis=0), unit.max(axis=0)
    norm = (unit - mins) / (maxs - mins)
    pts = norm * np.array([width, height])
    return _rasterize_polygon(pts, height, width)


def oracle_classify(image: np.ndarray, min_pixels: int = 4) -> int:
    """Class identity by IoU against templates scaled to the observed box.

    Returns the empty class when no significant foreground is present.
    Reliable only while the foreground is large enough for the templates
    to differ; validate on real renders before trusting at long range.
    """
    box = oracle_detect(image)
    mask = foreground_mask(image)
    if box is None or mask.sum() < min_pixels:
        return EMPTY_CLASS_ID
    left, top, right, bottom = box
    observed = mask[top:bottom, left:right]
    best_id, best_iou = EMPTY_CLASS_ID, -1.0
    for class_id, class_name in enumerate(SHAPE_CLASS_NAMES):
        if class_name == "empty":
            continue
        template = _template_mask(class_name, bottom - top, right - left)
        union = np.logical_or(observed, template).sum()
        if union == 0:
            continue
        iou = np.logical_and(observed, template).sum() / union
        if iou > best_iou:
            best_id, best_iou = class_id, iou
    return best_id


def toy_quality_label(
    image: np.ndarray,
    expected_class_id: int,
    expected_distance: float | None = None,
    config: ToyWorldConfig | None = None,
) -> QualityLabel:
    """Structural-integrity verdict for a (generated) toy image.

    Non-empty classes must show a single coherent foreground blob of at
    least a few pixels (and, when the requested distance is known, of
    plausible area); the empty class must show none.
    """
    mask = foreground_mask(image)
    area = int(mask.sum())
    if expected_class_id == EMPTY_CLASS_ID:
        if area >= 8:
            return QualityLabel("fail", reason="spurious foreground")
        return QualityLabel("pass")
    if area < 4:
        return QualityLabel("fail", reason="foreground missing")
    labels, n_components = ndimage.label(mask)
    if n_components > 1:
        largest = max(np.sum(labels == i) for i in range(1, n_components + 1))
        if largest / area < 0.6:
            return QualityLabel("fail", reason="foreground fragmented")
    if expected_distance is not None and config is not None:
        size = config.size_at(expected_distance)
        unit = np.asarray(_SHAPE_POLYGONS[SHAPE_CLASS_NAMES[expected_class_id]])
        spans = unit.max(axis=0) - unit.min(axis=0)
        nominal = _template_mask(
            SHAPE_CLASS_NAMES[expected_class_id],
            max(1, int(round(spans[1] * size))),
            max(1, int(round(spans[0] * size))),
        ).sum()
        if not 0.2 * nominal <= area <= 5.0 * nominal:
            return QualityLabel("fail", reason="implausible size")
    return QualityLabel("pass")
