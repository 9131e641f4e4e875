"""Dataset construction: procedural (image, sketch, prompt) triples, the
edge-map thresholding transform, ingestion of user images, and
stratification by sketch pixel count.

Every primitive is a simple polygon (a circle is a 32-gon, a star a
10-gon), filled by an even-odd point-in-polygon test and outlined by
rasterizing its edges as polylines. The "novice" distortion model jitters
polygon vertices and drops whole edge strokes, both seeded per record.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

SHAPE_NAMES = ("circle", "square", "triangle", "star")

COLOR_PALETTE = {
    "red": (220, 50, 47),
    "green": (64, 180, 76),
    "blue": (58, 98, 221),
    "yellow": (229, 210, 58),
    "purple": (162, 72, 202),
    "orange": (239, 140, 44),
    "cyan": (62, 200, 210),
    "white": (238, 238, 238),
}

_SHAPE_SIDES = {"circle": 32, "square": 4, "triangle": 3, "star": 10}

RASTER_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff"}


@dataclass
class DatasetRecord:
    """One training/evaluation example.

    ``image`` is channel-first float32 in [-1, 1]; ``sketch`` is a strictly
    binary (H, W) uint8 raster; ``complexity`` always equals the sketch's
    nonzero pixel count.
    """

    image: np.ndarray
    sketch: np.ndarray
    prompt: str
    complexity: int

    def __post_init__(self):
        uniq = np.unique(self.sketch)
        if not np.all(np.isin(uniq, (0, 1))):
            raise ValueError("sketch must be strictly binary")
        if int(self.sketch.sum()) != self.complexity:
            raise ValueError("complexity must equal the sketch nonzero count")


def sketchify(edge_map: np.ndarray, threshold: int = 50) -> np.ndarray:
    """Binarize an edge map on [0, 255]: values >= threshold become 1.

    The boundary value itself lands in the "on" class (a single >=
    comparison; configurable via ``threshold``).
    """
    edge_map = np.asarray(edge_map)
    if edge_map.min() < 0 or edge_map.max() > 255:
        raise ValueError("edge map values must lie in [0, 255]")
    return (edge_map >= threshold).astype(np.uint8)


def gradient_magnitude(gray: np.ndarray) -> np.ndarray:
    """Central-difference gradient magnitude rescaled to [0, 255]."""
    gray = np.asarray(gray, dtype=np.float64)
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak == 0.0:
        return np.zeros_like(mag)
    return mag / peak * 255.0


def shape_polygon(kind: str, cx: float, cy: float, radius: float, angle: float) -> np.ndarray:
    """Vertices (x, y) of the primitive as a simple polygon."""
    n = _SHAPE_SIDES[kind]
    theta = angle + 2.0 * np.pi * np.arange(n) / n
    r = np.full(n, radius)
    if kind == "star":
        r[1::2] = 0.45 * radius
    return np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=1)


def fill_polygon(poly: np.ndarray, size: int) -> np.ndarray:
    """Even-odd point-in-polygon test at integer pixel centers."""
    ys, xs = np.mgrid[0:size, 0:size]
    px = xs.ravel().astype(np.float64)
    py = ys.ravel().astype(np.float64)
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    crosses = (y1[None, :] > py[:, None]) != (y2[None, :] > py[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        x_at = (x2 - x1)[None, :] * (py[:, None] - y1[None, :]) / (y2 - y1)[None, :] + x1[None, :]
    hits = crosses & (px[:, None] < x_at)
    inside = hits.sum(axis=1) % 2 == 1
    return inside.reshape(size, size)


def outline_polygon(poly: np.ndarray, size: int, keep_edges: np.ndarray | None = None) -> np.ndarray:
    """Rasterize polygon edges as 1-pixel polylines.

    ``keep_edges`` is a boolean mask over edges implementing stroke dropout.
    """
    mask = np.zeros((size, size), dtype=bool)
    n = len(poly)
    for i in range(n):
        if keep_edges is not None and not keep_edges[i]:
            continue
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        steps = max(2, int(2 * max(abs(x2 - x1), abs(y2 - y1))) + 1)
        xs = np.rint(np.linspace(x1, x2, steps)).astype(int)
        ys = np.rint(np.linspace(y1, y2, steps)).astype(int)
        ok = (xs >= 0) & (xs < size) & (ys >= 0) & (ys < size)
        mask[ys[ok], xs[ok]] = True
    return mask


def _render_record(rng: np.random.Generator, image_size: int, distortion: float) -> DatasetRecord:
    size = image_size
    n_shapes = int(rng.integers(1, 4))
    color_names = list(COLOR_PALETTE)

    shapes = []
    for _ in range(n_shapes):
        kind = SHAPE_NAMES[rng.integers(0, len(SHAPE_NAMES))]
        color = color_names[rng.integers(0, len(color_names))]
        radius = float(rng.uniform(0.14, 0.30)) * size
        margin = radius + 1.0
        cx = float(rng.uniform(margin, size - margin))
        cy = float(rng.uniform(margin, size - margin))
        angle = float(rng.uniform(0.0, 2.0 * np.pi))
        shapes.append((kind, color, shape_polygon(kind, cx, cy, radius, angle)))

    fills = [fill_polygon(poly, size) for _, _, poly in shapes]

    bg = float(rng.integers(12, 56))
    img = np.full((size, size, 3), bg, dtype=np.float64)
    for (kind, color, _), mask in zip(shapes, fills):
        img[mask] = COLOR_PALETTE[color]

    sketch = np.zeros((size, size), dtype=bool)
    for j, (kind, _, poly) in enumerate(shapes):
        if distortion > 0.0:
            jitter = rng.normal(0.0, distortion * 0.08 * size, size=poly.shape)
            drawn = poly + jitter
            keep = rng.random(len(poly)) >= 0.35 * distortion
        else:
            drawn = poly
            keep = None
        edge = outline_polygon(drawn, size, keep)
        for later in fills[j + 1:]:
            edge &= ~later  # occluded by a shape drawn on top
        sketch |= edge

    prompt = " and ".join(f"a {color} {kind}" for kind, color, _ in shapes)
    sketch_u8 = sketch.astype(np.uint8)
    image = (np.transpose(img, (2, 0, 1)) / 127.5 - 1.0).astype(np.float32)
    return DatasetRecord(image=image, sketch=sketch_u8, prompt=prompt, complexity=int(sketch_u8.sum()))


def generate_toy_dataset(n: int, image_size: int = 32, seed: int = 0, distortion: float = 0.0) -> list[DatasetRecord]:
    """Procedural scenes of 1-3 colored primitives with outline sketches.

    Record ``i`` draws from its own generator seeded ``seed + i``, so
    generation is order- and worker-independent.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= distortion <= 1.0:
        raise ValueError("distortion must lie in [0, 1]")
    return [
        _render_record(np.random.default_rng(seed + i), image_size, distortion)
        for i in range(n)
    ]


def ingest_images(dir_path, image_size: int = 32, threshold: int = 50, edge_method: str = "gradient-magnitude") -> list[DatasetRecord]:
    """Build records from a directory of raster images.

    Edges come from the gradient magnitude of the resized grayscale image,
    then thresholding; a sidecar ``<stem>.txt`` provides the prompt (missing
    sidecar means the empty prompt). Unreadable files are logged and
    skipped, never fatal.
    """
    if edge_method != "gradient-magnitude":
        raise ValueError(f"unknown edge method: {edge_method}")
    records = []
    for path in sorted(Path(dir_path).iterdir()):
        if path.suffix.lower() not in RASTER_SUFFIXES:
            continue
        try:
            with Image.open(path) as im:
                rgb = im.convert("RGB").resize((image_size, image_size), Image.BILINEAR)
        except Exception as exc:
            log.warning("skipping unreadable image %s: %s", path.name, exc)
            continue
        arr = np.asarray(rgb, dtype=np.float64)
        gray = arr @ np.array([0.299, 0.587, 0.114])
        sketch = sketchify(gradient_magnitude(gray), threshold)
        sidecar = path.with_suffix(".txt")
        prompt = sidecar.read_text(encoding="utf-8").strip() if sidecar.exists() else ""
        image = (np.transpose(arr, (2, 0, 1)) / 127.5 - 1.0).astype(np.float32)
        records.append(
            DatasetRecord(image=image, sketch=sketch, prompt=prompt, complexity=int(sketch.sum()))
        )
    return records


def stratify_by_pixel_count(records, n_strata: int) -> np.ndarray:
    """Quantile-band stratum index per record, keyed on sketch complexity.

    A record lands in the largest stratum k whose k/n quantile its
    complexity reaches, so equal complexities share a stratum and the
    split matches a median split for n_strata = 2.
    """
    if n_strata < 1:
        raise ValueError("n_strata must be >= 1")
    if len(records) == 0:
        raise ValueError("records must be non-empty")
    complexities = np.array([r.complexity for r in records], dtype=np.float64)
    if n_strata == 1:
        return np.zeros(len(records), dtype=np.int64)
    qs = np.quantile(complexities, [k / n_strata for k in range(1, n_strata)])
    return np.searchsorted(qs, complexities, side="right").astype(np.int64)


# ---------------------------------------------------------------------------
# On-disk dataset format: one directory per split with
#   NNNNNN.img.png (RGB), NNNNNN.sketch.png (1-bit), NNNNNN.txt (prompt)
# plus a manifest.json carrying complexity and the generation seed/config.
# ---------------------------------------------------------------------------


def save_dataset(records, dir_path, seed=None, config=None) -> None:
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, rec in enumerate(records):
        stem = f"{i:06d}"
        rgb = np.transpose((rec.image + 1.0) * 127.5, (1, 2, 0))
        Image.fromarray(np.clip(np.rint(rgb), 0, 255).astype(np.uint8)).save(out / f"{stem}.img.png")
        Image.fromarray(rec.sketch.astype(bool)).save(out / f"{stem}.sketch.png")
        (out / f"{stem}.txt").write_text(rec.prompt + "\n", encoding="utf-8")
        entries.append({"id": stem, "prompt": rec.prompt, "complexity": rec.complexity})
    manifest = {
        "n": len(records),
        "image_size": int(records[0].image.shape[-1]) if records else 0,
        "seed": seed,
        "config": config,
        "records": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def load_dataset(dir_path) -> list[DatasetRecord]:
    root = Path(dir_path)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    records = []
    for entry in manifest["records"]:
        stem = entry["id"]
        with Image.open(root / f"{stem}.img.png") as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
        with Image.open(root / f"{stem}.sketch.png") as im:
            sketch = np.asarray(im.convert("1"), dtype=np.uint8)
        image = np.transpose(arr, (2, 0, 1)) / 127.5 - 1.0
        records.append(
            DatasetRecord(
                image=image.astype(np.float32),
                sketch=sketch,
                prompt=entry["prompt"],
                complexity=int(sketch.sum()),
            )
        )
    return records
