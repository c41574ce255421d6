"""Dataset files and splits: manifest format, PNG pairs, and a toy generator.

A dataset is a directory with a ``manifest.jsonl`` (one record per line), an
``alphabet.json`` sidecar naming the classes, and the image/mask PNGs the
records point at. Masks are stored as single-channel palette indices
(class value minus one) so class reads are exact; in memory masks always use
1-based class values with background = 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .analog_bits import ClassAlphabet
from .geometry import BoundingBox

SPLIT_NAMES = ("diffusion_train", "seg_train", "test")


class DatasetError(Exception):
    """Base for dataset I/O failures."""


class MissingFileError(DatasetError):
    """A path named by the manifest does not exist."""


class ManifestFormatError(DatasetError):
    """Malformed manifest JSON or record fields."""


class MaskValueError(DatasetError):
    """An on-disk mask holds a pixel value outside the alphabet."""


@dataclass
class DatasetRecord:
    image: str
    mask: str
    boxes: list[BoundingBox]
    split: str = ""


@dataclass
class LabeledSample:
    """One loaded (image, mask, boxes) triple."""

    image: np.ndarray  # H x W x 3 uint8
    mask: np.ndarray  # H x W class values in {1..C}
    boxes: list[BoundingBox]


@dataclass
class DatasetManifest:
    root: Path
    records: list[DatasetRecord]
    alphabet: ClassAlphabet


def boxes_to_json(boxes: list[BoundingBox]) -> list[dict]:
    return [
        {"class": b.class_id, "i_min": b.i_min, "j_min": b.j_min, "i_max": b.i_max, "j_max": b.j_max}
        for b in boxes
    ]


def boxes_from_json(items) -> list[BoundingBox]:
    try:
        return [
            BoundingBox(
                class_id=int(d["class"]),
                i_min=int(d["i_min"]),
                j_min=int(d["j_min"]),
                i_max=int(d["i_max"]),
                j_max=int(d["j_max"]),
            )
            for d in items
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestFormatError(f"bad box entry: {e}") from e


def save_manifest(manifest: DatasetManifest, path: Path | None = None) -> Path:
    path = Path(path) if path else manifest.root / "manifest.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for rec in manifest.records:
            row = {
                "image": rec.image,
                "mask": rec.mask,
                "boxes": boxes_to_json(rec.boxes),
                "split": rec.split,
            }
            f.write(json.dumps(row) + "\n")
    with open(path.parent / "alphabet.json", "w") as f:
        json.dump(manifest.alphabet.to_dict(), f, indent=2)
    return path


def load_manifest(path: Path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"manifest not found: {path}")
    alphabet_path = path.parent / "alphabet.json"
    if not alphabet_path.exists():
        raise MissingFileError(f"alphabet sidecar not found: {alphabet_path}")
    try:
        alphabet = ClassAlphabet.from_dict(json.loads(alphabet_path.read_text()))
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise ManifestFormatError(f"bad alphabet.json: {e}") from e

    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            rec = DatasetRecord(
                image=row["image"],
                mask=row["mask"],
                boxes=boxes_from_json(row["boxes"]),
                split=row.get("split", ""),
            )
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ManifestFormatError(f"{path}:{lineno}: {e}") from e
        records.append(rec)
    return DatasetManifest(root=path.parent, records=records, alphabet=alphabet)


def save_image_png(image: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image.astype(np.uint8), mode="RGB").save(path)


def save_mask_png(mask: np.ndarray, path: Path, alphabet: ClassAlphabet) -> None:
    """Store class values minus one, so valid pixels span 0..C-1."""
    values = np.asarray(mask)
    if values.min() < 1 or values.max() > alphabet.num_classes:
        raise MaskValueError(
            f"mask values {values.min()}..{values.max()} outside 1..{alphabet.num_classes}"
        )
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((values - 1).astype(np.uint8), mode="L").save(path)


def load_sample(record: DatasetRecord, root: Path, alphabet: ClassAlphabet) -> LabeledSample:
    image_path = Path(root) / record.image
    mask_path = Path(root) / record.mask
    for p in (image_path, mask_path):
        if not p.exists():
            raise MissingFileError(f"file named by manifest is missing: {p}")
    image = np.asarray(Image.open(image_path).convert("RGB"))
    raw = np.asarray(Image.open(mask_path).convert("L"))
    if raw.max() >= alphabet.num_classes:
        raise MaskValueError(
            f"{mask_path}: mask value {int(raw.max())} >= {alphabet.num_classes}"
        )
    h, w = raw.shape
    for b in record.boxes:
        b.validate(h, w)
    return LabeledSample(image=image, mask=raw.astype(np.int64) + 1, boxes=list(record.boxes))


def save_generated(sample, out_dir: Path, stem: str, alphabet: ClassAlphabet) -> DatasetRecord:
    """Write a generated pair under ``out_dir`` and return its manifest record."""
    out_dir = Path(out_dir)
    image_rel = f"images/{stem}.png"
    mask_rel = f"masks/{stem}.png"
    try:
        save_image_png(sample.image, out_dir / image_rel)
        save_mask_png(sample.mask, out_dir / mask_rel, alphabet)
    except OSError as e:
        raise DatasetError(f"cannot write sample under {out_dir}: {e}") from e
    return DatasetRecord(image=image_rel, mask=mask_rel, boxes=list(sample.boxes))


def split_counts(n: int, fractions: tuple[float, float, float]) -> list[int]:
    """Floor each bucket, then hand remainders to the largest fractional parts.

    Ties go to the earlier bucket, so counts are deterministic.
    """
    raw = [n * f for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    leftover = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda k: (-(raw[k] - counts[k]), k))
    for k in order[:leftover]:
        counts[k] += 1
    return counts


def split_dataset(
    manifest: DatasetManifest,
    fractions: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> DatasetManifest:
    """Assign every record a split label by seeded shuffle + contiguous cut."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    n = len(manifest.records)
    perm = np.random.default_rng(seed).permutation(n)
    counts = split_counts(n, tuple(fractions))
    labels = [""] * n
    start = 0
    for name, count in zip(SPLIT_NAMES, counts):
        for idx in perm[start : start + count]:
            labels[idx] = name
        start += count
    records = [replace(rec, split=labels[k]) for k, rec in enumerate(manifest.records)]
    return DatasetManifest(root=manifest.root, records=records, alphabet=manifest.alphabet)


@dataclass
class ToySpec:
    """Procedural dataset recipe: textured background plus boxed defects.

    Class 1 paints dark filled ellipses, class 2 bright slanted streaks;
    extra classes reuse the two shapes with shifted palettes. Each defect's
    pixels stay inside its (tight) bounding box by construction.
    """

    height: int = 32
    width: int = 32
    num_defect_classes: int = 2
    boxes_min: int = 1
    boxes_max: int = 2
    background_rgb: tuple[int, int, int] = (178, 148, 108)
    noise_level: float = 6.0
    seed: int = 0

    @property
    def alphabet(self) -> ClassAlphabet:
        names = ["background"] + [f"defect_{k}" for k in range(1, self.num_defect_classes + 1)]
        return ClassAlphabet(self.num_defect_classes + 1, class_names=tuple(names))


def _render_background(spec: ToySpec, rng: np.random.Generator) -> np.ndarray:
    base = np.array(spec.background_rgb, dtype=np.float64)
    img = np.tile(base, (spec.height, spec.width, 1))
    grain = rng.normal(0.0, 10.0, size=(spec.height, 1, 1))  # horizontal wood grain
    img = img + grain + rng.normal(0.0, spec.noise_level, size=img.shape)
    return np.clip(img, 0, 255)


def _ellipse_pixels(rng, height, width):
    ri = int(rng.integers(2, max(3, height // 8) + 1))
    rj = int(rng.integers(2, max(3, width // 8) + 1))
    ci = int(rng.integers(ri, height - ri))
    cj = int(rng.integers(rj, width - rj))
    ii, jj = np.mgrid[0:height, 0:width]
    return ((ii - ci) / ri) ** 2 + ((jj - cj) / rj) ** 2 <= 1.0


def _streak_pixels(rng, height, width):
    length = int(rng.integers(max(6, height // 4), max(8, height // 2) + 1))
    thickness = float(rng.uniform(0.8, 1.4))
    i0 = int(rng.integers(2, height - 2))
    j0 = int(rng.integers(2, width - 2 - length // 2))
    di = int(rng.integers(-length // 2, length // 2 + 1))
    dj = length
    i1 = int(np.clip(i0 + di, 1, height - 2))
    j1 = int(np.clip(j0 + dj, 1, width - 2))
    ii, jj = np.mgrid[0:height, 0:width]
    vi, vj = i1 - i0, j1 - j0
    norm2 = max(vi * vi + vj * vj, 1)
    t = np.clip(((ii - i0) * vi + (jj - j0) * vj) / norm2, 0.0, 1.0)
    dist = np.hypot(ii - (i0 + t * vi), jj - (j0 + t * vj))
    return dist <= thickness


_DEFECT_COLORS = [
    (55, 38, 28),  # dark knot
    (82, 110, 160),  # blue-grey crack
    (40, 90, 48),
    (150, 60, 120),
    (200, 180, 60),
]


def _paint_defect(img, mask, class_id, rng, spec: ToySpec):
    """Returns the defect's tight box, or None when the draw came out empty."""
    shape_fn = _ellipse_pixels if class_id % 2 == 1 else _streak_pixels
    pixels = shape_fn(rng, spec.height, spec.width)
    if not pixels.any():
        return None
    color = np.array(_DEFECT_COLORS[(class_id - 1) % len(_DEFECT_COLORS)], dtype=np.float64)
    jitter = rng.normal(0.0, 4.0, size=3)
    img[pixels] = np.clip(color + jitter, 0, 255)
    mask[pixels] = class_id + 1  # mask-space class value
    rows = np.flatnonzero(pixels.any(axis=1))
    cols = np.flatnonzero(pixels.any(axis=0))
    return BoundingBox(
        class_id=class_id,
        i_min=int(rows[0]),
        j_min=int(cols[0]),
        i_max=int(rows[-1]),
        j_max=int(cols[-1]),
    )


def _boxes_intersect(a: BoundingBox, b: BoundingBox) -> bool:
    return not (
        a.i_max < b.i_min or b.i_max < a.i_min or a.j_max < b.j_min or b.j_max < a.j_min
    )


def generate_toy_sample(spec: ToySpec, rng: np.random.Generator) -> LabeledSample:
    img = _render_background(spec, rng)
    mask = np.ones((spec.height, spec.width), dtype=np.int64)
    boxes: list[BoundingBox] = []
    n_boxes = int(rng.integers(spec.boxes_min, spec.boxes_max + 1))
    for _ in range(n_boxes):
        class_id = int(rng.integers(1, spec.num_defect_classes + 1))
        for _attempt in range(20):
            img_try, mask_try = img.copy(), mask.copy()
            box = _paint_defect(img_try, mask_try, class_id, rng, spec)
            if box is not None and not any(_boxes_intersect(box, b) for b in boxes):
                img, mask = img_try, mask_try
                boxes.append(box)
                break
    return LabeledSample(image=np.round(img).astype(np.uint8), mask=mask, boxes=boxes)


def generate_toy_dataset(spec: ToySpec, count: int, out_dir: Path) -> DatasetManifest:
    """Write ``count`` deterministic samples plus their manifest under ``out_dir``."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(spec.seed)
    alphabet = spec.alphabet
    records = []
    for n in range(count):
        sample = generate_toy_sample(spec, rng)
        stem = f"{n:05d}"
        image_rel, mask_rel = f"images/{stem}.png", f"masks/{stem}.png"
        try:
            save_image_png(sample.image, out_dir / image_rel)
            save_mask_png(sample.mask, out_dir / mask_rel, alphabet)
        except OSError as e:
            raise DatasetError(f"cannot write toy sample {stem} under {out_dir}: {e}") from e
        records.append(DatasetRecord(image=image_rel, mask=mask_rel, boxes=sample.boxes))
    manifest = DatasetManifest(root=out_dir, records=records, alphabet=alphabet)
    save_manifest(manifest)
    return manifest
