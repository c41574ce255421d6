"""Layout-alignment metrics over (mask, boxes) pairs, plus pixel F1.

Two alignment scores quantify how well a generated mask respects its box
layout: the share of defect pixels that fall outside every matching box
(spatial alignment error), and the share of boxes that received no matching
pixel at all (empty-box rate). Both default to same-class matching — a
class-c pixel only counts as "inside" when the covering box is also class c —
with a ``class_agnostic`` flag for the looser reading.

Reports retain raw counts so dataset-level numbers can be pooled exactly and
every average can be re-derived for audit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analog_bits import ClassAlphabet, ClassValueError
from .geometry import BoundingBox


@dataclass(frozen=True)
class ClassCounts:
    """Raw per-class tallies behind the percentages."""

    defect_pixels: int = 0
    outside_pixels: int = 0
    boxes_total: int = 0
    boxes_empty: int = 0

    def merged(self, other: "ClassCounts") -> "ClassCounts":
        return ClassCounts(
            defect_pixels=self.defect_pixels + other.defect_pixels,
            outside_pixels=self.outside_pixels + other.outside_pixels,
            boxes_total=self.boxes_total + other.boxes_total,
            boxes_empty=self.boxes_empty + other.boxes_empty,
        )


def _ratio_pct(num: int, den: int) -> float | None:
    """Percentage, or None when the denominator is empty (kept absent, not 0)."""
    return None if den == 0 else 100.0 * num / den


@dataclass(frozen=True)
class AlignmentReport:
    """Alignment metrics for one sample or a pooled set of samples.

    ``per_class`` is keyed by defect class id (the id boxes carry, i.e. mask
    value minus one). Percentages are derived lazily from the counts.
    """

    per_class: dict[int, ClassCounts]
    class_agnostic: bool = False
    class_names: dict[int, str] = field(default_factory=dict)

    @property
    def defect_pixels(self) -> int:
        return sum(c.defect_pixels for c in self.per_class.values())

    @property
    def outside_pixels(self) -> int:
        return sum(c.outside_pixels for c in self.per_class.values())

    @property
    def boxes_total(self) -> int:
        return sum(c.boxes_total for c in self.per_class.values())

    @property
    def boxes_empty(self) -> int:
        return sum(c.boxes_empty for c in self.per_class.values())

    def sae_for(self, class_id: int) -> float | None:
        c = self.per_class[class_id]
        return _ratio_pct(c.outside_pixels, c.defect_pixels)

    def ebr_for(self, class_id: int) -> float | None:
        c = self.per_class[class_id]
        return _ratio_pct(c.boxes_empty, c.boxes_total)

    @property
    def sae_micro(self) -> float | None:
        """Out-of-box share pooled over all defect pixels."""
        return _ratio_pct(self.outside_pixels, self.defect_pixels)

    @property
    def ebr_avg(self) -> float | None:
        """Empty share pooled over all boxes."""
        return _ratio_pct(self.boxes_empty, self.boxes_total)

    def merged(self, other: "AlignmentReport") -> "AlignmentReport":
        if other.class_agnostic != self.class_agnostic:
            raise ValueError("cannot pool reports with different matching modes")
        keys = sorted(set(self.per_class) | set(other.per_class))
        pooled = {
            k: self.per_class.get(k, ClassCounts()).merged(other.per_class.get(k, ClassCounts()))
            for k in keys
        }
        return AlignmentReport(
            per_class=pooled,
            class_agnostic=self.class_agnostic,
            class_names={**self.class_names, **other.class_names},
        )

    def to_dict(self) -> dict:
        per_class = {}
        for k in sorted(self.per_class):
            c = self.per_class[k]
            per_class[str(k)] = {
                "name": self.class_names.get(k, f"class_{k}"),
                "sae_pct": self.sae_for(k),
                "ebr_pct": self.ebr_for(k),
                "defect_pixels": c.defect_pixels,
                "outside_pixels": c.outside_pixels,
                "boxes_total": c.boxes_total,
                "boxes_empty": c.boxes_empty,
            }
        return {
            "class_agnostic": self.class_agnostic,
            "per_class": per_class,
            "sae_micro_pct": self.sae_micro,
            "ebr_avg_pct": self.ebr_avg,
            "counts": {
                "defect_pixels": self.defect_pixels,
                "outside_pixels": self.outside_pixels,
                "boxes_total": self.boxes_total,
                "boxes_empty": self.boxes_empty,
            },
        }


def pool_reports(reports: list[AlignmentReport]) -> AlignmentReport:
    """Fold per-sample reports into one, in list order (deterministic sums)."""
    if not reports:
        raise ValueError("cannot pool an empty report list")
    out = reports[0]
    for r in reports[1:]:
        out = out.merged(r)
    return out


def _validate_mask(mask: np.ndarray, alphabet: ClassAlphabet) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.size and (mask.min() < 1 or mask.max() > alphabet.num_classes):
        raise ClassValueError(
            f"mask values {mask.min()}..{mask.max()} outside 1..{alphabet.num_classes}"
        )
    return mask


def _coverage_grids(
    boxes: list[BoundingBox], shape: tuple[int, int], alphabet: ClassAlphabet
) -> dict[int, np.ndarray]:
    """Boolean "inside some class-c box" grid for each defect class c."""
    grids = {
        c: np.zeros(shape, dtype=bool) for c in range(1, alphabet.num_defect_classes + 1)
    }
    for b in boxes:
        grids[b.class_id][b.i_min : b.i_max + 1, b.j_min : b.j_max + 1] = True
    return grids


def alignment_report(
    mask: np.ndarray,
    boxes: list[BoundingBox],
    alphabet: ClassAlphabet,
    class_agnostic: bool = False,
) -> AlignmentReport:
    """Count in/out-of-box defect pixels and empty boxes in one pass."""
    mask = _validate_mask(mask, alphabet)
    h, w = mask.shape
    for b in boxes:
        b.validate(h, w)
    grids = _coverage_grids(boxes, (h, w), alphabet)
    any_box = np.zeros((h, w), dtype=bool)
    for g in grids.values():
        any_box |= g

    per_class: dict[int, ClassCounts] = {}
    for c in range(1, alphabet.num_defect_classes + 1):
        pixels = mask == alphabet.mask_value_for_box_class(c)
        inside = any_box if class_agnostic else grids[c]
        total = int(pixels.sum())
        outside = int((pixels & ~inside).sum())

        class_boxes = [b for b in boxes if b.class_id == c]
        empty = 0
        background = 1
        for b in class_boxes:
            patch = mask[b.i_min : b.i_max + 1, b.j_min : b.j_max + 1]
            hit = (patch != background) if class_agnostic else (
                patch == alphabet.mask_value_for_box_class(c)
            )
            if not hit.any():
                empty += 1
        per_class[c] = ClassCounts(
            defect_pixels=total,
            outside_pixels=outside,
            boxes_total=len(class_boxes),
            boxes_empty=empty,
        )
    names = {
        c: alphabet.class_names[alphabet.mask_value_for_box_class(c) - 1]
        for c in per_class
    }
    return AlignmentReport(per_class=per_class, class_agnostic=class_agnostic, class_names=names)


def sae(
    mask: np.ndarray,
    boxes: list[BoundingBox],
    alphabet: ClassAlphabet,
    class_agnostic: bool = False,
) -> tuple[dict[int, float | None], float | None]:
    """Per-class and micro-averaged out-of-box pixel percentage."""
    report = alignment_report(mask, boxes, alphabet, class_agnostic)
    return {c: report.sae_for(c) for c in sorted(report.per_class)}, report.sae_micro


def ebr(
    mask: np.ndarray,
    boxes: list[BoundingBox],
    alphabet: ClassAlphabet,
    class_agnostic: bool = False,
) -> tuple[dict[int, float | None], float | None]:
    """Per-class and box-averaged empty-box percentage."""
    report = alignment_report(mask, boxes, alphabet, class_agnostic)
    return {c: report.ebr_for(c) for c in sorted(report.per_class)}, report.ebr_avg


def pixel_f1(
    predicted: np.ndarray, truth: np.ndarray, alphabet: ClassAlphabet
) -> tuple[dict[int, float | None], float | None]:
    """Per-defect-class pixel F1 plus macro average over classes present in truth.

    A class absent from both grids has no F1 (absent, not 0); a class absent
    from truth but predicted anyway scores 0 but stays out of the macro mean.
    """
    predicted = _validate_mask(predicted, alphabet)
    truth = _validate_mask(truth, alphabet)
    if predicted.shape != truth.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {truth.shape}")

    per_class: dict[int, float | None] = {}
    macro_terms = []
    for c in range(1, alphabet.num_defect_classes + 1):
        v = alphabet.mask_value_for_box_class(c)
        pred_c, true_c = predicted == v, truth == v
        tp = int((pred_c & true_c).sum())
        fp = int((pred_c & ~true_c).sum())
        fn = int((~pred_c & true_c).sum())
        if tp + fp + fn == 0:
            per_class[c] = None
            continue
        f1 = 100.0 * 2 * tp / (2 * tp + fp + fn)
        per_class[c] = f1
        if true_c.any():
            macro_terms.append(f1)
    macro = sum(macro_terms) / len(macro_terms) if macro_terms else None
    return per_class, macro


def clip_labels_to_boxes(mask: np.ndarray, boxes: list[BoundingBox]) -> np.ndarray:
    """Reset every defect pixel not covered by a same-class box to background."""
    mask = np.asarray(mask)
    out = mask.copy()
    h, w = mask.shape
    covered = {}
    for b in boxes:
        grid = covered.setdefault(b.class_id, np.zeros((h, w), dtype=bool))
        grid[b.i_min : b.i_max + 1, b.j_min : b.j_max + 1] = True
    defect = mask > 1
    keep = np.zeros((h, w), dtype=bool)
    for class_id, grid in covered.items():
        keep |= (mask == class_id + 1) & grid
    out[defect & ~keep] = 1
    return out


def render_report_table(report: AlignmentReport) -> str:
    """Fixed-width table: one metric per row, per-class columns plus average."""
    classes = sorted(report.per_class)
    headers = ["metric"] + [report.class_names.get(c, f"class_{c}") for c in classes] + ["avg"]

    def fmt(v: float | None) -> str:
        return "-" if v is None else f"{v:.2f}"

    rows = [
        ["SAE %"] + [fmt(report.sae_for(c)) for c in classes] + [fmt(report.sae_micro)],
        ["EBR %"] + [fmt(report.ebr_for(c)) for c in classes] + [fmt(report.ebr_avg)],
    ]
    widths = [max(len(str(r[k])) for r in [headers] + rows) for k in range(len(headers))]
    lines = []
    for r in [headers] + rows:
        lines.append("  ".join(str(cell).rjust(widths[k]) for k, cell in enumerate(r)))
    return "\n".join(lines)
