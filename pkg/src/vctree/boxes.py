"""Axis-aligned box arithmetic shared by scoring, trees, heads, metrics.

Boxes are (x1, y1, x2, y2) with x1 < x2 and y1 < y2 in image pixels.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def check_box(box, image_size=None) -> tuple[float, float, float, float]:
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (x2 > x1 and y2 > y1):
        raise ValidationError(f"degenerate box {tuple(box)}: needs x1 < x2 and y1 < y2")
    if image_size is not None:
        w, h = image_size
        if x1 < 0 or y1 < 0 or x2 > w or y2 > h:
            raise ValidationError(f"box {tuple(box)} exceeds image bounds {tuple(image_size)}")
    return x1, y1, x2, y2


def area(box) -> float:
    x1, y1, x2, y2 = box
    return max(0.0, x2 - x1) * max(0.0, y2 - y1)


def union_box(a, b) -> tuple[float, float, float, float]:
    return (min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))


def intersect_box(a, b):
    """Intersection box, or None when the boxes do not overlap."""
    x1, y1 = max(a[0], b[0]), max(a[1], b[1])
    x2, y2 = min(a[2], b[2]), min(a[3], b[3])
    if x2 <= x1 or y2 <= y1:
        return None
    return (x1, y1, x2, y2)


def iou(a, b) -> float:
    inter = intersect_box(a, b)
    if inter is None:
        return 0.0
    ai = area(inter)
    return ai / (area(a) + area(b) - ai)


def center(box) -> tuple[float, float]:
    return ((box[0] + box[2]) / 2.0, (box[1] + box[3]) / 2.0)
