"""Box helpers. Boxes are (x1, y1, x2, y2) in pixels."""

from __future__ import annotations

import numpy as np


class BoxError(ValueError):
    pass


def box_geometry(box, image_size) -> np.ndarray:
    """(cx/W, cy/H, w/W, h/H, area fraction) for a box inside a W x H image."""
    x1, y1, x2, y2 = (float(v) for v in box)
    width, height = (float(v) for v in image_size)
    w, h = x2 - x1, y2 - y1
    if w <= 0 or h <= 0:
        raise BoxError(f"degenerate box {tuple(box)}")
    if x1 < 0 or y1 < 0 or x2 > width or y2 > height:
        raise BoxError(f"box {tuple(box)} outside image {width:g}x{height:g}")
    return np.array([
        (x1 + x2) / 2.0 / width,
        (y1 + y2) / 2.0 / height,
        w / width,
        h / height,
        (w * h) / (width * height),
    ])


def boxes_geometry(boxes, image_size) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return np.stack([box_geometry(b, image_size) for b in boxes]) if len(boxes) else np.zeros((0, 5))


def union_box(b_i, b_j) -> tuple:
    return (min(b_i[0], b_j[0]), min(b_i[1], b_j[1]), max(b_i[2], b_j[2]), max(b_i[3], b_j[3]))
