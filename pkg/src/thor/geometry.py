"""Connected components and bounding boxes.

Boxes are ``[x0, y0, x1, y1]`` with inclusive pixel coordinates (x = column).
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

EIGHT = np.ones((3, 3), dtype=bool)


def label8(mask: np.ndarray) -> tuple[np.ndarray, int]:
    return ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT)


def component_boxes(labels: np.ndarray, n: int) -> list[list[int]]:
    boxes = []
    for sl in ndimage.find_objects(labels, max_label=n):
        ys, xs = sl
        boxes.append([xs.start, ys.start, xs.stop - 1, ys.stop - 1])
    return boxes


def mask_boxes(mask: np.ndarray) -> list[list[int]]:
    """Tight boxes of the 8-connected components of ``mask``, in label order."""
    labels, n = label8(mask)
    return component_boxes(labels, n)


def box_area(b) -> int:
    return (b[2] - b[0] + 1) * (b[3] - b[1] + 1)


def box_intersection(a, b) -> int:
    w = min(a[2], b[2]) - max(a[0], b[0]) + 1
    h = min(a[3], b[3]) - max(a[1], b[1]) + 1
    return max(w, 0) * max(h, 0)
