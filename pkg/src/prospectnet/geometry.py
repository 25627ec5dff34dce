"""Oriented vehicle rectangles: corners, overlap test and IoU."""
from __future__ import annotations

import math

import numpy as np
from shapely.geometry import Polygon


class DegenerateShapeError(ValueError):
    pass


def rectangle_corners(center, heading: float, length: float, width: float) -> np.ndarray:
    """Counter-clockwise corners of a box of ``length`` along ``heading``."""
    if not (length > 0 and width > 0):
        raise DegenerateShapeError(f"rectangle with zero area ({length} x {width})")
    c, s = math.cos(heading), math.sin(heading)
    fwd = np.array([c, s]) * (length / 2)
    left = np.array([-s, c]) * (width / 2)
    ctr = np.asarray(center, dtype=np.float64)
    return np.array([ctr + fwd - left, ctr + fwd + left, ctr - fwd + left, ctr - fwd - left])


def rectangles_overlap(a: np.ndarray, b: np.ndarray, tol: float = 1e-12) -> bool:
    """Separating-axis test; boxes that only touch do not overlap."""
    for poly in (a, b):
        for i in range(4):
            edge = poly[(i + 1) % 4] - poly[i]
            axis = np.array([-edge[1], edge[0]])
            pa, pb = a @ axis, b @ axis
            if pa.max() <= pb.min() + tol * np.linalg.norm(axis) or pb.max() <= pa.min() + tol * np.linalg.norm(axis):
                return False
    return True


def oriented_iou(a: np.ndarray, b: np.ndarray) -> float:
    pa, pb = Polygon(a), Polygon(b)
    if pa.area <= 0 or pb.area <= 0:
        raise DegenerateShapeError("rectangle with zero area")
    inter = pa.intersection(pb).area
    if inter <= 0:
        return 0.0
    return float(inter / (pa.area + pb.area - inter))
