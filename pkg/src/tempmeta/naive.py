"""Brute-force pixel-set versions of the geometry primitives.

These exist to cross-check the run-length code; they are slow on purpose and
share no code with :mod:`tempmeta.geometry`.
"""

from __future__ import annotations


def pixel_set(mask) -> frozenset:
    rows, cols = mask.pixels()
    return frozenset(zip(rows.tolist(), cols.tolist()))


def overlap(a: frozenset, b: frozenset) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def center(pixels: frozenset) -> tuple[float, float]:
    n = len(pixels)
    return sum(p[0] for p in pixels) / n, sum(p[1] for p in pixels) / n


def inner_boundary(pixels: frozenset, height: int, width: int) -> tuple[frozenset, frozenset]:
    inner, boundary = set(), set()
    for v, h in pixels:
        exposed = False
        for dv in (-1, 0, 1):
            for dh in (-1, 0, 1):
                nv, nh = v + dv, h + dh
                if not (0 <= nv < height and 0 <= nh < width) or (nv, nh) not in pixels:
                    exposed = True
        (boundary if exposed else inner).add((v, h))
    return frozenset(inner), frozenset(boundary)
