"""Boundary distance maps and distance-based penalty weights.

A binary mask yields a map of exact Euclidean distances to the nearest
class-boundary pixel (a foreground pixel 4-adjacent to background).  The
distance map is inverted into a penalty weight in [1, 2] that is maximal on
the boundary, and the penalty can be sharpened or flattened by raising it
elementwise to a focus exponent ``epsilon`` (0 = no boundary awareness,
1 = the plain penalty, large = sharp boundary focus).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidEpsilon, NoBoundary


@dataclass(frozen=True)
class DistanceMap:
    """Per-pixel Euclidean distance to the nearest boundary pixel (pixels)."""

    grid: np.ndarray


@dataclass(frozen=True)
class WeightMap:
    """Per-pixel loss weight derived from a distance map.

    kind is "DPT" for the inverse-normalized penalty in [1, 2] and "FDPT"
    for its elementwise power; epsilon records the exponent for FDPT maps.
    """

    grid: np.ndarray
    kind: str
    epsilon: float | None = None


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Boolean map of foreground pixels that are 4-adjacent to background.

    Pixels outside the image do not count as background, so a foreground
    region touching the image border has no boundary on that side.
    """
    m = np.asarray(mask) != 0
    # pad with foreground so out-of-image neighbours never create a boundary
    p = np.pad(m, 1, constant_values=True)
    has_bg_neighbour = (
        ~p[:-2, 1:-1] | ~p[2:, 1:-1] | ~p[1:-1, :-2] | ~p[1:-1, 2:]
    )
    return m & has_bg_neighbour


def _row_pass(sites: np.ndarray) -> np.ndarray:
    """Squared distance to the nearest site within each row (inf if none)."""
    h, w = sites.shape
    xs = np.arange(w, dtype=np.float64)
    left = np.where(sites, xs, -np.inf)
    left = np.maximum.accumulate(left, axis=1)
    right = np.where(sites, xs, np.inf)
    right = np.minimum.accumulate(right[:, ::-1], axis=1)[:, ::-1]
    d = np.minimum(xs - left, right - xs)
    out = np.full((h, w), np.inf)
    finite = np.isfinite(d)
    out[finite] = d[finite] ** 2
    return out


def _column_envelope(f: np.ndarray) -> np.ndarray:
    """1-D squared-distance transform d(p) = min_q (p - q)^2 + f(q).

    Lower-envelope-of-parabolas sweep; entries of f may be inf (no site)
    but at least one entry must be finite.
    """
    n = f.shape[0]
    qs = np.nonzero(np.isfinite(f))[0]
    v = np.empty(qs.shape[0], dtype=np.int64)  # parabola apexes in the envelope
    z = np.empty(qs.shape[0] + 1)              # region break points
    k = 0
    v[0] = qs[0]
    z[0] = -np.inf
    z[1] = np.inf
    for q in qs[1:]:
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    d = np.empty(n)
    k = 0
    for p in range(n):
        while z[k + 1] < p:
            k += 1
        d[p] = (p - v[k]) ** 2 + f[v[k]]
    return d


def squared_distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact integer squared Euclidean distance to the nearest boundary pixel.

    Two-pass transform: a row sweep to the nearest in-row boundary pixel,
    then a per-column lower-envelope pass combining rows.  Raises
    NoBoundary if the mask is all-foreground or all-background.
    """
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {m.shape}")
    sites = boundary_pixels(m)
    if not sites.any():
        raise NoBoundary("mask has no class boundary (all-0 or all-1)")
    f = _row_pass(sites)
    out = np.empty_like(f)
    for x in range(f.shape[1]):
        out[:, x] = _column_envelope(f[:, x])
    return out.astype(np.int64)


def distance_transform(mask: np.ndarray) -> DistanceMap:
    """Euclidean distance map to the nearest boundary pixel, in pixels."""
    return DistanceMap(grid=np.sqrt(squared_distance_transform(mask).astype(np.float64)))


def distance_penalty(dtm: DistanceMap) -> WeightMap:
    """Inverse-normalized penalty W = 1 + (1 - d / d_max), in [1, 2].

    Maximal (2) on the boundary, minimal (1) at the farthest pixel.  A
    degenerate map (every pixel on the boundary) yields a uniform 2 with
    a warning instead of failing.
    """
    d = np.asarray(dtm.grid, dtype=np.float64)
    if not np.isfinite(d).all() or (d < 0).any():
        raise ValueError("distance map must be finite and non-negative")
    d_max = d.max()
    if d_max == 0.0:
        warnings.warn("degenerate distance map (all pixels on boundary); "
                      "returning a uniform penalty of 2", stacklevel=2)
        return WeightMap(grid=np.full_like(d, 2.0), kind="DPT")
    return WeightMap(grid=1.0 + (1.0 - d / d_max), kind="DPT")


def focal_distance_penalty(dpt: WeightMap, epsilon: float) -> WeightMap:
    """Raise a penalty map elementwise to the focus exponent ``epsilon``.

    epsilon = 0 removes boundary awareness (all-ones map), epsilon = 1
    reproduces the plain penalty, larger values concentrate weight at the
    boundary.
    """
    if dpt.kind != "DPT":
        raise ValueError(f"expected a DPT weight map, got kind={dpt.kind!r}")
    if not np.isfinite(epsilon) or epsilon < 0:
        raise InvalidEpsilon(f"epsilon must be finite and >= 0, got {epsilon!r}")
    return WeightMap(grid=dpt.grid ** epsilon, kind="FDPT", epsilon=float(epsilon))


def class_weight_maps(labels: np.ndarray, n_classes: int, epsilon: float) -> np.ndarray:
    """Per-class boundary penalty weights for an integer label image.

    Returns a (n_classes, H, W) float64 array where plane c is the focal
    distance penalty computed from the binary mask of class c.  Classes
    with no boundary (absent or covering the whole image) get uniform 1.
    """
    labels = np.asarray(labels)
    if not np.isfinite(epsilon) or epsilon < 0:
        raise InvalidEpsilon(f"epsilon must be finite and >= 0, got {epsilon!r}")
    out = np.ones((n_classes,) + labels.shape, dtype=np.float64)
    if epsilon == 0.0:
        return out
    for c in range(n_classes):
        mask = (labels == c).astype(np.uint8)
        try:
            dtm = distance_transform(mask)
        except NoBoundary:
            continue
        out[c] = focal_distance_penalty(distance_penalty(dtm), epsilon).grid
    return out


def render_heatmap(weight_map: WeightMap | DistanceMap, path: str,
                   cmap: str = "inferno") -> None:
    """Write a min-max normalized color heatmap of a map as an 8-bit PNG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    grid = np.asarray(weight_map.grid, dtype=np.float64)
    if not np.isfinite(grid).all():
        raise ValueError("cannot render a map with non-finite values")
    plt.imsave(path, grid, cmap=cmap, format="png")
