"""Coordinate conventions, volume/raster data model, and 2D morphology.

Patient frame (fixed, no oblique volumes):
    x: patient-left (mm, +)    y: patient-posterior (mm, +)    z: patient-superior (mm, +)
Voxel grids are stored z-slowest, i.e. ``voxels[iz, iy, ix]`` with the
center of voxel (0, 0, 0) at ``origin``.

Beam's-eye-view for the right-lateral (270-degree) beam:
    u = -y  (anterior positive)    v = +z  (superior positive)
2D rasters are stored ``bits[iv, iu]`` with pixel (0, 0) centered at
(u0, v0) and both axes increasing with index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt
from skimage import measure

from .errors import FormatError

HU_MIN = -1024
HU_MAX = 4000

STRUCTURE_LABELS = (
    "brain",
    "eye_left",
    "eye_right",
    "lens_left",
    "lens_right",
    "vertebra_c1",
    "vertebra_c2",
    "skin",
)


@dataclass(frozen=True)
class PatientFrame:
    """Axis-aligned grid placement: origin is the center of voxel (0,0,0)."""

    origin: tuple[float, float, float]
    spacing: tuple[float, float, float]

    def __post_init__(self):
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be strictly positive, got {self.spacing}")

    def voxel_coords(self, axis: int, n: int) -> np.ndarray:
        """World coordinates of the n voxel centers along one axis."""
        return self.origin[axis] + self.spacing[axis] * np.arange(n)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CtVolume:
    """Scalar HU grid, shape (nz, ny, nx), clamped to [HU_MIN, HU_MAX]."""

    frame: PatientFrame
    voxels: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.voxels, dtype=np.int16)
        if v.ndim != 3:
            raise ValueError(f"expected 3D voxel grid, got shape {v.shape}")
        v = np.clip(v, HU_MIN, HU_MAX)
        object.__setattr__(self, "voxels", _freeze(v))

    @property
    def dims(self) -> tuple[int, int, int]:
        """(nx, ny, nz)"""
        nz, ny, nx = self.voxels.shape
        return (nx, ny, nz)


@dataclass(frozen=True)
class StructureMask:
    """Binary occupancy grid for one labeled structure, same grid as its CT."""

    frame: PatientFrame
    bits: np.ndarray
    label: str

    def __post_init__(self):
        if self.label not in STRUCTURE_LABELS:
            raise FormatError(
                f"unknown structure label '{self.label}'; expected one of {STRUCTURE_LABELS}"
            )
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 3:
            raise ValueError(f"expected 3D mask, got shape {b.shape}")
        object.__setattr__(self, "bits", _freeze(b))

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.bits.shape
        return (nx, ny, nz)


@dataclass(frozen=True)
class BevFrame:
    """Pixel lattice of the beam's-eye-view plane.

    Pixel (iu, iv) is centered at (u0 + iu*spacing, v0 + iv*spacing);
    the raster covers u in [u0 - s/2, u0 + (nu-1)*s + s/2] and likewise in v.
    """

    u0: float
    v0: float
    spacing: float
    nu: int
    nv: int

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError("pixel spacing must be > 0")
        if self.nu < 1 or self.nv < 1:
            raise ValueError("frame must hold at least one pixel")

    @property
    def u_coords(self) -> np.ndarray:
        return self.u0 + self.spacing * np.arange(self.nu)

    @property
    def v_coords(self) -> np.ndarray:
        return self.v0 + self.spacing * np.arange(self.nv)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(u_min, u_max, v_min, v_max) of the covered rectangle."""
        h = self.spacing / 2
        return (
            self.u0 - h,
            self.u0 + self.spacing * (self.nu - 1) + h,
            self.v0 - h,
            self.v0 + self.spacing * (self.nv - 1) + h,
        )

    def pixel_index(self, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest pixel indices (iu, iv) for world coordinates."""
        iu = np.rint((np.asarray(u) - self.u0) / self.spacing).astype(int)
        iv = np.rint((np.asarray(v) - self.v0) / self.spacing).astype(int)
        return iu, iv


@dataclass(frozen=True)
class BevSilhouette:
    """2D binary raster of one structure's BEV projection, bits[iv, iu]."""

    frame: BevFrame
    bits: np.ndarray
    label: str

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.shape != (self.frame.nv, self.frame.nu):
            raise ValueError(
                f"raster shape {b.shape} inconsistent with frame "
                f"({self.frame.nv}, {self.frame.nu})"
            )
        object.__setattr__(self, "bits", _freeze(b))

    def is_empty(self) -> bool:
        return not self.bits.any()

    def extrema(self) -> tuple[float, float, float, float]:
        """(min_u, max_u, min_v, max_v) over set pixel centers."""
        if self.is_empty():
            raise ValueError(f"silhouette '{self.label}' is empty")
        iv, iu = np.nonzero(self.bits)
        us = self.frame.u_coords
        vs = self.frame.v_coords
        return us[iu.min()], us[iu.max()], vs[iv.min()], vs[iv.max()]

    def with_bits(self, bits: np.ndarray) -> "BevSilhouette":
        return BevSilhouette(self.frame, bits, self.label)


@dataclass(frozen=True)
class Polyline2D:
    """Ordered (u, v) vertices in mm; closed polylines do not repeat the first point."""

    vertices: np.ndarray
    closed: bool = False

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 2:
            raise ValueError(f"need an (N>=2, 2) vertex array, got shape {v.shape}")
        d = np.linalg.norm(np.diff(v, axis=0), axis=1)
        if np.any(d < 1e-12):
            raise ValueError("consecutive duplicate vertices are forbidden")
        if self.closed and np.linalg.norm(v[0] - v[-1]) < 1e-12:
            raise ValueError("closed polylines must not repeat the first vertex")
        object.__setattr__(self, "vertices", _freeze(v))

    def length(self) -> float:
        v = self.vertices
        segs = np.diff(v, axis=0)
        total = float(np.linalg.norm(segs, axis=1).sum())
        if self.closed:
            total += float(np.linalg.norm(v[0] - v[-1]))
        return total

    def signed_area(self) -> float:
        """Shoelace area; meaningful for closed polylines only."""
        v = self.vertices
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_intersect(p, q):
    """Vectorized proper-intersection test between one segment and many."""
    # p: (2,2) segment, q: (M,2,2) segments
    d1 = p[1] - p[0]
    d2 = q[:, 1] - q[:, 0]
    denom = d1[0] * d2[:, 1] - d1[1] * d2[:, 0]
    dp = q[:, 0] - p[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (dp[:, 0] * d2[:, 1] - dp[:, 1] * d2[:, 0]) / denom
        s = (dp[:, 0] * d1[1] - dp[:, 1] * d1[0]) / denom
    ok = np.isfinite(t) & np.isfinite(s)
    eps = 1e-12
    return np.any(ok & (t > eps) & (t < 1 - eps) & (s > eps) & (s < 1 - eps))


class Polygon2D(Polyline2D):
    """Simple closed polygon with strictly positive area."""

    def __init__(self, vertices):
        super().__init__(vertices, closed=True)
        if len(self.vertices) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        if abs(self.signed_area()) <= 1e-12:
            raise ValueError("polygon area must be strictly positive")
        if not self._is_simple():
            raise ValueError("polygon is self-intersecting")

    def _is_simple(self) -> bool:
        v = self.vertices
        n = len(v)
        segs = np.stack([v, np.roll(v, -1, axis=0)], axis=1)  # (n, 2, 2)
        for i in range(n):
            # skip adjacent segments (shared endpoints)
            others = np.array([j for j in range(i + 2, n) if not (i == 0 and j == n - 1)])
            if len(others) == 0:
                continue
            if _segments_intersect(segs[i], segs[others]):
                return False
        return True

    @property
    def area(self) -> float:
        return abs(self.signed_area())


def dilate(mask: BevSilhouette, radius: float) -> BevSilhouette:
    """Morphological dilation by a Euclidean disk of the given radius in mm.

    Exact-radius semantics: a pixel is set iff its center lies within
    ``radius`` of some set pixel center (distance-transform based, so the
    disk is Euclidean rather than Chebyshev).
    """
    if radius < 0:
        raise ValueError(f"dilation radius must be >= 0, got {radius}")
    if radius == 0 or mask.is_empty():
        return mask
    s = mask.frame.spacing
    dist = distance_transform_edt(~mask.bits, sampling=(s, s))
    return mask.with_bits(mask.bits | (dist <= radius))


def erode(mask: BevSilhouette, radius: float) -> BevSilhouette:
    """Morphological erosion by a Euclidean disk (dual of :func:`dilate`)."""
    if radius < 0:
        raise ValueError(f"erosion radius must be >= 0, got {radius}")
    if radius == 0 or mask.is_empty():
        return mask
    s = mask.frame.spacing
    dist = distance_transform_edt(mask.bits, sampling=(s, s))
    return mask.with_bits(mask.bits & (dist > radius))


def extract_contour(mask: BevSilhouette) -> list[Polyline2D]:
    """Sub-pixel boundary polylines via the 0.5-occupancy iso-contour.

    One closed polyline per boundary loop (outer boundaries wind positive
    in (u, v), holes negative).  An empty mask yields an empty list.
    """
    if mask.is_empty():
        return []
    padded = np.pad(mask.bits.astype(float), 1)
    out = []
    for c in measure.find_contours(padded, 0.5):
        # c is (row, col) in the padded index grid, first == last point
        rows = c[:-1, 0] - 1.0
        cols = c[:-1, 1] - 1.0
        u = mask.frame.u0 + cols * mask.frame.spacing
        v = mask.frame.v0 + rows * mask.frame.spacing
        out.append(Polyline2D(np.column_stack([u, v]), closed=True))
    return out


def raster_from_polygon_test(frame: BevFrame, contains) -> np.ndarray:
    """Evaluate a vectorized point predicate on every pixel center."""
    uu, vv = np.meshgrid(frame.u_coords, frame.v_coords)
    return contains(uu, vv)
