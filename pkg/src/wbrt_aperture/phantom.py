"""Parametric synthetic head phantoms with analytically known BEV silhouettes.

The phantom is a nest of quadrics and boxes in the patient frame: an
ellipsoidal head with a bony shell, an ellipsoidal brain displaced
superiorly, bilateral eye spheres with embedded lenses anterior-inferior
of the brain, and two vertebral-body boxes stacked below the brain.
Every structure projects along x to a closed-form silhouette (ellipse,
disk, or rectangle), which the oracle records together with exact
extrema, so raster pipelines can be checked against ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import PhantomValidationError
from .geometry import BevFrame, BevSilhouette, CtVolume, PatientFrame, StructureMask

HU_AIR = -1000


@dataclass(frozen=True)
class PhantomSpec:
    """Free parameters of one synthetic head (all lengths in mm)."""

    seed: int = 0
    head_semi_axes: tuple[float, float, float] = (75.0, 95.0, 115.0)
    shell_thickness: float = 6.0
    brain_semi_axes: tuple[float, float, float] = (60.0, 66.0, 75.0)
    brain_center: tuple[float, float, float] = (0.0, 0.0, 25.0)
    eye_radius: float = 12.0
    eye_center: tuple[float, float, float] = (31.0, -62.0, -35.0)  # right eye; left mirrors x
    lens_radius: float = 4.0
    lens_anterior_offset: float = 7.0
    c1_extent: tuple[float, float, float] = (30.0, 30.0, 15.0)
    c2_extent: tuple[float, float, float] = (30.0, 30.0, 18.0)
    c1_gap: float = 5.0  # brain bottom to C1 top
    c2_gap: float = 5.0  # C1 bottom to C2 top
    vertebra_center_xy: tuple[float, float] = (0.0, 15.0)
    hu: dict = field(
        default_factory=lambda: {
            "tissue": 40,
            "skin": 700,  # the bony shell doubles as the skin surface region
            "brain": 35,
            "eye": 30,
            "lens": 60,
            "vertebra": 3000,  # exaggerated so DRR threshold windows separate bone
        }
    )

    # -- derived geometry -------------------------------------------------

    @property
    def brain_bottom(self) -> float:
        return self.brain_center[2] - self.brain_semi_axes[2]

    def lens_center(self, side: int) -> tuple[float, float, float]:
        """side: +1 right eye (x>0), -1 left eye."""
        ex, ey, ez = self.eye_center
        return (side * ex, ey - self.lens_anterior_offset, ez)

    def eye_center_side(self, side: int) -> tuple[float, float, float]:
        ex, ey, ez = self.eye_center
        return (side * ex, ey, ez)

    def c1_box(self) -> tuple[np.ndarray, np.ndarray]:
        """(lo, hi) corners of the C1 box."""
        cx, cy = self.vertebra_center_xy
        ex, ey, ez = self.c1_extent
        top = self.brain_bottom - self.c1_gap
        lo = np.array([cx - ex / 2, cy - ey / 2, top - ez])
        hi = np.array([cx + ex / 2, cy + ey / 2, top])
        return lo, hi

    def c2_box(self) -> tuple[np.ndarray, np.ndarray]:
        cx, cy = self.vertebra_center_xy
        ex, ey, ez = self.c2_extent
        c1_lo, _ = self.c1_box()
        top = c1_lo[2] - self.c2_gap
        lo = np.array([cx - ex / 2, cy - ey / 2, top - ez])
        hi = np.array([cx + ex / 2, cy + ey / 2, top])
        return lo, hi

    def structure_hu(self, label: str) -> int:
        key = {
            "brain": "brain",
            "eye_left": "eye",
            "eye_right": "eye",
            "lens_left": "lens",
            "lens_right": "lens",
            "vertebra_c1": "vertebra",
            "vertebra_c2": "vertebra",
            "skin": "skin",
        }[label]
        return int(self.hu[key])

    # -- validation --------------------------------------------------------

    def validate(self) -> list[str]:
        """Return every violated containment relation (empty list = valid)."""
        v = []
        for name, vals in [
            ("head_semi_axes", self.head_semi_axes),
            ("brain_semi_axes", self.brain_semi_axes),
            ("c1_extent", self.c1_extent),
            ("c2_extent", self.c2_extent),
        ]:
            if any(x <= 0 for x in vals):
                v.append(f"{name} must be strictly positive")
        for name, val in [
            ("shell_thickness", self.shell_thickness),
            ("eye_radius", self.eye_radius),
            ("lens_radius", self.lens_radius),
            ("c1_gap", self.c1_gap),
            ("c2_gap", self.c2_gap),
        ]:
            if val <= 0:
                v.append(f"{name} must be strictly positive")
        if v:
            return v

        if self.lens_anterior_offset + self.lens_radius >= self.eye_radius:
            v.append(
                "lens not strictly inside eye "
                f"(offset {self.lens_anterior_offset} + r {self.lens_radius} "
                f">= eye r {self.eye_radius})"
            )
        d = _point_ellipsoid_distance(
            np.array(self.eye_center), np.array(self.brain_center), np.array(self.brain_semi_axes)
        )
        if d <= self.eye_radius:
            v.append(f"eye not strictly outside brain (clearance {d:.2f} <= r {self.eye_radius})")
        inner = np.array(self.head_semi_axes) - self.shell_thickness
        if np.any(inner <= 0):
            v.append("shell thicker than a head semi-axis")
        elif not _ellipsoid_inside_ellipsoid(
            np.array(self.brain_center), np.array(self.brain_semi_axes), inner
        ):
            v.append("brain not strictly inside the skull interior")
        c1_lo, c1_hi = self.c1_box()
        c2_lo, c2_hi = self.c2_box()
        if not c1_lo[2] > c2_hi[2]:
            v.append("C1 not strictly superior to C2")
        if not (c1_hi[2] < self.brain_bottom and c2_hi[2] < self.brain_bottom):
            v.append("vertebrae not strictly inferior to the brain")
        return v


def _point_ellipsoid_distance(p: np.ndarray, center: np.ndarray, semi: np.ndarray) -> float:
    """Euclidean distance from an exterior point to an ellipsoid surface.

    Solves the Lagrange condition q_i = a_i^2 p_i / (a_i^2 + t) by
    bisection on t; returns 0 for points on/inside the surface.
    """
    q = (p - center) / semi
    if np.dot(q, q) <= 1.0:
        return 0.0
    d = p - center

    def g(t):
        s = semi**2 * d / (semi**2 + t)
        return float(np.sum((s / semi) ** 2)) - 1.0

    lo, hi = 0.0, float(np.max(semi) * (np.linalg.norm(d / semi) + 1.0)) ** 2 + 1.0
    while g(hi) > 0:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    t = 0.5 * (lo + hi)
    surf = center + semi**2 * d / (semi**2 + t)
    return float(np.linalg.norm(p - surf))


def _ellipsoid_inside_ellipsoid(center: np.ndarray, semi: np.ndarray, outer_semi: np.ndarray,
                                n_theta: int = 181, n_phi: int = 91) -> bool:
    """Dense-sampled sufficient check that an ellipsoid sits strictly inside another."""
    th = np.linspace(0, 2 * np.pi, n_theta)
    ph = np.linspace(-np.pi / 2, np.pi / 2, n_phi)
    tt, pp = np.meshgrid(th, ph)
    pts = np.stack(
        [
            center[0] + semi[0] * np.cos(pp) * np.cos(tt),
            center[1] + semi[1] * np.cos(pp) * np.sin(tt),
            center[2] + semi[2] * np.sin(pp),
        ],
        axis=-1,
    )
    norms = np.sum((pts / outer_semi) ** 2, axis=-1)
    return bool(np.max(norms) < 1.0 - 1e-9)


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhantomOracle:
    """Closed-form BEV silhouettes (u = -y, v = +z) and exact extrema.

    ``x_lattice`` records the CT sampling along the projection axis so
    silhouettes can be rasterized with the same voxel-center semantics
    the 3D projection uses (bit-exact agreement between pathways).
    """

    structures: dict  # label -> {"kind", params..., "extrema": [min_u, max_u, min_v, max_v]}
    x_lattice: tuple[float, float, int]  # (origin_x, spacing_x, nx)

    def extrema(self, label: str) -> tuple[float, float, float, float]:
        return tuple(self.structures[label]["extrema"])

    def merged_extrema(self, labels: list[str]) -> tuple[float, float, float, float]:
        exs = [self.extrema(lb) for lb in labels]
        arr = np.array(exs)
        return (arr[:, 0].min(), arr[:, 1].max(), arr[:, 2].min(), arr[:, 3].max())

    def _lattice_reach(self, cx: float, half_width: np.ndarray) -> np.ndarray:
        """True where the x-interval [cx-w, cx+w] contains a lattice sample."""
        x0, dx, nx = self.x_lattice
        lo = np.maximum(np.ceil((cx - half_width - x0) / dx), 0)
        hi = np.minimum(np.floor((cx + half_width - x0) / dx), nx - 1)
        return lo <= hi

    def rasterize(self, label: str, frame: BevFrame) -> BevSilhouette:
        """Pixel-center rasterization matching the parallel 3D projection."""
        s = self.structures[label]
        uu, vv = np.meshgrid(frame.u_coords, frame.v_coords)
        kind = s["kind"]
        if kind == "ellipse":
            cu, cv = s["center"]
            a, b = s["semi_axes"]
            e = ((uu - cu) / a) ** 2 + ((vv - cv) / b) ** 2
            w = s["x_semi"] * np.sqrt(np.maximum(0.0, 1.0 - e))
            bits = (e <= 1.0) & self._lattice_reach(s["x_center"], w)
        elif kind == "disk":
            cu, cv = s["center"]
            r = s["radius"]
            e = ((uu - cu) ** 2 + (vv - cv) ** 2) / r**2
            w = r * np.sqrt(np.maximum(0.0, 1.0 - e))
            bits = (e <= 1.0) & self._lattice_reach(s["x_center"], w)
        elif kind == "rect":
            u0, u1, v0, v1 = s["bounds"]
            inside = (uu >= u0) & (uu <= u1) & (vv >= v0) & (vv <= v1)
            w = np.where(inside, s["x_half"], -1.0)
            bits = inside & self._lattice_reach(s["x_center"], w)
        else:
            raise ValueError(f"unknown silhouette kind '{kind}'")
        return BevSilhouette(frame, bits, label)

    def to_json(self) -> dict:
        return {
            "x_lattice": {
                "origin": self.x_lattice[0],
                "spacing": self.x_lattice[1],
                "n": self.x_lattice[2],
            },
            "structures": self.structures,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PhantomOracle":
        lat = doc["x_lattice"]
        structures = {}
        for label, s in doc["structures"].items():
            s = dict(s)
            for k in ("center", "semi_axes", "bounds", "extrema"):
                if k in s:
                    s[k] = tuple(s[k])
            structures[label] = s
        return cls(structures=structures, x_lattice=(lat["origin"], lat["spacing"], lat["n"]))


def write_oracle(path: str | Path, oracle: PhantomOracle) -> None:
    Path(path).write_text(json.dumps(oracle.to_json(), indent=2, sort_keys=True) + "\n")


def read_oracle(path: str | Path) -> PhantomOracle:
    return PhantomOracle.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def default_grid(spec: PhantomSpec, spacing: float = 1.0) -> tuple[tuple[int, int, int], tuple[float, float, float]]:
    """Smallest integer-lattice grid enclosing the head plus a 20 mm air border."""
    semi = np.array(spec.head_semi_axes)
    lo = np.floor((-semi - 20.0) / spacing) * spacing
    hi = np.ceil((semi + 20.0) / spacing) * spacing
    dims = tuple(int(round((h - l) / spacing)) + 1 for l, h in zip(lo, hi))
    return dims, tuple(lo)


def generate(
    spec: PhantomSpec,
    spacing: float = 1.0,
    dims: tuple[int, int, int] | None = None,
    origin: tuple[float, float, float] | None = None,
) -> tuple[CtVolume, dict[str, StructureMask], PhantomOracle]:
    """Voxelize the phantom and derive its analytic silhouette oracle.

    Voxels whose centers lie on a structure surface count as inside
    (closed predicates), matching the oracle's rasterization semantics.
    """
    violations = spec.validate()
    if violations:
        raise PhantomValidationError(violations)
    if dims is None or origin is None:
        dims, origin = default_grid(spec, spacing)
    nx, ny, nz = dims
    frame = PatientFrame(origin=tuple(origin), spacing=(spacing,) * 3)

    semi = np.array(spec.head_semi_axes)
    for ax in range(3):
        coords = frame.voxel_coords(ax, dims[ax])
        if coords[0] > -semi[ax] - 20 + 1e-9 or coords[-1] < semi[ax] + 20 - 1e-9:
            raise ValueError(
                f"grid axis {ax} does not enclose the head with a 20 mm border"
            )

    x = frame.voxel_coords(0, nx)[None, None, :]
    y = frame.voxel_coords(1, ny)[None, :, None]
    z = frame.voxel_coords(2, nz)[:, None, None]

    def ellipsoid(center, s):
        return (
            ((x - center[0]) / s[0]) ** 2
            + ((y - center[1]) / s[1]) ** 2
            + ((z - center[2]) / s[2]) ** 2
        )

    def sphere(center, r):
        return (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2 <= r**2

    def box(lo, hi):
        return (
            (x >= lo[0]) & (x <= hi[0])
            & (y >= lo[1]) & (y <= hi[1])
            & (z >= lo[2]) & (z <= hi[2])
        )

    head = ellipsoid((0, 0, 0), semi) <= 1.0
    interior = ellipsoid((0, 0, 0), semi - spec.shell_thickness) < 1.0
    shell = head & ~interior
    brain = ellipsoid(spec.brain_center, spec.brain_semi_axes) <= 1.0
    eye_r = sphere(spec.eye_center_side(+1), spec.eye_radius)
    eye_l = sphere(spec.eye_center_side(-1), spec.eye_radius)
    lens_r = sphere(spec.lens_center(+1), spec.lens_radius)
    lens_l = sphere(spec.lens_center(-1), spec.lens_radius)
    c1 = box(*spec.c1_box())
    c2 = box(*spec.c2_box())

    hu = np.full((nz, ny, nx), HU_AIR, dtype=np.int16)
    hu[head] = spec.hu["tissue"]
    hu[shell] = spec.hu["skin"]
    hu[brain] = spec.hu["brain"]
    hu[eye_r | eye_l] = spec.hu["eye"]
    hu[lens_r | lens_l] = spec.hu["lens"]
    hu[c1 | c2] = spec.hu["vertebra"]

    mask_bits = {
        "brain": brain,
        "eye_right": eye_r & ~lens_r,
        "eye_left": eye_l & ~lens_l,
        "lens_right": lens_r,
        "lens_left": lens_l,
        "vertebra_c1": c1,
        "vertebra_c2": c2,
        "skin": shell & ~(eye_r | eye_l | lens_r | lens_l),
    }
    masks = {lb: StructureMask(frame, bits, lb) for lb, bits in mask_bits.items()}
    volume = CtVolume(frame, hu)
    oracle = build_oracle(spec, frame, nx)
    return volume, masks, oracle


def build_oracle(spec: PhantomSpec, frame: PatientFrame, nx: int) -> PhantomOracle:
    structures = {}

    def ellipse_entry(center3, semi3):
        cu, cv = -center3[1], center3[2]
        a, b = semi3[1], semi3[2]
        return {
            "kind": "ellipse",
            "center": (cu, cv),
            "semi_axes": (a, b),
            "x_center": center3[0],
            "x_semi": semi3[0],
            "extrema": (cu - a, cu + a, cv - b, cv + b),
        }

    def disk_entry(center3, r):
        cu, cv = -center3[1], center3[2]
        return {
            "kind": "disk",
            "center": (cu, cv),
            "radius": r,
            "x_center": center3[0],
            "extrema": (cu - r, cu + r, cv - r, cv + r),
        }

    def rect_entry(lo, hi):
        u0, u1 = -hi[1], -lo[1]
        v0, v1 = lo[2], hi[2]
        return {
            "kind": "rect",
            "bounds": (u0, u1, v0, v1),
            "x_center": (lo[0] + hi[0]) / 2,
            "x_half": (hi[0] - lo[0]) / 2,
            "extrema": (u0, u1, v0, v1),
        }

    structures["skin"] = ellipse_entry((0.0, 0.0, 0.0), spec.head_semi_axes)
    structures["brain"] = ellipse_entry(spec.brain_center, spec.brain_semi_axes)
    for side, tag in ((+1, "right"), (-1, "left")):
        structures[f"eye_{tag}"] = disk_entry(spec.eye_center_side(side), spec.eye_radius)
        structures[f"lens_{tag}"] = disk_entry(spec.lens_center(side), spec.lens_radius)
    structures["vertebra_c1"] = rect_entry(*spec.c1_box())
    structures["vertebra_c2"] = rect_entry(*spec.c2_box())

    return PhantomOracle(
        structures=structures,
        x_lattice=(frame.origin[0], frame.spacing[0], nx),
    )


# ---------------------------------------------------------------------------
# Cohort variation
# ---------------------------------------------------------------------------

JITTER_FRACTION = 0.05  # per-field multiplicative jitter, within the +/-10% envelope
_MAX_ATTEMPTS = 1000


def randomize(seed: int, base: PhantomSpec | None = None) -> PhantomSpec:
    """Deterministic per-seed jitter of sizes and positions.

    Every scalar geometric field is scaled by an independent uniform factor
    in [1 - JITTER_FRACTION, 1 + JITTER_FRACTION]; candidates violating the
    containment invariants are rejected and redrawn.
    """
    if base is None:
        base = PhantomSpec()
    if base.validate():
        raise PhantomValidationError(base.validate())
    rng = np.random.default_rng(seed)
    f = JITTER_FRACTION

    def jit(value):
        if isinstance(value, tuple):
            return tuple(x * rng.uniform(1 - f, 1 + f) for x in value)
        return value * rng.uniform(1 - f, 1 + f)

    for _ in range(_MAX_ATTEMPTS):
        candidate = replace(
            base,
            seed=seed,
            head_semi_axes=jit(base.head_semi_axes),
            shell_thickness=jit(base.shell_thickness),
            brain_semi_axes=jit(base.brain_semi_axes),
            brain_center=(0.0, 0.0, jit(base.brain_center[2])),
            eye_radius=jit(base.eye_radius),
            eye_center=jit(base.eye_center),
            lens_radius=jit(base.lens_radius),
            lens_anterior_offset=jit(base.lens_anterior_offset),
            c1_extent=jit(base.c1_extent),
            c2_extent=jit(base.c2_extent),
            c1_gap=jit(base.c1_gap),
            c2_gap=jit(base.c2_gap),
            vertebra_center_xy=(base.vertebra_center_xy[0], jit(base.vertebra_center_xy[1])),
        )
        if not candidate.validate():
            return candidate
    raise RuntimeError(f"could not draw a valid phantom for seed {seed} in {_MAX_ATTEMPTS} attempts")
