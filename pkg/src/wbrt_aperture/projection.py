"""BEV silhouettes for both pathways.

Approach 1 projects 3D structure masks into the right-lateral BEV;
approach 2 ingests 2D masks from files, a DRR threshold stand-in, or a
seeded perturbation of reference silhouettes.

Eyes and lenses are merged per side into union silhouettes labeled
``eye`` and ``lens``: the lateral view superimposes left and right, and
the landmark rules reference the paired organs collectively.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_closing

from .errors import DegeneratePerturbationError, FormatError, MissingStructureError
from .geometry import (
    BevFrame,
    BevSilhouette,
    Polyline2D,
    StructureMask,
    dilate,
    erode,
    extract_contour,
)
from . import pnm

# Labels carried by a SilhouetteSet (eye/lens are left|right unions).
SET_LABELS = ("brain", "skin", "eye", "lens", "vertebra_c1", "vertebra_c2")

ALWAYS_REQUIRED = ("brain", "skin")


def required_labels(caudal_vertebra: str, include_orbitals: bool) -> tuple[str, ...]:
    """Labels the landmark stage needs: brain, skin, and the chosen vertebra
    always; eye and lens unless the orbitals are treated."""
    req = list(ALWAYS_REQUIRED) + [f"vertebra_{caudal_vertebra.lower()}"]
    if not include_orbitals:
        req += ["eye", "lens"]
    return tuple(req)


@dataclass(frozen=True)
class SilhouetteSet:
    """One BevSilhouette per label, all sharing a frame."""

    frame: BevFrame
    silhouettes: dict
    provenance: str  # approach1 | approach2-file | approach2-threshold | approach2-perturbed

    def __post_init__(self):
        for lb, s in self.silhouettes.items():
            if s.frame != self.frame:
                raise ValueError(f"silhouette '{lb}' is on a different frame")

    def __getitem__(self, label: str) -> BevSilhouette:
        try:
            return self.silhouettes[label]
        except KeyError:
            raise MissingStructureError(label) from None

    def __contains__(self, label: str) -> bool:
        return label in self.silhouettes

    def check_required(self, labels: tuple[str, ...]) -> None:
        for lb in labels:
            if lb not in self.silhouettes:
                raise MissingStructureError(lb)
            if self.silhouettes[lb].is_empty():
                raise MissingStructureError(lb, "silhouette is empty")


def default_frame(
    skin_mask: StructureMask, spacing: float = 1.0, border: float = 30.0
) -> BevFrame:
    """BEV frame covering the skin silhouette plus a border, snapped to the
    CT lattice so projected and oracle rasters coincide pixel for pixel."""
    if not skin_mask.bits.any():
        raise ValueError("skin mask is empty")
    iz, iy, _ = np.nonzero(skin_mask.bits)
    ys = skin_mask.frame.voxel_coords(1, skin_mask.dims[1])
    zs = skin_mask.frame.voxel_coords(2, skin_mask.dims[2])
    u_min, u_max = -ys[iy.max()], -ys[iy.min()]
    v_min, v_max = zs[iz.min()], zs[iz.max()]
    n_border = int(np.ceil(border / spacing))
    u0 = u_min - n_border * spacing
    v0 = v_min - n_border * spacing
    nu = int(np.ceil((u_max - u0) / spacing)) + n_border + 1
    nv = int(np.ceil((v_max - v0) / spacing)) + n_border + 1
    return BevFrame(u0=u0, v0=v0, spacing=spacing, nu=nu, nv=nv)


def project(mask: StructureMask, frame: BevFrame, beam=None) -> BevSilhouette:
    """Project a 3D mask into the right-lateral BEV.

    Parallel mode (beam None or beam.mode == 'parallel'): a pixel is set
    iff any voxel column along x intersecting it is set.  Divergent mode:
    voxel centers are projected through the source onto the isocenter
    plane and the result closed by one pixel.
    """
    if beam is not None and beam.mode == "divergent":
        return _project_divergent(mask, frame, beam)
    bits = np.zeros((frame.nv, frame.nu), dtype=bool)
    if not mask.bits.any():
        return BevSilhouette(frame, bits, mask.label)
    col = mask.bits.any(axis=2)  # (nz, ny): any voxel along x
    ys = mask.frame.voxel_coords(1, mask.dims[1])
    zs = mask.frame.voxel_coords(2, mask.dims[2])
    iz, iy = np.nonzero(col)
    iu, iv = frame.pixel_index(-ys[iy], zs[iz])
    keep = (iu >= 0) & (iu < frame.nu) & (iv >= 0) & (iv < frame.nv)
    bits[iv[keep], iu[keep]] = True
    return BevSilhouette(frame, bits, mask.label)


def _project_divergent(mask: StructureMask, frame: BevFrame, beam) -> BevSilhouette:
    bits = np.zeros((frame.nv, frame.nu), dtype=bool)
    if not mask.bits.any():
        return BevSilhouette(frame, bits, mask.label)
    iz, iy, ix = np.nonzero(mask.bits)
    xs = mask.frame.voxel_coords(0, mask.dims[0])[ix]
    ys = mask.frame.voxel_coords(1, mask.dims[1])[iy]
    zs = mask.frame.voxel_coords(2, mask.dims[2])[iz]
    iso = np.asarray(beam.isocenter, dtype=float)
    src = iso + np.array([-beam.sad, 0.0, 0.0])
    t = (iso[0] - src[0]) / (xs - src[0])
    yp = src[1] + t * (ys - src[1])
    zp = src[2] + t * (zs - src[2])
    iu, iv = frame.pixel_index(-yp, zp)
    keep = (iu >= 0) & (iu < frame.nu) & (iv >= 0) & (iv < frame.nv)
    bits[iv[keep], iu[keep]] = True
    bits = binary_closing(bits, structure=np.ones((3, 3), bool))
    return BevSilhouette(frame, bits, mask.label)


def project_set(
    masks: dict[str, StructureMask], frame: BevFrame, beam=None
) -> SilhouetteSet:
    """Approach-1 silhouettes: project all masks and merge bilateral organs."""
    sil = {}
    for lb in ("brain", "skin", "vertebra_c1", "vertebra_c2"):
        if lb in masks:
            sil[lb] = project(masks[lb], frame, beam)
    for merged, parts in (("eye", ("eye_left", "eye_right")), ("lens", ("lens_left", "lens_right"))):
        have = [p for p in parts if p in masks]
        if have:
            bits = np.zeros((frame.nv, frame.nu), dtype=bool)
            for p in have:
                bits |= project(masks[p], frame, beam).bits
            sil[merged] = BevSilhouette(frame, bits, merged)
    return SilhouetteSet(frame=frame, silhouettes=sil, provenance="approach1")


# ---------------------------------------------------------------------------
# File exchange (per-label 8-bit PGM + bev_meta.json)
# ---------------------------------------------------------------------------


def write_bev_masks(path: str | Path, sset: SilhouetteSet) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    f = sset.frame
    meta = {
        "u0": f.u0,
        "v0": f.v0,
        "spacing": f.spacing,
        "nu": f.nu,
        "nv": f.nv,
        "labels": sorted(sset.silhouettes),
    }
    (path / "bev_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    for lb, s in sset.silhouettes.items():
        pnm.write_pgm8(path / f"{lb}.pgm", np.where(s.bits, 255, 0).astype(np.uint8))


def ingest_bev_masks(path: str | Path, frame: BevFrame) -> SilhouetteSet:
    """Load per-label rasters, resampling by nearest neighbor when the file
    spacing differs from the pipeline frame by an integer factor."""
    path = Path(path)
    meta_path = path / "bev_meta.json"
    if not meta_path.is_file():
        raise FormatError(f"no bev_meta.json in {path}")
    meta = json.loads(meta_path.read_text())
    src = BevFrame(
        u0=float(meta["u0"]), v0=float(meta["v0"]), spacing=float(meta["spacing"]),
        nu=int(meta["nu"]), nv=int(meta["nv"]),
    )
    ratio = src.spacing / frame.spacing
    inv = frame.spacing / src.spacing
    if abs(ratio - round(ratio)) > 1e-9 and abs(inv - round(inv)) > 1e-9:
        raise FormatError(
            f"file pixel spacing {src.spacing} is not an integer factor of "
            f"pipeline spacing {frame.spacing}"
        )
    sil = {}
    for lb in meta["labels"]:
        img = pnm.read_pgm8(path / f"{lb}.pgm")
        if img.shape != (src.nv, src.nu):
            raise FormatError(f"{lb}.pgm shape {img.shape} disagrees with bev_meta.json")
        bits = img > 127
        if src.spacing == frame.spacing and src.u0 == frame.u0 and src.v0 == frame.v0 \
                and (src.nu, src.nv) == (frame.nu, frame.nv):
            out = bits
        else:
            ju = np.rint((frame.u_coords - src.u0) / src.spacing).astype(int)
            jv = np.rint((frame.v_coords - src.v0) / src.spacing).astype(int)
            if ju.min() < 0 or ju.max() >= src.nu or jv.min() < 0 or jv.max() >= src.nv:
                raise FormatError(
                    f"file extent does not cover the pipeline frame for '{lb}'"
                )
            out = bits[np.ix_(jv, ju)]
        sil[lb] = BevSilhouette(frame, out, lb)
    return SilhouetteSet(frame=frame, silhouettes=sil, provenance="approach2-file")


# ---------------------------------------------------------------------------
# Perturbation (segmentation-error stand-in)
# ---------------------------------------------------------------------------

PERTURB_KINDS = ("dilate", "erode", "boundary-jitter")


def perturb(
    sset: SilhouetteSet,
    seed: int,
    magnitude: float,
    kind: str = "dilate",
    labels: tuple[str, ...] | None = None,
) -> SilhouetteSet:
    """Deterministic per-seed perturbation of selected silhouettes.

    dilate/erode apply exact-radius Euclidean morphology; boundary-jitter
    displaces the contour along its normal with zero-mean smooth noise of
    amplitude <= magnitude, then re-rasterizes.
    """
    if magnitude < 0:
        raise ValueError(f"perturbation magnitude must be >= 0, got {magnitude}")
    if kind not in PERTURB_KINDS:
        raise ValueError(f"unknown perturbation kind '{kind}'")
    targets = tuple(labels) if labels is not None else tuple(sset.silhouettes)
    out = dict(sset.silhouettes)
    if magnitude > 0:
        rng = np.random.default_rng(seed)
        for lb in targets:
            s = sset[lb]
            if kind == "dilate":
                p = dilate(s, magnitude)
            elif kind == "erode":
                p = erode(s, magnitude)
            else:
                p = _jitter_boundary(s, magnitude, rng)
            if p.is_empty() and not s.is_empty():
                raise DegeneratePerturbationError(
                    f"{kind} by {magnitude} mm emptied silhouette '{lb}'"
                )
            out[lb] = p
    return SilhouetteSet(frame=sset.frame, silhouettes=out, provenance="approach2-perturbed")


def _jitter_boundary(s: BevSilhouette, magnitude: float, rng: np.random.Generator) -> BevSilhouette:
    from .aperture import rasterize_bits  # local import to avoid a cycle

    bits = np.zeros_like(s.bits)
    for contour in extract_contour(s):
        v = contour.vertices
        n = len(v)
        # smooth zero-mean profile along arc length: few low harmonics
        t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        prof = np.zeros(n)
        for k in (1, 2, 3):
            prof += rng.uniform(-1, 1) * np.cos(k * t) + rng.uniform(-1, 1) * np.sin(k * t)
        peak = np.max(np.abs(prof))
        if peak > 0:
            prof *= magnitude / peak
        nxt = np.roll(v, -1, axis=0)
        prv = np.roll(v, 1, axis=0)
        tang = nxt - prv
        norm = np.column_stack([tang[:, 1], -tang[:, 0]])
        ln = np.linalg.norm(norm, axis=1, keepdims=True)
        ln[ln == 0] = 1.0
        norm /= ln
        # orient outward: positive-area loops have outward = right of travel
        if contour.signed_area() < 0:
            norm = -norm
        moved = v + prof[:, None] * norm
        moved = moved[np.linalg.norm(np.diff(np.vstack([moved, moved[:1]]), axis=0), axis=1)[:-1] > 1e-9]
        if len(moved) >= 3:
            bits |= rasterize_bits(moved, s.frame)
    return s.with_bits(bits)
