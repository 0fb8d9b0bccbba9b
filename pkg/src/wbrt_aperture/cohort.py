"""Cohort container IO.

A cohort is a directory holding one CT and its structure masks:

    meta.json   dims [nx, ny, nz], spacing, origin, hu_clamp, labels
    ct.raw      int16 little-endian HU, row-major, z-slowest
    <label>.raw uint8 0/1, same layout, one file per structure label

The round trip write -> read is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import HU_MAX, HU_MIN, CtVolume, PatientFrame, StructureMask, STRUCTURE_LABELS

META_NAME = "meta.json"


def write_cohort(path: str | Path, volume: CtVolume, masks: dict[str, StructureMask]) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for label, m in masks.items():
        if m.label != label:
            raise FormatError(f"mask keyed '{label}' carries label '{m.label}'")
        if m.frame != volume.frame or m.dims != volume.dims:
            raise FormatError(f"mask '{label}' frame/dims differ from the CT")
    meta = {
        "dims": list(volume.dims),
        "spacing": list(volume.frame.spacing),
        "origin": list(volume.frame.origin),
        "hu_clamp": [HU_MIN, HU_MAX],
        "labels": sorted(masks),
    }
    (path / META_NAME).write_text(json.dumps(meta, indent=2) + "\n")
    volume.voxels.astype("<i2").tofile(path / "ct.raw")
    for label, m in masks.items():
        m.bits.astype(np.uint8).tofile(path / f"{label}.raw")


def read_cohort(path: str | Path) -> tuple[CtVolume, dict[str, StructureMask]]:
    path = Path(path)
    meta_path = path / META_NAME
    if not meta_path.is_file():
        raise FormatError(f"no {META_NAME} in {path}")
    meta = json.loads(meta_path.read_text())
    try:
        nx, ny, nz = (int(d) for d in meta["dims"])
        spacing = tuple(float(s) for s in meta["spacing"])
        origin = tuple(float(o) for o in meta["origin"])
        labels = list(meta["labels"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed {META_NAME}: {e}") from e
    if meta.get("orientation", "identity") != "identity":
        raise FormatError("oblique/rotated volumes are not accepted")
    for label in labels:
        if label not in STRUCTURE_LABELS:
            raise FormatError(f"unknown structure label '{label}' in {META_NAME}")

    n = nx * ny * nz
    frame = PatientFrame(origin=origin, spacing=spacing)

    raw = np.fromfile(path / "ct.raw", dtype="<i2")
    if raw.size != n:
        raise FormatError(f"ct.raw holds {raw.size} voxels, header dims imply {n}")
    volume = CtVolume(frame, raw.reshape(nz, ny, nx))

    masks = {}
    for label in labels:
        bits = np.fromfile(path / f"{label}.raw", dtype=np.uint8)
        if bits.size != n:
            raise FormatError(f"{label}.raw holds {bits.size} voxels, header dims imply {n}")
        masks[label] = StructureMask(frame, bits.reshape(nz, ny, nx).astype(bool), label)
    return volume, masks
