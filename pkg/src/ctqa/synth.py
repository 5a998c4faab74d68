"""Synthetic ground-truth DICOM corpora for exercising the pipeline.

Generates chest-like series from an analytic phantom: an ellipsoidal
body of ~0 HU holding two -800 HU lung ellipsoids, surrounded by
-1000 HU air.  Every geometric fact about a generated series is known in
closed form and stored in a truth record next to the series directory,
so pipeline output can be scored without any reference data.

Defect injectors then break clean series in the specific ways the checks
exist to catch (dropped slices, duplicated chunks, truncation, absurd
scan length, flipped orientation, coarse voxels, missing lung, corrupt
bytes), recording analytically which checks must fire.

Generation is pure in the seed: the same seed yields byte-identical
files.
"""

from __future__ import annotations

import hashlib
import json
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from .dicom import (
    EXPLICIT_VR_LE,
    IMPLICIT_VR_LE,
    SliceHeader,
    TAG_PIXEL_DATA,
    _read_file,
)
from .errors import IncompatibleDefect, InvalidGeometry
from .series import CHECK_SUBJECTIVE, ALL_CHECKS

SOP_CLASS_CT = "1.2.840.10008.5.1.4.1.1.2"
_IMPLEMENTATION_UID = "2.25.18374686479671623680"

HU_AIR = -1000
HU_BODY = 0
HU_LUNG = -800
STORED_OFFSET = 1024  # stored value = HU + 1024, RescaleIntercept -1024

DEFECT_KINDS = (
    "drop_slices",
    "duplicate_chunk",
    "truncate",
    "whole_body_length",
    "nonstandard_orientation",
    "coarse_resolution",
    "partial_lung",
    "unparseable_bytes",
)

# Defect classes detectable by the objective checks alone.
OBJECTIVE_DEFECTS = DEFECT_KINDS[:6]


# --- minimal explicit/implicit VR writer -----------------------------------

_LONG_VRS = {"OB", "OW", "SQ", "UN", "UT"}


def _pad(payload: bytes, vr: str) -> bytes:
    if len(payload) % 2 == 0:
        return payload
    return payload + (b"\x00" if vr in ("UI", "OB", "OW") else b" ")


def _element(group: int, elem: int, vr: str, payload: bytes, *, implicit: bool) -> bytes:
    payload = _pad(payload, vr)
    if implicit:
        return struct.pack("<HHI", group, elem, len(payload)) + payload
    if vr in _LONG_VRS:
        return struct.pack("<HH2sHI", group, elem, vr.encode(), 0, len(payload)) + payload
    return struct.pack("<HH2sH", group, elem, vr.encode(), len(payload)) + payload


def _ds(*values: float) -> bytes:
    return "\\".join(format(v, ".10g") for v in values).encode("ascii")


def _is(value: int) -> bytes:
    return str(int(value)).encode("ascii")


def _us(value: int) -> bytes:
    return struct.pack("<H", value)


def _uid_from(*parts) -> str:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return "2.25." + str(int.from_bytes(digest[:13], "big"))


def write_slice(header: SliceHeader, stored: np.ndarray, *, implicit: bool = False) -> bytes:
    """Serialize one slice as a Part-10 DICOM file.

    ``stored`` holds raw pixel values (HU already shifted by the rescale
    intercept), dtype uint16 or int16 matching pixel_representation.
    """
    if stored.shape != (header.rows, header.columns):
        raise InvalidGeometry(
            f"pixel array {stored.shape} does not match header "
            f"{header.rows}x{header.columns}"
        )
    dtype = np.dtype("<i2") if header.pixel_representation == 1 else np.dtype("<u2")
    pixel_bytes = np.ascontiguousarray(stored.astype(dtype)).tobytes()

    sop_uid = _uid_from(header.series_uid, "sop", header.instance_number)
    study_uid = _uid_from(header.series_uid, "study")

    body: list[tuple[int, int, str, bytes]] = [
        (0x0008, 0x0016, "UI", SOP_CLASS_CT.encode()),
        (0x0008, 0x0018, "UI", sop_uid.encode()),
        (0x0008, 0x0060, "CS", b"CT"),
        (0x0020, 0x000D, "UI", study_uid.encode()),
        (0x0020, 0x000E, "UI", header.series_uid.encode()),
        (0x0020, 0x0013, "IS", _is(header.instance_number)),
        (0x0028, 0x0002, "US", _us(header.samples_per_pixel)),
        (0x0028, 0x0004, "CS", header.photometric.encode()),
        (0x0028, 0x0010, "US", _us(header.rows)),
        (0x0028, 0x0011, "US", _us(header.columns)),
        (0x0028, 0x0030, "DS", _ds(*header.pixel_spacing)),
        (0x0028, 0x0100, "US", _us(header.bits_allocated)),
        (0x0028, 0x0101, "US", _us(header.bits_allocated)),
        (0x0028, 0x0102, "US", _us(header.bits_allocated - 1)),
        (0x0028, 0x0103, "US", _us(header.pixel_representation)),
        (0x0028, 0x1052, "DS", _ds(header.rescale_intercept)),
        (0x0028, 0x1053, "DS", _ds(header.rescale_slope)),
        (0x7FE0, 0x0010, "OW", pixel_bytes),
    ]
    if header.slice_thickness is not None:
        body.append((0x0018, 0x0050, "DS", _ds(header.slice_thickness)))
    if header.image_position is not None:
        body.append((0x0020, 0x0032, "DS", _ds(*header.image_position)))
    if header.image_orientation is not None:
        body.append((0x0020, 0x0037, "DS", _ds(*header.image_orientation)))
    if header.slice_location is not None:
        body.append((0x0020, 0x1041, "DS", _ds(header.slice_location)))
    body.sort(key=lambda e: (e[0], e[1]))

    transfer_syntax = IMPLICIT_VR_LE if implicit else EXPLICIT_VR_LE
    meta_elements = [
        (0x0002, 0x0001, "OB", b"\x00\x01"),
        (0x0002, 0x0002, "UI", SOP_CLASS_CT.encode()),
        (0x0002, 0x0003, "UI", sop_uid.encode()),
        (0x0002, 0x0010, "UI", transfer_syntax.encode()),
        (0x0002, 0x0012, "UI", _IMPLEMENTATION_UID.encode()),
    ]
    meta_body = b"".join(_element(g, e, vr, p, implicit=False) for g, e, vr, p in meta_elements)
    meta = _element(0x0002, 0x0000, "UL", struct.pack("<I", len(meta_body)), implicit=False)
    dataset = b"".join(_element(g, e, vr, p, implicit=implicit) for g, e, vr, p in body)
    return b"\x00" * 128 + b"DICM" + meta + meta_body + dataset


# --- geometry and phantom ---------------------------------------------------

@dataclass(frozen=True)
class SynthGeometry:
    """Acquisition geometry of a synthetic series."""

    rows: int = 160
    columns: int = 160
    n_slices: int = 100
    pixel_spacing: tuple[float, float] = (0.7, 0.7)
    slice_step: float = 2.5
    implicit_vr: bool = False

    def __post_init__(self) -> None:
        if min(self.rows, self.columns) < 8 or self.n_slices < 1:
            raise InvalidGeometry(
                f"dims {self.rows}x{self.columns}x{self.n_slices} out of range"
            )
        if min(self.pixel_spacing) <= 0 or self.slice_step <= 0:
            raise InvalidGeometry("spacings must be positive")

    @property
    def extent_mm(self) -> tuple[float, float, float]:
        return (
            self.columns * self.pixel_spacing[1],
            self.rows * self.pixel_spacing[0],
            self.n_slices * self.slice_step,
        )

    @property
    def origin_mm(self) -> tuple[float, float, float]:
        """World position of pixel (0,0) of the first slice, centering
        the grid on the world origin."""
        return (
            -(self.columns - 1) * self.pixel_spacing[1] / 2.0,
            -(self.rows - 1) * self.pixel_spacing[0] / 2.0,
            -(self.n_slices - 1) * self.slice_step / 2.0,
        )


@dataclass(frozen=True)
class Ellipsoid:
    center_mm: tuple[float, float, float]
    semi_mm: tuple[float, float, float]

    def membership(self, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        cx, cy, cz = self.center_mm
        a, b, c = self.semi_mm
        return ((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 + ((z - cz) / c) ** 2 <= 1.0

    def volume_mm3(self) -> float:
        a, b, c = self.semi_mm
        return 4.0 / 3.0 * np.pi * a * b * c


@dataclass(frozen=True)
class PhantomSpec:
    body: Ellipsoid
    lungs: tuple[Ellipsoid, ...]
    air_hu: int = HU_AIR
    body_hu: int = HU_BODY
    lung_hu: int = HU_LUNG


def default_phantom(geometry: SynthGeometry, seed: int = 0, *, lung_count: int = 2) -> PhantomSpec:
    """Phantom scaled to the grid with mild seeded size jitter.

    Jitter is per-lung, so the phantom is never exactly left-right
    symmetric; mirror-image bugs cannot hide behind symmetry.
    """
    ex, ey, ez = geometry.extent_mm
    rng = random.Random(seed)

    def jitter() -> float:
        return 1.0 + rng.uniform(-0.04, 0.04)

    body = Ellipsoid(
        center_mm=(0.0, 0.0, 0.0),
        semi_mm=(0.42 * ex * jitter(), 0.35 * ey * jitter(), 0.48 * ez),
    )
    offsets = (-0.20 * ex, 0.20 * ex)
    lungs = []
    for side in range(lung_count):
        lungs.append(
            Ellipsoid(
                # z semi-axis 0.34 keeps a >4% shell between lung and body
                # surfaces even with both jitters adverse; thinner shells
                # leak at the lung tips once voxelized and exterior air
                # floods the lung component.
                center_mm=(offsets[side], -0.02 * ey, 0.0),
                semi_mm=(
                    0.15 * ex * jitter(),
                    0.22 * ey * jitter(),
                    0.34 * ez * jitter(),
                ),
            )
        )
    return PhantomSpec(body=body, lungs=tuple(lungs))


def _world_grids(geometry: SynthGeometry):
    ox, oy, oz = geometry.origin_mm
    xs = ox + np.arange(geometry.columns) * geometry.pixel_spacing[1]
    ys = oy + np.arange(geometry.rows) * geometry.pixel_spacing[0]
    zs = oz + np.arange(geometry.n_slices) * geometry.slice_step
    return xs, ys, zs


def phantom_hu(geometry: SynthGeometry, phantom: PhantomSpec) -> np.ndarray:
    """HU stack, shape (rows, columns, n_slices), int16."""
    xs, ys, zs = _world_grids(geometry)
    x = xs[None, :, None]
    y = ys[:, None, None]
    z = zs[None, None, :]
    hu = np.full((geometry.rows, geometry.columns, geometry.n_slices), phantom.air_hu, np.int16)
    hu[phantom.body.membership(x, y, z)] = phantom.body_hu
    for lung in phantom.lungs:
        hu[lung.membership(x, y, z)] = phantom.lung_hu
    return hu


# --- series generation -------------------------------------------------------

def _slice_header(geometry: SynthGeometry, series_uid: str, instance_number: int) -> SliceHeader:
    ox, oy, oz = geometry.origin_mm
    z = oz + (instance_number - 1) * geometry.slice_step
    return SliceHeader(
        series_uid=series_uid,
        instance_number=instance_number,
        slice_location=z,
        image_position=(ox, oy, z),
        image_orientation=(1.0, 0.0, 0.0, 0.0, 1.0, 0.0),
        pixel_spacing=geometry.pixel_spacing,
        slice_thickness=geometry.slice_step,
        rows=geometry.rows,
        columns=geometry.columns,
        bits_allocated=16,
        pixel_representation=0,
        rescale_slope=1.0,
        rescale_intercept=-float(STORED_OFFSET),
    )


def truth_path_for(series_dir: Union[str, Path]) -> Path:
    series_dir = Path(series_dir)
    return series_dir.parent / f"{series_dir.name}.truth.json"


def _write_truth(series_dir: Path, truth: dict) -> None:
    truth_path_for(series_dir).write_text(
        json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_truth(series_dir: Union[str, Path]) -> dict:
    return json.loads(truth_path_for(series_dir).read_text(encoding="utf-8"))


def generate_series(
    series_dir: Union[str, Path],
    *,
    geometry: Optional[SynthGeometry] = None,
    phantom: Optional[PhantomSpec] = None,
    seed: int = 0,
    lung_count: int = 2,
) -> dict:
    """Write one clean series plus its truth record.

    Returns the truth dict (also written to ``<dir>.truth.json``).
    """
    geometry = geometry or SynthGeometry()
    phantom = phantom or default_phantom(geometry, seed, lung_count=lung_count)
    series_dir = Path(series_dir)
    series_dir.mkdir(parents=True, exist_ok=True)

    series_uid = _uid_from(seed, series_dir.name, "series")
    hu = phantom_hu(geometry, phantom)
    stored = (hu.astype(np.int32) + STORED_OFFSET).astype(np.uint16)

    locations = []
    for idx in range(geometry.n_slices):
        number = idx + 1
        header = _slice_header(geometry, series_uid, number)
        locations.append(header.slice_location)
        data = write_slice(header, stored[:, :, idx], implicit=geometry.implicit_vr)
        (series_dir / f"sl_{number:04d}.dcm").write_bytes(data)

    expected = {check: "pass" for check in ALL_CHECKS}
    expected[CHECK_SUBJECTIVE] = "na"
    truth = {
        "scan_id": series_dir.name,
        "series_uid": series_uid,
        "seed": seed,
        "geometry": {
            "rows": geometry.rows,
            "columns": geometry.columns,
            "n_slices": geometry.n_slices,
            "pixel_spacing": list(geometry.pixel_spacing),
            "slice_step": geometry.slice_step,
            "origin_mm": list(geometry.origin_mm),
            "implicit_vr": geometry.implicit_vr,
        },
        "phantom": {
            "body": {"center_mm": list(phantom.body.center_mm), "semi_mm": list(phantom.body.semi_mm)},
            "lungs": [
                {"center_mm": list(l.center_mm), "semi_mm": list(l.semi_mm)}
                for l in phantom.lungs
            ],
            "hu": {"air": phantom.air_hu, "body": phantom.body_hu, "lung": phantom.lung_hu},
        },
        "defect": None,
        "expected": expected,
        "expected_values": {},
        "entailed": {},
        "expected_disposition": "pass",
        "auto_fix_expected": False,
        "unparseable": False,
        "lung_component_count": len(phantom.lungs),
        "instance_numbers": list(range(1, geometry.n_slices + 1)),
        "locations": locations,
        "assumes_default_thresholds": True,
    }
    _write_truth(series_dir, truth)
    return truth


# --- defect injection --------------------------------------------------------

@dataclass(frozen=True)
class DefectSpec:
    """One defect to inject; ``params`` semantics depend on kind."""

    kind: str
    params: Mapping = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in DEFECT_KINDS:
            raise IncompatibleDefect(f"unknown defect kind {self.kind!r}")


def _series_files(series_dir: Path) -> list[Path]:
    return sorted(p for p in series_dir.iterdir() if p.is_file())


def _load_slices(series_dir: Path) -> list[tuple[Path, SliceHeader, np.ndarray]]:
    """Read back (path, header, stored-pixels) for every slice, in
    instance-number order."""
    out = []
    for path in _series_files(series_dir):
        data = path.read_bytes()
        from .dicom import parse_slice  # local import keeps module load light

        header = parse_slice(data)
        raw = _read_file(data)[TAG_PIXEL_DATA]
        dtype = np.dtype("<i2") if header.pixel_representation == 1 else np.dtype("<u2")
        stored = np.frombuffer(raw, dtype=dtype).reshape(header.rows, header.columns)
        out.append((path, header, stored.copy()))
    out.sort(key=lambda t: t[1].instance_number)
    return out


def inject_defect(series_dir: Union[str, Path], spec: DefectSpec) -> dict:
    """Break a clean series in place and update its truth record.

    Expected check outcomes are derived from what the injector actually
    did (counts, factors, geometry), not by running the checks.

    Raises:
        IncompatibleDefect: parameters do not fit the series.
    """
    series_dir = Path(series_dir)
    truth = load_truth(series_dir)
    if truth.get("defect") is not None:
        raise IncompatibleDefect("series already carries a defect")
    handler = {
        "drop_slices": _inject_drop,
        "duplicate_chunk": _inject_duplicate,
        "truncate": _inject_truncate,
        "whole_body_length": _inject_whole_body,
        "nonstandard_orientation": _inject_orientation,
        "coarse_resolution": _inject_coarse,
        "partial_lung": _inject_partial_lung,
        "unparseable_bytes": _inject_unparseable,
    }[spec.kind]
    truth = handler(series_dir, truth, spec)
    truth["defect"] = {"kind": spec.kind, "params": dict(spec.params), "seed": spec.seed}
    _write_truth(series_dir, truth)
    return truth


def _geometry_of(truth: dict) -> SynthGeometry:
    g = truth["geometry"]
    return SynthGeometry(
        rows=g["rows"],
        columns=g["columns"],
        n_slices=g["n_slices"],
        pixel_spacing=tuple(g["pixel_spacing"]),
        slice_step=g["slice_step"],
        implicit_vr=g.get("implicit_vr", False),
    )


def _default_thresholds() -> dict:
    return {"delta": 50, "sigma1": 200.0, "sigma2": 500.0, "phi": (1.0, 1.0, 5.0)}


def _inject_drop(series_dir: Path, truth: dict, spec: DefectSpec) -> dict:
    k = int(spec.params.get("k", 2))
    slices = _load_slices(series_dir)
    n = len(slices)
    if not 1 <= k <= n - 2:
        raise IncompatibleDefect(f"cannot drop {k} interior slices from {n}")
    rng = random.Random(spec.seed)
    victims = sorted(rng.sample(range(1, n - 1), k))
    dropped = []
    for idx in victims:
        path, header, _ = slices[idx]
        dropped.append(header.instance_number)
        path.unlink()

    th = _default_thresholds()
    remaining = n - k
    truth["instance_numbers"] = [
        h.instance_number for i, (_, h, _s) in enumerate(slices) if i not in victims
    ]
    truth["locations"] = [
        h.slice_location for i, (_, h, _s) in enumerate(slices) if i not in victims
    ]
    truth["expected"].update(
        {
            "C1": "fail",
            "C2": "pass",
            "C3": "fail",
            "C4": "fail" if remaining < th["delta"] else "pass",
            "C5": "pass",
            "C6": "na",
            "C7": "na",
        }
    )
    truth["expected_values"] = {"C1": k, "C2": 0}
    truth["entailed"] = {"C3": "each gap leaves a distance larger than the modal spacing"}
    truth["expected_disposition"] = "fail"
    truth["dropped_instance_numbers"] = dropped
    return truth


def _inject_duplicate(series_dir: Path, truth: dict, spec: DefectSpec) -> dict:
    m = int(spec.params.get("m", 5))
    renumber = bool(spec.params.get("renumber", False))
    slices = _load_slices(series_dir)
    n = len(slices)
    if not 1 <= m <= n:
        raise IncompatibleDefect(f"cannot duplicate a chunk of {m} from {n}")
    rng = random.Random(spec.seed)
    start = rng.randrange(0, n - m + 1)
    max_in = max(h.instance_number for _, h, _s in slices)

    geometry = _geometry_of(truth)
    for offset in range(m):
        path, header, stored = slices[start + offset]
        if renumber:
            from dataclasses import replace

            new_header = replace(header, instance_number=max_in + 1 + offset)
        else:
            new_header = header
        data = write_slice(new_header, stored, implicit=geometry.implicit_vr)
        dup_path = series_dir / f"{path.stem}_dup.dcm"
        dup_path.write_bytes(data)

    if renumber:
        # Completeness and uniqueness hold, so the scan still assembles;
        # only the spacing profile betrays the copied chunk.
        truth["expected"].update(
            {"C1": "pass", "C2": "pass", "C3": "fail", "C4": "pass", "C5": "pass",
             "C6": "pass", "C7": "pass"}
        )
        truth["expected_values"] = {"C1": 0, "C2": 0}
        truth["entailed"] = {
            "C3": "the re-appended chunk jumps back to earlier slice locations"
        }
    else:
        truth["expected"].update(
            {"C1": "fail", "C2": "fail", "C3": "fail", "C4": "pass", "C5": "pass",
             "C6": "na", "C7": "na"}
        )
        truth["expected_values"] = {"C1": -m, "C2": m}
        truth["entailed"] = {
            "C1": "duplicates push the slice count past the instance-number span",
            "C3": "duplicated neighbours sit at zero distance",
        }
    truth["expected_disposition"] = "fail"
    truth["duplicated_chunk"] = {
        "start_instance": slices[start][1].instance_number,
        "length": m,
        "renumbered": renumber,
    }
    return truth


def _inject_truncate(series_dir: Path, truth: dict, spec: DefectSpec) -> dict:
    keep = int(spec.params.get("keep", 3))
    slices = _load_slices(series_dir)
    n = len(slices)
    th = _default_thresholds()
    if not 2 <= keep < min(n, th["delta"]):
        raise IncompatibleDefect(f"truncation keep={keep} must be in [2, min(n, delta))")
    for path, header, _ in slices:
        if header.instance_number > keep:
            path.unlink()

    geometry = _geometry_of(truth)
    new_length = (keep - 1) * geometry.slice_step
    length_ok = th["sigma1"] < new_length < th["sigma2"]
    truth["instance_numbers"] = list(range(1, keep + 1))
    truth["locations"] = truth["locations"][:keep]
    truth["expected"].update(
        {
            "C1": "pass",
            "C2": "pass",
            "C3": "pass",
            "C4": "fail",
            "C5": "pass" if length_ok else "fail",
            "C6": "pass",
            "C7": "pass",
        }
    )
    truth["expected_values"] = {"C1": 0, "C2": 0, "C4": 1}
    truth["entailed"] = (
        {} if length_ok else {"C5": "truncation shrinks the scan length below sigma1"}
    )
    truth["expected_disposition"] = "fail"
    truth["kept_slices"] = keep
    return truth


def _rewrite_locations(series_dir: Path, truth: dict, z_of) -> None:
    """Rewrite every slice with a new z location given by ``z_of(old_z)``."""
    from dataclasses import replace

    geometry = _geometry_of(truth)
    for path, header, stored in _load_slices(series_dir):
        new_z = z_of(header.slice_location)
        pos = header.image_position
        new_header = replace(
            header,
            slice_location=new_z,
            image_position=(pos[0], pos[1], new_z) if pos is not None else None,
        )
        path.write_bytes(write_slice(new_header, stored, implicit=geometry.implicit_vr))


def _inject_whole_body(series_dir: Path, truth: dict, spec: DefectSpec) -> dict:
    factor = float(spec.params.get("factor", 4.0))
    geometry = _geometry_of(truth)
    th = _default_thresholds()
    new_length = (geometry.n_slices - 1) * geometry.slice_step * factor
    if new_length <= th["sigma2"]:
        raise IncompatibleDefect(
            f"factor {factor} leaves length {new_length:.0f}mm inside sigma2"
        )
    _rewrite_locations(series_dir, truth, lambda z: z * factor)

    new_step = geometry.slice_step * factor
    c7_hit = new_step > th["phi"][2]
    truth["locations"] = [z * factor for z in truth["locations"]]
    truth["expected"].update(
        {
            "C1": "pass",
            "C2": "pass",
            "C3": "pass",
            "C4": "pass",
            "C5": "fail",
            "C6": "pass",
            "C7": "fail" if c7_hit else "pass",
        }
    )
    truth["expected_values"] = {"C1": 0, "C2": 0}
    truth["entailed"] = (
        {"C7": "the stretched slice step exceeds the z voxel-size cap"} if c7_hit else {}
    )
    truth["expected_disposition"] = "fail"
    truth["length_factor"] = factor
    return truth


def _inject_orientation(series_dir: Path, truth: dict, spec: DefectSpec) -> dict:
    from dataclasses import replace

    geometry = _geometry_of(truth)
    shift = (geometry.columns - 1) * geometry.pixel_spacing[1]
    for path, header, stored in _load_slices(series_dir):
        pos = header.image_position
        new_header = replace(
            header,
            image_orientation=(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0),
            image_position=(pos[0] + shift, pos[1], pos[2]) if pos is not None else None,
        )
        path.write_bytes(
            write_slice(new_header, stored[:, ::-1], implicit=geometry.implicit_vr)
        )

    truth["expected"].update(
        {"C1": "pass", "C2": "pass", "C3": "pass", "C4": "pass", "C5": "pass",
         "C6": "fail", "C7": "pass"}
    )
    truth["expected_values"] = {"C1": 0, "C2": 0}
    truth["entailed"] = {}
    truth["expected_disposition"] = "warn"  # auto-reorientation fixes it
    truth["auto_fix_expected"] = True
    truth["orientation_flip"] = "x"
    return truth


def _inject_coarse(series_dir: Path, truth: dict, spec: DefectSpec) -> dict:
    from dataclasses import replace

    spacing = tuple(spec.params.get("spacing", (1.5, 1.5)))
    th = _default_thresholds()
    over = sum(1 for s, cap in zip((spacing[1], spacing[0]), th["phi"][:2]) if s > cap)
    if over == 0:
        raise IncompatibleDefect(f"spacing {spacing} does not exceed any in-plane cap")
    geometry = _geometry_of(truth)
    for path, header, stored in _load_slices(series_dir):
        new_header = replace(header, pixel_spacing=spacing)
        path.write_bytes(write_slice(new_header, stored, implicit=geometry.implicit_vr))

    truth["geometry"]["pixel_spacing"] = list(spacing)
    truth["expected"].update(
        {"C1": "pass", "C2": "pass", "C3": "pass", "C4": "pass", "C5": "pass",
         "C6": "pass", "C7": "fail"}
    )
    truth["expected_values"] = {"C1": 0, "C2": 0, "C7": over}
    truth["entailed"] = {}
    truth["expected_disposition"] = "fail"
    return truth


def _inject_partial_lung(series_dir: Path, truth: dict, spec: DefectSpec) -> dict:
    lungs = truth["phantom"]["lungs"]
    if len(lungs) < 2:
        raise IncompatibleDefect("phantom already has a single lung")
    removed = lungs.pop()  # the +x side lung
    ellipsoid = Ellipsoid(
        center_mm=tuple(removed["center_mm"]), semi_mm=tuple(removed["semi_mm"])
    )
    geometry = _geometry_of(truth)
    xs, ys, _ = _world_grids(geometry)
    x = xs[None, :]
    y = ys[:, None]
    body_stored = truth["phantom"]["hu"]["body"] + STORED_OFFSET
    for path, header, stored in _load_slices(series_dir):
        z = np.full_like(x, header.slice_location, dtype=np.float64)
        inside = ellipsoid.membership(x, y, z)
        stored[inside] = body_stored
        path.write_bytes(write_slice(header, stored, implicit=geometry.implicit_vr))

    truth["expected"][CHECK_SUBJECTIVE] = "na"
    truth["expected_disposition"] = "pass"
    truth["lung_component_count"] = 1
    truth["removed_lung"] = removed
    return truth


def _inject_unparseable(series_dir: Path, truth: dict, spec: DefectSpec) -> dict:
    files = _series_files(series_dir)
    rng = random.Random(spec.seed)
    victim = files[rng.randrange(len(files))]
    data = victim.read_bytes()
    victim.write_bytes(data[: max(140, int(len(data) * 0.6))])

    truth["expected"] = {check: "na" for check in ALL_CHECKS}
    truth["expected_values"] = {}
    truth["entailed"] = {}
    truth["expected_disposition"] = "fail"
    truth["unparseable"] = True
    truth["corrupt_file"] = victim.name
    return truth


# --- corpus ------------------------------------------------------------------

def generate_corpus(
    out_root: Union[str, Path],
    *,
    clean: int = 20,
    defects: Optional[Mapping[str, int]] = None,
    seed: int = 0,
    geometry: Optional[SynthGeometry] = None,
    defect_params: Optional[Mapping[str, Mapping]] = None,
) -> list[dict]:
    """Generate a labeled corpus: ``clean`` clean series plus the given
    number of series per defect kind.  Returns all truth records."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    defects = dict(defects or {})
    defect_params = dict(defect_params or {})
    for kind in defects:
        if kind not in DEFECT_KINDS:
            raise IncompatibleDefect(f"unknown defect kind {kind!r}")

    rng = random.Random(seed)
    plan: list[Optional[str]] = [None] * clean
    for kind in sorted(defects):
        plan.extend([kind] * defects[kind])

    truths = []
    for idx, kind in enumerate(plan):
        scan_seed = rng.randrange(2**31)
        label = kind or "clean"
        scan_id = f"scan_{idx:04d}_{label}"
        series_dir = out_root / scan_id
        truth = generate_series(series_dir, geometry=geometry, seed=scan_seed)
        if kind is not None:
            spec = DefectSpec(
                kind=kind, params=defect_params.get(kind, {}), seed=scan_seed ^ 0x5EED
            )
            truth = inject_defect(series_dir, spec)
        truths.append(truth)
    return truths
