"""Volume assembly and affine-level QA.

A :class:`Volume` is a 3-D HU array plus a 4x4 affine mapping voxel
indices to world millimeters.  Assembly converts a DICOM series into the
NIfTI-style convention used by the common converter tools: the DICOM
patient axes are mapped so that a routine supine axial chest series ends
up with diagonal signs (-, +, +), which is what the orientation check
expects of a standard volume.

Reorientation is pure axis bookkeeping (permutations and flips).  Oblique
acquisitions are refused rather than resampled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dicom import PixelSlab
from .errors import (
    EmptyMask,
    InconsistentPixelSpacing,
    ObliqueAffine,
    ShapeMismatch,
)
from .series import (
    CHECK_ORIENTATION,
    CHECK_RESOLUTION,
    QaFinding,
    QaThresholds,
    SeriesManifest,
)

# Off-diagonal magnitude below this fraction of the column norm counts as
# axis-aligned.
ALIGNMENT_TOL = 1e-3

STANDARD_SIGNS = (-1, 1, 1)


@dataclass
class Volume:
    """3-D HU volume with world affine and light provenance."""

    voxels: np.ndarray           # shape (nx, ny, nz)
    affine: np.ndarray           # 4x4 float64, bottom row [0,0,0,1]
    series_uid: str = ""
    history: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3:
            raise ValueError(f"voxels must be 3-D, got shape {self.voxels.shape}")
        self.affine = np.asarray(self.affine, dtype=np.float64)
        if self.affine.shape != (4, 4):
            raise ValueError(f"affine must be 4x4, got {self.affine.shape}")
        if not np.array_equal(self.affine[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError(f"affine bottom row must be [0,0,0,1], got {self.affine[3]}")
        if abs(np.linalg.det(self.affine[:3, :3])) <= 0.0:
            raise ValueError("affine upper 3x3 is singular")
        if not np.all(np.isfinite(self.voxels)):
            raise ValueError("voxels contain non-finite HU values")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape  # type: ignore[return-value]

    @property
    def voxel_sizes(self) -> np.ndarray:
        """Column norms of the affine, one per voxel axis."""
        return np.linalg.norm(self.affine[:3, :3], axis=0)

    def world(self, index: Sequence[float]) -> np.ndarray:
        """World position (mm) of a voxel index."""
        i, j, k = index
        return self.affine @ np.array([i, j, k, 1.0])


@dataclass
class LungMask:
    occupancy: np.ndarray  # bool, dims match source volume
    component_count: int

    def __post_init__(self) -> None:
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if self.occupancy.ndim != 3:
            raise ValueError("mask must be 3-D")

    @property
    def voxel_count(self) -> int:
        return int(self.occupancy.sum())


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero-length direction vector")
    return v / n


def assemble_volume(manifest: SeriesManifest, slabs: Sequence[PixelSlab]) -> Volume:
    """Stack decoded slices into a world-referenced volume.

    Slices are ordered by ascending position along the slice axis (input
    order does not matter).  The affine maps voxel (i, j, k) to world mm
    in the converter-tool convention: DICOM patient x/y are negated and
    the pixel-row axis is flipped, so a standard axial series comes out
    with diagonal signs (-, +, +).

    Callers should have passed the completeness/uniqueness checks first;
    duplicated positions make the stacking order meaningless.

    Raises:
        ShapeMismatch: slab count or slab shapes disagree with manifest.
        InconsistentPixelSpacing: in-plane spacing drifts > 1e-3 mm.
    """
    headers = manifest.slices
    if len(slabs) != len(headers):
        raise ShapeMismatch(f"{len(headers)} headers but {len(slabs)} pixel slabs")
    rows, cols = headers[0].rows, headers[0].columns
    for idx, (h, slab) in enumerate(zip(headers, slabs)):
        if (h.rows, h.columns) != (rows, cols):
            raise ShapeMismatch(
                f"slice {idx}: {h.rows}x{h.columns} differs from {rows}x{cols}"
            )
        if slab.values.shape != (rows, cols):
            raise ShapeMismatch(
                f"slice {idx}: slab shape {slab.values.shape} differs from header"
            )
    spacing0 = np.array(headers[0].pixel_spacing)
    for idx, h in enumerate(headers):
        if np.any(np.abs(np.array(h.pixel_spacing) - spacing0) > 1e-3):
            raise InconsistentPixelSpacing(
                f"slice {idx} spacing {h.pixel_spacing} vs {tuple(spacing0)}"
            )

    row_spacing, col_spacing = float(spacing0[0]), float(spacing0[1])
    ori = headers[0].image_orientation
    if ori is not None:
        row_dir = _unit(np.array(ori[0:3], dtype=np.float64))  # along increasing column
        col_dir = _unit(np.array(ori[3:6], dtype=np.float64))  # along increasing row
    else:
        row_dir = np.array([1.0, 0.0, 0.0])
        col_dir = np.array([0.0, 1.0, 0.0])
    normal = np.cross(row_dir, col_dir)

    # Per-slice world positions (DICOM LPS).  Fall back to locations along
    # the normal when ImagePositionPatient is absent.
    if all(h.image_position is not None for h in headers):
        positions = np.array([h.image_position for h in headers], dtype=np.float64)
    else:
        positions = np.array([loc * normal for loc in manifest.locations])

    along = positions @ normal
    order = np.argsort(along, kind="stable")
    positions = positions[order]

    stacked = np.stack([slabs[i].values for i in order], axis=-1)  # (rows, cols, nz)
    voxels = np.transpose(stacked, (1, 0, 2))  # (i=col, j=row, k=slice)

    if len(headers) > 1:
        step = np.mean(np.diff(positions, axis=0), axis=0)
    else:
        thickness = headers[0].slice_thickness or 1.0
        step = normal * thickness

    lps = np.eye(4)
    lps[:3, 0] = row_dir * col_spacing
    lps[:3, 1] = col_dir * row_spacing
    lps[:3, 2] = step
    lps[:3, 3] = positions[0]

    # DICOM LPS -> NIfTI-style world (negate x and y) ...
    affine = np.diag([-1.0, -1.0, 1.0, 1.0]) @ lps
    # ... and flip the pixel-row axis so standard axial scans are standard.
    ny = voxels.shape[1]
    voxels = voxels[:, ::-1, :]
    affine[:3, 3] += affine[:3, 1] * (ny - 1)
    affine[:3, 1] *= -1.0

    return Volume(
        voxels=np.ascontiguousarray(voxels),
        affine=affine,
        series_uid=manifest.series_uid,
        history=("assembled",),
    )


def orientation_axes(affine: np.ndarray) -> Optional[list[tuple[int, int]]]:
    """Dominant world axis and sign for each voxel axis.

    Returns ``[(world_axis, sign), ...]`` per voxel axis, or ``None``
    when any column is oblique (off-dominant component >= tolerance) or
    two columns share a world axis.
    """
    m = np.asarray(affine, dtype=np.float64)[:3, :3]
    axes: list[tuple[int, int]] = []
    for k in range(3):
        col = m[:, k]
        norm = np.linalg.norm(col)
        if norm == 0:
            return None
        dom = int(np.argmax(np.abs(col)))
        off = np.delete(np.abs(col), dom)
        if np.any(off >= ALIGNMENT_TOL * norm):
            return None
        axes.append((dom, 1 if col[dom] > 0 else -1))
    if {a for a, _ in axes} != {0, 1, 2}:
        return None
    return axes


def check_orientation(affine: np.ndarray) -> QaFinding:
    """Standard-orientation indicator.

    Standard means axis-aligned with no permutation and diagonal signs
    (-, +, +); the indicator is 1 for standard, 0 otherwise.  Oblique
    affines fail with detail "oblique".
    """
    axes = orientation_axes(affine)
    if axes is None:
        return QaFinding(
            check_id=CHECK_ORIENTATION, value=0, passed=False, detail="oblique"
        )
    standard = all(dom == k for k, (dom, _) in enumerate(axes)) and tuple(
        sign for _, sign in axes
    ) == STANDARD_SIGNS
    detail = ""
    if not standard:
        got = "".join(
            ("-" if sign < 0 else "+") + "xyz"[dom] for dom, sign in axes
        )
        detail = f"axis pattern {got}, expected -x+y+z"
    return QaFinding(
        check_id=CHECK_ORIENTATION,
        value=1 if standard else 0,
        passed=standard,
        detail=detail,
    )


def reorient_to_standard(volume: Volume) -> Volume:
    """Permute/flip axes until :func:`check_orientation` passes.

    World coordinates of every voxel are preserved exactly (index
    bookkeeping only; no resampling).  Already-standard volumes are
    returned as-is.  Idempotent.

    Raises:
        ObliqueAffine: when no permutation/flip can align the affine.
    """
    axes = orientation_axes(volume.affine)
    if axes is None:
        raise ObliqueAffine("affine is not axis-aligned within tolerance; will not resample")
    if all(dom == k for k, (dom, _) in enumerate(axes)) and tuple(
        s for _, s in axes
    ) == STANDARD_SIGNS:
        return volume

    # Put the voxel axis whose dominant world axis is w into slot w.
    perm = [0, 0, 0]
    for k, (dom, _) in enumerate(axes):
        perm[dom] = k
    voxels = np.transpose(volume.voxels, perm)
    affine = volume.affine.copy()
    affine[:, :3] = affine[:, perm]

    for w, want in enumerate(STANDARD_SIGNS):
        have = 1 if affine[w, w] > 0 else -1
        if have != want:
            n = voxels.shape[w]
            voxels = np.flip(voxels, axis=w)
            affine[:3, 3] += affine[:3, w] * (n - 1)
            affine[:3, w] *= -1.0

    return Volume(
        voxels=np.ascontiguousarray(voxels),
        affine=affine,
        series_uid=volume.series_uid,
        history=volume.history + ("reoriented",),
    )


def check_resolution(affine: np.ndarray, thresholds: QaThresholds) -> QaFinding:
    """Count world axes whose voxel size exceeds the per-axis cap.

    Sizes are affine column norms mapped to world axes when the affine is
    axis-aligned (so permuted volumes are judged against the right caps);
    oblique affines fall back to column order.  Comparison is strict:
    a size exactly equal to its cap passes.
    """
    m = np.asarray(affine, dtype=np.float64)
    norms = np.linalg.norm(m[:3, :3], axis=0)
    axes = orientation_axes(m)
    sizes = [0.0, 0.0, 0.0]
    if axes is None:
        sizes = list(norms)
    else:
        for k, (dom, _) in enumerate(axes):
            sizes[dom] = float(norms[k])
    over = [
        f"{'xyz'[i]}={sizes[i]:.4g}mm>{thresholds.phi[i]:.4g}mm"
        for i in range(3)
        if sizes[i] > thresholds.phi[i]
    ]
    return QaFinding(
        check_id=CHECK_RESOLUTION,
        value=len(over),
        passed=not over,
        detail="; ".join(over),
    )


def crop_roi(volume: Volume, mask: LungMask, margin_fraction: float) -> Volume:
    """Crop to the mask bounding box plus a fractional margin.

    Per axis: pad = floor(margin_fraction * (hi - lo) + 0.5), applied to
    both sides and clamped to the volume.  The affine origin is shifted
    so retained voxels keep their world coordinates.

    Raises:
        EmptyMask: mask has no voxels.
        ValueError: margin outside [0, 0.5] or dims mismatch.
    """
    if not 0.0 <= margin_fraction <= 0.5:
        raise ValueError(f"margin_fraction must be in [0, 0.5], got {margin_fraction}")
    occ = mask.occupancy
    if occ.shape != volume.voxels.shape:
        raise ValueError(f"mask dims {occ.shape} do not match volume {volume.voxels.shape}")
    if not occ.any():
        raise EmptyMask("cannot crop to an empty mask")

    lo = []
    hi = []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        filled = np.where(occ.any(axis=other))[0]
        lo.append(int(filled[0]))
        hi.append(int(filled[-1]))

    starts = []
    stops = []
    for axis in range(3):
        extent = hi[axis] - lo[axis]
        pad = int(np.floor(margin_fraction * extent + 0.5))
        starts.append(max(0, lo[axis] - pad))
        stops.append(min(volume.voxels.shape[axis] - 1, hi[axis] + pad))

    sub = volume.voxels[
        starts[0]:stops[0] + 1, starts[1]:stops[1] + 1, starts[2]:stops[2] + 1
    ]
    affine = volume.affine.copy()
    affine[:3, 3] = affine[:3, 3] + affine[:3, :3] @ np.array(starts, dtype=np.float64)
    return Volume(
        voxels=np.ascontiguousarray(sub),
        affine=affine,
        series_uid=volume.series_uid,
        history=volume.history + ("cropped",),
    )
