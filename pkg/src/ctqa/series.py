"""Series-level structural QA on DICOM headers.

Five checks run straight off the slice headers, before any volume is
assembled:

* instance-number completeness (missing slices),
* instance-number uniqueness (duplicated slices),
* inter-slice distance regularity (jump-backs, gaps, drift),
* minimum slice count,
* physical scan length along the slice axis.

Distances are evaluated in instance-number order on purpose: a chunk of
slices re-appended at the end of a scan shows up as a negative jump that
position-sorted data would hide.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .dicom import SliceHeader
from .errors import EmptySeries, MixedSeries, NoGeometry

CHECK_MISSING = "C1"
CHECK_DUPLICATE = "C2"
CHECK_DISTANCE = "C3"
CHECK_FEW_SLICES = "C4"
CHECK_LENGTH = "C5"
CHECK_ORIENTATION = "C6"
CHECK_RESOLUTION = "C7"
CHECK_SUBJECTIVE = "SUBJ"

DICOM_CHECKS = (CHECK_MISSING, CHECK_DUPLICATE, CHECK_DISTANCE, CHECK_FEW_SLICES, CHECK_LENGTH)
VOLUME_CHECKS = (CHECK_ORIENTATION, CHECK_RESOLUTION)
ALL_CHECKS = DICOM_CHECKS + VOLUME_CHECKS + (CHECK_SUBJECTIVE,)


@dataclass(frozen=True)
class QaThresholds:
    """Tunable limits for the structural checks.

    ``epsilon`` is the distance tolerance in mm; leave it ``None`` to use
    0.1 x the modal spacing of each series.  ``delta`` is the minimum
    usable slice count.  ``sigma1``/``sigma2`` bound the plausible scan
    length in mm.  ``phi`` caps voxel size per world axis in mm.
    """

    epsilon: Optional[float] = None
    delta: int = 50
    sigma1: float = 200.0
    sigma2: float = 500.0
    phi: tuple[float, float, float] = (1.0, 1.0, 5.0)

    def __post_init__(self) -> None:
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.delta < 1:
            raise ValueError(f"delta must be >= 1, got {self.delta}")
        if not 0 < self.sigma1 < self.sigma2:
            raise ValueError(f"need 0 < sigma1 < sigma2, got {self.sigma1}, {self.sigma2}")
        if any(not p > 0 for p in self.phi):
            raise ValueError(f"phi entries must be positive, got {self.phi}")

    def resolve_epsilon(self, modal_spacing: float) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return 0.1 * modal_spacing


@dataclass(frozen=True)
class QaFinding:
    """Outcome of one check on one scan.

    ``value`` is the raw check statistic (count or 0/1 indicator); it is
    ``None`` when the check could not be evaluated, in which case
    ``applicable`` is False and ``passed`` is True so that skipped checks
    never fail a scan but also never enter rate denominators.
    """

    check_id: str
    value: Optional[float]
    passed: bool
    detail: str = ""
    applicable: bool = True

    @property
    def failed(self) -> bool:
        return self.applicable and not self.passed


def not_applicable(check_id: str, detail: str) -> QaFinding:
    return QaFinding(check_id=check_id, value=None, passed=True, detail=detail, applicable=False)


@dataclass(frozen=True)
class SeriesManifest:
    """Ordered view of one series, ready for the checks.

    Slices are sorted by instance number ascending, ties kept in input
    order.  ``locations`` holds one scalar position per slice along the
    slice axis; ``slice_distances[i]`` = locations[i+1] - locations[i].
    """

    series_uid: str
    slices: tuple[SliceHeader, ...]
    instance_numbers: tuple[int, ...]
    locations: tuple[float, ...]
    slice_distances: tuple[float, ...]
    modal_spacing: float
    physical_length: float
    location_source: str = field(default="slice_location")

    @property
    def slice_count(self) -> int:
        return len(self.slices)


def _slice_normal(header: SliceHeader) -> tuple[float, float, float]:
    ori = header.image_orientation
    if ori is None:
        return (0.0, 0.0, 1.0)
    rx, ry, rz, cx, cy, cz = ori
    return (ry * cz - rz * cy, rz * cx - rx * cz, rx * cy - ry * cx)


def modal_spacing_of(distances: Sequence[float]) -> float:
    """Most frequent |distance|, voting on values rounded to 1e-3 mm.

    Returns the smallest raw member of the winning bucket (not the
    rounded key), so a uniformly spaced series reports its exact step.
    Ties between buckets take the smaller spacing.  0.0 when there are
    no distances.
    """
    if not distances:
        return 0.0
    buckets: dict[float, list[float]] = {}
    for d in distances:
        buckets.setdefault(round(abs(d), 3), []).append(abs(d))
    key = max(buckets, key=lambda k: (len(buckets[k]), -k))
    return min(buckets[key])


def build_manifest(headers: Sequence[SliceHeader]) -> SeriesManifest:
    """Sort headers into a series manifest.

    Raises:
        EmptySeries: headers is empty.
        MixedSeries: more than one series UID present.
        NoGeometry: no consistent location source across all slices.
    """
    if not headers:
        raise EmptySeries("no slices supplied")
    uids = {h.series_uid for h in headers}
    if len(uids) > 1:
        raise MixedSeries(f"slices span {len(uids)} series: {sorted(uids)}")

    ordered = tuple(sorted(headers, key=lambda h: h.instance_number))

    if all(h.slice_location is not None for h in ordered):
        locations = tuple(float(h.slice_location) for h in ordered)
        source = "slice_location"
    elif all(h.image_position is not None for h in ordered):
        locations = tuple(
            float(sum(p * n for p, n in zip(h.image_position, _slice_normal(h))))
            for h in ordered
        )
        source = "image_position"
    else:
        raise NoGeometry(
            "no location source shared by every slice "
            "(need SliceLocation on all, or ImagePositionPatient on all)"
        )

    distances = tuple(locations[i + 1] - locations[i] for i in range(len(locations) - 1))
    modal = modal_spacing_of(distances)
    length = max(locations) - min(locations) if locations else 0.0

    return SeriesManifest(
        series_uid=ordered[0].series_uid,
        slices=ordered,
        instance_numbers=tuple(h.instance_number for h in ordered),
        locations=locations,
        slice_distances=distances,
        modal_spacing=modal,
        physical_length=length,
        location_source=source,
    )


def check_instance_numbers(manifest: SeriesManifest) -> tuple[QaFinding, QaFinding]:
    """Completeness and uniqueness of instance numbers.

    Completeness statistic: max - min + 1 - count.  Positive means gaps,
    negative means surplus (duplicates); anything nonzero fails.
    Uniqueness statistic: number of equal pairs; nonzero fails.
    """
    ins = manifest.instance_numbers
    lo, hi = min(ins), max(ins)
    span_minus_count = hi - lo + 1 - len(ins)

    counts = Counter(ins)
    missing = [n for n in range(lo, hi + 1) if n not in counts]
    dup_pairs = sum(c * (c - 1) // 2 for c in counts.values())
    duplicated = sorted(n for n, c in counts.items() if c > 1)

    detail_1 = ""
    if span_minus_count > 0:
        detail_1 = f"missing instance numbers: {_abbrev(missing)}"
    elif span_minus_count < 0:
        detail_1 = f"more slices than the instance-number span [{lo}, {hi}] admits"
    completeness = QaFinding(
        check_id=CHECK_MISSING,
        value=span_minus_count,
        passed=span_minus_count == 0,
        detail=detail_1,
    )
    uniqueness = QaFinding(
        check_id=CHECK_DUPLICATE,
        value=dup_pairs,
        passed=dup_pairs == 0,
        detail=f"duplicated instance numbers: {_abbrev(duplicated)}" if duplicated else "",
    )
    return completeness, uniqueness


def check_slice_distance(manifest: SeriesManifest, thresholds: QaThresholds) -> QaFinding:
    """Distance regularity in instance-number order.

    Counts distances below epsilon (duplicates, jump-backs) plus
    distances straying more than epsilon from the modal spacing (gaps,
    drift).  A single index can trip both terms and then counts twice.
    Not applicable with fewer than two slices.
    """
    if manifest.slice_count < 2:
        return not_applicable(CHECK_DISTANCE, "needs at least 2 slices")
    eps = thresholds.resolve_epsilon(manifest.modal_spacing)
    modal = manifest.modal_spacing
    below = [i for i, d in enumerate(manifest.slice_distances) if d < eps]
    off_modal = [
        i for i, d in enumerate(manifest.slice_distances) if abs(d - modal) > eps
    ]
    value = len(below) + len(off_modal)
    parts = []
    if below:
        parts.append(f"below epsilon at {_abbrev(below)}")
    if off_modal:
        parts.append(f"off modal spacing at {_abbrev(off_modal)}")
    detail = f"epsilon={eps:.4g}mm modal={modal:.4g}mm; " + "; ".join(parts) if parts else ""
    return QaFinding(
        check_id=CHECK_DISTANCE,
        value=value,
        passed=value == 0,
        detail=detail,
    )


def check_few_slices(manifest: SeriesManifest, thresholds: QaThresholds) -> QaFinding:
    """Flag scans shorter than the minimum usable slice count."""
    short = 1 if manifest.slice_count < thresholds.delta else 0
    return QaFinding(
        check_id=CHECK_FEW_SLICES,
        value=short,
        passed=short == 0,
        detail=f"{manifest.slice_count} slices < {thresholds.delta}" if short else "",
    )


def check_physical_length(manifest: SeriesManifest, thresholds: QaThresholds) -> QaFinding:
    """Scan length along the slice axis must sit inside (sigma1, sigma2).

    The indicator is 1 when the length is plausible; 0 fails.  Length is
    the spread of slice locations (center to center).
    """
    length = manifest.physical_length
    ok = 1 if thresholds.sigma1 < length < thresholds.sigma2 else 0
    return QaFinding(
        check_id=CHECK_LENGTH,
        value=ok,
        passed=ok == 1,
        detail=(
            f"length {length:.1f}mm outside ({thresholds.sigma1:.0f}, {thresholds.sigma2:.0f})mm"
            if not ok
            else ""
        ),
    )


def run_dicom_qa(
    manifest: SeriesManifest,
    thresholds: QaThresholds,
    *,
    enabled: Optional[Sequence[str]] = None,
) -> list[QaFinding]:
    """Run the five header-level checks in fixed order.

    ``enabled`` limits which checks actually run; the rest come back
    not-applicable so reports keep a stable shape.
    """
    on = set(DICOM_CHECKS if enabled is None else enabled)
    completeness, uniqueness = check_instance_numbers(manifest)
    findings = {
        CHECK_MISSING: completeness,
        CHECK_DUPLICATE: uniqueness,
        CHECK_DISTANCE: check_slice_distance(manifest, thresholds),
        CHECK_FEW_SLICES: check_few_slices(manifest, thresholds),
        CHECK_LENGTH: check_physical_length(manifest, thresholds),
    }
    out = []
    for check_id in DICOM_CHECKS:
        if check_id in on:
            out.append(findings[check_id])
        else:
            out.append(not_applicable(check_id, "disabled"))
    return out


def _abbrev(items: Sequence, limit: int = 8) -> str:
    shown = list(items[:limit])
    suffix = f" (+{len(items) - limit} more)" if len(items) > limit else ""
    return f"{shown}{suffix}"
