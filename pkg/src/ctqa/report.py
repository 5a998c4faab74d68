"""Corpus-level aggregation of findings and review verdicts.

Produces the three report surfaces: a machine-readable report.json, the
rate table CSV (per-check failure percentages in three sections), and a
per-scan CSV.  Dispositions merge objective findings, auto-fixes and
human verdicts through a small fixed rule table; a reviewer fail always
wins, a reviewer pass clears warn/needs-review states but never a hard
objective failure.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .errors import DuplicateScanId, IoFailure
from .series import (
    ALL_CHECKS,
    CHECK_ORIENTATION,
    CHECK_SUBJECTIVE,
    DICOM_CHECKS,
    VOLUME_CHECKS,
    QaFinding,
    QaThresholds,
    not_applicable,
)

DISPOSITION_PASS = "pass"
DISPOSITION_WARN = "warn"
DISPOSITION_NEEDS_REVIEW = "needs-review"
DISPOSITION_FAIL = "fail"

VERDICT_VALUES = ("pass", "fail", "flag")

_SECTIONS = (
    ("Objective QA (DICOM)", DICOM_CHECKS),
    ("Objective QA (NIfTI)", VOLUME_CHECKS),
    ("Subjective QA (batch)", (CHECK_SUBJECTIVE,)),
)


@dataclass(frozen=True)
class ReviewVerdict:
    """One reviewer decision for one scan."""

    scan_id: str
    verdict: str
    note: str = ""
    reviewer: str = ""
    timestamp: str = ""

    def __post_init__(self) -> None:
        if self.verdict not in VERDICT_VALUES:
            raise ValueError(f"verdict must be one of {VERDICT_VALUES}, got {self.verdict!r}")

    def to_dict(self) -> dict:
        return {
            "scan_id": self.scan_id,
            "verdict": self.verdict,
            "note": self.note,
            "reviewer": self.reviewer,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ReviewVerdict":
        return cls(
            scan_id=str(d["scan_id"]),
            verdict=str(d["verdict"]),
            note=str(d.get("note", "")),
            reviewer=str(d.get("reviewer", "")),
            timestamp=str(d.get("timestamp", "")),
        )


@dataclass
class ScanResult:
    """Everything the pipeline learned about one scan."""

    scan_id: str
    findings: list[QaFinding] = field(default_factory=list)
    error: Optional[str] = None
    warnings: tuple[str, ...] = ()
    reoriented: bool = False
    fov_mm: Optional[float] = None
    z_spacing_mm: Optional[float] = None
    montage: Optional[str] = None
    nifti: Optional[str] = None
    cropped: Optional[str] = None


@dataclass
class ScanRecord:
    """A scan result joined with its verdict and final disposition."""

    result: ScanResult
    verdict: Optional[ReviewVerdict]
    sampled: bool
    disposition: str

    @property
    def scan_id(self) -> str:
        return self.result.scan_id


@dataclass
class DistributionSummary:
    """Histograms of axial FOV and z-spacing across the corpus."""

    fov_bin_mm: float
    spacing_bin_mm: float
    fov_bins: list[tuple[float, int]]
    spacing_bins: list[tuple[float, int]]
    fov_missing: int
    spacing_missing: int


@dataclass
class QaReport:
    corpus_id: str
    generated_at: str
    thresholds: QaThresholds
    records: list[ScanRecord]
    rate_table: dict
    distributions: Optional[DistributionSummary]
    review_sample_size: int = 0
    review_seed: int = 0
    sampled_ids: tuple[str, ...] = ()

    @property
    def failed_scan_count(self) -> int:
        return sum(1 for r in self.records if r.disposition == DISPOSITION_FAIL)


def _finding_to_dict(f: QaFinding) -> dict:
    value = f.value
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    return {
        "check": f.check_id,
        "value": value,
        "passed": f.passed,
        "applicable": f.applicable,
        "detail": f.detail,
    }


def _finding_from_dict(d: Mapping) -> QaFinding:
    return QaFinding(
        check_id=str(d["check"]),
        value=d.get("value"),
        passed=bool(d["passed"]),
        detail=str(d.get("detail", "")),
        applicable=bool(d.get("applicable", True)),
    )


def finding_status(finding: QaFinding, *, reoriented: bool = False) -> str:
    """Badge state for one finding: pass / fail / warn / na."""
    if not finding.applicable:
        return "na"
    if finding.passed:
        return "pass"
    if finding.check_id == CHECK_ORIENTATION and reoriented:
        return "warn"
    return "fail"


def latest_verdicts(verdicts: Iterable[ReviewVerdict]) -> dict[str, ReviewVerdict]:
    """Resolve a verdict log to one verdict per scan: latest timestamp
    wins, later log position breaking ties."""
    chosen: dict[str, ReviewVerdict] = {}
    for v in verdicts:
        held = chosen.get(v.scan_id)
        if held is None or v.timestamp >= held.timestamp:
            chosen[v.scan_id] = v
    return chosen


def _disposition(result: ScanResult, verdict: Optional[ReviewVerdict], sampled: bool) -> str:
    if verdict is not None and verdict.verdict == "fail":
        return DISPOSITION_FAIL
    if result.error:
        return DISPOSITION_FAIL
    hard_fail = any(
        f.failed and not (f.check_id == CHECK_ORIENTATION and result.reoriented)
        for f in result.findings
    )
    if hard_fail:
        return DISPOSITION_FAIL
    if verdict is not None:
        return DISPOSITION_WARN if verdict.verdict == "flag" else DISPOSITION_PASS
    if result.reoriented:
        return DISPOSITION_WARN
    if sampled:
        return DISPOSITION_NEEDS_REVIEW
    return DISPOSITION_PASS


def _subjective_finding(verdict: Optional[ReviewVerdict]) -> QaFinding:
    if verdict is None:
        return not_applicable(CHECK_SUBJECTIVE, "not reviewed")
    failed = verdict.verdict == "fail"
    detail = f"reviewer verdict: {verdict.verdict}"
    return QaFinding(
        check_id=CHECK_SUBJECTIVE,
        value=1 if failed else 0,
        passed=not failed,
        detail=detail,
    )


def aggregate(
    results: Sequence[ScanResult],
    verdicts: Iterable[ReviewVerdict] = (),
    *,
    corpus_id: str = "",
    thresholds: Optional[QaThresholds] = None,
    generated_at: str = "",
    sampled_ids: Sequence[str] = (),
    review_sample_size: int = 0,
    review_seed: int = 0,
    distributions: Optional[DistributionSummary] = None,
) -> QaReport:
    """Join per-scan results with verdicts into the corpus report.

    Deterministic: records come out sorted by scan_id and the outcome
    does not depend on input order.

    Raises:
        DuplicateScanId: two results share a scan_id.
    """
    seen = set()
    for r in results:
        if r.scan_id in seen:
            raise DuplicateScanId(r.scan_id)
        seen.add(r.scan_id)

    chosen = latest_verdicts(verdicts)
    sampled = set(sampled_ids)

    records = []
    for result in sorted(results, key=lambda r: r.scan_id):
        verdict = chosen.get(result.scan_id)
        records.append(
            ScanRecord(
                result=result,
                verdict=verdict,
                sampled=result.scan_id in sampled,
                disposition=_disposition(result, verdict, result.scan_id in sampled),
            )
        )

    rate_table = _rate_table(records)
    return QaReport(
        corpus_id=corpus_id,
        generated_at=generated_at,
        thresholds=thresholds or QaThresholds(),
        records=records,
        rate_table=rate_table,
        distributions=distributions,
        review_sample_size=review_sample_size,
        review_seed=review_seed,
        sampled_ids=tuple(sorted(sampled)),
    )


def _rate_table(records: Sequence[ScanRecord]) -> dict:
    table = {}
    for check in ALL_CHECKS:
        applicable = 0
        failed = 0
        for rec in records:
            if check == CHECK_SUBJECTIVE:
                finding = _subjective_finding(rec.verdict)
            else:
                finding = next(
                    (f for f in rec.result.findings if f.check_id == check), None
                )
                if finding is None:
                    continue
            if not finding.applicable:
                continue
            applicable += 1
            if not finding.passed:
                failed += 1
        table[check] = {
            "failed": failed,
            "applicable": applicable,
            "rate": (failed / applicable) if applicable else None,
        }
    return table


def summarize_distributions(
    quantities: Iterable[tuple[Optional[float], Optional[float]]],
    *,
    fov_bin_mm: float = 10.0,
    spacing_bin_mm: float = 0.25,
) -> DistributionSummary:
    """Histogram (FOV, z-spacing) pairs; missing values are counted, not binned.

    Bins are [n*width, (n+1)*width) half-open intervals.
    """
    fov_counts: dict[float, int] = {}
    spacing_counts: dict[float, int] = {}
    fov_missing = 0
    spacing_missing = 0
    for fov, spacing in quantities:
        if fov is None:
            fov_missing += 1
        else:
            lo = math.floor(fov / fov_bin_mm) * fov_bin_mm
            fov_counts[lo] = fov_counts.get(lo, 0) + 1
        if spacing is None:
            spacing_missing += 1
        else:
            lo = math.floor(spacing / spacing_bin_mm) * spacing_bin_mm
            spacing_counts[lo] = spacing_counts.get(lo, 0) + 1
    return DistributionSummary(
        fov_bin_mm=fov_bin_mm,
        spacing_bin_mm=spacing_bin_mm,
        fov_bins=sorted(fov_counts.items()),
        spacing_bins=sorted(spacing_counts.items()),
        fov_missing=fov_missing,
        spacing_missing=spacing_missing,
    )


def format_rate(fraction: Optional[float]) -> str:
    """Format a failure fraction as a percentage with two significant
    figures: 0.004 -> "0.40%", 0.039 -> "3.9%", None -> "n/a"."""
    if fraction is None:
        return "n/a"
    pct = fraction * 100.0
    if pct == 0:
        return "0.00%"
    decimals = max(0, 1 - math.floor(math.log10(abs(pct))))
    return f"{pct:.{decimals}f}%"


def report_to_dict(report: QaReport) -> dict:
    """Canonical dict form of a report (stable across runs)."""
    records = []
    for rec in report.records:
        result = rec.result
        records.append(
            {
                "scan_id": result.scan_id,
                "findings": [_finding_to_dict(f) for f in result.findings],
                "subjective": _finding_to_dict(_subjective_finding(rec.verdict)),
                "verdict": rec.verdict.to_dict() if rec.verdict else None,
                "disposition": rec.disposition,
                "sampled": rec.sampled,
                "error": result.error,
                "warnings": list(result.warnings),
                "reoriented": result.reoriented,
                "fov_mm": result.fov_mm,
                "z_spacing_mm": result.z_spacing_mm,
                "montage": result.montage,
                "nifti": result.nifti,
                "cropped": result.cropped,
            }
        )
    thresholds = report.thresholds
    dist = None
    if report.distributions is not None:
        d = report.distributions
        dist = {
            "fov_bin_mm": d.fov_bin_mm,
            "spacing_bin_mm": d.spacing_bin_mm,
            "fov_bins": [[lo, count] for lo, count in d.fov_bins],
            "spacing_bins": [[lo, count] for lo, count in d.spacing_bins],
            "fov_missing": d.fov_missing,
            "spacing_missing": d.spacing_missing,
        }
    return {
        "corpus_id": report.corpus_id,
        "generated_at": report.generated_at,
        "thresholds": {
            "epsilon": thresholds.epsilon,
            "delta": thresholds.delta,
            "sigma1": thresholds.sigma1,
            "sigma2": thresholds.sigma2,
            "phi": list(thresholds.phi),
        },
        "review": {
            "sample_size": report.review_sample_size,
            "seed": report.review_seed,
            "sampled_ids": list(report.sampled_ids),
        },
        "rate_table": report.rate_table,
        "scan_count": len(report.records),
        "failed_scan_count": report.failed_scan_count,
        "records": records,
        "distributions": dist,
    }


def report_from_dict(data: Mapping) -> QaReport:
    """Inverse of :func:`report_to_dict`."""
    th = data.get("thresholds", {})
    thresholds = QaThresholds(
        epsilon=th.get("epsilon"),
        delta=int(th.get("delta", 50)),
        sigma1=float(th.get("sigma1", 200.0)),
        sigma2=float(th.get("sigma2", 500.0)),
        phi=tuple(th.get("phi", (1.0, 1.0, 5.0))),
    )
    records = []
    for rd in data.get("records", []):
        result = ScanResult(
            scan_id=str(rd["scan_id"]),
            findings=[_finding_from_dict(f) for f in rd.get("findings", [])],
            error=rd.get("error"),
            warnings=tuple(rd.get("warnings", [])),
            reoriented=bool(rd.get("reoriented", False)),
            fov_mm=rd.get("fov_mm"),
            z_spacing_mm=rd.get("z_spacing_mm"),
            montage=rd.get("montage"),
            nifti=rd.get("nifti"),
            cropped=rd.get("cropped"),
        )
        verdict = ReviewVerdict.from_dict(rd["verdict"]) if rd.get("verdict") else None
        records.append(
            ScanRecord(
                result=result,
                verdict=verdict,
                sampled=bool(rd.get("sampled", False)),
                disposition=str(rd["disposition"]),
            )
        )
    dist = None
    dd = data.get("distributions")
    if dd:
        dist = DistributionSummary(
            fov_bin_mm=float(dd["fov_bin_mm"]),
            spacing_bin_mm=float(dd["spacing_bin_mm"]),
            fov_bins=[(float(lo), int(c)) for lo, c in dd.get("fov_bins", [])],
            spacing_bins=[(float(lo), int(c)) for lo, c in dd.get("spacing_bins", [])],
            fov_missing=int(dd.get("fov_missing", 0)),
            spacing_missing=int(dd.get("spacing_missing", 0)),
        )
    review = data.get("review", {})
    return QaReport(
        corpus_id=str(data.get("corpus_id", "")),
        generated_at=str(data.get("generated_at", "")),
        thresholds=thresholds,
        records=records,
        rate_table=dict(data.get("rate_table", {})),
        distributions=dist,
        review_sample_size=int(review.get("sample_size", 0)),
        review_seed=int(review.get("seed", 0)),
        sampled_ids=tuple(review.get("sampled_ids", [])),
    )


def render_report_json(report: QaReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"


def render_rates_csv(report: QaReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["section", "check", "failed", "applicable", "rate"])
    for section, checks in _SECTIONS:
        for check in checks:
            entry = report.rate_table.get(check, {})
            writer.writerow(
                [
                    section,
                    check,
                    entry.get("failed", 0),
                    entry.get("applicable", 0),
                    format_rate(entry.get("rate")),
                ]
            )
    return buf.getvalue()


def render_scans_csv(report: QaReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["scan_id"]
    for check in ALL_CHECKS:
        header += [f"{check}_value", f"{check}_status"]
    header += ["disposition", "reoriented", "fov_mm", "z_spacing_mm", "error"]
    writer.writerow(header)
    for rec in report.records:
        row = [rec.scan_id]
        by_check = {f.check_id: f for f in rec.result.findings}
        by_check[CHECK_SUBJECTIVE] = _subjective_finding(rec.verdict)
        for check in ALL_CHECKS:
            finding = by_check.get(check)
            if finding is None:
                row += ["", "na"]
                continue
            value = "" if finding.value is None else finding.value
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            row += [value, finding_status(finding, reoriented=rec.result.reoriented)]
        row += [
            rec.disposition,
            int(rec.result.reoriented),
            "" if rec.result.fov_mm is None else f"{rec.result.fov_mm:.3f}",
            "" if rec.result.z_spacing_mm is None else f"{rec.result.z_spacing_mm:.3f}",
            rec.result.error or "",
        ]
        writer.writerow(row)
    return buf.getvalue()


def _render_hist_csv(bins: Sequence[tuple[float, int]], width: float) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bin_start_mm", "bin_end_mm", "count"])
    for lo, count in bins:
        writer.writerow([f"{lo:.3f}", f"{lo + width:.3f}", count])
    return buf.getvalue()


def export(report: QaReport, out_dir: Union[str, Path]) -> dict[str, Path]:
    """Write report.json, rates.csv, scans.csv and histogram CSVs.

    Re-exporting a report parsed back from report.json reproduces the
    same bytes.

    Raises:
        IoFailure: the directory or a file could not be written.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        paths["report.json"] = out / "report.json"
        paths["report.json"].write_text(render_report_json(report), encoding="utf-8")
        paths["rates.csv"] = out / "rates.csv"
        paths["rates.csv"].write_text(render_rates_csv(report), encoding="utf-8")
        paths["scans.csv"] = out / "scans.csv"
        paths["scans.csv"].write_text(render_scans_csv(report), encoding="utf-8")
        if report.distributions is not None:
            d = report.distributions
            paths["fov_hist.csv"] = out / "fov_hist.csv"
            paths["fov_hist.csv"].write_text(
                _render_hist_csv(d.fov_bins, d.fov_bin_mm), encoding="utf-8"
            )
            paths["spacing_hist.csv"] = out / "spacing_hist.csv"
            paths["spacing_hist.csv"].write_text(
                _render_hist_csv(d.spacing_bins, d.spacing_bin_mm), encoding="utf-8"
            )
        return paths
    except OSError as exc:
        raise IoFailure(f"writing report files under {out}: {exc}") from exc
