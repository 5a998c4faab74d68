"""Batch orchestration: discover series, run checks, convert, report.

One run walks an input tree, treats every leaf directory holding files
as a scan, runs the header checks, assembles volumes for structurally
sound scans, converts them to compressed NIfTI, optionally crops to the
lung region and renders review montages, then aggregates everything
into the report bundle.

Per-scan work is cached under ``<output>/cache`` keyed by a digest of
the input bytes and the effective configuration, so an interrupted run
resumes where it stopped and a repeated run is a no-op.  All outputs are
deterministic for a fixed configuration (pass ``generated_at`` to pin
the report timestamp).
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import hashlib
import json
import os
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence, Union

from . import gallery as gallery_mod
from . import lungseg, nifti, report, volume as volmod
from .dicom import parse_slice, decode_pixels
from .errors import (
    ConfigError,
    CtqaError,
    DegenerateDim,
    EmptyMask,
    ObliqueAffine,
)
from .report import ReviewVerdict, ScanResult, finding_status
from .series import (
    ALL_CHECKS,
    CHECK_DUPLICATE,
    CHECK_MISSING,
    CHECK_ORIENTATION,
    CHECK_RESOLUTION,
    DICOM_CHECKS,
    VOLUME_CHECKS,
    QaThresholds,
    build_manifest,
    not_applicable,
    run_dicom_qa,
)

SESSION_POLICIES = ("largest", "all")

# A scan only assembles when these header checks pass; stacking slices
# with missing or duplicated instance numbers would fabricate geometry.
# Irregular spacing, short or over-long series still assemble fine (the
# volume keeps whatever geometry the headers describe).
ASSEMBLY_GATE = (CHECK_MISSING, CHECK_DUPLICATE)


@dataclass
class PipelineConfig:
    input_dir: Path
    output_dir: Path
    thresholds: QaThresholds = field(default_factory=QaThresholds)
    checks: tuple[str, ...] = DICOM_CHECKS + VOLUME_CHECKS
    convert: bool = True
    force_assemble: bool = False
    crop: bool = True
    gallery: bool = True
    auto_reorient: bool = True
    session_policy: str = "largest"
    review_sample: int = 0
    seed: int = 0
    workers: int = 0  # 0 = one per logical core
    hu_threshold: float = lungseg.DEFAULT_HU_THRESHOLD
    margin_fraction: float = 0.10
    dilation_vox: int = lungseg.DEFAULT_DILATION_VOX
    corpus_id: str = ""
    force: bool = False
    tile_size: int = gallery_mod.DEFAULT_TILE
    generated_at: str = ""

    def __post_init__(self) -> None:
        self.input_dir = Path(self.input_dir)
        self.output_dir = Path(self.output_dir)
        if self.input_dir.resolve() == self.output_dir.resolve():
            raise ConfigError("input and output directories must differ")
        if self.session_policy not in SESSION_POLICIES:
            raise ConfigError(
                f"session_policy must be one of {SESSION_POLICIES}, got {self.session_policy!r}"
            )
        unknown = set(self.checks) - set(DICOM_CHECKS + VOLUME_CHECKS)
        if unknown:
            raise ConfigError(f"unknown check ids: {sorted(unknown)}")
        if self.review_sample < 0:
            raise ConfigError(f"review_sample must be >= 0, got {self.review_sample}")
        if self.workers < 0:
            raise ConfigError(f"workers must be >= 0, got {self.workers}")
        if not 0.0 <= self.margin_fraction <= 0.5:
            raise ConfigError(
                f"margin_fraction must be in [0, 0.5], got {self.margin_fraction}"
            )
        if self.dilation_vox < 0:
            raise ConfigError(f"dilation_vox must be >= 0, got {self.dilation_vox}")
        if self.tile_size < 16:
            raise ConfigError(f"tile_size must be >= 16, got {self.tile_size}")

    def fingerprint(self) -> str:
        """Digest of every option that changes per-scan outputs."""
        th = self.thresholds
        payload = json.dumps(
            {
                "thresholds": [th.epsilon, th.delta, th.sigma1, th.sigma2, list(th.phi)],
                "checks": list(self.checks),
                "convert": self.convert,
                "force_assemble": self.force_assemble,
                "crop": self.crop,
                "gallery": self.gallery,
                "auto_reorient": self.auto_reorient,
                "hu_threshold": self.hu_threshold,
                "margin_fraction": self.margin_fraction,
                "dilation_vox": self.dilation_vox,
                "tile_size": self.tile_size,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


# --- discovery ---------------------------------------------------------------

def discover_scans(root: Union[str, Path]) -> list[Path]:
    """Leaf directories (files, no subdirectories) under root, sorted."""
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"input directory not found: {root}")
    leaves = []
    for path in sorted(root.rglob("*")):
        if not path.is_dir():
            continue
        children = list(path.iterdir())
        if children and not any(c.is_dir() for c in children):
            leaves.append(path)
    if not leaves:
        children = [c for c in root.iterdir() if c.is_file()]
        if children:
            leaves.append(root)
    return leaves


def select_scans(scan_dirs: Sequence[Path], policy: str, root: Path) -> list[Path]:
    """Apply the one-scan-per-session policy.

    A session is a directory holding several scan directories.  Scans
    sitting directly under the corpus root are independent (the root is
    not a session).  ``largest`` keeps, per session, the scan with the
    most files (ties go to the lexicographically first name); ``all``
    keeps everything.
    """
    if policy == "all":
        return list(scan_dirs)
    root = root.resolve()
    kept = []
    by_session: dict[Path, list[Path]] = {}
    for d in scan_dirs:
        if d.resolve().parent == root or d.resolve() == root:
            kept.append(d)
        else:
            by_session.setdefault(d.parent, []).append(d)
    for _, group in sorted(by_session.items()):
        counts = {d: sum(1 for f in d.iterdir() if f.is_file()) for d in group}
        top = max(counts.values())
        kept.append(min(d for d, c in counts.items() if c == top))
    return sorted(kept)


def scan_id_for(scan_dir: Path, root: Path) -> str:
    rel = scan_dir.resolve().relative_to(root.resolve())
    parts = rel.as_posix()
    if parts == ".":
        return scan_dir.resolve().name
    return parts.replace("/", "__")


# --- per-scan processing -----------------------------------------------------

def _input_digest(scan_dir: Path, fingerprint: str) -> str:
    h = hashlib.sha256(fingerprint.encode())
    for path in sorted(p for p in scan_dir.iterdir() if p.is_file()):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def process_scan(scan_dir: Path, scan_id: str, config: PipelineConfig) -> ScanResult:
    """Run every enabled stage on one scan directory."""
    thresholds = config.thresholds
    enabled = set(config.checks)
    warnings: list[str] = []

    files = sorted(p for p in scan_dir.iterdir() if p.is_file())
    datas = []
    headers = []
    try:
        for path in files:
            data = path.read_bytes()
            headers.append(parse_slice(data))
            datas.append(data)
        manifest = build_manifest(headers)
    except CtqaError as exc:
        return ScanResult(
            scan_id=scan_id,
            findings=[not_applicable(c, "scan unusable") for c in DICOM_CHECKS + VOLUME_CHECKS],
            error=f"unparseable: {exc}",
        )

    findings = run_dicom_qa(manifest, thresholds, enabled=enabled & set(DICOM_CHECKS))
    by_id = {f.check_id: f for f in findings}

    fov = None
    first = manifest.slices[0]
    if first.pixel_spacing is not None:
        fov = first.pixel_spacing[1] * first.columns
    z_spacing = manifest.modal_spacing if manifest.slice_count > 1 else None

    gate_ok = config.force_assemble or not any(by_id[c].failed for c in ASSEMBLY_GATE)
    vol = None
    reoriented = False
    nifti_rel = None
    if config.convert and gate_ok:
        try:
            order = sorted(range(len(headers)), key=lambda i: headers[i].instance_number)
            slabs = [decode_pixels(headers[i], datas[i]) for i in order]
            vol = volmod.assemble_volume(manifest, slabs)
        except CtqaError as exc:
            return ScanResult(
                scan_id=scan_id,
                findings=findings
                + [not_applicable(c, "scan unusable") for c in VOLUME_CHECKS],
                error=f"assembly failed: {exc}",
                fov_mm=fov,
                z_spacing_mm=z_spacing,
            )

    if vol is None:
        reason = "conversion disabled" if not config.convert else "blocked by structural failures"
        findings.append(not_applicable(CHECK_ORIENTATION, reason))
        findings.append(not_applicable(CHECK_RESOLUTION, reason))
        return ScanResult(
            scan_id=scan_id,
            findings=findings,
            warnings=tuple(warnings),
            fov_mm=fov,
            z_spacing_mm=z_spacing,
        )

    nifti_dir = config.output_dir / "nifti"
    nifti_dir.mkdir(parents=True, exist_ok=True)
    nifti_path = nifti_dir / f"{scan_id}.nii.gz"
    nifti.save_volume(vol, nifti_path)
    nifti_rel = str(nifti_path.relative_to(config.output_dir))

    if CHECK_ORIENTATION in enabled:
        orient = volmod.check_orientation(vol.affine)
        if orient.failed and config.auto_reorient:
            try:
                vol = volmod.reorient_to_standard(vol)
            except ObliqueAffine:
                warnings.append("oblique affine; automatic reorientation skipped")
            else:
                reoriented = True
                nifti.save_volume(vol, nifti_path)
    else:
        orient = not_applicable(CHECK_ORIENTATION, "disabled")
    findings.append(orient)

    if CHECK_RESOLUTION in enabled:
        findings.append(volmod.check_resolution(vol.affine, thresholds))
    else:
        findings.append(not_applicable(CHECK_RESOLUTION, "disabled"))

    display = vol
    cropped_rel = None
    if config.crop:
        try:
            mask = lungseg.lung_mask(
                vol, hu_threshold=config.hu_threshold, dilation_vox=config.dilation_vox
            )
            cropped = volmod.crop_roi(vol, mask, config.margin_fraction)
        except EmptyMask:
            warnings.append("lung mask empty; crop skipped")
        else:
            crop_path = nifti_dir / f"{scan_id}_crop.nii.gz"
            nifti.save_volume(cropped, crop_path)
            cropped_rel = str(crop_path.relative_to(config.output_dir))
            display = cropped

    montage_rel = None
    if config.gallery:
        try:
            montage = gallery_mod.render_montage(display, scan_id, tile_size=config.tile_size)
        except DegenerateDim as exc:
            warnings.append(f"montage skipped: {exc}")
        else:
            montage_dir = config.output_dir / "montages"
            montage_dir.mkdir(parents=True, exist_ok=True)
            montage_path = montage_dir / f"{scan_id}.png"
            gallery_mod.save_montage(montage, montage_path)
            montage_rel = str(montage_path.relative_to(config.output_dir))

    return ScanResult(
        scan_id=scan_id,
        findings=findings,
        warnings=tuple(warnings),
        reoriented=reoriented,
        fov_mm=fov,
        z_spacing_mm=z_spacing,
        montage=montage_rel,
        nifti=nifti_rel,
        cropped=cropped_rel,
    )


# --- caching -----------------------------------------------------------------

def _result_to_dict(result: ScanResult) -> dict:
    return {
        "scan_id": result.scan_id,
        "findings": [report._finding_to_dict(f) for f in result.findings],
        "error": result.error,
        "warnings": list(result.warnings),
        "reoriented": result.reoriented,
        "fov_mm": result.fov_mm,
        "z_spacing_mm": result.z_spacing_mm,
        "montage": result.montage,
        "nifti": result.nifti,
        "cropped": result.cropped,
    }


def _result_from_dict(d: dict) -> ScanResult:
    return ScanResult(
        scan_id=d["scan_id"],
        findings=[report._finding_from_dict(f) for f in d["findings"]],
        error=d.get("error"),
        warnings=tuple(d.get("warnings", ())),
        reoriented=bool(d.get("reoriented", False)),
        fov_mm=d.get("fov_mm"),
        z_spacing_mm=d.get("z_spacing_mm"),
        montage=d.get("montage"),
        nifti=d.get("nifti"),
        cropped=d.get("cropped"),
    )


def _cache_path(config: PipelineConfig, scan_id: str) -> Path:
    return config.output_dir / "cache" / f"{scan_id}.json"


def _load_cached(config: PipelineConfig, scan_id: str, digest: str) -> Optional[ScanResult]:
    path = _cache_path(config, scan_id)
    if not path.is_file():
        return None
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return None
    if payload.get("digest") != digest:
        return None
    result = _result_from_dict(payload["result"])
    for rel in (result.montage, result.nifti, result.cropped):
        if rel and not (config.output_dir / rel).is_file():
            return None
    return result


def _store_cached(config: PipelineConfig, scan_id: str, digest: str, result: ScanResult) -> None:
    path = _cache_path(config, scan_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"digest": digest, "result": _result_to_dict(result)}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _process_job(args: tuple) -> tuple[str, dict]:
    """Worker-process entry: returns the result as a plain dict."""
    scan_dir, scan_id, config = args
    result = process_scan(Path(scan_dir), scan_id, config)
    return scan_id, _result_to_dict(result)


# --- run ---------------------------------------------------------------------

@dataclass
class RunStats:
    scans: int = 0
    processed: int = 0
    cached: int = 0
    errors: int = 0
    dispositions: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_verdicts(path: Union[str, Path]) -> list[ReviewVerdict]:
    """Read a verdict log (one JSON object per line); missing file is empty."""
    path = Path(path)
    if not path.is_file():
        return []
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            out.append(ReviewVerdict.from_dict(json.loads(line)))
    return out


def run(config: PipelineConfig) -> tuple[report.QaReport, RunStats]:
    """Execute the full pipeline; returns the report and run counters."""
    scan_dirs = select_scans(
        discover_scans(config.input_dir), config.session_policy, config.input_dir
    )
    ids = [scan_id_for(d, config.input_dir) for d in scan_dirs]
    if len(set(ids)) != len(ids):
        raise ConfigError("scan ids collide after path flattening")

    config.output_dir.mkdir(parents=True, exist_ok=True)
    fingerprint = config.fingerprint()
    stats = RunStats(scans=len(scan_dirs))

    digests = {sid: _input_digest(d, fingerprint) for d, sid in zip(scan_dirs, ids)}
    results: dict[str, ScanResult] = {}
    pending: list[tuple[Path, str]] = []
    for scan_dir, sid in zip(scan_dirs, ids):
        cached = None if config.force else _load_cached(config, sid, digests[sid])
        if cached is not None:
            results[sid] = cached
            stats.cached += 1
        else:
            pending.append((scan_dir, sid))

    # Cache each result the moment it exists so an interrupted run leaves
    # everything already processed behind for the next invocation.
    workers = config.workers or (os.cpu_count() or 1)
    if workers > 1 and len(pending) > 1:
        jobs = [(str(d), sid, config) for d, sid in pending]
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            for sid, result_dict in pool.map(_process_job, jobs):
                results[sid] = _result_from_dict(result_dict)
                _store_cached(config, sid, digests[sid], results[sid])
                stats.processed += 1
    else:
        for scan_dir, sid in pending:
            results[sid] = process_scan(scan_dir, sid, config)
            _store_cached(config, sid, digests[sid], results[sid])
            stats.processed += 1

    ordered = [results[sid] for sid in sorted(results)]
    stats.errors = sum(1 for r in ordered if r.error)

    sampled: list[str] = []
    if config.review_sample > 0 and ordered:
        rng = random.Random(config.seed)
        pool_ids = sorted(r.scan_id for r in ordered)
        sampled = sorted(rng.sample(pool_ids, min(config.review_sample, len(pool_ids))))

    report_dir = config.output_dir / "report"
    verdicts = load_verdicts(report_dir / "verdicts.jsonl")

    generated_at = config.generated_at or datetime.now(timezone.utc).isoformat(
        timespec="seconds"
    )
    distributions = report.summarize_distributions(
        (r.fov_mm, r.z_spacing_mm) for r in ordered
    )
    qa_report = report.aggregate(
        ordered,
        verdicts,
        corpus_id=config.corpus_id or config.input_dir.name,
        thresholds=config.thresholds,
        generated_at=generated_at,
        sampled_ids=sampled,
        review_sample_size=config.review_sample,
        review_seed=config.seed,
        distributions=distributions,
    )
    report.export(qa_report, report_dir)

    if config.gallery:
        entries = []
        for rec in qa_report.records:
            statuses = {
                f.check_id: finding_status(f, reoriented=rec.result.reoriented)
                for f in rec.result.findings
            }
            statuses["SUBJ"] = finding_status(
                report._subjective_finding(rec.verdict), reoriented=False
            )
            entries.append((rec.scan_id, rec.result.montage or "", statuses))
        html_doc = gallery_mod.build_index(entries, checks=ALL_CHECKS)
        (config.output_dir / "index.html").write_text(html_doc, encoding="utf-8")

    for rec in qa_report.records:
        stats.dispositions[rec.disposition] = stats.dispositions.get(rec.disposition, 0) + 1
    (config.output_dir / "run_stats.json").write_text(
        json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return qa_report, stats


def exit_code_for(qa_report: report.QaReport) -> int:
    """CI gating: 0 when no scan failed, 2 when the corpus had failures.

    1 is reserved for configuration errors (mapped by the CLI).
    """
    return 2 if qa_report.failed_scan_count else 0
