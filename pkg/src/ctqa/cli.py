"""Command line front end.

Subcommands cover the batch pipeline (``qa``), one-off conversions and
utilities (``convert``, ``crop``, ``gallery``), report refresh
(``report``), the review service (``serve``) and synthetic corpus
generation (``synth``).

Exit codes: 0 the command ran and its inputs were sound, 1 usage or
configuration error, 2 the corpus (or input) had QA failures; CI can
gate on 2 without tripping over its own misconfiguration.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import gallery as gallery_mod
from . import lungseg, nifti, pipeline, report as report_mod, service as service_mod
from . import synth as synth_mod
from . import volume as volmod
from .dicom import decode_pixels, parse_slice
from .errors import ConfigError, CtqaError
from .series import DICOM_CHECKS, VOLUME_CHECKS, QaThresholds, build_manifest

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in _BOOL_TRUE:
        return True
    if low in _BOOL_FALSE:
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_floats(text: str, n: int) -> tuple[float, ...]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != n:
        raise ConfigError(f"expected {n} numbers, got {text!r}")
    return tuple(float(p) for p in parts)


# Config-file keys for the qa subcommand, with their converters.
_QA_CONFIG_KEYS = {
    "checks": lambda s: tuple(p.strip() for p in s.split(",") if p.strip()),
    "convert": _parse_bool,
    "force_assemble": _parse_bool,
    "crop": _parse_bool,
    "gallery": _parse_bool,
    "auto_reorient": _parse_bool,
    "session_policy": str,
    "review_sample": int,
    "seed": int,
    "workers": int,
    "epsilon": float,
    "delta": int,
    "sigma1": float,
    "sigma2": float,
    "phi": lambda s: _parse_floats(s, 3),
    "hu_threshold": float,
    "margin_fraction": float,
    "dilation_vox": int,
    "corpus_id": str,
    "force": _parse_bool,
    "tile_size": int,
    "generated_at": str,
}


def read_config_file(path: Path) -> dict:
    """Parse a ``key = value`` config file (# starts a comment)."""
    values = {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _QA_CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown option {key!r}")
        values[key] = _QA_CONFIG_KEYS[key](value.strip())
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctqa", description="Structural QA for chest CT series."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    qa = sub.add_parser("qa", help="run the batch QA pipeline over a corpus")
    qa.add_argument("input", type=Path, help="directory tree holding DICOM series")
    qa.add_argument("-o", "--output", type=Path, required=True, help="output directory")
    qa.add_argument("--config", type=Path, help="key = value config file; flags win")
    qa.add_argument("--checks", help="comma list of checks to run (default: all)")
    qa.add_argument("--no-convert", dest="convert", action="store_false", default=None)
    qa.add_argument(
        "--force-assemble",
        action="store_true",
        default=None,
        help="assemble volumes even when completeness or uniqueness failed",
    )
    qa.add_argument("--no-crop", dest="crop", action="store_false", default=None)
    qa.add_argument("--no-gallery", dest="gallery", action="store_false", default=None)
    qa.add_argument(
        "--no-reorient", dest="auto_reorient", action="store_false", default=None
    )
    qa.add_argument("--session-policy", choices=pipeline.SESSION_POLICIES, default=None)
    qa.add_argument("--review-sample", type=int, default=None, metavar="N")
    qa.add_argument("--seed", type=int, default=None)
    qa.add_argument("--workers", type=int, default=None)
    qa.add_argument("--epsilon", type=float, default=None, help="distance tolerance, mm")
    qa.add_argument("--delta", type=int, default=None, help="minimum slice count")
    qa.add_argument("--sigma1", type=float, default=None, help="min plausible length, mm")
    qa.add_argument("--sigma2", type=float, default=None, help="max plausible length, mm")
    qa.add_argument("--phi", default=None, help="voxel size caps, e.g. 1,1,5")
    qa.add_argument("--hu-threshold", type=float, default=None)
    qa.add_argument("--margin-fraction", type=float, default=None)
    qa.add_argument("--dilation-vox", type=int, default=None)
    qa.add_argument("--corpus-id", default=None)
    qa.add_argument("--force", action="store_true", default=None, help="ignore the cache")
    qa.add_argument("--tile-size", type=int, default=None)
    qa.add_argument("--generated-at", default=None, help="pin the report timestamp")

    convert = sub.add_parser("convert", help="convert one series directory to NIfTI")
    convert.add_argument("series", type=Path)
    convert.add_argument("-o", "--output", type=Path, required=True)
    convert.add_argument(
        "--reorient", action="store_true", help="force standard orientation"
    )

    crop = sub.add_parser("crop", help="crop a NIfTI volume to the lung region")
    crop.add_argument("volume", type=Path)
    crop.add_argument("-o", "--output", type=Path, required=True)
    crop.add_argument("--hu-threshold", type=float, default=lungseg.DEFAULT_HU_THRESHOLD)
    crop.add_argument("--margin-fraction", type=float, default=0.10)
    crop.add_argument("--dilation-vox", type=int, default=lungseg.DEFAULT_DILATION_VOX)

    gal = sub.add_parser("gallery", help="render the review montage for one volume")
    gal.add_argument("volume", type=Path)
    gal.add_argument("-o", "--output", type=Path, required=True)
    gal.add_argument("--tile-size", type=int, default=gallery_mod.DEFAULT_TILE)

    rep = sub.add_parser("report", help="refold verdicts into an existing report bundle")
    rep.add_argument("output_dir", type=Path, help="pipeline output directory")

    serve = sub.add_parser("serve", help="serve the review UI and API")
    serve.add_argument("output_dir", type=Path, help="pipeline output directory")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8765)
    serve.add_argument("--ui", type=Path, default=None, help="static UI directory")
    serve.add_argument(
        "--blind", action="store_true", help="hide objective results from reviewers"
    )

    synth = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    synth.add_argument("output_dir", type=Path)
    synth.add_argument("--clean", type=int, default=10, metavar="N")
    synth.add_argument(
        "--defect",
        action="append",
        default=[],
        metavar="KIND=N",
        help=f"defect counts; kinds: {', '.join(synth_mod.DEFECT_KINDS)}",
    )
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--rows", type=int, default=160)
    synth.add_argument("--cols", type=int, default=160)
    synth.add_argument("--slices", type=int, default=100)
    synth.add_argument("--pixel-spacing", default="0.7,0.7")
    synth.add_argument("--slice-step", type=float, default=2.5)
    synth.add_argument("--implicit-vr", action="store_true")

    return parser


# --- subcommand bodies -------------------------------------------------------

def _cmd_qa(args: argparse.Namespace) -> int:
    config_values = read_config_file(args.config) if args.config else {}

    def pick(name, fallback):
        flag = getattr(args, name, None)
        if flag is not None:
            return flag
        return config_values.get(name, fallback)

    checks = pick("checks", None)
    if isinstance(checks, str):
        checks = tuple(p.strip() for p in checks.split(",") if p.strip())
    phi = pick("phi", None)
    if isinstance(phi, str):
        phi = _parse_floats(phi, 3)

    try:
        thresholds = QaThresholds(
            epsilon=pick("epsilon", None),
            delta=pick("delta", 50),
            sigma1=pick("sigma1", 200.0),
            sigma2=pick("sigma2", 500.0),
            phi=tuple(phi) if phi else (1.0, 1.0, 5.0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))

    config = pipeline.PipelineConfig(
        input_dir=args.input,
        output_dir=args.output,
        thresholds=thresholds,
        checks=tuple(checks) if checks else DICOM_CHECKS + VOLUME_CHECKS,
        convert=pick("convert", True),
        force_assemble=bool(pick("force_assemble", False)),
        crop=pick("crop", True),
        gallery=pick("gallery", True),
        auto_reorient=pick("auto_reorient", True),
        session_policy=pick("session_policy", "largest"),
        review_sample=pick("review_sample", 0),
        seed=pick("seed", 0),
        workers=pick("workers", 0),
        hu_threshold=pick("hu_threshold", lungseg.DEFAULT_HU_THRESHOLD),
        margin_fraction=pick("margin_fraction", 0.10),
        dilation_vox=pick("dilation_vox", lungseg.DEFAULT_DILATION_VOX),
        corpus_id=pick("corpus_id", ""),
        force=bool(pick("force", False)),
        tile_size=pick("tile_size", gallery_mod.DEFAULT_TILE),
        generated_at=pick("generated_at", ""),
    )
    qa_report, stats = pipeline.run(config)
    print(f"scans: {stats.scans} (processed {stats.processed}, cached {stats.cached})")
    for disposition in ("pass", "warn", "needs-review", "fail"):
        count = stats.dispositions.get(disposition, 0)
        if count:
            print(f"  {disposition}: {count}")
    print(f"report: {config.output_dir / 'report' / 'report.json'}")
    return pipeline.exit_code_for(qa_report)


def _load_series_volume(series_dir: Path) -> volmod.Volume:
    files = sorted(p for p in series_dir.iterdir() if p.is_file())
    headers = []
    datas = []
    for path in files:
        data = path.read_bytes()
        headers.append(parse_slice(data))
        datas.append(data)
    manifest = build_manifest(headers)
    order = sorted(range(len(headers)), key=lambda i: headers[i].instance_number)
    slabs = [decode_pixels(headers[i], datas[i]) for i in order]
    return volmod.assemble_volume(manifest, slabs)


def _cmd_convert(args: argparse.Namespace) -> int:
    vol = _load_series_volume(args.series)
    if args.reorient:
        vol = volmod.reorient_to_standard(vol)
    path = nifti.save_volume(vol, args.output)
    print(f"wrote {path}")
    return 0


def _cmd_crop(args: argparse.Namespace) -> int:
    vol = nifti.load_volume(args.volume)
    mask = lungseg.lung_mask(
        vol, hu_threshold=args.hu_threshold, dilation_vox=args.dilation_vox
    )
    cropped = volmod.crop_roi(vol, mask, args.margin_fraction)
    path = nifti.save_volume(cropped, args.output)
    print(f"wrote {path} (dims {cropped.dims[0]}x{cropped.dims[1]}x{cropped.dims[2]})")
    return 0


def _cmd_gallery(args: argparse.Namespace) -> int:
    vol = nifti.load_volume(args.volume)
    montage = gallery_mod.render_montage(
        vol, args.volume.stem, tile_size=args.tile_size
    )
    path = gallery_mod.save_montage(montage, args.output)
    print(f"wrote {path}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    svc = service_mod.ReviewService(args.output_dir)
    summary = svc.finalize()
    print(
        f"report refreshed: {summary['scans']} scans, "
        f"{summary['reviewed']} reviewed, {summary['failed']} failed"
    )
    return 2 if summary["failed"] else 0


def _cmd_serve(args: argparse.Namespace) -> int:
    svc = service_mod.ReviewService(args.output_dir, ui_dir=args.ui, blind=args.blind)
    service_mod.serve_forever(svc, args.host, args.port)
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    defects = {}
    for item in args.defect:
        kind, _, count = item.partition("=")
        if not count:
            raise ConfigError(f"--defect needs KIND=N, got {item!r}")
        if kind not in synth_mod.DEFECT_KINDS:
            raise ConfigError(f"unknown defect kind {kind!r}")
        defects[kind] = defects.get(kind, 0) + int(count)
    geometry = synth_mod.SynthGeometry(
        rows=args.rows,
        columns=args.cols,
        n_slices=args.slices,
        pixel_spacing=_parse_floats(args.pixel_spacing, 2),
        slice_step=args.slice_step,
        implicit_vr=args.implicit_vr,
    )
    truths = synth_mod.generate_corpus(
        args.output_dir,
        clean=args.clean,
        defects=defects,
        seed=args.seed,
        geometry=geometry,
    )
    print(f"wrote {len(truths)} series under {args.output_dir}")
    return 0


_COMMANDS = {
    "qa": _cmd_qa,
    "convert": _cmd_convert,
    "crop": _cmd_crop,
    "gallery": _cmd_gallery,
    "report": _cmd_report,
    "serve": _cmd_serve,
    "synth": _cmd_synth,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for usage errors; map usage
        # errors onto the configuration-error code.
        return 0 if exc.code in (0, None) else 1
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CtqaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
