"""Embedded HTTP service for reading results and recording review verdicts.

Serves the finished report bundle of one pipeline run.  Reviewers (or
the bundled web UI) page through scans, look at montages, and post
pass/fail/flag verdicts, which append to ``verdicts.jsonl``.  A finalize
call folds the verdicts back into the report bundle on disk.

Built on the standard library HTTP server: one process, threaded
request handling, no extra dependencies.  State shared across requests
is guarded by locks; the verdict log is append-only.

Endpoints:
    GET  /api/scans      paged scan summaries (?page=&page_size=&filter=)
    GET  /api/report     the canonical report JSON
    GET  /montages/<id>.png
    POST /api/verdicts   record one verdict
    POST /api/finalize   rewrite the report bundle with current verdicts
    GET  /               static UI files when a UI directory is configured
"""

from __future__ import annotations

import json
import threading
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Optional, Union
from urllib.parse import parse_qs, urlparse

from . import report as report_mod
from .report import QaReport, ReviewVerdict, finding_status

FILTERS = ("all", "unreviewed", "objective-failed")

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
    ".map": "application/json",
    ".ico": "image/x-icon",
}

_FALLBACK_PAGE = """<!doctype html>
<html><head><meta charset="utf-8"><title>CT QA review</title></head>
<body><h1>CT QA review service</h1>
<p>No web UI is installed. The API is live:</p>
<ul>
<li><code>GET /api/scans?page=1&amp;page_size=20&amp;filter=all</code></li>
<li><code>GET /api/report</code></li>
<li><code>GET /montages/&lt;scan_id&gt;.png</code></li>
<li><code>POST /api/verdicts</code> with {"scan_id", "verdict", "note", "reviewer"}</li>
<li><code>POST /api/finalize</code></li>
</ul></body></html>
"""


class ReviewService:
    """Shared state behind the HTTP handlers for one report bundle."""

    def __init__(
        self,
        output_dir: Union[str, Path],
        *,
        ui_dir: Optional[Union[str, Path]] = None,
        blind: bool = False,
        clock: Optional[Callable[[], str]] = None,
    ):
        self.output_dir = Path(output_dir)
        self.report_dir = self.output_dir / "report"
        self.verdicts_path = self.report_dir / "verdicts.jsonl"
        self.montage_dir = self.output_dir / "montages"
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self.blind = blind
        self.clock = clock or (
            lambda: datetime.now(timezone.utc).isoformat(timespec="seconds")
        )
        self._append_lock = threading.Lock()
        self._finalize_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self.report: QaReport = self._load_report()
        self.verdicts: list[ReviewVerdict] = self._load_verdicts()

    def _load_report(self) -> QaReport:
        path = self.report_dir / "report.json"
        if not path.is_file():
            raise FileNotFoundError(
                f"no report bundle at {path}; run the pipeline first"
            )
        return report_mod.report_from_dict(json.loads(path.read_text(encoding="utf-8")))

    def _load_verdicts(self) -> list[ReviewVerdict]:
        if not self.verdicts_path.is_file():
            return []
        out = []
        for line in self.verdicts_path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line:
                out.append(ReviewVerdict.from_dict(json.loads(line)))
        return out

    # -- queries

    def scan_ids(self) -> set[str]:
        return {rec.scan_id for rec in self.report.records}

    def _summary(self, rec, verdict: Optional[ReviewVerdict]) -> dict:
        statuses = {
            f.check_id: finding_status(f, reoriented=rec.result.reoriented)
            for f in rec.result.findings
        }
        summary = {
            "scan_id": rec.scan_id,
            "sampled": rec.sampled,
            "montage": f"/montages/{rec.scan_id}.png" if rec.result.montage else None,
            "verdict": verdict.to_dict() if verdict else None,
            "error": rec.result.error,
            "warnings": list(rec.result.warnings),
            "disposition": rec.disposition,
            "statuses": statuses,
        }
        if self.blind:
            # Blind review: reviewers must not see what the checks said.
            summary["disposition"] = None
            summary["statuses"] = None
            summary["error"] = None
            summary["warnings"] = []
        return summary

    def list_scans(self, *, page: int, page_size: int, which: str) -> dict:
        with self._state_lock:
            latest = report_mod.latest_verdicts(self.verdicts)
            rows = []
            for rec in self.report.records:
                verdict = latest.get(rec.scan_id)
                if which == "unreviewed" and verdict is not None:
                    continue
                if which == "objective-failed" and not any(
                    f.failed for f in rec.result.findings
                ) and not rec.result.error:
                    continue
                rows.append(self._summary(rec, verdict))
        total = len(rows)
        start = (page - 1) * page_size
        return {
            "total": total,
            "page": page,
            "page_size": page_size,
            "filter": which,
            "scans": rows[start : start + page_size],
        }

    # -- mutations

    def record_verdict(self, payload: dict) -> ReviewVerdict:
        if not isinstance(payload, dict):
            raise ValueError("body must be a JSON object")
        scan_id = payload.get("scan_id")
        if not isinstance(scan_id, str) or not scan_id:
            raise ValueError("scan_id is required")
        if scan_id not in self.scan_ids():
            raise KeyError(scan_id)
        verdict = ReviewVerdict(
            scan_id=scan_id,
            verdict=payload.get("verdict", ""),
            note=str(payload.get("note", "")),
            reviewer=str(payload.get("reviewer", "")),
            timestamp=str(payload.get("timestamp") or self.clock()),
        )
        line = json.dumps(verdict.to_dict(), sort_keys=True)
        with self._append_lock:
            self.verdicts_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.verdicts_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
            with self._state_lock:
                self.verdicts.append(verdict)
        return verdict

    def finalize(self) -> dict:
        """Fold verdicts into the bundle; only one finalize runs at a time."""
        if not self._finalize_lock.acquire(blocking=False):
            raise BlockingIOError("finalize already in progress")
        try:
            with self._state_lock:
                old = self.report
                verdicts = list(self.verdicts)
            new_report = report_mod.aggregate(
                [rec.result for rec in old.records],
                verdicts,
                corpus_id=old.corpus_id,
                thresholds=old.thresholds,
                generated_at=self.clock(),
                sampled_ids=old.sampled_ids,
                review_sample_size=old.review_sample_size,
                review_seed=old.review_seed,
                distributions=old.distributions,
            )
            report_mod.export(new_report, self.report_dir)
            with self._state_lock:
                self.report = new_report
            reviewed = len(report_mod.latest_verdicts(verdicts))
            return {
                "scans": len(new_report.records),
                "reviewed": reviewed,
                "failed": new_report.failed_scan_count,
            }
        finally:
            self._finalize_lock.release()


class _Handler(BaseHTTPRequestHandler):
    service: ReviewService  # set by make_server

    # -- plumbing

    def log_message(self, fmt, *args):  # noqa: N802 - stdlib notification hook
        pass  # keep test output quiet; errors surface via status codes

    def _send_json(self, code: int, obj) -> None:
        body = json.dumps(obj, sort_keys=True).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_bytes(self, code: int, body: bytes, content_type: str) -> None:
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, code: int, message: str) -> None:
        self._send_json(code, {"error": message})

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    # -- methods

    def do_OPTIONS(self):  # noqa: N802 - stdlib casing
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def do_GET(self):  # noqa: N802 - stdlib casing
        parsed = urlparse(self.path)
        path = parsed.path
        if path == "/api/scans":
            return self._get_scans(parse_qs(parsed.query))
        if path == "/api/report":
            body = report_mod.render_report_json(self.service.report).encode("utf-8")
            return self._send_bytes(200, body, "application/json")
        if path.startswith("/montages/"):
            return self._get_montage(path)
        return self._get_static(path)

    def do_POST(self):  # noqa: N802 - stdlib casing
        path = urlparse(self.path).path
        if path == "/api/verdicts":
            return self._post_verdict()
        if path == "/api/finalize":
            return self._post_finalize()
        return self._error(404, f"no such endpoint: {path}")

    # -- endpoint bodies

    def _get_scans(self, query: dict) -> None:
        try:
            page = int(query.get("page", ["1"])[0])
            page_size = int(query.get("page_size", ["20"])[0])
        except ValueError:
            return self._error(400, "page and page_size must be integers")
        which = query.get("filter", ["all"])[0]
        if which not in FILTERS:
            return self._error(400, f"filter must be one of {', '.join(FILTERS)}")
        if page < 1 or not 1 <= page_size <= 500:
            return self._error(400, "page must be >= 1 and page_size in [1, 500]")
        self._send_json(200, self.service.list_scans(page=page, page_size=page_size, which=which))

    def _get_montage(self, path: str) -> None:
        name = path[len("/montages/") :]
        if "/" in name or ".." in name or not name.endswith(".png"):
            return self._error(404, "montage not found")
        file_path = self.service.montage_dir / name
        if not file_path.is_file():
            return self._error(404, "montage not found")
        self._send_bytes(200, file_path.read_bytes(), "image/png")

    def _get_static(self, path: str) -> None:
        if self.service.ui_dir is None:
            if path in ("/", "/index.html"):
                return self._send_bytes(200, _FALLBACK_PAGE.encode("utf-8"), _CONTENT_TYPES[".html"])
            return self._error(404, f"not found: {path}")
        rel = path.lstrip("/") or "index.html"
        file_path = (self.service.ui_dir / rel).resolve()
        root = self.service.ui_dir.resolve()
        if root not in file_path.parents and file_path != root:
            return self._error(404, "not found")
        if file_path.is_dir():
            file_path = file_path / "index.html"
        if not file_path.is_file():
            return self._error(404, f"not found: {path}")
        ctype = _CONTENT_TYPES.get(file_path.suffix, "application/octet-stream")
        self._send_bytes(200, file_path.read_bytes(), ctype)

    def _post_verdict(self) -> None:
        try:
            payload = json.loads(self._read_body().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            return self._error(400, "body is not valid JSON")
        try:
            verdict = self.service.record_verdict(payload)
        except KeyError as exc:
            return self._error(404, f"unknown scan: {exc.args[0]}")
        except ValueError as exc:
            return self._error(400, str(exc))
        self._send_json(201, {"recorded": verdict.to_dict()})

    def _post_finalize(self) -> None:
        try:
            summary = self.service.finalize()
        except BlockingIOError:
            return self._error(409, "finalize already in progress")
        self._send_json(200, summary)


def make_server(
    service: ReviewService, host: str = "127.0.0.1", port: int = 8765
) -> ThreadingHTTPServer:
    """Build the HTTP server; ``port=0`` picks a free port (for tests)."""

    class BoundHandler(_Handler):
        pass

    BoundHandler.service = service
    server = ThreadingHTTPServer((host, port), BoundHandler)
    server.daemon_threads = True
    return server


def serve_forever(service: ReviewService, host: str, port: int) -> None:
    server = make_server(service, host, port)
    addr = server.server_address
    print(f"review service listening on http://{addr[0]}:{addr[1]}/")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
