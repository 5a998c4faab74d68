"""Acceptance checklist.

One test per headline guarantee of the package.  Every oracle here is an
independent re-derivation (interval enumeration, pairwise counting,
closed-form box arithmetic, hand-packed header bytes, analytic
ellipsoids), never the code under test.  Each test finishes with a
single summary line so ``pytest -v -s tests/test_acceptance.py`` reads
as the acceptance report.

The review-loop test at the bottom exercises the HTTP service with a
plain urllib client; nothing in this file imports the web frontend.
"""

import hashlib
import itertools
import json
import math
import random
import struct
import threading
import time
import urllib.request
from pathlib import Path

import numpy as np
import pytest

from conftest import headers_at
from test_lungseg import analytic_lung_mask
from test_nifti import golden_bytes_2x2x2

import ctqa.pipeline as pipeline
from ctqa.lungseg import lung_mask
from ctqa.nifti import read_nifti, write_nifti
from ctqa.pipeline import PipelineConfig, exit_code_for, run
from ctqa.report import ScanResult, aggregate, format_rate, render_rates_csv
from ctqa.series import (
    CHECK_MISSING,
    DICOM_CHECKS,
    VOLUME_CHECKS,
    QaFinding,
    QaThresholds,
    SeriesManifest,
    build_manifest,
    check_instance_numbers,
    check_slice_distance,
)
from ctqa.service import ReviewService, make_server
from ctqa.synth import (
    OBJECTIVE_DEFECTS,
    DefectSpec,
    SynthGeometry,
    default_phantom,
    generate_corpus,
    generate_series,
    inject_defect,
    phantom_hu,
)
from ctqa.volume import Volume, check_orientation, crop_roi, reorient_to_standard

OBJECTIVE_CHECKS = DICOM_CHECKS + VOLUME_CHECKS

CORPUS_GEO = SynthGeometry(
    rows=64, columns=64, n_slices=72, pixel_spacing=(0.9, 0.9), slice_step=3.5
)
RUN_GEO = SynthGeometry(
    rows=32, columns=32, n_slices=72, pixel_spacing=(0.9, 0.9), slice_step=3.5
)

FIXED_STAMP = "2026-03-01T00:00:00+00:00"


def ok(label, detail):
    print(f"[acceptance] {label}: PASS ({detail})")


def finding_state(finding_dict_or_obj):
    f = finding_dict_or_obj
    if not f.applicable:
        return "na"
    return "pass" if f.passed else "fail"


class TestDefectDetection:
    """An 80-series labeled corpus: 20 clean plus 10 per objective
    defect class.  Every injected defect must be flagged by exactly the
    checks its truth record entails, nothing more, nothing less."""

    def test_exhaustive_corpus_precision_and_recall(self, tmp_path):
        corpus = tmp_path / "corpus"
        truths = generate_corpus(
            corpus,
            clean=20,
            defects={kind: 10 for kind in OBJECTIVE_DEFECTS},
            seed=20260814,
            geometry=CORPUS_GEO,
        )
        assert len(truths) == 80
        by_id = {t["scan_id"]: t for t in truths}

        config = PipelineConfig(
            input_dir=corpus,
            output_dir=tmp_path / "out",
            generated_at=FIXED_STAMP,
        )
        started = time.perf_counter()
        qa_report, stats = run(config)
        elapsed = time.perf_counter() - started

        assert stats.scans == 80
        assert stats.errors == 0
        assert len(qa_report.records) == 80
        assert exit_code_for(qa_report) == 2  # the corpus does contain failures

        observed = {}
        for rec in qa_report.records:
            observed[rec.scan_id] = {
                f.check_id: finding_state(f) for f in rec.result.findings
            }

        mismatches = []
        for scan_id, truth in by_id.items():
            for check in OBJECTIVE_CHECKS:
                want = truth["expected"][check]
                got = observed[scan_id].get(check, "na")
                if want != got:
                    mismatches.append(f"{scan_id} {check}: want {want}, got {got}")
        assert not mismatches, "\n".join(mismatches)

        worst_precision = worst_recall = 1.0
        for check in OBJECTIVE_CHECKS:
            flagged = {s for s, st in observed.items() if st.get(check) == "fail"}
            entailed = {s for s, t in by_id.items() if t["expected"][check] == "fail"}
            assert entailed, f"{check} never exercised by the corpus"
            tp = len(flagged & entailed)
            precision = tp / len(flagged) if flagged else 1.0
            recall = tp / len(entailed)
            worst_precision = min(worst_precision, precision)
            worst_recall = min(worst_recall, recall)
            assert flagged == entailed, (
                f"{check}: flagged {sorted(flagged ^ entailed)} disagree with truth"
            )
        assert worst_precision == 1.0 and worst_recall == 1.0

        assert elapsed < 120.0, f"pipeline took {elapsed:.1f}s"
        ok(
            "defect detection",
            f"80 scans, precision 1.0 and recall 1.0 on every check, {elapsed:.1f}s",
        )


class TestCheckFormulas:
    """The completeness/uniqueness/spacing statistics against brute
    force on random inputs."""

    @staticmethod
    def manifest_with_instance_numbers(ins):
        return SeriesManifest(
            series_uid="1.2.3",
            slices=(None,) * len(ins),
            instance_numbers=tuple(ins),
            locations=(),
            slice_distances=(),
            modal_spacing=0.0,
            physical_length=0.0,
        )

    def test_formulas_match_brute_force(self):
        rng = random.Random(0xC123)

        for _ in range(1000):
            n = rng.randrange(1, 501)
            ins = [rng.randrange(1, n + n // 2 + 2) for _ in range(n)]
            completeness, uniqueness = check_instance_numbers(
                self.manifest_with_instance_numbers(ins)
            )

            lo, hi = min(ins), max(ins)
            present = set(ins)
            missing = sum(1 for v in range(lo, hi + 1) if v not in present)
            surplus = n - len(present)
            assert completeness.value == missing - surplus
            assert completeness.passed == (missing == surplus)

            arr = np.asarray(ins)
            pairs = int(np.count_nonzero(np.triu(arr[:, None] == arr[None, :], k=1)))
            assert uniqueness.value == pairs
            assert uniqueness.passed == (pairs == 0)

        for case in range(1000):
            n = rng.randrange(2, 120)
            step = rng.choice([0.5, 1.0, 1.25, 2.5, 3.0, 5.0])
            cursor = rng.uniform(-400.0, 400.0)
            locations = []
            for _ in range(n):
                locations.append(cursor)
                roll = rng.random()
                if roll < 0.08:
                    cursor += step * rng.randrange(2, 5)  # gap
                elif roll < 0.12:
                    cursor += 0.0  # duplicate position
                elif roll < 0.16:
                    cursor -= step  # jump back
                elif roll < 0.20:
                    cursor += step * rng.uniform(0.0, 2.0)  # drift
                else:
                    cursor += step
            thresholds = QaThresholds() if case % 2 else QaThresholds(epsilon=0.3)

            headers = headers_at(locations)
            rng.shuffle(headers)  # manifest must re-sort by instance number
            finding = check_slice_distance(build_manifest(headers), thresholds)

            dists = [b - a for a, b in zip(locations, locations[1:])]
            buckets = {}
            for d in dists:
                buckets.setdefault(round(abs(d), 3), []).append(abs(d))
            winner = max(buckets, key=lambda k: (len(buckets[k]), -k))
            modal = min(buckets[winner])
            eps = 0.3 if thresholds.epsilon is not None else 0.1 * modal
            expected = sum(1 for d in dists if d < eps) + sum(
                1 for d in dists if abs(d - modal) > eps
            )
            assert finding.value == expected
            assert finding.passed == (expected == 0)

        ok(
            "check formulas",
            "1000 instance-number multisets and 1000 spacing sequences match brute force",
        )


class TestRateArithmetic:
    """4 failures among 1,000 scans must print as exactly 0.40%."""

    def test_four_in_a_thousand(self):
        results = []
        for i in range(1000):
            failed = i in (3, 250, 500, 999)
            results.append(
                ScanResult(
                    scan_id=f"s{i:04d}",
                    findings=[
                        QaFinding(
                            check_id=CHECK_MISSING,
                            value=2 if failed else 0,
                            passed=not failed,
                        )
                    ],
                )
            )
        qa_report = aggregate(results, [], corpus_id="rates", generated_at=FIXED_STAMP)
        assert qa_report.rate_table[CHECK_MISSING] == {
            "failed": 4,
            "applicable": 1000,
            "rate": 0.004,
        }
        rows = render_rates_csv(qa_report).splitlines()
        assert "Objective QA (DICOM),C1,4,1000,0.40%" in rows
        assert format_rate(4 / 1000) == "0.40%"
        ok("rate arithmetic", "4/1000 renders as 0.40%, exact")


class TestReorientation:
    """All 48 signed axis permutations of a marked volume."""

    def test_every_signed_permutation(self):
        rng = np.random.default_rng(42)
        base_vox = rng.integers(-1000, 400, size=(5, 6, 7)).astype(np.int16)
        marker = np.int16(3071)
        base_vox[1, 2, 3] = marker
        assert np.count_nonzero(base_vox == marker) == 1
        base_affine = np.array(
            [
                [-0.7, 0.0, 0.0, 55.3],
                [0.0, 0.8, 0.0, -60.0],
                [0.0, 0.0, 2.5, -87.5],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
        base = Volume(voxels=base_vox, affine=base_affine, series_uid="1.9")
        assert check_orientation(base.affine).passed
        marker_world = base.world((1, 2, 3))[:3]
        base_sorted = np.sort(base_vox, axis=None)

        cases = 0
        for perm in itertools.permutations(range(3)):
            for signs in itertools.product((1, -1), repeat=3):
                vox = np.transpose(base_vox, perm)
                affine = np.eye(4)
                translation = base_affine[:3, 3].copy()
                for k in range(3):
                    column = base_affine[:3, perm[k]]
                    affine[:3, k] = column * signs[k]
                    if signs[k] < 0:
                        vox = np.flip(vox, axis=k)
                        translation += column * (base_vox.shape[perm[k]] - 1)
                affine[:3, 3] = translation
                scrambled = Volume(
                    voxels=np.ascontiguousarray(vox), affine=affine, series_uid="1.9"
                )
                # harness self-check: scrambling must preserve the marker's world position
                m = np.argwhere(scrambled.voxels == marker)
                assert len(m) == 1
                assert np.allclose(scrambled.world(m[0])[:3], marker_world, atol=1e-9)

                out = reorient_to_standard(scrambled)
                assert check_orientation(out.affine).passed
                assert out.dims == base.dims
                m = np.argwhere(out.voxels == marker)
                assert len(m) == 1
                drift = np.abs(out.world(m[0])[:3] - marker_world).max()
                assert drift <= 1e-5, f"perm={perm} signs={signs} drift={drift}"

                again = reorient_to_standard(out)
                assert np.array_equal(again.voxels, out.voxels)
                assert np.array_equal(again.affine, out.affine)

                assert np.array_equal(np.sort(out.voxels, axis=None), base_sorted)
                assert np.array_equal(out.voxels, base_vox)
                cases += 1
        assert cases == 48
        ok(
            "reorientation",
            "48 signed permutations normalize; marker drift <= 1e-5 mm; idempotent",
        )


class TestNiftiConformance:
    def test_round_trip_and_golden_bytes(self):
        rng = np.random.default_rng(9)
        voxels = rng.integers(-1024, 3072, size=(7, 6, 5)).astype(np.int16)
        affine = np.array(
            [
                [0.7, 0.0, 0.0, -44.1],
                [0.0, 0.7, 0.0, -39.9],
                [0.0, 0.0, 2.5, -61.5],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
        vol = Volume(voxels=voxels, affine=affine, series_uid="1.2.840.999")
        raw = write_nifti(vol)
        assert struct.unpack_from("<i", raw, 0)[0] == 348
        assert raw[344:348] == b"n+1\x00"

        back = read_nifti(raw)
        assert back.dims == (7, 6, 5)
        assert np.array_equal(back.voxels, voxels)
        assert np.abs(back.affine - affine).max() <= 1e-5
        assert back.series_uid == "1.2.840.999"

        gold_vox = np.arange(8, dtype=np.int16).reshape((2, 2, 2)) * 100 - 350
        gold_affine = np.array(
            [
                [-0.7, 0.0, 0.0, 12.5],
                [0.0, 0.7, 0.0, -31.0],
                [0.0, 0.0, 2.5, 40.0],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
        gold = Volume(voxels=gold_vox, affine=gold_affine, series_uid="1.2.840.99")
        assert write_nifti(gold) == golden_bytes_2x2x2(gold_vox, gold_affine, "1.2.840.99")
        ok(
            "NIfTI conformance",
            "lossless round trip; header 348 LE; magic n+1; golden 2x2x2 bytes equal",
        )


class TestLungRoi:
    def test_dice_and_crop_box_arithmetic(self):
        geometry = SynthGeometry()  # the full-size default grid
        phantom = default_phantom(geometry, seed=6)
        hu = np.ascontiguousarray(phantom_hu(geometry, phantom).transpose(1, 0, 2))
        affine = np.array(
            [
                [geometry.pixel_spacing[1], 0.0, 0.0, geometry.origin_mm[0]],
                [0.0, geometry.pixel_spacing[0], 0.0, geometry.origin_mm[1]],
                [0.0, 0.0, geometry.slice_step, geometry.origin_mm[2]],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
        vol = Volume(voxels=hu, affine=affine, series_uid="1.5")

        mask = lung_mask(vol, dilation_vox=0)
        truth = analytic_lung_mask(geometry, phantom)
        overlap = np.logical_and(mask.occupancy, truth).sum()
        dice = 2.0 * overlap / (mask.occupancy.sum() + truth.sum())
        assert dice > 0.95

        cropped = crop_roi(vol, mask, margin_fraction=0.10)

        occ = mask.occupancy
        filled = np.argwhere(occ)
        lo = filled.min(axis=0)
        hi = filled.max(axis=0)
        starts, stops = [], []
        for axis in range(3):
            pad = math.floor(0.10 * (int(hi[axis]) - int(lo[axis])) + 0.5)
            starts.append(max(0, int(lo[axis]) - pad))
            stops.append(min(vol.dims[axis] - 1, int(hi[axis]) + pad))

        assert cropped.dims == tuple(stops[a] - starts[a] + 1 for a in range(3))
        window = tuple(slice(starts[a], stops[a] + 1) for a in range(3))
        assert np.array_equal(cropped.voxels, vol.voxels[window])
        expected_origin = vol.affine[:3, 3] + vol.affine[:3, :3] @ np.asarray(
            starts, dtype=np.float64
        )
        assert np.array_equal(cropped.affine[:3, 3], expected_origin)
        assert np.array_equal(cropped.affine[:3, :3], vol.affine[:3, :3])
        assert int(occ[window].sum()) == mask.voxel_count  # nothing cropped away
        ok("lung ROI", f"Dice {dice:.4f} vs analytic ellipsoids; crop box closed-form exact")


def build_review_corpus(root):
    generate_series(root / "clean_a", geometry=RUN_GEO, seed=210)
    generate_series(root / "clean_b", geometry=RUN_GEO, seed=211)
    generate_series(root / "gap", geometry=RUN_GEO, seed=212)
    inject_defect(root / "gap", DefectSpec(kind="drop_slices", params={"k": 3}, seed=9))
    generate_series(root / "flip", geometry=RUN_GEO, seed=213)
    inject_defect(root / "flip", DefectSpec(kind="nonstandard_orientation", seed=9))


def run_config(input_dir, output_dir):
    return PipelineConfig(
        input_dir=Path(input_dir),
        output_dir=Path(output_dir),
        workers=1,
        generated_at=FIXED_STAMP,
        seed=5,
    )


def tree_digest(root, skip=()):
    digest = hashlib.sha256()
    for path in sorted(Path(root).rglob("*")):
        if not path.is_file():
            continue
        rel = path.relative_to(root).as_posix()
        if rel in skip:
            continue
        digest.update(rel.encode())
        digest.update(b"\0")
        digest.update(path.read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()


class TestDeterminismAndResume:
    def test_repeat_runs_and_interrupted_run_are_byte_identical(self, tmp_path, monkeypatch):
        corpus = tmp_path / "corpus"
        corpus.mkdir()
        build_review_corpus(corpus)

        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        out_c = tmp_path / "c"
        run(run_config(corpus, out_a))
        run(run_config(corpus, out_b))
        assert tree_digest(out_a) == tree_digest(out_b)

        real = pipeline.process_scan
        completed = {"n": 0}

        def interruptible(scan_dir, scan_id, config):
            if completed["n"] == 2:
                raise KeyboardInterrupt
            completed["n"] += 1
            return real(scan_dir, scan_id, config)

        monkeypatch.setattr(pipeline, "process_scan", interruptible)
        with pytest.raises(KeyboardInterrupt):
            run(run_config(corpus, out_c))
        monkeypatch.undo()

        _, stats = run(run_config(corpus, out_c))
        assert stats.cached == 2
        assert stats.processed == 2
        report_a = (out_a / "report" / "report.json").read_bytes()
        report_c = (out_c / "report" / "report.json").read_bytes()
        assert report_a == report_c
        # run_stats.json legitimately differs: it records the resume itself
        assert tree_digest(out_a, skip=("run_stats.json",)) == tree_digest(
            out_c, skip=("run_stats.json",)
        )
        ok(
            "determinism and resume",
            "repeat runs byte-identical; resumed run reused 2 cached scans and matched",
        )


class TestReviewLoop:
    """Secondary guarantee: verdicts POSTed over HTTP land in
    verdicts.jsonl and, after finalize, in the served report."""

    def test_fail_pass_flag_round_trip(self, tmp_path):
        corpus = tmp_path / "corpus"
        corpus.mkdir()
        build_review_corpus(corpus)
        out = tmp_path / "out"
        run(run_config(corpus, out))

        service = ReviewService(out, clock=lambda: "2026-03-02T08:00:00+00:00")
        server = make_server(service, host="127.0.0.1", port=0)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        base = f"http://127.0.0.1:{server.server_address[1]}"
        try:
            for scan_id, verdict in (
                ("clean_a", "fail"),
                ("clean_b", "flag"),
                ("flip", "pass"),
            ):
                body = json.dumps(
                    {"scan_id": scan_id, "verdict": verdict, "reviewer": "rt"}
                ).encode()
                req = urllib.request.Request(
                    base + "/api/verdicts",
                    data=body,
                    headers={"Content-Type": "application/json"},
                    method="POST",
                )
                with urllib.request.urlopen(req, timeout=10) as resp:
                    assert resp.status == 201

            req = urllib.request.Request(base + "/api/finalize", data=b"{}", method="POST")
            with urllib.request.urlopen(req, timeout=10) as resp:
                assert resp.status == 200

            with urllib.request.urlopen(base + "/api/report", timeout=10) as resp:
                served = json.loads(resp.read())
        finally:
            server.shutdown()
            server.server_close()
            thread.join(timeout=5)

        dispositions = {r["scan_id"]: r["disposition"] for r in served["records"]}
        assert dispositions == {
            "clean_a": "fail",  # reviewer fail overrides a clean objective slate
            "clean_b": "warn",  # flagged for follow-up
            "flip": "pass",  # reviewer pass clears the reorientation warn
            "gap": "fail",  # objective failure stands, unreviewed
        }
        lines = (out / "report" / "verdicts.jsonl").read_text().splitlines()
        assert len(lines) == 3
        assert [json.loads(l)["scan_id"] for l in lines] == ["clean_a", "clean_b", "flip"]
        ok(
            "review loop (secondary)",
            "3 verdicts over HTTP persisted and folded into the served report",
        )
