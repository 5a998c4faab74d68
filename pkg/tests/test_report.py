"""Aggregation, disposition and report rendering tests."""

import json

import pytest

from ctqa.errors import DuplicateScanId
from ctqa.report import (
    ReviewVerdict,
    ScanResult,
    aggregate,
    export,
    finding_status,
    format_rate,
    latest_verdicts,
    render_rates_csv,
    render_report_json,
    render_scans_csv,
    report_from_dict,
    report_to_dict,
    summarize_distributions,
)
from ctqa.series import QaFinding, not_applicable


def finding(check, passed, value=0, applicable=True):
    return QaFinding(check_id=check, value=value, passed=passed, applicable=applicable)


def result(scan_id="s1", findings=None, **kw):
    return ScanResult(scan_id=scan_id, findings=findings or [], **kw)


def verdict(scan_id="s1", v="pass", ts="2026-01-01T00:00:00Z", note="", reviewer="r1"):
    return ReviewVerdict(scan_id=scan_id, verdict=v, note=note, reviewer=reviewer, timestamp=ts)


def one_record(res, verdicts=(), sampled=()):
    report = aggregate([res], verdicts, sampled_ids=sampled)
    return report.records[0]


class TestDisposition:
    def test_clean_scan_passes(self):
        rec = one_record(result(findings=[finding("C1", True)]))
        assert rec.disposition == "pass"

    def test_objective_failure_fails(self):
        rec = one_record(result(findings=[finding("C1", False, 3)]))
        assert rec.disposition == "fail"

    def test_error_fails(self):
        rec = one_record(result(error="unparseable: no DICM marker"))
        assert rec.disposition == "fail"

    def test_reviewer_fail_wins_over_clean(self):
        rec = one_record(result(findings=[finding("C1", True)]), [verdict(v="fail")])
        assert rec.disposition == "fail"

    def test_reviewer_pass_cannot_clear_objective_failure(self):
        rec = one_record(result(findings=[finding("C4", False, 1)]), [verdict(v="pass")])
        assert rec.disposition == "fail"

    def test_reviewer_flag_warns(self):
        rec = one_record(result(findings=[finding("C1", True)]), [verdict(v="flag")])
        assert rec.disposition == "warn"

    def test_sampled_unreviewed_needs_review(self):
        rec = one_record(result(findings=[finding("C1", True)]), sampled=["s1"])
        assert rec.disposition == "needs-review"
        assert rec.sampled

    def test_reviewer_pass_clears_needs_review(self):
        rec = one_record(
            result(findings=[finding("C1", True)]), [verdict(v="pass")], sampled=["s1"]
        )
        assert rec.disposition == "pass"

    def test_auto_reorientation_warns(self):
        res = result(findings=[finding("C6", False, 0)], reoriented=True)
        assert one_record(res).disposition == "warn"

    def test_reviewer_pass_clears_reorientation_warn(self):
        res = result(findings=[finding("C6", False, 0)], reoriented=True)
        assert one_record(res, [verdict(v="pass")]).disposition == "pass"

    def test_unfixed_orientation_failure_fails(self):
        res = result(findings=[finding("C6", False, 0)], reoriented=False)
        assert one_record(res).disposition == "fail"


class TestFindingStatus:
    def test_table(self):
        assert finding_status(finding("C1", True)) == "pass"
        assert finding_status(finding("C1", False)) == "fail"
        assert finding_status(not_applicable("C3", "one slice")) == "na"
        assert finding_status(finding("C6", False), reoriented=True) == "warn"
        assert finding_status(finding("C7", False), reoriented=True) == "fail"


class TestLatestVerdicts:
    def test_latest_timestamp_wins(self):
        got = latest_verdicts(
            [verdict(v="fail", ts="2026-01-02T00:00:00Z"), verdict(v="pass", ts="2026-01-01T00:00:00Z")]
        )
        assert got["s1"].verdict == "fail"

    def test_tie_broken_by_log_position(self):
        got = latest_verdicts([verdict(v="fail"), verdict(v="pass")])
        assert got["s1"].verdict == "pass"

    def test_scans_resolved_independently(self):
        got = latest_verdicts([verdict("a", "fail"), verdict("b", "pass")])
        assert got["a"].verdict == "fail"
        assert got["b"].verdict == "pass"

    def test_invalid_verdict_value_rejected(self):
        with pytest.raises(ValueError):
            ReviewVerdict(scan_id="s", verdict="maybe")


class TestAggregate:
    def test_records_sorted_by_scan_id(self):
        report = aggregate([result("b"), result("a"), result("c")])
        assert [r.scan_id for r in report.records] == ["a", "b", "c"]

    def test_duplicate_scan_id_rejected(self):
        with pytest.raises(DuplicateScanId):
            aggregate([result("x"), result("x")])

    def test_rate_table_counts(self):
        results = [
            result("a", [finding("C1", True), finding("C3", False, 2)]),
            result("b", [finding("C1", False, 1), not_applicable("C3", "one slice")]),
            result("c", [finding("C1", True), finding("C3", True)]),
        ]
        table = aggregate(results).rate_table
        assert table["C1"] == {"failed": 1, "applicable": 3, "rate": 1 / 3}
        # the n/a scan is excluded from the denominator
        assert table["C3"] == {"failed": 1, "applicable": 2, "rate": 0.5}
        assert table["C6"] == {"failed": 0, "applicable": 0, "rate": None}

    def test_subjective_rate_counts_only_reviewed_scans(self):
        results = [result("a"), result("b"), result("c")]
        table = aggregate(results, [verdict("a", "fail"), verdict("b", "pass")]).rate_table
        assert table["SUBJ"] == {"failed": 1, "applicable": 2, "rate": 0.5}

    def test_failed_scan_count(self):
        report = aggregate(
            [result("a", [finding("C1", False, 1)]), result("b"), result("c", error="boom")]
        )
        assert report.failed_scan_count == 2

    def test_order_independence(self):
        results = [result("a", [finding("C1", True)]), result("b", [finding("C1", False, 1)])]
        r1 = aggregate(results, corpus_id="c", generated_at="t")
        r2 = aggregate(list(reversed(results)), corpus_id="c", generated_at="t")
        assert render_report_json(r1) == render_report_json(r2)


class TestFormatRate:
    def test_documented_examples(self):
        assert format_rate(0.004) == "0.40%"
        assert format_rate(0.039) == "3.9%"
        assert format_rate(0.0) == "0.00%"
        assert format_rate(None) == "n/a"

    def test_two_significant_figures_across_magnitudes(self):
        assert format_rate(0.0004) == "0.040%"
        assert format_rate(0.123) == "12%"
        assert format_rate(1.0) == "100%"
        assert format_rate(0.01) == "1.0%"


class TestDistributions:
    def test_binning(self):
        d = summarize_distributions(
            [(358.4, 2.5), (512.0, 2.5), (None, 0.625), (359.9, None)]
        )
        # 512 x 0.7mm detector -> 358.4mm FOV lands in the [350, 360) bin
        assert (350.0, 2) in d.fov_bins
        assert (510.0, 1) in d.fov_bins
        assert d.fov_missing == 1
        assert (2.5, 2) in d.spacing_bins
        assert (0.5, 1) in d.spacing_bins
        assert d.spacing_missing == 1

    def test_bin_edges_half_open(self):
        d = summarize_distributions([(10.0, 0.25), (19.999, 0.4999)])
        assert d.fov_bins == [(10.0, 2)]
        assert d.spacing_bins == [(0.25, 2)]


class TestRendering:
    def corpus_report(self):
        results = [
            result(
                "scan_a",
                [finding("C1", True), finding("C6", False)],
                reoriented=True,
                fov_mm=358.4,
                z_spacing_mm=2.5,
                montage="montages/scan_a.png",
                nifti="nifti/scan_a.nii.gz",
            ),
            result("scan_b", [finding("C1", False, 2)], fov_mm=448.0, z_spacing_mm=5.0),
            result("scan_c", error="unparseable: truncated header"),
        ]
        verdicts = [verdict("scan_a", "pass", ts="2026-02-01T09:00:00Z")]
        dist = summarize_distributions([(358.4, 2.5), (448.0, 5.0), (None, None)])
        return aggregate(
            results,
            verdicts,
            corpus_id="unit",
            generated_at="2026-02-01T10:00:00Z",
            sampled_ids=["scan_a"],
            review_sample_size=1,
            review_seed=7,
            distributions=dist,
        )

    def test_json_round_trip_is_byte_stable(self):
        report = self.corpus_report()
        text = render_report_json(report)
        again = report_from_dict(json.loads(text))
        assert render_report_json(again) == text

    def test_json_is_canonical(self):
        report = self.corpus_report()
        text = render_report_json(report)
        assert text == json.dumps(json.loads(text), indent=2, sort_keys=True) + "\n"
        assert text.endswith("\n")

    def test_report_dict_shape(self):
        d = report_to_dict(self.corpus_report())
        assert d["scan_count"] == 3
        assert d["failed_scan_count"] == 2
        assert d["corpus_id"] == "unit"
        assert d["review"]["sampled_ids"] == ["scan_a"]
        by_id = {r["scan_id"]: r for r in d["records"]}
        assert by_id["scan_a"]["disposition"] == "pass"  # reviewer pass clears reorient warn
        assert by_id["scan_b"]["disposition"] == "fail"
        assert by_id["scan_c"]["error"].startswith("unparseable")

    def test_rates_csv_row_order_and_formatting(self):
        text = render_rates_csv(self.corpus_report())
        lines = text.splitlines()
        assert lines[0] == "section,check,failed,applicable,rate"
        checks = [line.split(",")[1] for line in lines[1:]]
        assert checks == ["C1", "C2", "C3", "C4", "C5", "C6", "C7", "SUBJ"]
        sections = [line.split(",")[0] for line in lines[1:]]
        assert sections[:5] == ["Objective QA (DICOM)"] * 5
        assert sections[5:7] == ["Objective QA (NIfTI)"] * 2
        assert sections[7] == "Subjective QA (batch)"
        c1 = lines[1].split(",")
        assert c1[2:] == ["1", "2", "50%"]

    def test_scans_csv_contents(self):
        text = render_scans_csv(self.corpus_report())
        lines = text.splitlines()
        assert lines[0].startswith("scan_id,C1_value,C1_status")
        row_a = lines[1].split(",")
        assert row_a[0] == "scan_a"
        assert "warn" in row_a  # reoriented C6
        row_c = lines[3]
        assert "unparseable: truncated header" in row_c

    def test_export_writes_all_surfaces(self, tmp_path):
        report = self.corpus_report()
        paths = export(report, tmp_path)
        assert set(paths) == {
            "report.json", "rates.csv", "scans.csv", "fov_hist.csv", "spacing_hist.csv"
        }
        for p in paths.values():
            assert p.exists() and p.stat().st_size > 0
        assert (tmp_path / "report.json").read_text() == render_report_json(report)

    def test_export_round_trip_reproduces_bytes(self, tmp_path):
        report = self.corpus_report()
        export(report, tmp_path / "one")
        data = json.loads((tmp_path / "one" / "report.json").read_text())
        export(report_from_dict(data), tmp_path / "two")
        for name in ("report.json", "rates.csv", "scans.csv"):
            assert (tmp_path / "one" / name).read_bytes() == (
                tmp_path / "two" / name
            ).read_bytes(), name

    def test_hist_csv_edges(self, tmp_path):
        report = self.corpus_report()
        paths = export(report, tmp_path)
        fov = paths["fov_hist.csv"].read_text().splitlines()
        assert fov[0] == "bin_start_mm,bin_end_mm,count"
        assert fov[1] == "350.000,360.000,1"
