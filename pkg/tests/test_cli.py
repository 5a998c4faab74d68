"""Command line interface tests (in-process, no subprocesses)."""

import json

import numpy as np
import pytest

from conftest import volume_of
from ctqa.cli import main, read_config_file
from ctqa.errors import ConfigError
from ctqa.nifti import load_volume, save_volume
from ctqa.synth import DefectSpec, SynthGeometry, generate_series, inject_defect
from ctqa.volume import check_orientation

GEO = SynthGeometry(rows=32, columns=32, n_slices=72, pixel_spacing=(0.9, 0.9), slice_step=3.5)


@pytest.fixture(scope="module")
def clean_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_clean")
    for i in range(2):
        generate_series(root / f"s{i}", geometry=GEO, seed=20 + i)
    return root


@pytest.fixture(scope="module")
def failing_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_failing")
    generate_series(root / "ok", geometry=GEO, seed=30)
    generate_series(root / "bad", geometry=GEO, seed=31)
    inject_defect(root / "bad", DefectSpec(kind="drop_slices", params={"k": 3}, seed=1))
    return root


def qa(*extra):
    return main(["qa", *extra])


class TestQaCommand:
    def test_clean_run_exits_zero(self, clean_corpus, tmp_path, capsys):
        code = qa(str(clean_corpus), "-o", str(tmp_path / "out"), "--workers", "1")
        assert code == 0
        out = capsys.readouterr().out
        assert "scans: 2 (processed 2, cached 0)" in out
        assert "pass: 2" in out
        assert "report.json" in out
        assert (tmp_path / "out" / "report" / "report.json").is_file()

    def test_failing_corpus_exits_two(self, failing_corpus, tmp_path, capsys):
        code = qa(str(failing_corpus), "-o", str(tmp_path / "out"), "--workers", "1")
        assert code == 2
        out = capsys.readouterr().out
        assert "fail: 1" in out

    def test_missing_input_exits_one(self, tmp_path, capsys):
        code = qa(str(tmp_path / "nope"), "-o", str(tmp_path / "out"))
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_cached_second_run(self, clean_corpus, tmp_path, capsys):
        out = str(tmp_path / "out")
        qa(str(clean_corpus), "-o", out, "--workers", "1")
        capsys.readouterr()
        code = qa(str(clean_corpus), "-o", out, "--workers", "1")
        assert code == 0
        assert "cached 2" in capsys.readouterr().out

    def test_threshold_flags_change_outcomes(self, clean_corpus, tmp_path):
        # corpus length is 71 * 3.5 = 248.5mm; demand at least 300mm
        code = qa(
            str(clean_corpus), "-o", str(tmp_path / "out"),
            "--workers", "1", "--sigma1", "300",
        )
        assert code == 2

    def test_checks_subset_flag(self, failing_corpus, tmp_path):
        code = qa(
            str(failing_corpus), "-o", str(tmp_path / "out"),
            "--workers", "1", "--checks", "C2,C4",
        )
        assert code == 0  # the dropped-slice defect only trips C1/C3

    def test_unknown_check_exits_one(self, clean_corpus, tmp_path, capsys):
        code = qa(
            str(clean_corpus), "-o", str(tmp_path / "out"), "--checks", "C1,C99"
        )
        assert code == 1
        assert "unknown check" in capsys.readouterr().err

    def test_bad_phi_exits_one(self, clean_corpus, tmp_path, capsys):
        code = qa(str(clean_corpus), "-o", str(tmp_path / "out"), "--phi", "1,2")
        assert code == 1

    def test_input_equals_output_exits_one(self, clean_corpus, capsys):
        code = qa(str(clean_corpus), "-o", str(clean_corpus))
        assert code == 1
        assert "differ" in capsys.readouterr().err


class TestConfigFile:
    def test_keys_parsed(self, tmp_path):
        cfg = tmp_path / "qa.cfg"
        cfg.write_text(
            "# comment line\n"
            "crop = off\n"
            "review-sample = 3   # inline comment\n"
            "phi = 2, 2, 6\n"
            "sigma1 = 250\n"
        )
        values = read_config_file(cfg)
        assert values == {
            "crop": False,
            "review_sample": 3,
            "phi": (2.0, 2.0, 6.0),
            "sigma1": 250.0,
        }

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "qa.cfg"
        cfg.write_text("sharpen = on\n")
        with pytest.raises(ConfigError, match="unknown option"):
            read_config_file(cfg)

    def test_missing_separator_rejected(self, tmp_path):
        cfg = tmp_path / "qa.cfg"
        cfg.write_text("just words\n")
        with pytest.raises(ConfigError, match="key = value"):
            read_config_file(cfg)

    def test_bad_bool_rejected(self, tmp_path):
        cfg = tmp_path / "qa.cfg"
        cfg.write_text("crop = sideways\n")
        with pytest.raises(ConfigError, match="boolean"):
            read_config_file(cfg)

    def test_config_applies_and_flags_win(self, clean_corpus, tmp_path):
        cfg = tmp_path / "qa.cfg"
        cfg.write_text("sigma1 = 300\nworkers = 1\n")
        # config alone: 248.5mm length fails the 300mm floor
        code = main([
            "qa", str(clean_corpus), "-o", str(tmp_path / "o1"), "--config", str(cfg)
        ])
        assert code == 2
        # the flag overrides the config value
        code = main([
            "qa", str(clean_corpus), "-o", str(tmp_path / "o2"), "--config", str(cfg),
            "--sigma1", "200",
        ])
        assert code == 0

    def test_missing_config_file_exits_one(self, clean_corpus, tmp_path, capsys):
        code = qa(
            str(clean_corpus), "-o", str(tmp_path / "out"),
            "--config", str(tmp_path / "none.cfg"),
        )
        assert code == 1


class TestUsageErrors:
    def test_no_arguments(self, capsys):
        assert main([]) == 1
        capsys.readouterr()

    def test_unknown_subcommand(self, capsys):
        assert main(["polish"]) == 1
        capsys.readouterr()

    def test_unknown_flag(self, capsys):
        assert main(["qa", "in", "-o", "out", "--loud"]) == 1
        capsys.readouterr()

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "Structural QA" in capsys.readouterr().out

    def test_subcommand_help_exits_zero(self, capsys):
        assert main(["qa", "--help"]) == 0
        capsys.readouterr()


class TestConvertCommand:
    def test_series_to_nifti(self, clean_corpus, tmp_path, capsys):
        out = tmp_path / "vol.nii.gz"
        code = main(["convert", str(clean_corpus / "s0"), "-o", str(out)])
        assert code == 0
        assert f"wrote {out}" in capsys.readouterr().out
        vol = load_volume(out)
        assert vol.dims == (32, 32, 72)

    def test_reorient_flag(self, tmp_path):
        series = tmp_path / "flip"
        generate_series(series, geometry=GEO, seed=40)
        inject_defect(series, DefectSpec(kind="nonstandard_orientation", seed=1))
        plain = tmp_path / "plain.nii.gz"
        fixed = tmp_path / "fixed.nii.gz"
        assert main(["convert", str(series), "-o", str(plain)]) == 0
        assert main(["convert", str(series), "-o", str(fixed), "--reorient"]) == 0
        assert not check_orientation(load_volume(plain).affine).passed
        assert check_orientation(load_volume(fixed).affine).passed

    def test_unparseable_series_exits_two(self, tmp_path, capsys):
        series = tmp_path / "junk"
        series.mkdir()
        (series / "a.dcm").write_bytes(b"not dicom at all")
        code = main(["convert", str(series), "-o", str(tmp_path / "v.nii.gz")])
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestCropAndGalleryCommands:
    @pytest.fixture
    def volume_file(self, clean_corpus, tmp_path):
        out = tmp_path / "vol.nii.gz"
        main(["convert", str(clean_corpus / "s0"), "-o", str(out)])
        return out

    def test_crop(self, volume_file, tmp_path, capsys):
        out = tmp_path / "crop.nii.gz"
        code = main(["crop", str(volume_file), "-o", str(out)])
        assert code == 0
        assert "dims" in capsys.readouterr().out
        cropped = load_volume(out)
        full = load_volume(volume_file)
        assert cropped.voxels.size < full.voxels.size

    def test_crop_without_lungs_exits_two(self, tmp_path, capsys):
        vol = volume_of(np.zeros((8, 8, 8), dtype=np.int16))
        path = tmp_path / "solid.nii.gz"
        save_volume(vol, path)
        code = main(["crop", str(path), "-o", str(tmp_path / "c.nii.gz")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_gallery(self, volume_file, tmp_path, capsys):
        out = tmp_path / "m.png"
        code = main(["gallery", str(volume_file), "-o", str(out), "--tile-size", "64"])
        assert code == 0
        assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


class TestReportCommand:
    def test_refolds_verdicts(self, failing_corpus, tmp_path, capsys):
        out = tmp_path / "out"
        qa(str(failing_corpus), "-o", str(out), "--workers", "1")
        capsys.readouterr()
        (out / "report" / "verdicts.jsonl").write_text(
            json.dumps(
                {"scan_id": "ok", "verdict": "pass", "timestamp": "2026-03-02T00:00:00Z"}
            )
            + "\n"
        )
        code = main(["report", str(out)])
        assert code == 2  # the gap scan still fails
        assert "1 reviewed" in capsys.readouterr().out
        data = json.loads((out / "report" / "report.json").read_text())
        rec = next(r for r in data["records"] if r["scan_id"] == "ok")
        assert rec["verdict"]["verdict"] == "pass"

    def test_all_pass_exits_zero(self, clean_corpus, tmp_path, capsys):
        out = tmp_path / "out"
        qa(str(clean_corpus), "-o", str(out), "--workers", "1")
        code = main(["report", str(out)])
        assert code == 0
        capsys.readouterr()

    def test_missing_bundle_exits_one(self, tmp_path, capsys):
        code = main(["report", str(tmp_path)])
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestServeCommand:
    def test_missing_bundle_exits_one(self, tmp_path, capsys):
        code = main(["serve", str(tmp_path)])
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestSynthCommand:
    def test_generates_labeled_corpus(self, tmp_path, capsys):
        code = main([
            "synth", str(tmp_path / "corpus"),
            "--clean", "1",
            "--defect", "truncate=1",
            "--rows", "16", "--cols", "16", "--slices", "8",
            "--pixel-spacing", "0.9,0.9", "--slice-step", "3.5",
            "--seed", "4",
        ])
        assert code == 0
        assert "wrote 2 series" in capsys.readouterr().out
        names = sorted(p.name for p in (tmp_path / "corpus").iterdir() if p.is_dir())
        assert names == ["scan_0000_clean", "scan_0001_truncate"]
        assert (tmp_path / "corpus" / "scan_0001_truncate.truth.json").is_file()

    def test_defect_flag_needs_count(self, tmp_path, capsys):
        code = main(["synth", str(tmp_path / "c"), "--defect", "truncate"])
        assert code == 1
        assert "KIND=N" in capsys.readouterr().err

    def test_unknown_defect_kind(self, tmp_path, capsys):
        code = main(["synth", str(tmp_path / "c"), "--defect", "melt=1"])
        assert code == 1
        assert "unknown defect kind" in capsys.readouterr().err

    def test_bad_geometry_exits_two(self, tmp_path, capsys):
        # dims below the generator's floor are a data error, not usage
        code = main(["synth", str(tmp_path / "c"), "--rows", "2"])
        assert code == 2
        capsys.readouterr()
