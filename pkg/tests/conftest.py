import numpy as np
import pytest

from ctqa.dicom import SliceHeader
from ctqa.synth import SynthGeometry, generate_series


SMALL_GEO = SynthGeometry(
    rows=64, columns=64, n_slices=72, pixel_spacing=(0.9, 0.9), slice_step=3.5
)


def make_header(
    instance_number,
    location=None,
    *,
    series_uid="1.2.3",
    position=None,
    orientation=(1.0, 0.0, 0.0, 0.0, 1.0, 0.0),
    spacing=(0.7, 0.7),
    rows=4,
    columns=4,
    thickness=None,
):
    return SliceHeader(
        series_uid=series_uid,
        instance_number=instance_number,
        slice_location=location,
        image_position=position,
        image_orientation=orientation,
        pixel_spacing=spacing,
        slice_thickness=thickness,
        rows=rows,
        columns=columns,
        bits_allocated=16,
    )


def headers_at(locations, **kwargs):
    """One header per location, instance numbers 1..n."""
    return [make_header(i + 1, loc, **kwargs) for i, loc in enumerate(locations)]


@pytest.fixture(scope="session")
def small_geometry():
    return SMALL_GEO


@pytest.fixture
def clean_series(tmp_path):
    """A small clean synthetic series on disk, with its truth record."""
    series_dir = tmp_path / "series"
    truth = generate_series(series_dir, geometry=SMALL_GEO, seed=11)
    return series_dir, truth


def volume_of(voxels, affine=None, series_uid="1.2.3"):
    from ctqa.volume import Volume

    voxels = np.asarray(voxels, dtype=np.float32)
    if affine is None:
        affine = np.diag([-1.0, 1.0, 1.0, 1.0])
    return Volume(voxels=voxels, affine=np.asarray(affine, dtype=float), series_uid=series_uid)
