"""Minimal read-only DICOM parser for CT slice QA.

Reads just enough of the standard to drive the structural checks: Part-10
files (128-byte preamble + ``DICM``) in explicit- or implicit-VR little
endian, plus headerless implicit-VR streams as emitted by some archives.
Anything compressed, big-endian or multi-frame is rejected with a typed
error instead of a guess, because downstream geometry math must never run
on bytes we only half understood.

Only single-frame, single-sample MONOCHROME2 pixel data is decoded.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    MissingRequiredTag,
    PixelLengthMismatch,
    UnparseableDicom,
    UnsupportedTransferSyntax,
)

# Transfer syntaxes this parser will walk.
IMPLICIT_VR_LE = "1.2.840.10008.1.2"
EXPLICIT_VR_LE = "1.2.840.10008.1.2.1"

_UNDEFINED = 0xFFFFFFFF

# Explicit-VR types whose length field is 4 bytes after a 2-byte reserve.
_LONG_VRS = frozenset({"OB", "OD", "OF", "OL", "OW", "SQ", "UC", "UN", "UR", "UT"})

# Tags the QA layer cares about.
TAG_TRANSFER_SYNTAX = (0x0002, 0x0010)
TAG_SERIES_UID = (0x0020, 0x000E)
TAG_INSTANCE_NUMBER = (0x0020, 0x0013)
TAG_SLICE_LOCATION = (0x0020, 0x1041)
TAG_IMAGE_POSITION = (0x0020, 0x0032)
TAG_IMAGE_ORIENTATION = (0x0020, 0x0037)
TAG_PIXEL_SPACING = (0x0028, 0x0030)
TAG_SLICE_THICKNESS = (0x0018, 0x0050)
TAG_SAMPLES_PER_PIXEL = (0x0028, 0x0002)
TAG_PHOTOMETRIC = (0x0028, 0x0004)
TAG_NUMBER_OF_FRAMES = (0x0028, 0x0008)
TAG_ROWS = (0x0028, 0x0010)
TAG_COLUMNS = (0x0028, 0x0011)
TAG_BITS_ALLOCATED = (0x0028, 0x0100)
TAG_PIXEL_REPRESENTATION = (0x0028, 0x0103)
TAG_RESCALE_INTERCEPT = (0x0028, 0x1052)
TAG_RESCALE_SLOPE = (0x0028, 0x1053)
TAG_PIXEL_DATA = (0x7FE0, 0x0010)

_ITEM = (0xFFFE, 0xE000)
_ITEM_DELIM = (0xFFFE, 0xE00D)
_SEQ_DELIM = (0xFFFE, 0xE0DD)

# VRs for implicit-VR lookups; only the tags above need an entry.
_IMPLICIT_VR = {
    TAG_SERIES_UID: "UI",
    TAG_INSTANCE_NUMBER: "IS",
    TAG_SLICE_LOCATION: "DS",
    TAG_IMAGE_POSITION: "DS",
    TAG_IMAGE_ORIENTATION: "DS",
    TAG_PIXEL_SPACING: "DS",
    TAG_SLICE_THICKNESS: "DS",
    TAG_SAMPLES_PER_PIXEL: "US",
    TAG_PHOTOMETRIC: "CS",
    TAG_NUMBER_OF_FRAMES: "IS",
    TAG_ROWS: "US",
    TAG_COLUMNS: "US",
    TAG_BITS_ALLOCATED: "US",
    TAG_PIXEL_REPRESENTATION: "US",
    TAG_RESCALE_INTERCEPT: "DS",
    TAG_RESCALE_SLOPE: "DS",
    TAG_PIXEL_DATA: "OW",
}

# Groups a bare (preamble-less) dataset may plausibly open with.  Anything
# else is treated as "not DICOM" rather than parsed on a hunch.
_KNOWN_FIRST_GROUPS = frozenset({0x0008, 0x0010, 0x0018, 0x0020, 0x0028, 0x0032, 0x0040})


@dataclass(frozen=True)
class SliceHeader:
    """Geometry and pixel-description tags of one CT slice."""

    series_uid: str
    instance_number: int
    slice_location: Optional[float]
    image_position: Optional[tuple[float, float, float]]
    image_orientation: Optional[tuple[float, float, float, float, float, float]]
    pixel_spacing: tuple[float, float]
    slice_thickness: Optional[float]
    rows: int
    columns: int
    bits_allocated: int
    pixel_representation: int = 0
    rescale_slope: float = 1.0
    rescale_intercept: float = 0.0
    photometric: str = "MONOCHROME2"
    samples_per_pixel: int = 1

    def __post_init__(self) -> None:
        if self.rows < 1 or self.columns < 1:
            raise MissingRequiredTag(
                f"Rows/Columns must be positive, got {self.rows}x{self.columns}"
            )
        if self.bits_allocated not in (8, 16):
            raise MissingRequiredTag(
                f"BitsAllocated must be 8 or 16, got {self.bits_allocated}"
            )
        if self.pixel_spacing[0] <= 0 or self.pixel_spacing[1] <= 0:
            raise MissingRequiredTag(f"PixelSpacing must be positive, got {self.pixel_spacing}")
        if self.slice_location is None and self.image_position is None:
            raise MissingRequiredTag("no geometry: SliceLocation and ImagePositionPatient absent")


@dataclass(frozen=True)
class PixelSlab:
    """One decoded slice: rescaled HU values, row-major."""

    width: int
    height: int
    values: np.ndarray  # float32, shape (height, width)


def _element_header(data: bytes, pos: int, explicit: bool):
    """Decode one element header.

    Returns (tag, vr, length, value_offset).  Raises UnparseableDicom on
    truncation or a corrupt VR field.
    """
    if pos + 8 > len(data):
        raise UnparseableDicom(f"truncated element header at offset {pos}")
    group, elem = struct.unpack_from("<HH", data, pos)
    tag = (group, elem)
    if group == 0xFFFE:
        # Item/delimiter headers never carry a VR.
        length = struct.unpack_from("<I", data, pos + 4)[0]
        return tag, None, length, pos + 8
    if explicit:
        vr_bytes = data[pos + 4:pos + 6]
        vr = vr_bytes.decode("ascii", errors="replace")
        if not vr.isalpha() or not vr.isupper():
            raise UnparseableDicom(
                f"bad VR bytes {vr_bytes!r} for tag ({group:04x},{elem:04x}) at offset {pos}"
            )
        if vr in _LONG_VRS:
            if pos + 12 > len(data):
                raise UnparseableDicom(f"truncated long-VR header at offset {pos}")
            length = struct.unpack_from("<I", data, pos + 8)[0]
            return tag, vr, length, pos + 12
        length = struct.unpack_from("<H", data, pos + 6)[0]
        return tag, vr, length, pos + 8
    vr = _IMPLICIT_VR.get(tag)
    length = struct.unpack_from("<I", data, pos + 4)[0]
    return tag, vr, length, pos + 8


def _skip_sequence(data: bytes, pos: int, explicit: bool) -> int:
    """Skip an undefined-length sequence body; return offset past its delimiter."""
    while True:
        if pos + 8 > len(data):
            raise UnparseableDicom("truncated sequence")
        tag, _, length, vpos = _element_header(data, pos, explicit)
        if tag == _SEQ_DELIM:
            return vpos
        if tag != _ITEM:
            raise UnparseableDicom(f"expected item tag inside sequence, got {tag}")
        if length == _UNDEFINED:
            pos = _skip_item(data, vpos, explicit)
        else:
            pos = vpos + length
            if pos > len(data):
                raise UnparseableDicom("truncated sequence item")


def _skip_item(data: bytes, pos: int, explicit: bool) -> int:
    """Skip elements of an undefined-length item up to its delimiter."""
    while True:
        tag, vr, length, vpos = _element_header(data, pos, explicit)
        if tag == _ITEM_DELIM:
            return vpos
        if length == _UNDEFINED:
            pos = _skip_sequence(data, vpos, explicit)
        else:
            pos = vpos + length
            if pos > len(data):
                raise UnparseableDicom("truncated element inside item")


def _read_dataset(data: bytes, pos: int, explicit: bool, *, stop_after_group=None) -> tuple[dict, int]:
    """Collect element values from ``pos`` to end of buffer.

    Sequences are skipped, everything else is kept as raw bytes keyed by
    tag.  ``stop_after_group`` bounds reading to one group (used for file
    meta, which is always group 0002).
    """
    elements: dict[tuple[int, int], bytes] = {}
    n = len(data)
    while pos < n:
        if stop_after_group is not None and pos + 2 <= n:
            group = struct.unpack_from("<H", data, pos)[0]
            if group != stop_after_group:
                break
        tag, vr, length, vpos = _element_header(data, pos, explicit)
        if tag in (_ITEM, _ITEM_DELIM, _SEQ_DELIM):
            raise UnparseableDicom(f"unexpected sequence delimiter {tag} at top level")
        if length == _UNDEFINED:
            if tag == TAG_PIXEL_DATA:
                raise UnparseableDicom(
                    "undefined-length PixelData (encapsulated frames are not supported)"
                )
            if vr in ("SQ", "UN", None):
                pos = _skip_sequence(data, vpos, explicit)
                continue
            raise UnparseableDicom(f"undefined length on non-sequence tag {tag}")
        end = vpos + length
        if end > n:
            raise UnparseableDicom(
                f"truncated value for tag ({tag[0]:04x},{tag[1]:04x}): "
                f"need {length} bytes, have {n - vpos}"
            )
        if vr != "SQ":
            elements[tag] = data[vpos:end]
        pos = end
    return elements, pos


def _read_file(data: bytes) -> dict:
    """Return the element map of a DICOM byte stream.

    Accepts Part-10 files and headerless implicit-VR datasets.  Raises
    UnparseableDicom / UnsupportedTransferSyntax as appropriate.
    """
    if len(data) >= 132 and data[128:132] == b"DICM":
        meta, pos = _read_dataset(data, 132, True, stop_after_group=0x0002)
        ts_raw = meta.get(TAG_TRANSFER_SYNTAX)
        if ts_raw is None:
            raise UnparseableDicom("file meta lacks TransferSyntaxUID")
        ts = _decode_uid(ts_raw)
        if ts == EXPLICIT_VR_LE:
            explicit = True
        elif ts == IMPLICIT_VR_LE:
            explicit = False
        else:
            raise UnsupportedTransferSyntax(ts)
        elements, _ = _read_dataset(data, pos, explicit)
        return elements
    # No preamble: only a bare implicit-VR dataset is plausible, and then
    # only if the stream opens on a standard group.
    if len(data) < 8:
        raise UnparseableDicom("too short to be a DICOM stream")
    group = struct.unpack_from("<H", data, 0)[0]
    if group not in _KNOWN_FIRST_GROUPS:
        raise UnparseableDicom("no DICM magic and no recognizable opening group")
    elements, _ = _read_dataset(data, 0, False)
    return elements


def _decode_uid(raw: bytes) -> str:
    return raw.decode("ascii", errors="replace").strip("\x00 ")


def _decode_str(raw: bytes) -> str:
    return raw.decode("ascii", errors="replace").strip("\x00 ")


def _parse_ds(raw: bytes, tag_name: str) -> list[float]:
    """Parse a decimal string, tolerating padding and explicit '+' signs."""
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MissingRequiredTag(f"{tag_name}: non-ASCII decimal string") from exc
    values = []
    for part in text.split("\\"):
        part = part.strip(" \x00")
        if not part:
            continue
        try:
            values.append(float(part))
        except ValueError as exc:
            raise MissingRequiredTag(f"{tag_name}: malformed decimal string {part!r}") from exc
    return values


def _parse_is(raw: bytes, tag_name: str) -> int:
    try:
        text = raw.decode("ascii").strip(" \x00")
        return int(text)
    except (UnicodeDecodeError, ValueError) as exc:
        raise MissingRequiredTag(f"{tag_name}: malformed integer string {raw!r}") from exc


def _parse_us(raw: bytes, tag_name: str) -> int:
    if len(raw) < 2:
        raise MissingRequiredTag(f"{tag_name}: unsigned short shorter than 2 bytes")
    return struct.unpack_from("<H", raw, 0)[0]


def parse_slice(data: bytes) -> SliceHeader:
    """Parse one slice file into a :class:`SliceHeader`.

    Args:
        data: complete file contents.

    Raises:
        UnparseableDicom: bytes are not walkable DICOM, or multi-frame.
        UnsupportedTransferSyntax: compressed / big-endian syntaxes.
        MissingRequiredTag: instance number, geometry or pixel description
            absent or malformed.
    """
    elements = _read_file(bytes(data))

    frames_raw = elements.get(TAG_NUMBER_OF_FRAMES)
    if frames_raw is not None:
        frames = _parse_is(frames_raw, "NumberOfFrames")
        if frames > 1:
            raise UnparseableDicom(f"multi-frame file ({frames} frames) not supported")

    in_raw = elements.get(TAG_INSTANCE_NUMBER)
    if in_raw is None:
        raise MissingRequiredTag("InstanceNumber (0020,0013) absent")
    instance_number = _parse_is(in_raw, "InstanceNumber")

    def _required(tag, name):
        raw = elements.get(tag)
        if raw is None:
            raise MissingRequiredTag(f"{name} absent")
        return raw

    rows = _parse_us(_required(TAG_ROWS, "Rows (0028,0010)"), "Rows")
    columns = _parse_us(_required(TAG_COLUMNS, "Columns (0028,0011)"), "Columns")
    bits = _parse_us(_required(TAG_BITS_ALLOCATED, "BitsAllocated (0028,0100)"), "BitsAllocated")
    spacing = _parse_ds(_required(TAG_PIXEL_SPACING, "PixelSpacing (0028,0030)"), "PixelSpacing")
    if len(spacing) != 2:
        raise MissingRequiredTag(f"PixelSpacing needs 2 values, got {len(spacing)}")

    slice_location: Optional[float] = None
    loc_raw = elements.get(TAG_SLICE_LOCATION)
    if loc_raw is not None:
        loc_vals = _parse_ds(loc_raw, "SliceLocation")
        if loc_vals:
            slice_location = loc_vals[0]

    image_position = None
    pos_raw = elements.get(TAG_IMAGE_POSITION)
    if pos_raw is not None:
        pos_vals = _parse_ds(pos_raw, "ImagePositionPatient")
        if len(pos_vals) == 3:
            image_position = (pos_vals[0], pos_vals[1], pos_vals[2])
        elif pos_vals:
            raise MissingRequiredTag(
                f"ImagePositionPatient needs 3 values, got {len(pos_vals)}"
            )

    image_orientation = None
    ori_raw = elements.get(TAG_IMAGE_ORIENTATION)
    if ori_raw is not None:
        ori_vals = _parse_ds(ori_raw, "ImageOrientationPatient")
        if len(ori_vals) == 6:
            image_orientation = tuple(ori_vals)
        elif ori_vals:
            raise MissingRequiredTag(
                f"ImageOrientationPatient needs 6 values, got {len(ori_vals)}"
            )

    thickness = None
    th_raw = elements.get(TAG_SLICE_THICKNESS)
    if th_raw is not None:
        th_vals = _parse_ds(th_raw, "SliceThickness")
        if th_vals:
            thickness = th_vals[0]

    slope = 1.0
    intercept = 0.0
    slope_raw = elements.get(TAG_RESCALE_SLOPE)
    if slope_raw is not None:
        vals = _parse_ds(slope_raw, "RescaleSlope")
        if vals:
            slope = vals[0]
    inter_raw = elements.get(TAG_RESCALE_INTERCEPT)
    if inter_raw is not None:
        vals = _parse_ds(inter_raw, "RescaleIntercept")
        if vals:
            intercept = vals[0]

    pixel_repr = 0
    pr_raw = elements.get(TAG_PIXEL_REPRESENTATION)
    if pr_raw is not None:
        pixel_repr = _parse_us(pr_raw, "PixelRepresentation")

    photometric = "MONOCHROME2"
    ph_raw = elements.get(TAG_PHOTOMETRIC)
    if ph_raw is not None:
        photometric = _decode_str(ph_raw)

    samples = 1
    sp_raw = elements.get(TAG_SAMPLES_PER_PIXEL)
    if sp_raw is not None:
        samples = _parse_us(sp_raw, "SamplesPerPixel")

    series_raw = elements.get(TAG_SERIES_UID)
    series_uid = _decode_uid(series_raw) if series_raw is not None else ""

    return SliceHeader(
        series_uid=series_uid,
        instance_number=instance_number,
        slice_location=slice_location,
        image_position=image_position,
        image_orientation=image_orientation,
        pixel_spacing=(spacing[0], spacing[1]),
        slice_thickness=thickness,
        rows=rows,
        columns=columns,
        bits_allocated=bits,
        pixel_representation=pixel_repr,
        rescale_slope=slope,
        rescale_intercept=intercept,
        photometric=photometric,
        samples_per_pixel=samples,
    )


def decode_pixels(header: SliceHeader, data: bytes) -> PixelSlab:
    """Decode the pixel payload of ``data`` into rescaled HU.

    The header must come from :func:`parse_slice` on the same bytes.
    Output does not depend on element order in the file.

    Raises:
        PixelLengthMismatch: PixelData absent or its length disagrees
            with Rows x Columns x BitsAllocated/8.
        UnparseableDicom: non-MONOCHROME2 or multi-sample pixels.
    """
    if header.photometric != "MONOCHROME2":
        raise UnparseableDicom(f"unsupported PhotometricInterpretation {header.photometric!r}")
    if header.samples_per_pixel != 1:
        raise UnparseableDicom(f"unsupported SamplesPerPixel {header.samples_per_pixel}")

    elements = _read_file(bytes(data))
    raw = elements.get(TAG_PIXEL_DATA)
    if raw is None:
        raise PixelLengthMismatch("PixelData (7fe0,0010) absent")

    bytes_per = header.bits_allocated // 8
    expected = header.rows * header.columns * bytes_per
    if len(raw) == expected + 1 and expected % 2 == 1:
        raw = raw[:expected]  # even-length padding byte
    if len(raw) != expected:
        raise PixelLengthMismatch(
            f"PixelData carries {len(raw)} bytes, geometry needs {expected}"
        )

    if header.bits_allocated == 16:
        dtype = np.dtype("<i2") if header.pixel_representation == 1 else np.dtype("<u2")
    else:
        dtype = np.dtype("i1") if header.pixel_representation == 1 else np.dtype("u1")
    stored = np.frombuffer(raw, dtype=dtype).reshape(header.rows, header.columns)
    hu = stored.astype(np.float32) * np.float32(header.rescale_slope) + np.float32(
        header.rescale_intercept
    )
    return PixelSlab(width=header.columns, height=header.rows, values=hu)
