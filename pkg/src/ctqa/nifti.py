"""NIfTI-1 single-file reader/writer.

Writes the minimal conformant subset this pipeline needs: little-endian,
348-byte header, data at offset 352, 3-D int16 or float32 payloads, sform
affine (qform_code 0).  The reader is the exact inverse on those fields
and rejects everything else loudly; it is not a general NIfTI library.

File helpers honor the conventional suffixes: ``.nii`` plain and
``.nii.gz`` gzip-compressed (written with mtime=0 so output bytes are
reproducible).
"""

from __future__ import annotations

import gzip
import io
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import BadMagic, HeaderDimMismatch, UnsupportedDatatype
from .volume import Volume

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

DT_INT16 = 4
DT_FLOAT32 = 16

_UNITS_MM = 2  # NIFTI_UNITS_MM


def _choose_datatype(voxels: np.ndarray) -> int:
    """int16 when every value is an in-range integer, else float32."""
    if np.issubdtype(voxels.dtype, np.integer):
        if voxels.size == 0 or (voxels.min() >= -32768 and voxels.max() <= 32767):
            return DT_INT16
        return DT_FLOAT32
    if (
        np.all(voxels == np.rint(voxels))
        and voxels.min() >= -32768
        and voxels.max() <= 32767
    ):
        return DT_INT16
    return DT_FLOAT32


def write_nifti(volume: Volume) -> bytes:
    """Serialize a volume to NIfTI-1 bytes.

    Header: sizeof_hdr=348, dim[0]=3, datatype 4 or 16 by value range,
    pixdim[1..3] = affine column norms, vox_offset=352, sform_code=1 with
    srow_x/y/z = affine rows, qform_code=0, magic "n+1\\0".
    """
    nx, ny, nz = volume.dims
    datatype = _choose_datatype(volume.voxels)
    if datatype == DT_INT16:
        bitpix, np_dtype = 16, np.dtype("<i2")
    else:
        bitpix, np_dtype = 32, np.dtype("<f4")

    pixdim = volume.voxel_sizes

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    hdr[38] = ord("r")  # 'regular' flag, kept for viewer compatibility
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, bitpix)
    struct.pack_into(
        "<8f", hdr, 76, 1.0, float(pixdim[0]), float(pixdim[1]), float(pixdim[2]),
        0.0, 0.0, 0.0, 0.0,
    )
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)  # scl_inter
    hdr[123] = _UNITS_MM
    descrip = f"ctqa:{volume.series_uid}".encode("ascii", errors="replace")[:79]
    hdr[148:148 + len(descrip)] = descrip
    struct.pack_into("<h", hdr, 252, 0)  # qform_code
    struct.pack_into("<h", hdr, 254, 1)  # sform_code
    for row in range(3):
        struct.pack_into("<4f", hdr, 280 + 16 * row, *volume.affine[row, :])
    hdr[344:348] = MAGIC

    data = np.asarray(volume.voxels).astype(np_dtype, copy=False)
    payload = data.tobytes(order="F")
    return bytes(hdr) + b"\x00\x00\x00\x00" + payload


def read_nifti(data: bytes) -> Volume:
    """Parse NIfTI-1 bytes back into a :class:`Volume`.

    Raises:
        BadMagic: magic is not "n+1\\0" (detached "ni1" headers rejected).
        HeaderDimMismatch: header size, dims or payload length are off,
            or no usable sform.
        UnsupportedDatatype: datatype other than 4 (int16) / 16 (float32).
    """
    if len(data) < VOX_OFFSET:
        raise HeaderDimMismatch(f"{len(data)} bytes is shorter than any NIfTI-1 file")
    magic = bytes(data[344:348])
    if magic != MAGIC:
        raise BadMagic(f"magic {magic!r}, expected {MAGIC!r}")
    (sizeof_hdr,) = struct.unpack_from("<i", data, 0)
    if sizeof_hdr != HEADER_SIZE:
        raise HeaderDimMismatch(
            f"sizeof_hdr {sizeof_hdr}, expected {HEADER_SIZE} (big-endian files unsupported)"
        )
    dim = struct.unpack_from("<8h", data, 40)
    if dim[0] != 3:
        raise HeaderDimMismatch(f"dim[0]={dim[0]}, only 3-D volumes supported")
    nx, ny, nz = dim[1], dim[2], dim[3]
    if min(nx, ny, nz) < 1:
        raise HeaderDimMismatch(f"non-positive dims {(nx, ny, nz)}")
    (datatype,) = struct.unpack_from("<h", data, 70)
    if datatype == DT_INT16:
        np_dtype = np.dtype("<i2")
    elif datatype == DT_FLOAT32:
        np_dtype = np.dtype("<f4")
    else:
        raise UnsupportedDatatype(f"datatype {datatype}, expected 4 or 16")
    (vox_offset_f,) = struct.unpack_from("<f", data, 108)
    vox_offset = int(round(vox_offset_f))
    if vox_offset < VOX_OFFSET:
        raise HeaderDimMismatch(f"vox_offset {vox_offset_f} below {VOX_OFFSET}")
    (sform_code,) = struct.unpack_from("<h", data, 254)
    if sform_code < 1:
        raise HeaderDimMismatch("sform_code must be >= 1; qform-only files unsupported")

    affine = np.eye(4)
    for row in range(3):
        affine[row, :] = struct.unpack_from("<4f", data, 280 + 16 * row)

    count = nx * ny * nz
    need = count * np_dtype.itemsize
    if len(data) - vox_offset != need:
        raise HeaderDimMismatch(
            f"payload is {len(data) - vox_offset} bytes, dims need {need}"
        )
    voxels = np.frombuffer(data, dtype=np_dtype, count=count, offset=vox_offset)
    voxels = voxels.reshape((nx, ny, nz), order="F").copy()

    descrip = bytes(data[148:228]).split(b"\x00", 1)[0].decode("ascii", errors="replace")
    series_uid = descrip[5:] if descrip.startswith("ctqa:") else ""

    return Volume(voxels=voxels, affine=affine, series_uid=series_uid, history=("nifti-read",))


def save_volume(volume: Volume, path: Union[str, Path]) -> Path:
    """Write a volume to ``path``; gzip when the name ends in .gz."""
    path = Path(path)
    raw = write_nifti(volume)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.name.endswith(".gz"):
        buf = io.BytesIO()
        with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as zf:
            zf.write(raw)
        path.write_bytes(buf.getvalue())
    else:
        path.write_bytes(raw)
    return path


def load_volume(path: Union[str, Path]) -> Volume:
    """Read a .nii or .nii.gz file."""
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return read_nifti(raw)
