"""Exception types raised by the QA pipeline.

Every failure mode that a caller might want to catch gets its own class so
batch code can sort hard stops (bad bytes) from per-scan findings.  All of
them inherit from :class:`CtqaError`.
"""

from __future__ import annotations


class CtqaError(Exception):
    """Base class for all errors raised by this package."""


# --- DICOM parsing -------------------------------------------------------

class UnparseableDicom(CtqaError):
    """The byte stream is not a DICOM file this parser can walk."""


class UnsupportedTransferSyntax(CtqaError):
    """Compressed, big-endian or otherwise unsupported transfer syntax."""


class MissingRequiredTag(CtqaError):
    """A tag the QA checks depend on is absent or carries a broken value."""


class PixelLengthMismatch(CtqaError):
    """PixelData length disagrees with Rows x Columns x BitsAllocated/8."""


# --- series manifest ------------------------------------------------------

class EmptySeries(CtqaError):
    """No slices were supplied."""


class MixedSeries(CtqaError):
    """Slices from more than one SeriesInstanceUID were mixed together."""


class NoGeometry(CtqaError):
    """Neither SliceLocation nor ImagePositionPatient is usable."""


class TooFewSlices(CtqaError):
    """An operation needs at least two slices."""


# --- volume / NIfTI -------------------------------------------------------

class ShapeMismatch(CtqaError):
    """Slices within one series disagree on Rows/Columns."""


class InconsistentPixelSpacing(CtqaError):
    """In-plane pixel spacing varies across slices beyond tolerance."""


class BadMagic(CtqaError):
    """NIfTI magic bytes are wrong (two-file 'ni1' pairs are rejected too)."""


class UnsupportedDatatype(CtqaError):
    """NIfTI datatype other than int16 (4) or float32 (16)."""


class HeaderDimMismatch(CtqaError):
    """NIfTI header dims/size do not describe the payload."""


class ObliqueAffine(CtqaError):
    """No axis permutation/flip can align the affine with the world axes."""


class EmptyMask(CtqaError):
    """Lung segmentation produced no voxels."""


class DegenerateDim(CtqaError):
    """Volume too thin to render a montage (some dim < 3)."""


# --- report / orchestration -----------------------------------------------

class DuplicateScanId(CtqaError):
    """Two scan records claim the same identifier."""


class IoFailure(CtqaError):
    """A report or output file could not be written."""


class ConfigError(CtqaError):
    """Pipeline configuration is invalid or unreadable."""


class InvalidGeometry(CtqaError):
    """Synthetic series geometry parameters are out of range."""


class IncompatibleDefect(CtqaError):
    """Requested defect cannot be injected into the given series."""
