"""Structural quality assurance for chest CT series.

Parses DICOM series, runs the structural checks, converts sound scans
to NIfTI, crops to the lung region, renders review montages, and
aggregates everything into a per-corpus report with an optional human
review loop.
"""

__version__ = "0.1.0"

from .errors import CtqaError
from .series import ALL_CHECKS, QaFinding, QaThresholds

__all__ = ["CtqaError", "QaFinding", "QaThresholds", "ALL_CHECKS", "__version__"]
