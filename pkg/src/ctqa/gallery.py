"""Per-scan review montages and the static gallery index.

Each scan is summarized as a 3x3 grid: three sagittal, three coronal and
three axial slices taken at 40/50/60% of the respective axis, windowed to
the lung display range and letterboxed into uniform tiles whose aspect
honors the physical voxel size.  Rendering is pure integer/NN arithmetic
so identical volumes produce identical PNG bytes.
"""

from __future__ import annotations

import html
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np
from PIL import Image

from .errors import DegenerateDim
from .series import ALL_CHECKS
from .volume import Volume

WINDOW_CENTER = -600.0
WINDOW_WIDTH = 1500.0

DEFAULT_FRACTIONS = (0.4, 0.5, 0.6)
DEFAULT_TILE = 192

_PLANES = ("sagittal", "coronal", "axial")


@dataclass(frozen=True)
class Montage:
    scan_id: str
    image: np.ndarray  # uint8, (3*tile, 3*tile)
    slice_descriptors: tuple[tuple[str, float], ...]


def window_to_u8(hu: np.ndarray) -> np.ndarray:
    """Map HU to 0..255 using the lung window, rounding half-up."""
    lo = WINDOW_CENTER - WINDOW_WIDTH / 2.0
    scaled = (np.asarray(hu, dtype=np.float64) - lo) * (255.0 / WINDOW_WIDTH)
    return np.clip(np.floor(scaled + 0.5), 0.0, 255.0).astype(np.uint8)


def letterbox(tile: np.ndarray, phys_h: float, phys_w: float, size: int) -> np.ndarray:
    """Nearest-neighbour resample ``tile`` into a size x size canvas.

    The content is scaled so that its physical aspect (phys_h : phys_w in
    mm) is preserved, then centered on a black background.  All index
    math is floor-based and deterministic.
    """
    out = np.zeros((size, size), dtype=tile.dtype)
    scale = size / max(phys_h, phys_w)
    oh = min(size, max(1, int(math.floor(phys_h * scale + 0.5))))
    ow = min(size, max(1, int(math.floor(phys_w * scale + 0.5))))
    src_h, src_w = tile.shape
    rows = np.minimum((np.arange(oh) + 0.5) * src_h / oh, src_h - 1).astype(np.int64)
    cols = np.minimum((np.arange(ow) + 0.5) * src_w / ow, src_w - 1).astype(np.int64)
    content = tile[np.ix_(rows, cols)]
    top = (size - oh) // 2
    left = (size - ow) // 2
    out[top:top + oh, left:left + ow] = content
    return out


def _slice_index(frac: float, n: int) -> int:
    return min(n - 1, int(math.floor(frac * (n - 1) + 0.5)))


def _tile_source(volume: Volume, plane: str, frac: float) -> tuple[np.ndarray, float, float]:
    """Extract one display slice and its physical height/width in mm.

    Display rows run along z (superior up) for sagittal/coronal, along y
    (anterior up) for axial.
    """
    nx, ny, nz = volume.dims
    px, py, pz = (float(s) for s in volume.voxel_sizes)
    if plane == "sagittal":
        i = _slice_index(frac, nx)
        img = volume.voxels[i, :, :].T[::-1, :]
        return img, nz * pz, ny * py
    if plane == "coronal":
        j = _slice_index(frac, ny)
        img = volume.voxels[:, j, :].T[::-1, :]
        return img, nz * pz, nx * px
    k = _slice_index(frac, nz)
    img = volume.voxels[:, :, k].T[::-1, :]
    return img, ny * py, nx * px


def render_montage(
    volume: Volume,
    scan_id: str = "",
    *,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    tile_size: int = DEFAULT_TILE,
) -> Montage:
    """Render the 3x3 review montage for a standard-oriented volume.

    Raises:
        DegenerateDim: any volume dimension below 3.
    """
    if min(volume.dims) < 3:
        raise DegenerateDim(f"volume dims {volume.dims} too thin for a montage")
    if len(fractions) != 3:
        raise ValueError(f"need exactly 3 slice fractions, got {len(fractions)}")

    grid = np.zeros((3 * tile_size, 3 * tile_size), dtype=np.uint8)
    descriptors = []
    for row, plane in enumerate(_PLANES):
        for col, frac in enumerate(fractions):
            src, phys_h, phys_w = _tile_source(volume, plane, frac)
            tile = letterbox(window_to_u8(src), phys_h, phys_w, tile_size)
            grid[
                row * tile_size:(row + 1) * tile_size,
                col * tile_size:(col + 1) * tile_size,
            ] = tile
            descriptors.append((plane, float(frac)))
    return Montage(
        scan_id=scan_id or volume.series_uid,
        image=grid,
        slice_descriptors=tuple(descriptors),
    )


def save_montage(montage: Montage, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(montage.image, mode="L").save(path, format="PNG")
    return path


_PAGE_STYLE = """
body { font-family: sans-serif; background: #111; color: #ddd; margin: 1.5em; }
h1 { font-size: 1.3em; }
table { border-collapse: collapse; }
td, th { padding: 4px 10px; border-bottom: 1px solid #333; text-align: left; }
img { display: block; background: #000; }
.badge { display: inline-block; padding: 1px 7px; border-radius: 3px;
         font-size: 0.85em; margin-right: 2px; }
.badge.pass { background: #1d4d1d; color: #9fdf9f; }
.badge.fail { background: #5c1a1a; color: #ff9f9f; }
.badge.warn { background: #5c4a12; color: #ffd971; }
.badge.na   { background: #2a2a2a; color: #777; }
.scanid { font-family: monospace; }
""".strip()


def build_index(
    entries: Sequence[tuple[str, str, Mapping[str, str]]],
    *,
    title: str = "CT series QA gallery",
    checks: Sequence[str] = ALL_CHECKS,
) -> str:
    """Build the static review index page.

    Args:
        entries: (scan_id, montage path relative to the page, check-id ->
            status) triples; status is one of pass/fail/warn/na.

    Returns:
        Complete HTML document; byte-identical for identical inputs,
        rows ordered by scan_id, no external resources.
    """
    rows = []
    for scan_id, montage_path, statuses in sorted(entries, key=lambda e: e[0]):
        badges = []
        for check in checks:
            status = statuses.get(check, "na")
            label = status if status != "na" else "n/a"
            badges.append(
                f'<span class="badge {html.escape(status)}" title="{html.escape(check)}">'
                f"{html.escape(check)}: {html.escape(label)}</span>"
            )
        if montage_path:
            thumb = (
                f'<a href="{html.escape(montage_path)}">'
                f'<img src="{html.escape(montage_path)}" width="240" loading="lazy" '
                f'alt="montage {html.escape(scan_id)}"></a>'
            )
        else:
            thumb = '<span class="badge na">no montage</span>'
        rows.append(
            "<tr>"
            f"<td>{thumb}</td>"
            f'<td class="scanid">{html.escape(scan_id)}</td>'
            f"<td>{''.join(badges)}</td>"
            "</tr>"
        )
    body = "\n".join(rows)
    return (
        "<!doctype html>\n"
        '<html><head><meta charset="utf-8">\n'
        f"<title>{html.escape(title)}</title>\n"
        f"<style>{_PAGE_STYLE}</style>\n"
        "</head><body>\n"
        f"<h1>{html.escape(title)}</h1>\n"
        f"<p>{len(rows)} scans</p>\n"
        "<table>\n"
        "<tr><th>montage</th><th>scan</th><th>objective checks</th></tr>\n"
        f"{body}\n"
        "</table>\n"
        "</body></html>\n"
    )
