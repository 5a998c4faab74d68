"""Threshold-based lung segmentation for ROI cropping.

Classic recipe: binarize below an air/parenchyma threshold, drop the
components touching the volume border (exterior air), keep the one or two
largest interior components (the lungs), then pad the result with a small
binary dilation.  Connectivity is 6-neighborhood in 3-D throughout.

This is deliberately simple plumbing for the crop step, not a clinical
segmentation; noisy or pathological cases land with the human reviewer.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import EmptyMask
from .volume import LungMask, Volume

DEFAULT_HU_THRESHOLD = -600.0
DEFAULT_DILATION_VOX = 2

# A trailing component this much smaller than the largest is treated as
# debris, not a second lung.
_SECOND_COMPONENT_MIN_FRACTION = 0.05

_STRUCTURE = ndimage.generate_binary_structure(3, 1)  # 6-connectivity


def lung_mask(
    volume: Volume,
    hu_threshold: float = DEFAULT_HU_THRESHOLD,
    *,
    dilation_vox: int = DEFAULT_DILATION_VOX,
) -> LungMask:
    """Segment the lungs of a standard-oriented HU volume.

    Args:
        volume: HU volume, standard orientation assumed.
        hu_threshold: voxels strictly below this are candidate air/lung.
        dilation_vox: radius of the final binary dilation in voxels
            (0 disables the safety margin).

    Raises:
        EmptyMask: nothing interior survives thresholding, e.g. a scan
            that does not actually contain lung.
    """
    air = volume.voxels < hu_threshold
    labels, n_components = ndimage.label(air, structure=_STRUCTURE)
    if n_components == 0:
        raise EmptyMask("no voxels below threshold")

    border = np.unique(
        np.concatenate(
            [
                labels[0, :, :].ravel(),
                labels[-1, :, :].ravel(),
                labels[:, 0, :].ravel(),
                labels[:, -1, :].ravel(),
                labels[:, :, 0].ravel(),
                labels[:, :, -1].ravel(),
            ]
        )
    )
    sizes = np.bincount(labels.ravel(), minlength=n_components + 1)
    sizes[0] = 0
    sizes[border] = 0  # exterior air and anything touching the edge
    if sizes.max() == 0:
        raise EmptyMask("no interior component below threshold")

    ranked = np.argsort(sizes)[::-1]
    keep = [int(ranked[0])]
    if n_components > 1:
        second = int(ranked[1])
        if sizes[second] >= _SECOND_COMPONENT_MIN_FRACTION * sizes[keep[0]]:
            keep.append(second)

    mask = np.isin(labels, keep)
    if dilation_vox > 0:
        mask = ndimage.binary_dilation(mask, structure=_STRUCTURE, iterations=dilation_vox)
    return LungMask(occupancy=mask, component_count=len(keep))
