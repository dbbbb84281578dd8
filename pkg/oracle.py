"""
Brute-force backprojection array by simulating the forward model.

For every pixel phase (x', y') a reference pixel P with that phase is placed
inside a padded virtual voxel grid. Each voxel V of the grid spreads its
pattern H(., ., phase(V), z) centered on V; whatever element lands on P is
recorded in H' at the voxel's offset from P. This is the grouping of
per-pixel contributions written out as plain loops; it shares no index
formulas with the transform module and is used to verify it.
"""

import logging

import numpy as np
from tqdm import trange

from lf_array import BackprojArray

logger = logging.getLogger(__name__)


def center(n):
    """Pattern index of the pixel straight below a voxel, ceil(n / 2)."""
    return (n + 1) // 2


def phase(V, n_cell):
    """Phase of absolute coordinate V (1-based): ((V - 1) mod n_cell) + 1."""
    return (V - 1) % n_cell + 1


def minimum_padding(n_pixels, n_cell):
    return center(n_pixels) + n_cell


def _grid_padding(n_pixels, n_cell, padding):
    """Validated padding, rounded up to a whole number of cells."""
    least = minimum_padding(n_pixels, n_cell)
    if padding is None:
        padding = least
    elif padding < least:
        raise ValueError(f"padding {padding} is below the minimum {least} for n={n_pixels}, cell={n_cell}")
    return -(-padding // n_cell) * n_cell


def oracle_backprojection(H, padding=None, progress=False):
    """Compute H' by explicit forward projection of every grid voxel.

    Args:
        H (PsfArray): light-field PSF
        padding (int | tuple): voxels on each side of the reference pixel;
            one value for both axes or (pad_x, pad_y). Defaults to the minimum
            ceil(n_s/2) + n_x (ceil(n_t/2) + n_y)
        progress (bool): show a tqdm bar over pixel phases

    Returns:
        BackprojArray

    Raises:
        InvalidDims: H carries dims that break the Dims5 rules
        ValueError: padding below the minimum
    """
    dims = H.dims.validate()
    n_s, n_t, n_x, n_y, n_z = dims.shape
    pad_x, pad_y = padding if isinstance(padding, tuple) else (padding, padding)
    pad_x = _grid_padding(n_s, n_x, pad_x)
    pad_y = _grid_padding(n_t, n_y, pad_y)
    c_s, c_t = center(n_s), center(n_t)
    grid_x = 2 * pad_x + n_x
    grid_y = 2 * pad_y + n_y

    src = H.data
    out = np.zeros(dims.shape, dtype=src.dtype, order="F")

    for x_t in trange(1, n_x + 1, ncols=70, desc="oracle", disable=not progress):
        P_x = pad_x + x_t
        for y_t in range(1, n_y + 1):
            P_y = pad_y + y_t
            for V_x in range(1, grid_x + 1):
                s = P_x - V_x + c_s
                if not 1 <= s <= n_s:
                    continue
                s_t = V_x - P_x + c_s
                if not 1 <= s_t <= n_s:
                    continue
                x = phase(V_x, n_x)
                for V_y in range(1, grid_y + 1):
                    t = P_y - V_y + c_t
                    if not 1 <= t <= n_t:
                        continue
                    t_t = V_y - P_y + c_t
                    if not 1 <= t_t <= n_t:
                        continue
                    y = phase(V_y, n_y)
                    out[s_t - 1, t_t - 1, x_t - 1, y_t - 1, :] = src[s - 1, t - 1, x - 1, y - 1, :]

    logger.debug(f"Oracle finished for dims {dims.shape} on a {grid_x}x{grid_y} grid")
    return BackprojArray(dims, out)


def first_difference(A, B):
    """1-based index of the first element where two same-dims arrays differ, or None."""
    if A.data.shape != B.data.shape:
        raise ValueError(f"shapes differ: {A.data.shape} vs {B.data.shape}")
    diff = A.data != B.data
    if not diff.any():
        return None
    # Fortran order: z slowest, s fastest
    flat = np.flatnonzero(diff.ravel(order="F"))[0]
    return tuple(int(i) + 1 for i in np.unravel_index(flat, diff.shape, order="F"))
