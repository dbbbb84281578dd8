"""
Backprojection array H' from the light-field PSF H by index rearrangement.

No arithmetic touches the values: every element of H' is either zero or a
copy of exactly one element of H. The index relations are separable, so
each lateral axis gets a small plan (which pattern pixel and which voxel
phase feed target pixel s' and target phase x'). Both plans fold into one
table of flat offsets that is applied to every depth plane.

Per axis, with loop variable m, h = (n_x - 1) // 2 and
a = (n_s - n_x) // 2:

    alpha = m - a
    x     = alpha wrapped into 1..n_x
    x'    = s - n_x + alpha + h - a          (kept when 0 < x' <= n_x)
    s'    = n_s - s + (n_s mod 2)            (kept when 0 < s')

and H'(s',t',x',y',z) = H(s,t,x,y,z). The t/y axis uses the same relations
with n, beta, n_t and n_y.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from errors import EvenPixelDims
from lf_array import BackprojArray, PsfArray

logger = logging.getLogger(__name__)


def aux_alpha(m, n_s, n_x):
    """alpha = m - floor((n_s - n_x) / 2)."""
    return m - (n_s - n_x) // 2


def aux_beta(n, n_t, n_y):
    """beta = n - floor((n_t - n_y) / 2)."""
    return n - (n_t - n_y) // 2


def wrap_phase(alpha, n_x):
    """Wrap an auxiliary index into the elementary cell, 1 <= x <= n_x.

    Works on scalars and integer arrays; values already inside the cell are
    returned unchanged.
    """
    # ceil((1 - alpha) / n_x) == -floor((alpha - 1) / n_x)
    return alpha - ((alpha - 1) // n_x) * n_x


def target_spatial(s, alpha, n_s, n_x):
    """Target phase x' for source pixel s; only 0 < x' <= n_x is assigned.

    The same relation gives y' from (t, beta, n_t, n_y).
    """
    return s - n_x + alpha + (n_x - 1) // 2 - (n_s - n_x) // 2


def target_pixel(s, n_s):
    """Target pixel s' = n_s - s + (n_s mod 2); only s' > 0 is assigned."""
    return n_s - s + n_s % 2


@dataclass(frozen=True)
class AxisPlan:
    """Gather tables for one lateral axis, 0-based, -1 where nothing maps.

    source_pixel[j]    -- source pattern pixel for target pixel j
    source_phase[j, k] -- source phase for target pixel j and target phase k
    """
    source_pixel: np.ndarray
    source_phase: np.ndarray

    @property
    def assigned(self):
        return self.source_phase >= 0

    def assigned_count(self):
        return int(np.count_nonzero(self.assigned))

    def read_count(self):
        """Number of distinct source (pixel, phase) pairs that get copied."""
        rows, cols = np.nonzero(self.assigned)
        pairs = self.source_pixel[rows] * self.source_phase.shape[1] + self.source_phase[rows, cols]
        return int(np.unique(pairs).size)

    def inverted(self):
        """Plan with source and target roles exchanged."""
        pixel = np.full_like(self.source_pixel, -1)
        phase = np.full_like(self.source_phase, -1)
        rows, cols = np.nonzero(self.assigned)
        pixel[self.source_pixel[rows]] = rows
        phase[self.source_pixel[rows], self.source_phase[rows, cols]] = cols
        return AxisPlan(pixel, phase)


def plan_axis(n_pixels, n_cell, literal_bounds=False):
    """Evaluate the index relations for one axis.

    Args:
        n_pixels (int): pattern length along the axis (n_s or n_t)
        n_cell (int): elementary-cell length along the axis (n_x or n_y)
        literal_bounds (bool): loop m over 1..n_pixels only. The first and
            last (n_cell - 1) // 2 pattern pixels then leave target phases at
            the cell edges unassigned. The default widens the loop to every
            m whose target phase lands inside the cell.

    Returns:
        AxisPlan
    """
    half = (n_cell - 1) // 2
    if literal_bounds:
        m = np.arange(1, n_pixels + 1)
    else:
        m = np.arange(1 - half, n_pixels + half + 1)

    # the source phase depends on m only
    alpha = aux_alpha(m, n_pixels, n_cell)
    phase = wrap_phase(alpha, n_cell)

    s = np.arange(1, n_pixels + 1)
    s_t = target_pixel(s, n_pixels)
    x_t = target_spatial(s[:, None], alpha[None, :], n_pixels, n_cell)
    keep = (s_t[:, None] > 0) & (x_t > 0) & (x_t <= n_cell)

    source_pixel = np.full(n_pixels, -1, dtype=np.intp)
    source_phase = np.full((n_pixels, n_cell), -1, dtype=np.intp)
    source_pixel[s_t[s_t > 0] - 1] = s[s_t > 0] - 1
    # x_t is distinct along m for each s, so no slot is written twice
    rows, cols = np.nonzero(keep)
    source_phase[s_t[rows] - 1, x_t[rows, cols] - 1] = phase[cols] - 1
    return AxisPlan(source_pixel, source_phase)


def plane_offsets(plan_s, plan_t):
    """Flat source offsets for one depth plane, in output (Fortran) order.

    Returns:
        (offsets, gaps): offsets into a flattened (n_s, n_t, n_x, n_y) plane
        for every output element, and the output positions nothing maps to
    """
    n_s, n_x = plan_s.source_phase.shape
    n_t, n_y = plan_t.source_phase.shape
    grid = np.broadcast_arrays(
        np.maximum(plan_s.source_pixel, 0)[:, None, None, None],
        np.maximum(plan_t.source_pixel, 0)[None, :, None, None],
        np.maximum(plan_s.source_phase, 0)[:, None, :, None],
        np.maximum(plan_t.source_phase, 0)[None, :, None, :],
    )
    offsets = np.ravel_multi_index(grid, (n_s, n_t, n_x, n_y), order="F").ravel(order="F")
    assigned = plan_s.assigned[:, None, :, None] & plan_t.assigned[None, :, None, :]
    gaps = np.flatnonzero(~assigned.ravel(order="F"))
    return offsets, gaps


def _rearrange(source, plan_s, plan_t, threads=1):
    """Gather source into a new array following two axis plans.

    Each depth plane is contiguous in Fortran order, so one flat take per
    plane does the whole copy.
    """
    offsets, gaps = plane_offsets(plan_s, plan_t)
    plane = offsets.size
    n_z = source.shape[4]

    src = np.asfortranarray(source).reshape(-1, order="F")
    flat = np.empty(plane * n_z, dtype=source.dtype)
    out = flat.reshape(source.shape, order="F")

    def copy_planes(zs):
        for z in zs:
            dst = flat[z * plane:(z + 1) * plane]
            np.take(src[z * plane:(z + 1) * plane], offsets, out=dst, mode="clip")
            if gaps.size:
                dst[gaps] = 0

    chunks = [c for c in np.array_split(np.arange(n_z), max(1, min(threads, n_z))) if c.size]
    if len(chunks) == 1:
        copy_planes(chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            list(pool.map(copy_planes, chunks))
    return out


def unassigned_count(dims, literal_bounds=False):
    """Number of H' elements that no H element is copied into."""
    a_s = plan_axis(dims.n_s, dims.n_x, literal_bounds).assigned_count()
    a_t = plan_axis(dims.n_t, dims.n_y, literal_bounds).assigned_count()
    return dims.size - a_s * a_t * dims.n_z


def dropped_source_count(dims, literal_bounds=False):
    """Number of H elements that never reach H'."""
    r_s = plan_axis(dims.n_s, dims.n_x, literal_bounds).read_count()
    r_t = plan_axis(dims.n_t, dims.n_y, literal_bounds).read_count()
    return dims.size - r_s * r_t * dims.n_z


def compute_backprojection(H, literal_bounds=False, threads=1):
    """Compute the backprojection array H' from a PSF array H.

    Args:
        H (PsfArray): light-field PSF (any object with ``dims`` and ``data``)
        literal_bounds (bool): restrict the loop variables to 1..n_s / 1..n_t
        threads (int): worker threads; depth planes are split between them

    Returns:
        BackprojArray with the dims and dtype of H

    Raises:
        InvalidDims: H carries dims that break the Dims5 rules
    """
    dims = H.dims.validate()
    plan_s = plan_axis(dims.n_s, dims.n_x, literal_bounds)
    plan_t = plan_axis(dims.n_t, dims.n_y, literal_bounds)

    dropped = dims.size - plan_s.read_count() * plan_t.read_count() * dims.n_z
    if dropped:
        logger.warning(f"{dropped} of {dims.size} source elements are not copied "
                       f"(dims {dims.shape}, literal_bounds={literal_bounds})")

    out = _rearrange(H.data, plan_s, plan_t, threads)
    return BackprojArray(dims, out)


def compute_psf_from_backprojection(Ht, literal_bounds=False, threads=1):
    """Recover H from H' by running the same index mapping backwards.

    Raises:
        EvenPixelDims: n_s or n_t is even; the forward transform dropped a
            pattern row/column that cannot be restored
        InvalidDims: Ht carries dims that break the Dims5 rules
    """
    dims = Ht.dims.validate()
    if not dims.odd_pixels:
        raise EvenPixelDims(f"inverse transform needs odd n_s and n_t, got {dims.n_s}x{dims.n_t}")
    plan_s = plan_axis(dims.n_s, dims.n_x, literal_bounds).inverted()
    plan_t = plan_axis(dims.n_t, dims.n_y, literal_bounds).inverted()
    out = _rearrange(Ht.data, plan_s, plan_t, threads)
    return PsfArray(dims, out)
