"""
Synthetic light-field PSF arrays.

random_psf gives arbitrary sparse arrays for transform tests. synth_psf uses a
geometric spot model on a lenslet lattice: a point at lateral position P and
depth z lights every lenslet within a defocus disc around P, and each lit
lenslet images it as a Gaussian spot. It is not a wave-optics model; it only
has the structure the transform and projector care about (periodicity over
the elementary cell, depth-dependent spread, per-lens-type focus).

Lattices (pixel units, pitch p, all periodic over their elementary cell):

    rect   centers on a square grid of pitch p                cell (p, p)
    hex    rows of pitch p, alternate rows offset by p/2,
           row spacing n_y/2 with n_y = odd(p * sqrt(3))       cell (p, n_y)
    hex3   hex lattice with three lens types; every lenslet's
           six neighbours are of the other two types           cell (3p, n_y)

p must be odd; an even pitch is raised to the next odd value.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from dotenv import dotenv_values

from errors import InvalidDims, InvalidValues, LayoutMismatch
from lf_array import Dims5, PsfArray
from oracle import center

logger = logging.getLogger(__name__)

LAYOUT_KINDS = ("rect", "hex", "hex3")


def odd_round(value):
    """Nearest odd integer to value (ties go up)."""
    return 2 * math.floor((value - 1) / 2 + 0.5) + 1


@dataclass(frozen=True)
class MlaLayout:
    """Lenslet lattice descriptor.

    pitch is the lenslet spacing in pixels. type_scales multiply the spot
    sigma per lens type and are only used by hex3.
    """
    kind: str = "rect"
    pitch: int = 3
    type_scales: tuple = (1.0, 1.4, 1.8)

    def __post_init__(self):
        if self.kind not in LAYOUT_KINDS:
            raise InvalidDims(f"unknown layout {self.kind!r}, expected one of {LAYOUT_KINDS}")
        if self.pitch < 1 or int(self.pitch) != self.pitch:
            raise InvalidDims(f"pitch must be a positive integer, got {self.pitch}")
        pitch = int(self.pitch)
        if pitch % 2 == 0:
            logger.warning(f"Even pitch {pitch} raised to {pitch + 1}")
            pitch += 1
        object.__setattr__(self, "pitch", pitch)
        object.__setattr__(self, "type_scales", tuple(float(v) for v in self.type_scales))
        if len(self.type_scales) != 3 or min(self.type_scales) <= 0:
            raise InvalidValues(f"type_scales needs three positive values, got {self.type_scales}")

    @property
    def lens_types(self):
        return 3 if self.kind == "hex3" else 1

    @property
    def row_height(self):
        """Row pitch as an odd integer: the full hex period spans two rows."""
        return odd_round(self.pitch * math.sqrt(3))

    @property
    def cell(self):
        """Elementary-cell dims (n_x, n_y)."""
        if self.kind == "rect":
            return (self.pitch, self.pitch)
        if self.kind == "hex":
            return (self.pitch, self.row_height)
        return (3 * self.pitch, self.row_height)


@dataclass(frozen=True)
class SpotOptics:
    """Spot model parameters.

    f_number scales the defocus disc, radius = |z - native_plane| *
    z_spacing / (2 * f_number). spot_sigma is one value or one per depth
    plane. native_plane defaults to the middle plane.
    """
    f_number: float = 1.0
    z_spacing: float = None
    spot_sigma: object = 0.6
    native_plane: int = None

    def sigma(self, z, n_z):
        sig = np.atleast_1d(np.asarray(self.spot_sigma, dtype=np.float64))
        if sig.size == 1:
            return float(sig[0])
        if sig.size != n_z:
            raise InvalidValues(f"spot_sigma has {sig.size} values for {n_z} planes")
        return float(sig[z - 1])

    def native(self, n_z):
        return (n_z + 1) // 2 if self.native_plane is None else int(self.native_plane)


def lenslet_centers(layout, x_range, y_range):
    """Lenslet centers and types inside a lateral box.

    Args:
        layout (MlaLayout): lattice
        x_range, y_range (tuple): inclusive (low, high) bounds in pixels

    Returns:
        (centers, types): float array (N, 2) and int array (N,)
    """
    p = layout.pitch
    x0 = (p + 1) / 2
    if layout.kind == "rect":
        row_step, y0 = p, (p + 1) / 2
    else:
        row_step, y0 = layout.row_height / 2, (layout.row_height + 1) / 2

    rows = range(math.floor((y_range[0] - y0) / row_step) - 1, math.ceil((y_range[1] - y0) / row_step) + 2)
    centers, types = [], []
    for j in rows:
        y = y0 + j * row_step
        if not y_range[0] <= y <= y_range[1]:
            continue
        shift = p / 2 if (layout.kind != "rect" and j % 2) else 0.0
        for i in range(math.floor((x_range[0] - x0 - shift) / p) - 1, math.ceil((x_range[1] - x0 - shift) / p) + 2):
            x = x0 + shift + i * p
            if not x_range[0] <= x <= x_range[1]:
                continue
            centers.append((x, y))
            if layout.kind == "hex3":
                types.append((i + 2) % 3 if j % 2 else i % 3)
            else:
                types.append(0)
    return np.array(centers, dtype=np.float64).reshape(-1, 2), np.array(types, dtype=int)


def pattern_at(layout, optics, X, Y, z, n_s, n_t, n_z):
    """Sensor pattern of a point at absolute voxel (X, Y) and depth z.

    Returns an (n_s, n_t) window whose element (s, t) is pixel
    (X + s - ceil(n_s/2), Y + t - ceil(n_t/2)), normalized to sum 1.
    """
    z_spacing = layout.pitch if optics.z_spacing is None else optics.z_spacing
    offset = z - optics.native(n_z)
    defocus = abs(offset)
    radius = defocus * z_spacing / (2 * optics.f_number)
    sigma = optics.sigma(z, n_z)
    if sigma <= 0:
        raise InvalidValues(f"spot sigma must be positive, got {sigma}")

    reach = radius + 2 * layout.pitch
    centers, types = lenslet_centers(layout, (X - reach, X + reach), (Y - reach, Y + reach))
    dist = np.hypot(centers[:, 0] - X, centers[:, 1] - Y)
    lit = dist <= radius
    lit[np.argmin(dist)] = True

    # spots move toward the lenslet centers as the point leaves focus; behind
    # the native plane the constellation is mirrored through each center
    kappa = 1.0 / (1.0 + defocus)
    if offset > 0:
        kappa = -kappa
    spots = centers[lit] + kappa * (np.array([X, Y]) - centers[lit])
    scales = np.array(layout.type_scales)[types[lit]] if layout.kind == "hex3" else np.ones(lit.sum())

    S = X + np.arange(1, n_s + 1) - center(n_s)
    T = Y + np.arange(1, n_t + 1) - center(n_t)
    pattern = np.zeros((n_s, n_t))
    for (mx, my), scale in zip(spots, scales):
        width = 2 * (sigma * scale) ** 2
        pattern += np.outer(np.exp(-(S - mx) ** 2 / width), np.exp(-(T - my) ** 2 / width))

    total = pattern.sum()
    if total <= 0:
        raise InvalidValues(f"pattern at ({X}, {Y}, {z}) vanished; increase spot_sigma")
    return pattern / total


def synth_psf(layout, dims, optics=None):
    """Build a PSF array from the spot model.

    Raises:
        LayoutMismatch: (n_x, n_y) differ from layout.cell
    """
    if not isinstance(dims, Dims5):
        dims = Dims5(*dims)
    optics = optics or SpotOptics()
    if (dims.n_x, dims.n_y) != layout.cell:
        raise LayoutMismatch(f"{layout.kind} layout with pitch {layout.pitch} needs cell {layout.cell}, "
                             f"dims have ({dims.n_x}, {dims.n_y})")
    if not 1 <= optics.native(dims.n_z) <= dims.n_z:
        raise InvalidValues(f"native plane {optics.native(dims.n_z)} outside 1..{dims.n_z}")

    data = np.zeros(dims.shape, order="F")
    for z in range(1, dims.n_z + 1):
        for y in range(1, dims.n_y + 1):
            for x in range(1, dims.n_x + 1):
                data[:, :, x - 1, y - 1, z - 1] = pattern_at(layout, optics, x, y, z, dims.n_s, dims.n_t, dims.n_z)
    logger.info(f"Synthesized {layout.kind} PSF with dims {dims.shape}")
    return PsfArray(dims, data)


def random_psf(dims, density=1.0, seed=0):
    """Seeded random PSF array: about density of the elements are nonzero, values in (0, 1]."""
    if not isinstance(dims, Dims5):
        dims = Dims5(*dims)
    if not 0 < density <= 1:
        raise ValueError(f"density must be in (0, 1], got {density}")
    rng = np.random.default_rng(seed)
    mask = rng.random(dims.shape) < density
    values = 1.0 - rng.random(dims.shape)
    return PsfArray(dims, np.where(mask, values, 0.0))


def normalization_error(H):
    """Largest |pattern sum - 1| over all (x, y, z)."""
    sums = H.data.sum(axis=(0, 1), dtype=np.float64)
    return float(np.abs(sums - 1.0).max())


def _floats(text):
    return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)


def load_layout_config(path):
    """Read layout and optics from a flat ``key = value`` file.

    Keys: layout, pitch, cell_x, cell_y, f_number, z_spacing, spot_sigma,
    native_plane, type_scales. Missing keys keep their defaults; cell_x and
    cell_y, when present, must match the cell the layout implies.

    Returns:
        (MlaLayout, SpotOptics)
    """
    values = {k.lower(): v for k, v in dotenv_values(path).items() if v is not None and v != ""}
    layout_args = {}
    if "layout" in values:
        layout_args["kind"] = values["layout"].strip().lower()
    if "pitch" in values:
        layout_args["pitch"] = int(values["pitch"])
    if "type_scales" in values:
        layout_args["type_scales"] = _floats(values["type_scales"])
    layout = MlaLayout(**layout_args)

    expected = layout.cell
    given = (int(values.get("cell_x", expected[0])), int(values.get("cell_y", expected[1])))
    if given != expected:
        raise LayoutMismatch(f"config cell {given} does not match {layout.kind} pitch {layout.pitch} cell {expected}")

    optics_args = {}
    if "f_number" in values:
        optics_args["f_number"] = float(values["f_number"])
    if "z_spacing" in values:
        optics_args["z_spacing"] = float(values["z_spacing"])
    if "spot_sigma" in values:
        sig = _floats(values["spot_sigma"])
        optics_args["spot_sigma"] = sig[0] if len(sig) == 1 else sig
    if "native_plane" in values:
        optics_args["native_plane"] = int(values["native_plane"])
    logger.debug(f"Loaded layout config {path}: {layout}")
    return layout, SpotOptics(**optics_args)
