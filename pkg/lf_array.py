"""
Dense light-field arrays, the LF5 container and plane exports.

Index convention
----------------
Every formula in this project is written with 1-based indices, the way the
light-field loops are usually stated (``for s = 1..n_s``). Element
(s, t, x, y, z) of a 5-D array lives at ``data[s-1, t-1, x-1, y-1, z-1]``.
Arrays are held in Fortran order: s varies fastest and z slowest, so every
depth plane is one contiguous block. The LF5 payload uses the same order.

A PSF array H(s,t,x,y,z) stores, for every voxel phase (x,y) of the
elementary cell and depth z, the n_s x n_t pixel pattern of that voxel.
A backprojection array H'(s',t',x',y',z) has the same shape and stores, for
every pixel phase (x',y'), the object-space pattern of that pixel.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from errors import DimsError, FormatError, InvalidDims, InvalidValues

logger = logging.getLogger(__name__)

LF5_MAGIC = b"LF5D"
LF5_VERSION = 1
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}

# 4 + 4 + 1 + 3 + 20 = 32 bytes, little-endian, no padding
LF5_HEADER = np.dtype([
    ("magic", "S4"),
    ("version", "<u4"),
    ("dtype", "u1"),
    ("reserved", "u1", (3,)),
    ("dims", "<u4", (5,)),
])

PGM_MAXVAL = 65535


@dataclass(frozen=True)
class Dims5:
    """Shape of a PSF / backprojection array.

    n_s, n_t are pattern pixels, n_x, n_y elementary-cell voxels, n_z depth
    planes. Pass ``checked=False`` only to inspect foreign data.
    """
    n_s: int
    n_t: int
    n_x: int
    n_y: int
    n_z: int
    checked: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        for name in ("n_s", "n_t", "n_x", "n_y", "n_z"):
            value = getattr(self, name)
            if int(value) != value:
                raise InvalidDims(f"{name}={value!r} is not an integer")
            object.__setattr__(self, name, int(value))
        if self.checked:
            self.validate()

    def validate(self):
        """Raise InvalidDims unless every rule holds (also for unchecked dims)."""
        problems = self.problems()
        if problems:
            raise InvalidDims(f"invalid dims {self.shape}: " + "; ".join(problems))
        return self

    def problems(self):
        """List every rule these dims break (empty when valid)."""
        found = []
        for name in ("n_s", "n_t", "n_x", "n_y", "n_z"):
            if getattr(self, name) < 1:
                found.append(f"{name} must be >= 1")
        if self.n_x % 2 == 0:
            found.append("n_x must be odd")
        if self.n_y % 2 == 0:
            found.append("n_y must be odd")
        if self.n_s < self.n_x:
            found.append("n_s must be >= n_x")
        if self.n_t < self.n_y:
            found.append("n_t must be >= n_y")
        return found

    @property
    def shape(self):
        return (self.n_s, self.n_t, self.n_x, self.n_y, self.n_z)

    @property
    def n_pixels(self):
        """N_p = n_s * n_t."""
        return self.n_s * self.n_t

    @property
    def n_voxels(self):
        """N_v = n_x * n_y * n_z."""
        return self.n_x * self.n_y * self.n_z

    @property
    def size(self):
        return self.n_pixels * self.n_voxels

    @property
    def odd_pixels(self):
        return self.n_s % 2 == 1 and self.n_t % 2 == 1

    @classmethod
    def parse(cls, text):
        """Parse "9,9,3,3,3" (or "9x9x3x3x3")."""
        parts = [p for p in text.replace("x", ",").replace(" ", "").split(",") if p]
        if len(parts) != 5:
            raise InvalidDims(f"expected 5 dims, got {text!r}")
        try:
            return cls(*(int(p) for p in parts))
        except ValueError as e:
            if isinstance(e, InvalidDims):
                raise
            raise InvalidDims(f"dims must be integers: {text!r}") from e


def _float_array(data):
    """float32 and float64 pass through, anything else becomes float64."""
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


def _take_ownership(data, shape):
    """Return data as a read-only Fortran-ordered float32/float64 array."""
    arr = _float_array(data)
    if arr.shape != tuple(shape):
        raise InvalidDims(f"data shape {arr.shape} does not match dims {tuple(shape)}")
    arr = np.asfortranarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PsfArray:
    """Light-field PSF H. Takes ownership of ``data`` and marks it read-only."""
    dims: Dims5
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _take_ownership(self.data, self.dims.shape))
        if np.any(self.data < 0):
            raise InvalidValues("PSF arrays must be nonnegative")

    @property
    def dtype(self):
        return self.data.dtype


@dataclass(frozen=True)
class BackprojArray:
    """Backprojection array H' (same shape as the PSF it came from)."""
    dims: Dims5
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _take_ownership(self.data, self.dims.shape))

    @property
    def dtype(self):
        return self.data.dtype


@dataclass(frozen=True)
class Volume:
    """Object-space intensities g(X,Y,Z), data shape (N_X, N_Y, n_z)."""
    data: np.ndarray

    def __post_init__(self):
        arr = _float_array(self.data)
        if arr.ndim != 3 or 0 in arr.shape:
            raise InvalidDims(f"a volume needs a non-empty 3-D array, got shape {arr.shape}")
        if np.any(arr < 0):
            raise InvalidValues("volumes must be nonnegative")
        arr = np.asfortranarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def N_X(self):
        return self.data.shape[0]

    @property
    def N_Y(self):
        return self.data.shape[1]

    @property
    def n_z(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class Image:
    """Sensor image f(S,T), data shape (N_S, N_T)."""
    data: np.ndarray

    def __post_init__(self):
        arr = _float_array(self.data)
        if arr.ndim != 2 or 0 in arr.shape:
            raise InvalidDims(f"an image needs a non-empty 2-D array, got shape {arr.shape}")
        if np.any(arr < 0):
            raise InvalidValues("images must be nonnegative")
        arr = np.asfortranarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def N_S(self):
        return self.data.shape[0]

    @property
    def N_T(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape


def new_psf(dims, fill=0.0, dtype=np.float64):
    """Create a PSF array of the given dims with every element equal to ``fill``.

    Args:
        dims (Dims5 | tuple): array dims, validated on construction
        fill (float): nonnegative fill value
        dtype: numpy float32 or float64

    Returns:
        PsfArray
    """
    if not isinstance(dims, Dims5):
        dims = Dims5(*dims)
    if not fill >= 0:
        raise InvalidValues(f"fill must be >= 0, got {fill}")
    return PsfArray(dims, np.full(dims.shape, fill, dtype=dtype, order="F"))


def _as_container(array):
    """Map any array type onto (dims, 5-D data) for the LF5 writer."""
    if isinstance(array, (PsfArray, BackprojArray)):
        return array.dims, array.data
    if isinstance(array, Volume):
        n_x, n_y, n_z = array.shape
        dims = Dims5(n_x, n_y, 1, 1, n_z)
        return dims, array.data.reshape(dims.shape, order="F")
    if isinstance(array, Image):
        dims = Dims5(array.N_S, array.N_T, 1, 1, 1)
        return dims, array.data.reshape(dims.shape, order="F")
    raise TypeError(f"cannot store {type(array).__name__} in an LF5 file")


def _dtype_code(dtype):
    dtype = np.dtype(dtype)
    if dtype.kind == "f" and dtype.itemsize == 4:
        return 1
    if dtype.kind == "f" and dtype.itemsize == 8:
        return 2
    raise FormatError(f"LF5 stores float32 or float64, not {dtype}")


def save(array, path, dtype=None):
    """Write an array to an LF5 file.

    Volumes are stored as (N_X, N_Y, 1, 1, N_Z) and images as
    (N_S, N_T, 1, 1, 1), so one container covers every array type.

    Args:
        array: PsfArray, BackprojArray, Volume or Image
        path: destination file
        dtype: "f4"/"f8" (or numpy dtype) to convert on write; default keeps
            the array's own dtype
    """
    dims, data = _as_container(array)
    target = np.dtype(dtype) if dtype is not None else data.dtype
    code = _dtype_code(target)
    target = DTYPE_CODES[code]

    header = np.zeros((), dtype=LF5_HEADER)
    header["magic"] = LF5_MAGIC
    header["version"] = LF5_VERSION
    header["dtype"] = code
    header["dims"] = dims.shape

    payload = np.asfortranarray(data, dtype=target)
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        # the transpose of a Fortran array is C-contiguous: raw bytes in s-fastest order
        payload.T.tofile(fh)
    logger.info(f"Saved {type(array).__name__} {dims.shape} ({target.name}) to {path}")


def read_header(raw):
    """Decode and check the LF5 header of ``raw`` bytes.

    Returns:
        tuple: (dtype, dims tuple)
    """
    if len(raw) < LF5_HEADER.itemsize:
        raise FormatError(f"file too short for an LF5 header ({len(raw)} bytes)")
    header = np.frombuffer(raw, dtype=LF5_HEADER, count=1)[0]
    if header["magic"] != LF5_MAGIC:
        raise FormatError(f"bad magic {bytes(header['magic'])!r}, expected {LF5_MAGIC!r}")
    if header["version"] != LF5_VERSION:
        raise FormatError(f"unsupported LF5 version {int(header['version'])}")
    code = int(header["dtype"])
    if code not in DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}")
    if np.any(header["reserved"] != 0):
        raise FormatError("reserved header bytes must be zero")
    return DTYPE_CODES[code], tuple(int(d) for d in header["dims"])


def load(path, kind=PsfArray, allow_invalid_dims=False):
    """Read an LF5 file.

    Args:
        path: file to read
        kind: PsfArray (default), BackprojArray, Volume or Image
        allow_invalid_dims (bool): accept headers that break the Dims5 rules
            (for inspecting foreign data)

    Returns:
        an instance of ``kind``

    Raises:
        OSError: the file cannot be read
        FormatError: bad header or payload length
        DimsError: header dims break the Dims5 rules
    """
    raw = Path(path).read_bytes()
    dtype, shape = read_header(raw)

    count = int(np.prod(shape, dtype=np.int64))
    expected = LF5_HEADER.itemsize + count * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(f"payload is {len(raw) - LF5_HEADER.itemsize} bytes, "
                          f"expected {expected - LF5_HEADER.itemsize} for dims {shape}")
    try:
        dims = Dims5(*shape, checked=not allow_invalid_dims)
    except InvalidDims as e:
        raise DimsError(str(e)) from e

    data = np.frombuffer(raw, dtype=dtype, count=count, offset=LF5_HEADER.itemsize)
    data = data.reshape(shape, order="F")

    if kind is PsfArray or kind is BackprojArray:
        return kind(dims, data)
    if kind is Volume:
        if dims.n_x != 1 or dims.n_y != 1:
            raise DimsError(f"{path} holds dims {shape}, not a volume (N_X, N_Y, 1, 1, N_Z)")
        return Volume(data[:, :, 0, 0, :])
    if kind is Image:
        if dims.n_x != 1 or dims.n_y != 1 or dims.n_z != 1:
            raise DimsError(f"{path} holds dims {shape}, not an image (N_S, N_T, 1, 1, 1)")
        return Image(data[:, :, 0, 0, 0])
    raise TypeError(f"unsupported array kind {kind!r}")


def _check_plane(dims, z):
    if not 1 <= z <= dims.n_z:
        raise IndexError(f"z={z} outside 1..{dims.n_z}")


def _exact_sums(block):
    """Sum the last two axes of a (n_s, n_t, n_x, n_y) block in float64.

    Values are sorted first, so two blocks holding the same multiset per
    pixel produce bitwise identical sums.
    """
    n_s, n_t = block.shape[:2]
    values = np.sort(block.astype(np.float64).reshape(n_s, n_t, -1), axis=-1)
    return values.sum(axis=-1)


def sum_forward_plane(H, z):
    """out(s,t) = sum over x,y of H(s,t,x,y,z)."""
    _check_plane(H.dims, z)
    return _exact_sums(H.data[:, :, :, :, z - 1])


def sum_backward_plane(Ht, z):
    """out(s',t') = sum over x',y' of H'(s',t',x',y',z)."""
    _check_plane(Ht.dims, z)
    return _exact_sums(Ht.data[:, :, :, :, z - 1])


def rotate180_lateral(plane):
    """Rotate a 2-D plane by 180 degrees: out(i,j) = in(n_s+1-i, n_t+1-j)."""
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise InvalidDims(f"expected a 2-D plane, got shape {plane.shape}")
    return np.ascontiguousarray(plane[::-1, ::-1])


def export_pgm(plane, path):
    """Write a 2-D plane as a 16-bit binary PGM.

    Rows of the image are the first axis (s), columns the second (t). Values
    are scaled linearly so the maximum maps to 65535, rounding half up; an
    all-zero plane stays zero.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2 or 0 in plane.shape:
        raise InvalidDims(f"expected a non-empty 2-D plane, got shape {plane.shape}")
    if not np.all(np.isfinite(plane)) or np.any(plane < 0):
        raise InvalidValues("PGM export needs finite, nonnegative values")

    peak = plane.max()
    if peak > 0:
        pixels = np.floor(plane / peak * PGM_MAXVAL + 0.5)
    else:
        pixels = np.zeros_like(plane)
    # mode "I" is written by Pillow as P5 with maxval 65535, big-endian samples
    PILImage.fromarray(pixels.astype(np.int32)).save(path, format="PPM")
    logger.info(f"Exported {plane.shape[0]}x{plane.shape[1]} plane to {path}")
