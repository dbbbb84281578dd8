"""
Shift-variant forward projection, the two backprojection paths and
Richardson-Lucy deconvolution.

Lateral image and volume sizes are equal (N_S = N_X, N_T = N_Y). A voxel at
absolute (X, Y) with phase (phase(X), phase(Y)) spreads its pattern
H(., ., phase(X), phase(Y), Z) centered on pixel (X, Y); pattern parts that
fall off the sensor are discarded. The operators loop over the n_s x n_t
pattern offsets and apply each offset to the whole volume at once.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from errors import DimMismatch, NonFiniteInput
from lf_array import Image, Volume
from oracle import center

logger = logging.getLogger(__name__)


def _as_volume(g):
    return g if isinstance(g, Volume) else Volume(g)


def _as_image(f):
    if isinstance(f, Image):
        return f
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim == 2 and not np.all(np.isfinite(arr)):
        raise NonFiniteInput("image contains NaN or infinity")
    return Image(arr)


def _shift(n, d):
    """(dst, src) slices for dst[i + d] = src[i] on a length-n axis, or None."""
    if abs(d) >= n:
        return None
    if d >= 0:
        return slice(d, n), slice(0, n - d)
    return slice(0, n + d), slice(-d, n)


def _phases(n, n_cell):
    return np.arange(n) % n_cell


def _offsets(dims):
    """Yield (s, t, ds, dt) over all pattern pixels, 0-based s, t."""
    c_s, c_t = center(dims.n_s), center(dims.n_t)
    for t in range(dims.n_t):
        for s in range(dims.n_s):
            yield s, t, s + 1 - c_s, t + 1 - c_t


def _check_depth(array, n_z, what):
    if array.dims.n_z != n_z:
        raise DimMismatch(f"{what} has {array.dims.n_z} depth planes, volume has {n_z}")


def _forward(H, g):
    N_X, N_Y, _ = g.shape
    phx, phy = _phases(N_X, H.dims.n_x), _phases(N_Y, H.dims.n_y)
    f = np.zeros((N_X, N_Y))
    for s, t, ds, dt in _offsets(H.dims):
        rows, cols = _shift(N_X, ds), _shift(N_Y, dt)
        if rows is None or cols is None:
            continue
        weights = H.data[s, t][phx[:, None], phy[None, :], :]
        spread = np.einsum("xyz,xyz->xy", g, weights)
        f[rows[0], cols[0]] += spread[rows[1], cols[1]]
    return f


def _adjoint(H, f, n_z):
    N_S, N_T = f.shape
    phx, phy = _phases(N_S, H.dims.n_x), _phases(N_T, H.dims.n_y)
    g = np.zeros((N_S, N_T, n_z))
    for s, t, ds, dt in _offsets(H.dims):
        rows, cols = _shift(N_S, ds), _shift(N_T, dt)
        if rows is None or cols is None:
            continue
        weights = H.data[s, t][phx[:, None], phy[None, :], :]
        # g(X) picks up f(X + d)
        picked = np.zeros((N_S, N_T))
        picked[rows[1], cols[1]] = f[rows[0], cols[0]]
        g += picked[:, :, None] * weights
    return g


def _via_ht(Ht, f, n_z):
    N_S, N_T = f.shape
    phs, pht = _phases(N_S, Ht.dims.n_x), _phases(N_T, Ht.dims.n_y)
    g = np.zeros((N_S, N_T, n_z))
    for s, t, ds, dt in _offsets(Ht.dims):
        rows, cols = _shift(N_S, ds), _shift(N_T, dt)
        if rows is None or cols is None:
            continue
        weights = Ht.data[s, t][phs[:, None], pht[None, :], :]
        spread = f[:, :, None] * weights
        g[rows[0], cols[0]] += spread[rows[1], cols[1]]
    return g


def forward_project(H, g):
    """Sensor image f = H g of a volume g, same lateral size as g."""
    g = _as_volume(g)
    _check_depth(H, g.n_z, "PSF array")
    return Image(_forward(H, g.data))


def backproject_adjoint(H, f):
    """Exact adjoint of forward_project, evaluated with H."""
    f = _as_image(f)
    return Volume(_adjoint(H, f.data, H.dims.n_z))


def backproject_via_ht(Ht, f):
    """Backprojection of f using the per-pixel patterns of H'.

    Equals backproject_adjoint for odd n_s and n_t. For even sizes H' has no
    room for the last pattern row/column, so those contributions are absent.
    """
    f = _as_image(f)
    return Volume(_via_ht(Ht, f.data, Ht.dims.n_z))


def normalizer(Ht, image_dims):
    """H' applied to an all-ones image of shape image_dims = (N_S, N_T)."""
    image_dims = tuple(int(n) for n in image_dims)
    if len(image_dims) != 2 or min(image_dims) < 1:
        raise DimMismatch(f"image dims must be two positive sizes, got {image_dims}")
    return Volume(_via_ht(Ht, np.ones(image_dims), Ht.dims.n_z))


def adjoint_mismatch(H, Ht, g, f):
    """Relative error |<Hg, f> - <g, B f>| / |<Hg, f>|.

    B is backproject_via_ht when Ht is given, else backproject_adjoint.
    """
    g = _as_volume(g)
    f = _as_image(f)
    if f.shape != g.shape[:2]:
        raise DimMismatch(f"image {f.shape} and volume {g.shape} differ laterally")
    lhs = float(np.vdot(forward_project(H, g).data, f.data))
    back = backproject_via_ht(Ht, f) if Ht is not None else backproject_adjoint(H, f)
    rhs = float(np.vdot(g.data, back.data))
    scale = max(abs(lhs), abs(rhs), np.finfo(float).tiny)
    return abs(lhs - rhs) / scale


def safe_divide(a, b, eps):
    """a / b where b >= eps * max(b) and b > 0, zero elsewhere."""
    out = np.zeros(np.broadcast(a, b).shape)
    peak = b.max() if b.size else 0.0
    mask = (b >= eps * peak) & (b > 0)
    np.divide(a, b, out=out, where=mask)
    return out


def i_divergence(f, Hg):
    """Generalized Kullback-Leibler divergence sum(f log(f/Hg) - f + Hg)."""
    both = (f > 0) & (Hg > 0)
    total = np.sum(f[both] * np.log(f[both] / Hg[both])) - f.sum() + Hg.sum()
    if np.any((f > 0) & (Hg <= 0)):
        return float("inf")
    return float(total)


@dataclass
class RlState:
    """Richardson-Lucy progress after k iterations.

    history[i] and divergence[i] describe the estimate after iteration i + 1.
    """
    g: Volume
    normalizer: Volume
    k: int = 0
    history: list = field(default_factory=list)
    divergence: list = field(default_factory=list)
    zero_normalizer: int = 0


def rl_run(H, Ht, f, iters=20, eps=1e-12, g0=None, callback=None):
    """Richardson-Lucy deconvolution of f.

    Each iteration computes g <- g / (H' 1) * H'(f / (H g)), with divisions
    by values at or below eps * max(denominator) giving zero.

    Args:
        H (PsfArray): forward PSF
        Ht (BackprojArray): backprojection array of H
        f (Image | array): nonnegative, finite sensor image
        iters (int): iteration count, >= 1
        eps (float): relative division safeguard, > 0
        g0 (Volume | array): initial estimate, all ones when omitted
        callback: called as callback(state) after every iteration

    Returns:
        (Volume, RlState)
    """
    if not np.all(np.isfinite(np.asarray(f.data if isinstance(f, Image) else f, dtype=np.float64))):
        raise NonFiniteInput("image contains NaN or infinity")
    f = _as_image(f)
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if H.dims.shape != Ht.dims.shape:
        raise DimMismatch(f"H {H.dims.shape} and H' {Ht.dims.shape} differ")

    n_z = H.dims.n_z
    shape = f.shape + (n_z,)
    if g0 is None:
        g = np.ones(shape)
    else:
        g = np.array(_as_volume(g0).data, dtype=np.float64)
        if g.shape != shape:
            raise DimMismatch(f"initial estimate {g.shape} does not match {shape}")

    norm = _via_ht(Ht, np.ones(f.shape), n_z)
    state = RlState(g=Volume(g), normalizer=Volume(norm))
    state.zero_normalizer = int(np.count_nonzero(norm <= eps * norm.max())) if norm.max() > 0 else norm.size
    if state.zero_normalizer:
        logger.warning(f"{state.zero_normalizer} voxels receive no light; they stay zero")

    data = f.data
    Hg = _forward(H, g)
    for k in range(1, iters + 1):
        ratio = safe_divide(data, Hg, eps)
        g = safe_divide(g * _via_ht(Ht, ratio, n_z), norm, eps)
        Hg = _forward(H, g)

        state.g = Volume(g)
        state.k = k
        state.history.append(float(np.mean((data - Hg) ** 2)))
        state.divergence.append(i_divergence(data, Hg))
        logger.debug(f"RL iteration {k}: mse={state.history[-1]:.6e}")
        if callback is not None:
            callback(state)

    logger.info(f"Richardson-Lucy finished {iters} iterations, final mse {state.history[-1]:.6e}")
    return state.g, state
