#!/usr/bin/env python3
"""
Tests for the index-rearrangement transform H -> H'.
"""

import os
import sys

import numpy as np

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import lf_array
import transform
from errors import EvenPixelDims, InvalidDims
from lf_array import BackprojArray, Dims5, PsfArray, new_psf
from oracle import oracle_backprojection
from psf_synth import random_psf
from transform import compute_backprojection, compute_psf_from_backprojection

ODD_DIMS = [(9, 9, 3, 3, 3), (15, 13, 5, 3, 2), (19, 11, 9, 5, 2), (7, 9, 7, 3, 1), (5, 5, 1, 1, 2)]
EVEN_DIMS = [(4, 5, 3, 3, 1), (10, 8, 5, 3, 2), (6, 6, 5, 5, 1)]


def _tagged(dims):
    """H whose value encodes its own 1-based index."""
    dims = Dims5(*dims)
    s, t, x, y, z = np.indices(dims.shape) + 1
    tags = (((s * 100 + t) * 100 + x) * 100 + y) * 100 + z
    return PsfArray(dims, tags.astype(np.float64))


def _decode(tag):
    tag = int(tag)
    out = []
    for _ in range(5):
        out.append(tag % 100)
        tag //= 100
    return tuple(reversed(out))


def test_aux_and_wrap():
    """Auxiliary index, phase wrap and target index examples."""
    assert transform.aux_alpha(1, 5, 3) == 0
    assert transform.aux_alpha(3, 3, 3) == 3
    assert transform.aux_alpha(7, 9, 3) == 4
    assert transform.aux_beta(7, 9, 3) == 4

    assert transform.wrap_phase(2, 3) == 2
    assert transform.wrap_phase(0, 3) == 3
    assert transform.wrap_phase(7, 3) == 1
    assert transform.wrap_phase(-5, 3) == 1
    for n_x in (1, 3, 5, 11):
        tiled = list(range(1, n_x + 1)) * 20
        for alpha in range(-3 * n_x, 4 * n_x):
            assert transform.wrap_phase(alpha, n_x) == tiled[(alpha - 1) % len(tiled)]

    assert transform.target_spatial(2, 2, 3, 3) == 2
    assert transform.target_spatial(1, 1, 3, 3) == 0
    assert transform.target_spatial(3, 2, 5, 3) == 2

    assert transform.target_pixel(1, 3) == 3
    assert transform.target_pixel(5, 5) == 1
    assert transform.target_pixel(4, 4) == 0


def test_center_slice():
    """The center pattern pixel maps onto itself: H'(2,2,x',y') = H(2,2,x',y')."""
    H = random_psf((3, 3, 3, 3, 1), seed=1)
    Ht = compute_backprojection(H)
    assert np.array_equal(Ht.data[1, 1], H.data[1, 1])


def test_constant_array():
    """A constant array stays constant for odd pattern sizes."""
    for dims in ODD_DIMS:
        Ht = compute_backprojection(new_psf(dims, fill=1.0))
        assert np.all(Ht.data == 1.0), dims


def test_pixel_grouping():
    """The slice of one pixel phase takes one element from each source pattern."""
    H = _tagged((3, 3, 3, 3, 1))
    Ht = compute_backprojection(H)
    sources = {_decode(v)[2:4] for v in Ht.data[:, :, 1, 1, 0].ravel()}
    assert len(sources) == 9


def test_matches_oracle():
    """Bitwise equality with the brute-force oracle, odd and even sizes."""
    for seed, dims in enumerate(ODD_DIMS + EVEN_DIMS):
        H = random_psf(dims, density=0.7, seed=seed)
        assert np.array_equal(compute_backprojection(H).data, oracle_backprojection(H).data), dims
        H = _tagged(dims)
        assert np.array_equal(compute_backprojection(H).data, oracle_backprojection(H).data), dims


def test_involution():
    """Inverse after forward, and forward twice, give back H."""
    for seed, dims in enumerate(ODD_DIMS):
        H = random_psf(dims, density=0.5, seed=seed)
        Ht = compute_backprojection(H)
        assert np.array_equal(compute_psf_from_backprojection(Ht).data, H.data), dims
        assert np.array_equal(compute_backprojection(PsfArray(Ht.dims, Ht.data)).data, H.data), dims


def test_slice_conservation():
    """Each pattern pixel's values reappear as one slice of H'."""
    for seed, dims in enumerate(ODD_DIMS + EVEN_DIMS):
        H = random_psf(dims, seed=10 + seed)
        Ht = compute_backprojection(H)
        n_s, n_t = dims[:2]
        for s in range(1, n_s + 1):
            for t in range(1, n_t + 1):
                s_t, t_t = transform.target_pixel(s, n_s), transform.target_pixel(t, n_t)
                if s_t <= 0 or t_t <= 0:
                    continue
                for z in range(dims[4]):
                    src = np.sort(H.data[s - 1, t - 1, :, :, z].ravel())
                    dst = np.sort(Ht.data[s_t - 1, t_t - 1, :, :, z].ravel())
                    assert np.array_equal(src, dst), (dims, s, t, z)


def test_global_conservation():
    """Per-plane totals agree for odd sizes."""
    for seed, dims in enumerate(ODD_DIMS):
        H = random_psf(dims, seed=20 + seed)
        Ht = compute_backprojection(H)
        for z in range(dims[4]):
            assert np.isclose(Ht.data[..., z].sum(), H.data[..., z].sum(), rtol=1e-13)


def test_rotation_property():
    """Summed H' planes are the summed H planes rotated by 180 degrees."""
    for seed, dims in enumerate(ODD_DIMS):
        H = random_psf(dims, density=0.6, seed=30 + seed)
        Ht = compute_backprojection(H)
        for z in range(1, dims[4] + 1):
            forward = lf_array.sum_forward_plane(H, z)
            backward = lf_array.sum_backward_plane(Ht, z)
            assert np.array_equal(backward, lf_array.rotate180_lateral(forward)), (dims, z)


def test_even_pixel_dims():
    """Even pattern sizes drop one row/column and refuse the inverse."""
    H = random_psf((4, 5, 3, 3, 1), seed=2)
    Ht = compute_backprojection(H)
    assert not Ht.data[3].any()
    assert Ht.data[:3].all()
    # mirror about the shifted center: row s lands on row 4 - s
    assert np.array_equal(lf_array.sum_backward_plane(Ht, 1)[:3, :],
                          lf_array.rotate180_lateral(lf_array.sum_forward_plane(H, 1))[1:, :])
    assert transform.dropped_source_count(H.dims) == 5 * 9
    try:
        compute_psf_from_backprojection(Ht)
    except EvenPixelDims:
        pass
    else:
        raise AssertionError("inverse accepted even n_s")


def test_literal_bounds():
    """Loop bounds 1..n_s leave the edge phases unassigned, the rest agrees."""
    dims = Dims5(3, 3, 3, 3, 1)
    assert transform.unassigned_count(dims) == 0
    assert transform.dropped_source_count(dims) == 0
    assert transform.unassigned_count(dims, literal_bounds=True) == 81 - 7 * 7
    assert transform.dropped_source_count(dims, literal_bounds=True) == 81 - 7 * 7

    for seed, dims in enumerate(ODD_DIMS):
        H = random_psf(dims, density=1.0, seed=40 + seed)
        full = compute_backprojection(H).data
        literal = compute_backprojection(H, literal_bounds=True).data
        assigned = literal != 0
        assert np.array_equal(literal[assigned], full[assigned])
        h_x, h_y = (dims[2] - 1) // 2, (dims[3] - 1) // 2
        missing = dims[0] * dims[1] * dims[2] * dims[3] - \
            (dims[0] * dims[2] - h_x * (h_x + 1)) * (dims[1] * dims[3] - h_y * (h_y + 1))
        assert np.count_nonzero(~assigned) == missing * dims[4], dims


def test_threads_and_planes():
    """Thread count does not change the result; planes are independent."""
    H = random_psf((15, 13, 5, 3, 5), seed=50)
    single = compute_backprojection(H).data
    assert np.array_equal(compute_backprojection(H, threads=3).data, single)
    assert np.array_equal(compute_backprojection(H, threads=8).data, single)

    sub = PsfArray(Dims5(15, 13, 5, 3, 2), H.data[..., [1, 4]])
    assert np.array_equal(compute_backprojection(sub).data, single[..., [1, 4]])


def test_dtype_preserved():
    """float32 input gives float32 output with the same values."""
    H = random_psf((9, 9, 3, 3, 1), seed=60)
    H32 = PsfArray(H.dims, H.data.astype(np.float32))
    Ht32 = compute_backprojection(H32)
    assert Ht32.data.dtype == np.float32
    assert isinstance(Ht32, BackprojArray)
    assert np.array_equal(Ht32.data, compute_backprojection(H).data.astype(np.float32))


def test_linearity():
    """T(a H1 + b H2) == a T(H1) + b T(H2), bitwise."""
    for dims, seed in [((9, 9, 3, 3, 2), 70), ((15, 13, 5, 3, 2), 71), ((4, 5, 3, 3, 1), 72)]:
        H1 = random_psf(dims, density=0.6, seed=seed)
        H2 = random_psf(dims, density=0.6, seed=seed + 100)
        a, b = 2.5, 0.75
        mixed = compute_backprojection(PsfArray(H1.dims, a * H1.data + b * H2.data)).data
        expected = a * compute_backprojection(H1).data + b * compute_backprojection(H2).data
        assert np.array_equal(mixed, expected), dims


def test_invalid_dims_refused():
    """Arrays built from unchecked dims are rejected before any copying."""
    bad = Dims5(5, 5, 4, 3, 1, checked=False)
    for call in (lambda: compute_backprojection(PsfArray(bad, np.ones(bad.shape))),
                 lambda: compute_psf_from_backprojection(BackprojArray(bad, np.ones(bad.shape))),
                 lambda: oracle_backprojection(PsfArray(bad, np.ones(bad.shape)))):
        try:
            call()
        except InvalidDims:
            continue
        raise AssertionError("n_x=4 accepted")

    # unchecked but valid dims go through
    ok = Dims5(5, 5, 3, 3, 1, checked=False)
    assert compute_backprojection(PsfArray(ok, np.ones(ok.shape))).data.all()


def main():
    """Run all transform tests."""
    print("\n" + "="*60)
    print("transform - H -> H' Index Rearrangement")
    print("="*60)

    tests = [
        ("Auxiliary indices and wrap", test_aux_and_wrap),
        ("Center slice", test_center_slice),
        ("Constant array", test_constant_array),
        ("Pixel grouping", test_pixel_grouping),
        ("Oracle equivalence", test_matches_oracle),
        ("Involution", test_involution),
        ("Slice conservation", test_slice_conservation),
        ("Global conservation", test_global_conservation),
        ("Rotation property", test_rotation_property),
        ("Even pixel dims", test_even_pixel_dims),
        ("Literal loop bounds", test_literal_bounds),
        ("Threads and planes", test_threads_and_planes),
        ("dtype preserved", test_dtype_preserved),
        ("Linearity", test_linearity),
        ("Invalid dims refused", test_invalid_dims_refused),
    ]

    results = []
    for test_name, test_func in tests:
        try:
            test_func()
            print(f"✓ {test_name}")
            results.append((test_name, True))
        except Exception as e:
            print(f"\n✗ {test_name} failed with exception: {e}")
            import traceback
            traceback.print_exc()
            results.append((test_name, False))

    passed = sum(1 for _, result in results if result)
    print("\n" + "="*60)
    print(f"Total: {passed}/{len(results)} tests passed")
    print("="*60)
    return 0 if passed == len(results) else 1


if __name__ == '__main__':
    sys.exit(main())
