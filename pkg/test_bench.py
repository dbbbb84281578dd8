#!/usr/bin/env python3
"""
Tests for the benchmark harness.
"""

import os
import sys
import tempfile
from pathlib import Path

import numpy as np

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import bench
from lf_array import BackprojArray, Dims5
from psf_synth import random_psf
from transform import compute_backprojection


def test_smoke_case():
    """A constant smoke case verifies with a positive speedup."""
    report = bench.run_benchmark([(9, 9, 3, 3, 1)], repeats=3, constant=True)
    assert len(report.cases) == 1 and not report.failed
    case = report.cases[0]
    assert case.verified
    assert case.speedup > 0
    assert case.fast_time > 0 and case.oracle_time > 0
    assert "repeats: 3" in report.note and "threads: 1" in report.note


def test_csv_schema():
    """CSV header line is fixed; every row is verified."""
    report = bench.run_benchmark(bench.preset_cases("smoke"), repeats=3, seed=1)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "bench.csv"
        report.to_csv(path)
        lines = path.read_text().splitlines()
    assert lines[0] == "n_s,n_t,n_x,n_y,n_z,fast_s,oracle_s,speedup,verified"
    assert len(lines) == 1 + len(bench.PRESETS["smoke"])
    assert all(line.endswith(",True") for line in lines[1:])
    table = report.table()
    assert "speedup" in table and "19" in table


def test_repeats_minimum():
    """Fewer than three repeats is refused."""
    try:
        bench.run_benchmark([(9, 9, 3, 3, 1)], repeats=2)
    except ValueError:
        pass
    else:
        raise AssertionError("repeats=2 accepted")


def test_memory_scaling():
    """Cases shrink n_z to fit the budget."""
    dims = Dims5(89, 89, 11, 11, 11)
    plane_mb = 89 * 89 * 11 * 11 * 8 * 3 / 2 ** 20
    assert bench.fit_to_memory(dims, 20 * plane_mb) == dims
    assert bench.fit_to_memory(dims, 4.5 * plane_mb).n_z == 4
    assert bench.fit_to_memory(dims, 0.5 * plane_mb) is None

    report = bench.run_benchmark([(15, 13, 5, 3, 6)], repeats=3, max_mb=2.5 * 15 * 13 * 5 * 3 * 8 * 3 / 2 ** 20)
    assert report.cases[0].dims.n_z == 2
    assert report.cases[0].requested.n_z == 6


def test_size_file():
    """Size ladders load from CSV."""
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "sizes.csv"
        path.write_text("n_s,n_t,n_x,n_y,n_z\n9,9,3,3,1\n15, 13, 5, 3, 2\n")
        assert bench.read_sizes(path) == [Dims5(9, 9, 3, 3, 1), Dims5(15, 13, 5, 3, 2)]


def test_presets():
    """Presets hold valid dims including the asymmetric hex3 cell."""
    for name in bench.PRESETS:
        assert bench.preset_cases(name)
    assert Dims5(181, 181, 95, 55, 11) in bench.preset_cases("paper")
    assert bench.preset_cases("paper-small")[0] == Dims5(89, 89, 11, 11, 11)


def test_failed_case_excluded():
    """A case that fails verification is reported but not tabulated."""
    real_oracle = bench.oracle_backprojection

    def broken(H):
        Ht = real_oracle(H)
        data = np.array(Ht.data)
        data[0, 0, 0, 0, 0] += 1.0
        return BackprojArray(Ht.dims, data)

    bench.oracle_backprojection = broken
    try:
        report = bench.run_benchmark([(9, 9, 3, 3, 1)], repeats=3)
    finally:
        bench.oracle_backprojection = real_oracle
    assert not report.cases
    assert len(report.failed) == 1
    assert len(report.frame()) == 0
    assert "FAILED" in report.table()


def test_speedup():
    """The fast transform beats the oracle by 10x at (89,89,11,11,11) and stays quick at 177."""
    report = bench.run_benchmark([(89, 89, 11, 11, 11)], repeats=3, seed=4)
    case = report.cases[0]
    assert case.verified and case.dims == Dims5(89, 89, 11, 11, 11)
    assert case.speedup >= 10, f"speedup {case.speedup:.1f}"

    H = random_psf((177, 177, 11, 11, 11), density=1.0, seed=5)
    elapsed, Ht = bench.median_time(lambda: compute_backprojection(H), 3)
    assert elapsed < 5.0, f"{elapsed:.2f}s"
    assert Ht.dims == H.dims


def main():
    """Run all bench tests."""
    print("\n" + "="*60)
    print("bench - Fast Transform vs Oracle Timing")
    print("="*60)

    tests = [
        ("Smoke case", test_smoke_case),
        ("CSV schema", test_csv_schema),
        ("Repeats minimum", test_repeats_minimum),
        ("Memory scaling", test_memory_scaling),
        ("Size file", test_size_file),
        ("Presets", test_presets),
        ("Failed case excluded", test_failed_case_excluded),
        ("Speedup", test_speedup),
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
