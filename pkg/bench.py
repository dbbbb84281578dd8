"""
Timing harness: fast index-rearrangement transform against the brute-force
oracle on identical random inputs.

The baseline is the in-repo oracle, not any third-party code, so speedups
are relative to that loop implementation on the machine at hand.
"""

import logging
import os
import platform
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from tqdm import tqdm

from errors import InvalidDims, VerificationFailure
from lf_array import Dims5, new_psf
from oracle import first_difference, oracle_backprojection
from psf_synth import random_psf
from transform import compute_backprojection

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["n_s", "n_t", "n_x", "n_y", "n_z", "fast_s", "oracle_s", "speedup", "verified"]

# square rows use n_z = 11; the last "paper" row is the asymmetric 3-type hex cell
PRESETS = {
    "smoke": [(9, 9, 3, 3, 1), (15, 13, 5, 3, 2), (19, 11, 9, 5, 2)],
    "paper-small": [(89, 89, 11, 11, 11), (91, 91, 15, 15, 15)],
    "paper": [(n, n, c, c, 11) for n, c in [
        (89, 11), (177, 11), (287, 11), (507, 11), (91, 15),
        (121, 15), (211, 21), (249, 31), (311, 31), (307, 51),
    ]] + [(181, 181, 95, 55, 11)],
}

# H plus the two H' results held at once
_ARRAYS_PER_CASE = 3


@dataclass
class BenchCase:
    dims: Dims5
    repeats: int = 3
    fast_time: float = None
    oracle_time: float = None
    verified: bool = False
    requested: Dims5 = None

    @property
    def speedup(self):
        if not self.fast_time:
            return float("nan")
        return self.oracle_time / self.fast_time

    def as_row(self):
        return [*self.dims.shape, self.fast_time, self.oracle_time, self.speedup, self.verified]


@dataclass
class BenchReport:
    cases: list = field(default_factory=list)
    failed: list = field(default_factory=list)
    note: str = ""

    def frame(self):
        """Verified cases as a DataFrame with the CSV columns."""
        return pd.DataFrame([c.as_row() for c in self.cases if c.verified], columns=CSV_COLUMNS)

    def table(self):
        df = self.frame()
        body = df.to_string(index=False, float_format=lambda v: f"{v:.4g}") if len(df) else "(no verified cases)"
        lines = [body, "", self.note]
        for case, reason in self.failed:
            lines.append(f"FAILED {case.dims.shape}: {reason}")
        return "\n".join(lines)

    def to_csv(self, path):
        self.frame().to_csv(path, index=False)
        logger.info(f"Wrote {len(self.frame())} benchmark rows to {path}")


def preset_cases(name):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
    return [Dims5(*d) for d in PRESETS[name]]


def read_sizes(path):
    """Size ladder from a CSV file with columns n_s,n_t,n_x,n_y,n_z."""
    df = pd.read_csv(path, skipinitialspace=True)
    missing = [c for c in CSV_COLUMNS[:5] if c not in df.columns]
    if missing:
        raise InvalidDims(f"{path}: size file lacks columns {missing}")
    return [Dims5(*(int(v) for v in row)) for row in df[CSV_COLUMNS[:5]].itertuples(index=False)]


def fit_to_memory(dims, max_mb, itemsize=8):
    """Reduce n_z until the case fits in max_mb megabytes; None if one plane is too much.

    Counts input, fast result and oracle result per plane, plus the
    transform's offset table (one index per plane element).
    """
    plane_elements = dims.n_pixels * dims.n_x * dims.n_y
    plane_bytes = plane_elements * itemsize * _ARRAYS_PER_CASE
    budget = max_mb * 2 ** 20 - plane_elements * np.dtype(np.intp).itemsize
    planes = int(budget // plane_bytes)
    if planes < 1:
        return None
    if planes >= dims.n_z:
        return dims
    return Dims5(dims.n_s, dims.n_t, dims.n_x, dims.n_y, planes)


def median_time(func, repeats):
    """Median wall time of repeats calls; also returns the last result."""
    times = []
    result = None
    for _ in range(repeats):
        start = time.perf_counter()
        result = func()
        times.append(time.perf_counter() - start)
    return statistics.median(times), result


def peak_rss_mb():
    try:
        import resource
    except ImportError:
        return None
    # kilobytes on Linux, bytes on macOS
    rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return rss / 2 ** 20 if platform.system() == "Darwin" else rss / 2 ** 10


def hardware_note(repeats, threads):
    rss = peak_rss_mb()
    parts = [
        f"cpu: {platform.processor() or platform.machine()} ({os.cpu_count()} logical)",
        f"threads: {threads}",
        f"repeats: {repeats} (median)",
        f"numpy {np.__version__}",
        "baseline: in-repo brute-force oracle",
    ]
    if rss is not None:
        parts.append(f"peak RSS {rss:.0f} MB")
    return "; ".join(parts)


def run_case(case, seed=0, threads=1, constant=False):
    """Time both implementations on one case and verify bitwise equality.

    Raises:
        VerificationFailure: the two results differ
    """
    dims = case.dims
    H = new_psf(dims, fill=1.0) if constant else random_psf(dims, density=0.5, seed=seed)

    # warm-up
    compute_backprojection(H, threads=threads)
    case.fast_time, fast = median_time(lambda: compute_backprojection(H, threads=threads), case.repeats)
    case.oracle_time, slow = median_time(lambda: oracle_backprojection(H), case.repeats)

    where = first_difference(fast, slow)
    if where is not None:
        raise VerificationFailure(f"fast and oracle results differ first at {where}")
    case.verified = True
    return case


def run_benchmark(cases, repeats=3, seed=0, threads=1, constant=False, max_mb=2048, progress=False):
    """Benchmark every case.

    Args:
        cases (list): Dims5 or 5-tuples
        repeats (int): timed runs per implementation, at least 3
        seed (int): random_psf seed
        threads (int): worker threads for the fast transform
        constant (bool): all-ones input instead of random
        max_mb (float): memory budget per case; n_z is reduced to fit
        progress (bool): tqdm bar over cases

    Returns:
        BenchReport. Cases that fail verification are kept in ``failed``
        and left out of the table and CSV.
    """
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")
    report = BenchReport()

    for requested in tqdm([d if isinstance(d, Dims5) else Dims5(*d) for d in cases],
                          ncols=70, desc="bench", disable=not progress):
        dims = fit_to_memory(requested, max_mb)
        if dims is None:
            logger.warning(f"Skipping {requested.shape}: one depth plane exceeds {max_mb} MB")
            continue
        if dims != requested:
            logger.warning(f"Case {requested.shape} scaled to n_z={dims.n_z} to fit {max_mb} MB")

        case = BenchCase(dims=dims, repeats=repeats, requested=requested)
        try:
            run_case(case, seed=seed, threads=threads, constant=constant)
        except VerificationFailure as e:
            logger.error(f"Case {dims.shape} failed verification: {e}")
            report.failed.append((case, str(e)))
            continue
        logger.info(f"Case {dims.shape}: fast {case.fast_time:.4f}s, oracle {case.oracle_time:.4f}s, "
                    f"speedup {case.speedup:.1f}x")
        report.cases.append(case)

    report.note = hardware_note(repeats, threads)
    return report
